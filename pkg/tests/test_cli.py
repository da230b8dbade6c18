import json
import threading

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import build_fixture_dataset, sidecar_cmd
from triforge.cli import main
from triforge.retrieval import EmbeddingStore, load_store, save_store


@pytest.fixture
def runner():
    return CliRunner()


def _stores(tmp_path):
    bg = EmbeddingStore(ids=["a", "b"], vectors=np.array([[1, 0], [0, 1]], np.float32))
    q = EmbeddingStore(ids=["q0"], vectors=np.array([[0.2, 1.0]], np.float32))
    save_store(bg, tmp_path / "bg.emb")
    save_store(q, tmp_path / "q.emb")
    return str(tmp_path / "bg.emb"), str(tmp_path / "q.emb")


class TestMatchCommand:
    def test_match_json_output(self, runner, tmp_path):
        bg, q = _stores(tmp_path)
        r = runner.invoke(main, ["match", "--bg-store", bg, "--query-store", q])
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert body["selected_index"] == 1

    def test_select_min_flips(self, runner, tmp_path):
        bg, q = _stores(tmp_path)
        r = runner.invoke(
            main, ["match", "--bg-store", bg, "--query-store", q, "--select", "min"]
        )
        assert json.loads(r.output)["selected_index"] == 0

    def test_missing_store_exit_3(self, runner, tmp_path):
        r = runner.invoke(
            main,
            ["match", "--bg-store", str(tmp_path / "no.emb"), "--query-store", str(tmp_path / "q.emb")],
        )
        assert r.exit_code == 3
        assert "error" in json.loads(r.output)

    def test_validation_exit_2(self, runner, tmp_path):
        bg, _ = _stores(tmp_path)
        empty = tmp_path / "empty.emb"
        save_store(EmbeddingStore(ids=[], vectors=np.zeros((0, 2), np.float32)), empty)
        r = runner.invoke(
            main, ["match", "--bg-store", bg, "--query-store", str(empty)]
        )
        assert r.exit_code == 2


class TestSynthesizeCommand:
    def test_end_to_end(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=3)
        out = tmp_path / "out"
        args = [
            "synthesize",
            "--manifest", str(fixture["manifest"]),
            "--bg-dir", str(fixture["bg_dir"]),
            "--out-dir", str(out),
            "--out-manifest", str(out / "manifest.json"),
        ]
        for modality, path in fixture["query_emb"].items():
            args += ["--query-emb", f"{modality}={path}"]
        r = runner.invoke(main, args)
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert body["synthesized"] == 3

    def test_empty_bg_pool_exit_2(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=2)
        for p in (fixture["bg_dir"] / "depth").glob("*.png"):
            p.unlink()
        (fixture["bg_dir"] / "depth.emb").unlink()
        out = tmp_path / "out"
        args = [
            "synthesize",
            "--manifest", str(fixture["manifest"]),
            "--bg-dir", str(fixture["bg_dir"]),
            "--out-dir", str(out),
            "--out-manifest", str(out / "m.json"),
            "--modalities", "depth",
        ]
        for modality, path in fixture["query_emb"].items():
            args += ["--query-emb", f"{modality}={path}"]
        r = runner.invoke(main, args)
        assert r.exit_code == 2

    def test_bad_query_emb_syntax_exit_2(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=2)
        r = runner.invoke(
            main,
            [
                "synthesize",
                "--manifest", str(fixture["manifest"]),
                "--bg-dir", str(fixture["bg_dir"]),
                "--out-dir", str(tmp_path / "o"),
                "--out-manifest", str(tmp_path / "o" / "m.json"),
                "--query-emb", "justapath.emb",
            ],
        )
        assert r.exit_code == 2


class TestStageCommands:
    def test_preprocess_translate_composite_chain(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=3)
        pre_dir = tmp_path / "pre"
        r = runner.invoke(
            main,
            [
                "preprocess",
                "--manifest", str(fixture["manifest"]),
                "--bg-dir", str(fixture["bg_dir"]),
                "--bg-id", fixture["bg_ids"][0],
                "--modality", "depth",
                "--out-dir", str(pre_dir),
            ],
        )
        assert r.exit_code == 0, r.output
        body = json.loads(r.output)
        assert len(body["processed"]) == 3
        assert (pre_dir / "index.json").exists()

        tr_dir = tmp_path / "tr"
        r = runner.invoke(
            main,
            ["translate", "--index", str(pre_dir / "index.json"), "--out-dir", str(tr_dir)],
        )
        assert r.exit_code == 0, r.output
        assert len(json.loads(r.output)["translated"]) == 3

        out_dir = tmp_path / "full"
        r = runner.invoke(
            main,
            [
                "composite",
                "--manifest", str(fixture["manifest"]),
                "--pre-index", str(pre_dir / "index.json"),
                "--pred-index", str(tr_dir / "index.json"),
                "--bg-dir", str(fixture["bg_dir"]),
                "--modality", "depth",
                "--out-dir", str(out_dir),
                "--out-manifest", str(out_dir / "manifest.json"),
            ],
        )
        assert r.exit_code == 0, r.output
        assert len(json.loads(r.output)["written"]) == 3
        assert sorted((out_dir / "depth").glob("*.png"))

    def test_index_command_via_sidecar(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=3)
        out = tmp_path / "rgb.emb"
        r = runner.invoke(
            main,
            [
                "index",
                "--manifest", str(fixture["manifest"]),
                "--modality", "rgb",
                "--sidecar-cmd", sidecar_cmd("normal"),
                "--out", str(out),
            ],
        )
        assert r.exit_code == 0, r.output
        store = load_store(out)
        assert store.ids == fixture["sample_ids"][:3]

    def test_index_gray16_directory(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=2)
        out = tmp_path / "bgdepth.emb"
        r = runner.invoke(
            main,
            [
                "index",
                "--images-dir", str(fixture["bg_dir"] / "depth"),
                "--modality", "depth",
                "--sidecar-cmd", sidecar_cmd("normal"),
                "--out", str(out),
                "--norm-min", "0", "--norm-max", "10000",
            ],
        )
        assert r.exit_code == 0, r.output
        assert load_store(out).ids == sorted(fixture["bg_ids"])

    def test_features_command(self, runner, tmp_path):
        fixture = build_fixture_dataset(tmp_path, n_samples=3)
        out_dir = tmp_path / "out"
        args = [
            "synthesize",
            "--manifest", str(fixture["manifest"]),
            "--bg-dir", str(fixture["bg_dir"]),
            "--out-dir", str(out_dir),
            "--out-manifest", str(out_dir / "manifest.json"),
            "--modalities", "depth",
        ]
        for modality, path in fixture["query_emb"].items():
            args += ["--query-emb", f"{modality}={path}"]
        assert runner.invoke(main, args).exit_code == 0
        feats = tmp_path / "f.tmf"
        r = runner.invoke(
            main,
            [
                "features",
                "--manifest", str(out_dir / "manifest.json"),
                "--modality", "depth",
                "--sidecar-cmd", sidecar_cmd("normal"),
                "--out", str(feats),
            ],
        )
        assert r.exit_code == 0, r.output
        from triforge.core import read_tensor

        assert read_tensor(feats).shape == (3, 16)


class TestClsMetricsCommand:
    def test_files(self, runner, tmp_path):
        (tmp_path / "p.json").write_text(json.dumps(["a", "a", "b"]))
        (tmp_path / "t.json").write_text(json.dumps(["a", "b", "b"]))
        r = runner.invoke(
            main,
            ["cls-metrics", "--pred", str(tmp_path / "p.json"), "--truth", str(tmp_path / "t.json")],
        )
        assert r.exit_code == 0
        body = json.loads(r.output)
        assert body["accuracy"] == pytest.approx(2 / 3)

    def test_missing_file_exit_3(self, runner, tmp_path):
        r = runner.invoke(
            main,
            ["cls-metrics", "--pred", str(tmp_path / "no.json"), "--truth", str(tmp_path / "no.json")],
        )
        assert r.exit_code == 3


class TestEvalCommand:
    def test_features_only(self, runner, tmp_path):
        from triforge.core import write_tensor

        rng = np.random.default_rng(0)
        a = rng.normal(size=(10, 3)).astype(np.float32)
        write_tensor(a, tmp_path / "a.tmf")
        write_tensor(a, tmp_path / "b.tmf")
        r = runner.invoke(
            main,
            [
                "eval",
                "--features-real", str(tmp_path / "a.tmf"),
                "--features-synth", str(tmp_path / "b.tmf"),
            ],
        )
        assert r.exit_code == 0, r.output
        assert json.loads(r.output)["fid"] <= 1e-6


class TestRemoteServer:
    def test_cli_against_live_server(self, runner, tmp_path):
        import uvicorn

        from triforge.service import app

        config = uvicorn.Config(app, host="127.0.0.1", port=8991, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        import time

        for _ in range(100):
            if server.started:
                break
            time.sleep(0.05)
        try:
            bg, q = _stores(tmp_path)
            r = runner.invoke(
                main,
                ["--server", "http://127.0.0.1:8991", "match", "--bg-store", bg, "--query-store", q],
            )
            assert r.exit_code == 0, r.output
            assert json.loads(r.output)["selected_index"] == 1
            # io error surfaces as exit 3 across the wire too
            r = runner.invoke(
                main,
                ["--server", "http://127.0.0.1:8991", "match", "--bg-store",
                 str(tmp_path / "none.emb"), "--query-store", q],
            )
            assert r.exit_code == 3
        finally:
            server.should_exit = True
            thread.join(timeout=5)
