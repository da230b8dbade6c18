import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from triforge.core import DatasetManifest, ModalityMeta, SampleRecord, save_manifest
from triforge.retrieval import EmbeddingStore, save_store

FRAME_W, FRAME_H = 96, 72


def _person_mask(rng, h, w):
    """Filled ellipse at a random position, guaranteed non-empty."""
    cy = rng.integers(h // 4, 3 * h // 4)
    cx = rng.integers(w // 4, 3 * w // 4)
    ry = rng.integers(6, h // 4)
    rx = rng.integers(4, w // 5)
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def build_fixture_dataset(root: Path, n_samples: int = 10, seed: int = 7):
    """Synthetic RGB+mask dataset, a background pool, and embedding
    stores wired so sample ids line up. Returns a dict of paths."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    data = root / "data"
    (data / "rgb").mkdir(parents=True)
    (data / "mask").mkdir(parents=True)

    samples = []
    sample_ids = []
    for i in range(n_samples):
        sid = f"s{i:03d}"
        sample_ids.append(sid)
        mask = _person_mask(rng, FRAME_H, FRAME_W)
        grad = np.linspace(40, 200, FRAME_W, dtype=np.float64)
        rgb = np.zeros((FRAME_H, FRAME_W, 3), np.uint8)
        rgb[:, :, 0] = grad[None, :].astype(np.uint8)
        rgb[:, :, 1] = rng.integers(0, 255, (FRAME_H, FRAME_W), dtype=np.uint8)
        rgb[:, :, 2] = np.where(mask, 220, 30).astype(np.uint8)
        Image.fromarray(rgb).save(data / "rgb" / f"{sid}.png")
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(
            data / "mask" / f"{sid}.png"
        )
        samples.append(
            SampleRecord(
                id=sid,
                rgb=f"rgb/{sid}.png",
                mask=f"mask/{sid}.png",
                action_label=["walk", "sit", "wave"][i % 3],
                split="train",
            )
        )

    meta = {
        "depth": ModalityMeta(modality="depth", unit="millimeter", norm_min=0, norm_max=10000),
        "thermal": ModalityMeta(modality="thermal", unit="centikelvin", norm_min=28000, norm_max=32000),
    }
    manifest = DatasetManifest(samples=samples, modality_meta=meta, root=data)
    manifest_path = data / "manifest.json"
    save_manifest(manifest, manifest_path)

    bg_dir = root / "bg_pool"
    n_bg = 3
    bg_ids = [f"bg{j}" for j in range(n_bg)]
    for modality, m in meta.items():
        d = bg_dir / modality
        d.mkdir(parents=True)
        lo, hi = m.norm_min, m.norm_max
        for j, bid in enumerate(bg_ids):
            base = lo + (hi - lo) * (0.2 + 0.2 * j)
            ramp = np.linspace(0, (hi - lo) * 0.1, FRAME_W)
            frame = (base + ramp[None, :] + rng.integers(0, 50, (FRAME_H, FRAME_W))).astype(
                np.uint16
            )
            Image.fromarray(frame).save(d / f"{bid}.png")
    (bg_dir / "meta.json").write_text(
        json.dumps(
            {
                "modality_meta": {
                    name: {
                        "modality": m.modality,
                        "encoding": m.encoding,
                        "unit": m.unit,
                        "norm_min": m.norm_min,
                        "norm_max": m.norm_max,
                    }
                    for name, m in meta.items()
                }
            },
            indent=2,
        )
    )

    dim = 8
    emb_paths = {}
    for modality in meta:
        bg_vecs = rng.normal(size=(n_bg, dim)).astype(np.float32)
        save_store(EmbeddingStore(ids=bg_ids, vectors=bg_vecs), bg_dir / f"{modality}.emb")
        q_vecs = rng.normal(size=(n_samples, dim)).astype(np.float32)
        q_path = root / f"query_{modality}.emb"
        save_store(EmbeddingStore(ids=sample_ids, vectors=q_vecs), q_path)
        emb_paths[modality] = str(q_path)

    return {
        "manifest": manifest_path,
        "bg_dir": bg_dir,
        "query_emb": emb_paths,
        "sample_ids": sample_ids,
        "bg_ids": bg_ids,
        "meta": meta,
    }


@pytest.fixture
def fixture_dataset(tmp_path):
    return build_fixture_dataset(tmp_path)


SIDECAR_SCRIPT = Path(__file__).parent / "sidecars" / "toy_sidecar.py"


def sidecar_cmd(behavior: str = "normal") -> str:
    return f"{sys.executable} {SIDECAR_SCRIPT} --behavior {behavior}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in rep.nodeid:
                rows.append((rep.nodeid.split("::")[-1], outcome == "passed"))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in sorted(rows):
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}")
