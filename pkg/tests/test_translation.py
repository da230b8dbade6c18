import numpy as np
import pytest

from conftest import sidecar_cmd
from triforge.errors import (
    BackendError,
    BackendUnavailable,
    DimMismatch,
    NonzeroExit,
    ProtocolError,
    Timeout,
)
from triforge.translation import (
    LUMA_WEIGHTS,
    SidecarProcess,
    StubBackend,
    finalize,
    stub_translate,
    translate,
)


def _input(rng=None, sdf=None, bg=None, rgb=None):
    x = np.zeros((5, 256, 256), np.float32)
    if rng is not None:
        x = rng.random((5, 256, 256)).astype(np.float32)
    if rgb is not None:
        x[0], x[1], x[2] = rgb
    if bg is not None:
        x[3] = bg
    if sdf is not None:
        x[4] = sdf
    return x


class TestStub:
    def test_zero_sdf_returns_bg(self):
        x = _input(sdf=0.0, bg=0.42)
        pred = stub_translate(x, mode="absolute")
        assert (pred == np.float32(0.42)).all()

    def test_full_sdf_white_rgb(self):
        x = _input(sdf=1.0, bg=0.1, rgb=(1.0, 1.0, 1.0))
        pred = stub_translate(x, mode="absolute")
        assert pred == pytest.approx(np.ones((256, 256)), abs=1e-6)

    def test_full_sdf_red(self):
        x = _input(sdf=1.0, bg=0.9, rgb=(1.0, 0.0, 0.0))
        pred = stub_translate(x, mode="absolute")
        assert pred[0, 0] == pytest.approx(LUMA_WEIGHTS[0], abs=1e-7)

    def test_residual_is_pred_minus_bg(self):
        rng = np.random.default_rng(0)
        x = _input(rng)
        full = stub_translate(x, mode="absolute")
        res = stub_translate(x, mode="residual")
        assert res == pytest.approx(full - x[3], abs=1e-6)

    def test_convex_combination_bound(self):
        rng = np.random.default_rng(1)
        x = _input(rng)
        pred = stub_translate(x, mode="absolute")
        luma = (
            LUMA_WEIGHTS[0] * x[0].astype(np.float64)
            + LUMA_WEIGHTS[1] * x[1].astype(np.float64)
            + LUMA_WEIGHTS[2] * x[2].astype(np.float64)
        )
        lo = np.minimum(x[3], luma)
        hi = np.maximum(x[3], luma)
        assert (pred >= lo - 1e-7).all()
        assert (pred <= hi + 1e-7).all()

    def test_translate_wrapper(self):
        backend = StubBackend(mode="residual")
        x = _input(sdf=0.0, bg=0.3)
        result = translate(backend, x)
        assert result.backend == "stub"
        assert result.mode == "residual"
        assert result.wall_time >= 0.0
        assert (result.crop_pred == 0.0).all()

    def test_rejects_wrong_shape(self):
        with pytest.raises(DimMismatch):
            translate(StubBackend(), np.zeros((4, 256, 256), np.float32))


class TestFinalize:
    def test_zero_residual_reproduces_bg(self):
        x = _input(bg=0.37)
        out = finalize(np.zeros((256, 256), np.float32), x, "residual")
        assert np.array_equal(out, x[3])

    def test_residual_clamps(self):
        x = _input(bg=0.5)
        out = finalize(np.full((256, 256), 0.8, np.float32), x, "residual")
        assert (out == 1.0).all()

    def test_absolute_ignores_bg(self):
        x = _input(bg=0.9)
        out = finalize(np.full((256, 256), 0.3, np.float32), x, "absolute")
        assert out == pytest.approx(np.full((256, 256), 0.3), abs=1e-7)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(2)
        x = _input(rng)
        pred = rng.normal(scale=3.0, size=(256, 256)).astype(np.float32)
        for mode in ("residual", "absolute"):
            out = finalize(pred, x, mode)
            assert out.min() >= 0.0 and out.max() <= 1.0


class TestSidecar:
    def test_echo_loopback(self):
        x = _input(np.random.default_rng(3))
        with SidecarProcess(sidecar_cmd("normal"), mode="absolute") as proc:
            assert proc.ops == ["translate", "embed", "features"]
            pred = proc.predict(x)
        assert np.array_equal(pred, x[3])

    def test_substitutable_with_stub_contract(self):
        # swapping stub <-> echo sidecar keeps every downstream contract
        x = _input(np.random.default_rng(4))
        with SidecarProcess(sidecar_cmd("normal"), mode="absolute") as proc:
            result = translate(proc, x)
        out = finalize(result.crop_pred, x, result.mode)
        assert out.shape == (256, 256)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_embed_and_features_ops(self):
        with SidecarProcess(sidecar_cmd("normal")) as proc:
            e = proc.call("embed", np.ones((3, 8, 8), np.uint8), {"modality": "rgb"})
            f = proc.call("features", np.ones((1, 16, 16), np.float32), {})
        assert e.ndim == 1 and np.linalg.norm(e) > 0
        assert f.shape == (16,)

    def test_unknown_op_is_backend_error(self):
        with SidecarProcess(sidecar_cmd("normal")) as proc:
            with pytest.raises(BackendError):
                proc.call("segment", np.ones((1, 4, 4), np.float32), {})

    def test_malformed_json_response(self):
        proc = SidecarProcess(sidecar_cmd("bad-json"))
        with pytest.raises(ProtocolError):
            proc.predict(_input())
        proc._proc.kill()
        proc._proc.wait()

    def test_wrong_dims_response(self):
        with pytest.raises(ProtocolError):
            with SidecarProcess(sidecar_cmd("wrong-dims")) as proc:
                proc.predict(_input())

    def test_timeout(self):
        proc = SidecarProcess(sidecar_cmd("sleep"), timeout=0.5)
        with pytest.raises(Timeout):
            proc.predict(_input())
        proc._proc.kill()
        proc._proc.wait()

    def test_killed_mid_request(self):
        proc = SidecarProcess(sidecar_cmd("die"))
        with pytest.raises(BackendUnavailable):
            proc.predict(_input())

    def test_nonzero_exit_reported_on_close(self):
        proc = SidecarProcess(sidecar_cmd("exit-nonzero"))
        proc.predict(_input())
        with pytest.raises(NonzeroExit):
            proc.close()

    def test_bad_handshake(self):
        with pytest.raises(ProtocolError):
            SidecarProcess(sidecar_cmd("no-handshake"))

    def test_launch_failure(self):
        with pytest.raises(BackendUnavailable):
            SidecarProcess("/definitely/not/a/binary")
