"""Person-translation backends and the add-background finalize step.

The backend contract is small: a named, deterministic map from the
(5, 256, 256) conditioning tensor to a single-channel 256x256 crop.
Residual backends predict a delta that finalize adds onto the background
channel, so an all-zero prediction leaves the scene untouched. The stub
backend is an analytic reference double; the sidecar backend drives an
external model process over a line-JSON + tensor-file protocol.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import read_tensor, write_tensor
from .errors import (
    BackendError,
    BackendUnavailable,
    DimMismatch,
    NonzeroExit,
    ProtocolError,
    Timeout,
)
from .preprocess import CROP_SIZE

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

MODES = ("absolute", "residual")


@dataclass
class TranslationResult:
    """Raw backend output plus provenance; values may be negative in
    residual mode until finalize() runs."""

    crop_pred: np.ndarray
    mode: str
    backend: str
    wall_time: float


def _check_input(x: np.ndarray) -> None:
    if x.shape != (5, CROP_SIZE, CROP_SIZE) or x.dtype != np.float32:
        raise DimMismatch(f"expected (5, {CROP_SIZE}, {CROP_SIZE}) f32, got {x.shape} {x.dtype}")


def stub_translate(x: np.ndarray, mode: str = "residual") -> np.ndarray:
    """Analytic reference prediction.

    pred = (1 - s) * bg + s * L with s the SDF channel and L the BT.601
    luminance of the masked RGB; residual mode emits pred - bg. Exact
    convex combination pixelwise (done in f64, so the f32 result stays
    within [min(bg, L), max(bg, L)]).
    """
    _check_input(x)
    r, g, b, bg, s = (x[i].astype(np.float64) for i in range(5))
    luma = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    pred = bg + s * (luma - bg)
    if mode == "residual":
        pred = pred - bg
    elif mode != "absolute":
        raise ValueError(f"unknown mode {mode!r}")
    return pred.astype(np.float32)


def finalize(pred: np.ndarray, x: np.ndarray, mode: str) -> np.ndarray:
    """Clamp the prediction into [0, 1]; residual mode adds the
    background channel back first."""
    _check_input(x)
    if pred.shape != (CROP_SIZE, CROP_SIZE):
        raise DimMismatch(f"prediction shape {pred.shape}")
    if mode == "residual":
        out = pred.astype(np.float64) + x[3]
    elif mode == "absolute":
        out = pred.astype(np.float64)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


class StubBackend:
    """In-process deterministic backend (test double for a trained model)."""

    def __init__(self, mode: str = "residual"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.name = "stub"
        self.mode = mode

    def predict(self, x: np.ndarray) -> np.ndarray:
        return stub_translate(x, self.mode)

    def close(self) -> None:
        pass


def translate(backend, x: np.ndarray) -> TranslationResult:
    """Run one crop through a backend and record timing."""
    _check_input(x)
    t0 = time.monotonic()
    pred = backend.predict(x)
    if pred.shape != (CROP_SIZE, CROP_SIZE) or pred.dtype != np.float32:
        raise ProtocolError(f"backend returned {pred.shape} {pred.dtype}")
    return TranslationResult(
        crop_pred=pred,
        mode=backend.mode,
        backend=backend.name,
        wall_time=time.monotonic() - t0,
    )


class SidecarProcess:
    """Client for one external model process.

    Protocol: the sidecar prints {"ready": true, "ops": [...]} on stdout,
    then answers each request line {"id", "op", "input", "params"} with
    exactly one response line {"id", "ok", "output"|"error"}. Tensors are
    exchanged as TMF1 files in a private temp directory. One request is
    in flight at a time; run several processes for parallelism.
    """

    def __init__(
        self,
        cmd: str,
        mode: str = "residual",
        timeout: float = 120.0,
        name: str = "sidecar",
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.name = name
        self.mode = mode
        self.timeout = timeout
        self._next_id = 0
        self._tmp = Path(tempfile.mkdtemp(prefix="triforge-sidecar-"))
        try:
            self._proc = subprocess.Popen(
                shlex.split(cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
            )
        except OSError as e:
            raise BackendUnavailable(f"cannot launch sidecar: {e}") from e
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        hello = self._read_json(self.timeout)
        if hello.get("ready") is not True or not isinstance(hello.get("ops"), list):
            raise ProtocolError(f"bad handshake: {hello}")
        self.ops = list(hello["ops"])

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _read_json(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            if self._proc.poll() is not None:
                raise BackendUnavailable("sidecar process died") from None
            raise Timeout(f"no sidecar response within {timeout}s") from None
        if line is None:
            raise BackendUnavailable(
                f"sidecar closed stdout (exit={self._proc.poll()})"
            )
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"sidecar sent non-JSON: {line!r}") from e
        if not isinstance(msg, dict):
            raise ProtocolError(f"sidecar sent non-object: {line!r}")
        return msg

    def call(self, op: str, tensor: np.ndarray, params: dict | None = None) -> np.ndarray:
        """Send one tensor through a sidecar op and return the result."""
        self._next_id += 1
        rid = self._next_id
        in_path = self._tmp / f"in_{rid}.tmf"
        write_tensor(tensor, in_path)
        req = {"id": rid, "op": op, "input": str(in_path), "params": params or {}}
        try:
            self._proc.stdin.write(json.dumps(req) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BackendUnavailable(f"sidecar stdin closed: {e}") from e
        resp = self._read_json(self.timeout)
        if resp.get("id") != rid:
            raise ProtocolError(f"response id {resp.get('id')} != request id {rid}")
        if resp.get("ok") is not True:
            raise BackendError(f"sidecar {op} failed: {resp.get('error', resp)}")
        out_path = resp.get("output")
        if not isinstance(out_path, str):
            raise ProtocolError(f"response missing output path: {resp}")
        out = read_tensor(out_path)
        in_path.unlink(missing_ok=True)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = self.call("translate", x, {"mode": self.mode})
        if out.ndim == 3 and out.shape[0] == 1:
            out = out[0]
        if out.shape != (CROP_SIZE, CROP_SIZE):
            raise ProtocolError(f"translate returned dims {out.shape}")
        if out.dtype != np.float32:
            raise ProtocolError(f"translate returned dtype {out.dtype}")
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        code = self._proc.returncode
        if code not in (0, None):
            raise NonzeroExit(f"sidecar exited with status {code}")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SidecarPool:
    """Fixed pool of sidecar processes, leased one request at a time."""

    def __init__(self, cmd: str, size: int, mode: str = "residual", timeout: float = 120.0):
        self.procs: list[SidecarProcess] = []
        try:
            for i in range(size):
                self.procs.append(
                    SidecarProcess(cmd, mode=mode, timeout=timeout, name=f"sidecar[{i}]")
                )
        except BaseException:
            for p in self.procs:
                try:
                    p.close()
                except BackendError:
                    pass
            raise
        self._idle: queue.Queue = queue.Queue()
        for p in self.procs:
            self._idle.put(p)

    def acquire(self) -> SidecarProcess:
        return self._idle.get()

    def release(self, proc: SidecarProcess) -> None:
        self._idle.put(proc)

    def close(self) -> None:
        errors = []
        for p in self.procs:
            try:
                p.close()
            except BackendError as e:
                errors.append(e)
        if errors:
            raise errors[0]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
