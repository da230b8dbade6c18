"""Mask geometry: exact Euclidean distance transforms, the normalized SDF
used to condition translation, dilation, and bounding boxes.

The distance transform is the two-pass lower-envelope method of
Felzenszwalb & Huttenlocher: a 1-D squared-distance transform along rows,
then along columns of the row result. On an integer grid the squared
distances it produces are exact, so tests compare them by integer
equality against brute force.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MaskGrid
from .errors import EmptyMask, NoSeeds

# Any finite value larger than the largest possible squared distance acts
# as infinity for the envelope scan.
def _big(h: int, w: int) -> float:
    return float(h * h + w * w + 1)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, x0/y0 inclusive, x1/y1 exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"degenerate bbox {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def _edt_1d(f: np.ndarray, out: np.ndarray, v: np.ndarray, z: np.ndarray) -> None:
    """1-D squared-distance transform of sampled function f (in place).

    Standard lower-envelope scan: v holds parabola apexes, z the
    boundaries between consecutive parabolas of the envelope.
    """
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        fq = f[q] + q * q
        while True:
            vk = v[k]
            s = (fq - (f[vk] + vk * vk)) / (2 * (q - vk))
            if s > z[k]:
                break
            k -= 1
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        vk = v[k]
        out[q] = (q - vk) * (q - vk) + f[vk]


def edt_squared(mask: MaskGrid, seeds: str = "foreground") -> np.ndarray:
    """Exact squared Euclidean distance to the nearest seed pixel.

    seeds selects which pixels are at distance zero: 'foreground' (True
    bits) or 'background' (False bits). Returns an int64 (h, w) array.
    """
    if seeds == "foreground":
        seed = mask.bits
    elif seeds == "background":
        seed = ~mask.bits
    else:
        raise ValueError(f"seeds must be foreground|background, not {seeds!r}")
    if not seed.any():
        raise NoSeeds("distance transform needs at least one seed pixel")

    h, w = seed.shape
    big = _big(h, w)
    d = np.where(seed, 0.0, big)

    n = max(h, w)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    row = np.empty(w, dtype=np.float64)
    col = np.empty(h, dtype=np.float64)

    for y in range(h):
        _edt_1d(d[y], row, v, z)
        d[y] = row
    for x in range(w):
        _edt_1d(d[:, x], col, v, z)
        d[:, x] = col

    return np.rint(d).astype(np.int64)


def edt(mask: MaskGrid, seeds: str = "foreground") -> np.ndarray:
    """Exact Euclidean distances (f32) to the nearest seed pixel."""
    return np.sqrt(edt_squared(mask, seeds).astype(np.float64)).astype(np.float32)


def normalized_sdf(mask: MaskGrid) -> np.ndarray:
    """Conditioning map in [0, 1]: zero on background, rising to exactly 1
    at the interior point farthest from any background pixel.

    Built from the signed distance field (negative inside the subject),
    negated, clamped at zero, then divided by its maximum. Degenerate
    masks are total: empty -> all zeros, full-frame -> all ones.
    """
    bits = mask.bits
    if not bits.any():
        return np.zeros(bits.shape, dtype=np.float32)
    if bits.all():
        return np.ones(bits.shape, dtype=np.float32)
    inside = np.sqrt(edt_squared(mask, seeds="background").astype(np.float64))
    inside[~bits] = 0.0
    out = inside / inside.max()
    return out.astype(np.float32)


def dilate(mask: MaskGrid, kw: int, kh: int) -> MaskGrid:
    """Binary dilation by a kw x kh box.

    Even kernels anchor at floor(k/2): output offsets span
    [-k//2, k//2 - 1] (so dx, dy in [-4, 3] for the 8x8 kernel); odd
    kernels are symmetric.
    """
    if kw < 1 or kh < 1:
        raise ValueError("kernel dims must be >= 1")
    bits = mask.bits
    h, w = bits.shape
    out = np.zeros_like(bits)
    for dy in range(-(kh // 2), (kh + 1) // 2):
        src_y = slice(max(-dy, 0), h - max(dy, 0))
        dst_y = slice(max(dy, 0), h - max(-dy, 0))
        for dx in range(-(kw // 2), (kw + 1) // 2):
            src_x = slice(max(-dx, 0), w - max(dx, 0))
            dst_x = slice(max(dx, 0), w - max(-dx, 0))
            out[dst_y, dst_x] |= bits[src_y, src_x]
    return MaskGrid(out)


def bbox_of(mask: MaskGrid) -> BBox:
    """Tightest box containing all foreground pixels."""
    ys, xs = np.nonzero(mask.bits)
    if ys.size == 0:
        raise EmptyMask("bbox of an empty mask")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def pad_bbox(b: BBox, frac: float, bounds: tuple[int, int]) -> BBox:
    """Grow each side by round(frac * side length), clamped to bounds.

    bounds is (width, height) of the enclosing frame. Rounding is
    half-up for determinism.
    """
    if not 0.0 <= frac <= 1.0:
        raise ValueError("pad fraction must lie in [0, 1]")
    w_frame, h_frame = bounds
    pw = int(np.floor(frac * b.width + 0.5))
    ph = int(np.floor(frac * b.height + 0.5))
    return BBox(
        max(b.x0 - pw, 0),
        max(b.y0 - ph, 0),
        min(b.x1 + pw, w_frame),
        min(b.y1 + ph, h_frame),
    )
