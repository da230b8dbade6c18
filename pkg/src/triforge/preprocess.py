"""Builds the five-channel conditioning bundle for translation.

A padded crop around the person is taken from the masked RGB frame, the
matched background, and the full-frame normalized SDF; everything is
resized to 256x256 (bilinear for continuous planes, nearest for the mask,
aspect ratio intentionally not preserved) and stacked channels-first as
[R, G, B, background, SDF].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ImagePlane, MaskGrid
from .errors import DimMismatch, EmptyMask
from .maskgeom import BBox, bbox_of, pad_bbox

CROP_SIZE = 256
CHANNEL_NAMES = ("r", "g", "b", "background", "sdf")


@dataclass(frozen=True)
class CropBundle:
    """Cropped, resized conditioning planes plus the source-frame bbox.

    rgb_masked: (256, 256, 3) f32, zero wherever mask_crop is False.
    bg_crop, sdf_crop: (256, 256) f32 in [0, 1]. mask_crop: (256, 256) bool.
    """

    bbox: BBox
    rgb_masked: np.ndarray
    bg_crop: np.ndarray
    sdf_crop: np.ndarray
    mask_crop: np.ndarray


def _axis_coords(n_src: int, n_dst: int):
    # half-pixel-center sampling, clamped to borders
    s = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    i0 = np.floor(s).astype(np.int64)
    frac = s - i0
    lo = np.clip(i0, 0, n_src - 1)
    hi = np.clip(i0 + 1, 0, n_src - 1)
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize of an (h, w) or (h, w, c) f32 plane.

    Interpolation uses the lerp form a + t*(b - a), so constant images
    and identity dimensions reproduce the input exactly.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dims must be >= 1")
    squeeze = img.ndim == 2
    p = img[:, :, None] if squeeze else img
    h, w = p.shape[:2]
    y0, y1, fy = _axis_coords(h, out_h)
    x0, x1, fx = _axis_coords(w, out_w)

    p64 = p.astype(np.float64)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    tl = p64[np.ix_(y0, x0)]
    tr = p64[np.ix_(y0, x1)]
    bl = p64[np.ix_(y1, x0)]
    br = p64[np.ix_(y1, x1)]
    top = tl + fx * (tr - tl)
    bot = bl + fx * (br - bl)
    out = (top + fy * (bot - top)).astype(np.float32)
    return out[:, :, 0] if squeeze else out


def resize_nearest_mask(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbor resize for boolean masks (same center convention)."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dims must be >= 1")
    h, w = mask.shape
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    yi = np.clip(np.floor(sy + 0.5).astype(np.int64), 0, h - 1)
    xi = np.clip(np.floor(sx + 0.5).astype(np.int64), 0, w - 1)
    return mask[np.ix_(yi, xi)]


def build_crop_bundle(
    rgb: ImagePlane,
    mask: MaskGrid,
    bg: ImagePlane,
    sdf: np.ndarray,
    pad_frac: float = 0.1,
) -> CropBundle:
    """Crop all planes to the padded mask bbox and resize to 256x256.

    The SDF must be computed on the full frame beforehand; cropping first
    would distort distances near the crop border. RGB is masked before
    the resize and re-masked after so the background stays exactly zero.
    """
    if rgb.dtype != np.float32 or rgb.channels != 3:
        raise DimMismatch("rgb must be a 3-channel f32 plane")
    if bg.dtype != np.float32 or bg.channels != 1:
        raise DimMismatch("bg must be a 1-channel f32 plane")
    h, w = mask.bits.shape
    if (rgb.height, rgb.width) != (h, w) or (bg.height, bg.width) != (h, w):
        raise DimMismatch("rgb/mask/bg frame dimensions differ")
    if sdf.shape != (h, w):
        raise DimMismatch("sdf frame dimensions differ")
    if not mask.any():
        raise EmptyMask("cannot crop around an empty mask")

    box = pad_bbox(bbox_of(mask), pad_frac, (w, h))
    sl = (slice(box.y0, box.y1), slice(box.x0, box.x1))

    mask_crop = resize_nearest_mask(mask.bits[sl], CROP_SIZE, CROP_SIZE)
    rgb_masked = rgb.data * mask.bits[:, :, None]
    rgb_masked = resize_bilinear(rgb_masked[sl], CROP_SIZE, CROP_SIZE)
    rgb_masked = rgb_masked * mask_crop[:, :, None]
    bg_crop = resize_bilinear(bg.plane()[sl], CROP_SIZE, CROP_SIZE)
    sdf_crop = resize_bilinear(sdf[sl], CROP_SIZE, CROP_SIZE)

    return CropBundle(
        bbox=box,
        rgb_masked=np.clip(rgb_masked, 0.0, 1.0),
        bg_crop=np.clip(bg_crop, 0.0, 1.0),
        sdf_crop=np.clip(sdf_crop, 0.0, 1.0),
        mask_crop=mask_crop,
    )


def assemble_input(bundle: CropBundle) -> np.ndarray:
    """Stack the bundle as a (5, 256, 256) f32 tensor, channel order
    [R, G, B, background, SDF]."""
    return np.ascontiguousarray(
        np.stack(
            [
                bundle.rgb_masked[:, :, 0],
                bundle.rgb_masked[:, :, 1],
                bundle.rgb_masked[:, :, 2],
                bundle.bg_crop,
                bundle.sdf_crop,
            ]
        )
    )
