"""Merges a translated crop back into the full background frame.

Pixels inside the original mask are replaced outright; a border band (the
dilated mask minus the original) is alpha-blended with weights that fall
from 1 at the mask toward 0 at the dilation boundary, built from the
distance to the nearest pixel outside the dilated mask and normalized by
the band maximum. Outside the dilated mask the background passes through
bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .core import MaskGrid
from .errors import DimMismatch, EmptyMask
from .maskgeom import BBox, dilate, edt_squared
from .preprocess import resize_bilinear


def blend_weights(mask: MaskGrid, kernel: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Per-pixel blend weight in [0, 1] for the full frame.

    w == 1 on original-mask pixels, 0 strictly outside the dilated mask,
    and dist-to-outside / band-max inside the border band. If dilation
    cannot grow the mask the weights collapse to the mask indicator; if
    the dilated mask swallows the whole frame the band blends at 1.
    """
    if not mask.any():
        raise EmptyMask("blend weights need a non-empty mask")
    dilated = dilate(mask, kernel[0], kernel[1])
    w = np.zeros(mask.bits.shape, dtype=np.float32)
    w[mask.bits] = 1.0
    band = dilated.bits & ~mask.bits
    if band.any():
        if dilated.all():
            w[band] = 1.0
        else:
            dist = np.sqrt(edt_squared(dilated, seeds="background").astype(np.float64))
            w[band] = (dist[band] / dist[band].max()).astype(np.float32)
    return w


def composite_frame(
    bg_full: np.ndarray,
    translated_crop: np.ndarray,
    bbox: BBox,
    mask: MaskGrid,
    kernel: tuple[int, int] = (8, 8),
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Blend the translated crop into the background frame.

    The crop is resized back to the bbox dimensions with the same
    bilinear convention used on the way down. out = w*t + (1-w)*bg, so
    mask pixels carry the translated values exactly and pixels outside
    the dilated mask keep the background bit-exactly. Precomputed
    blend_weights may be passed in when compositing the same mask into
    several frames.
    """
    h, w_frame = bg_full.shape
    if mask.bits.shape != (h, w_frame):
        raise DimMismatch("mask and background frame dimensions differ")
    if bbox.x1 > w_frame or bbox.y1 > h:
        raise DimMismatch(f"bbox {bbox} exceeds frame {w_frame}x{h}")

    resized = resize_bilinear(translated_crop, bbox.width, bbox.height)
    translated_full = bg_full.copy()
    translated_full[bbox.y0 : bbox.y1, bbox.x0 : bbox.x1] = resized

    w = blend_weights(mask, kernel) if weights is None else weights
    if w.shape != bg_full.shape:
        raise DimMismatch("blend weights and frame dimensions differ")
    return (w * translated_full + (1.0 - w) * bg_full).astype(np.float32)
