"""Domain types and file I/O shared by every pipeline stage.

Rasters are numpy-backed and immutable after construction. All internal
computation happens on f32 planes normalized to [0, 1]; u8/u16 encodings
exist only at the PNG boundary. Cross-process tensors travel as TMF1
files (little-endian, row-major), datasets as manifest JSON.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import (
    DuplicateId,
    FormatError,
    IoError,
    MagicMismatch,
    MaskValueError,
    MetaMissing,
    MissingFile,
    SchemaError,
    TruncatedPayload,
    UnknownDtype,
)

MANIFEST_VERSION = 1

_SPLITS = ("train", "val", "test")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ImagePlane:
    """Single- or multi-channel 2-D raster.

    ``data`` has shape (height, width, channels) with channels 1 or 3 and
    dtype uint8, uint16, or float32. ``value_range`` records the storage
    units; f32 pipeline planes always carry (0.0, 1.0).
    """

    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        d = self.data
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise FormatError(f"expected (h, w, 1|3) raster, got shape {d.shape}")
        if d.dtype not in (np.uint8, np.uint16, np.float32):
            raise FormatError(f"unsupported raster dtype {d.dtype}")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(d)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def plane(self) -> np.ndarray:
        """The (h, w) view of a single-channel image."""
        if self.channels != 1:
            raise FormatError("plane() requires a single-channel image")
        return self.data[:, :, 0]


@dataclass(frozen=True)
class MaskGrid:
    """Binary foreground raster; True marks person pixels."""

    bits: np.ndarray

    def __post_init__(self):
        b = self.bits
        if b.ndim != 2:
            raise FormatError(f"mask must be 2-D, got shape {b.shape}")
        if b.dtype != np.bool_:
            b = b.astype(np.bool_)
        object.__setattr__(self, "bits", _freeze(np.ascontiguousarray(b)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def any(self) -> bool:
        return bool(self.bits.any())

    def all(self) -> bool:
        return bool(self.bits.all())


@dataclass(frozen=True)
class ModalityMeta:
    """Storage metadata for one synthesized modality.

    norm_min/norm_max are the storage-unit endpoints of the u16 <-> f32
    [0, 1] mapping (e.g. millimeters for depth).
    """

    modality: str
    unit: str
    norm_min: float
    norm_max: float
    encoding: str = "u16"

    def __post_init__(self):
        if self.modality not in ("depth", "thermal"):
            raise SchemaError(f"unknown modality {self.modality!r}")
        if self.encoding != "u16":
            raise SchemaError(f"unsupported encoding {self.encoding!r}")
        if not self.norm_max > self.norm_min:
            raise SchemaError("norm_max must exceed norm_min")


@dataclass
class SampleRecord:
    """One dataset sample: file paths are stored relative to the manifest."""

    id: str
    rgb: str
    mask: Optional[str] = None
    depth: Optional[str] = None
    thermal: Optional[str] = None
    action_label: Optional[str] = None
    split: Optional[str] = None

    def __post_init__(self):
        if self.split is not None and self.split not in _SPLITS:
            raise SchemaError(f"sample {self.id!r}: bad split {self.split!r}")


@dataclass
class DatasetManifest:
    """JSON index binding sample ids to per-modality files."""

    samples: list[SampleRecord] = field(default_factory=list)
    modality_meta: dict[str, ModalityMeta] = field(default_factory=dict)
    version: int = MANIFEST_VERSION
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DuplicateId(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def sample_by_id(self, sid: str) -> SampleRecord:
        for s in self.samples:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def meta_for(self, modality: str) -> ModalityMeta:
        try:
            return self.modality_meta[modality]
        except KeyError:
            raise MetaMissing(f"no modality_meta for {modality!r}") from None


# --- normalization ----------------------------------------------------------

def normalize(img: ImagePlane, meta: ModalityMeta) -> ImagePlane:
    """Map a u16 single-channel plane into f32 [0, 1] per the modality meta."""
    if img.dtype != np.uint16 or img.channels != 1:
        raise FormatError("normalize expects a 1-channel u16 image")
    span = meta.norm_max - meta.norm_min
    out = (img.data.astype(np.float64) - meta.norm_min) / span
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return ImagePlane(out, value_range=(0.0, 1.0))


def denormalize(img: ImagePlane, meta: ModalityMeta) -> ImagePlane:
    """Inverse of normalize; rounds half-up and clamps into u16 range."""
    if img.dtype != np.float32 or img.channels != 1:
        raise FormatError("denormalize expects a 1-channel f32 image")
    span = meta.norm_max - meta.norm_min
    v = np.floor(img.data.astype(np.float64) * span + meta.norm_min + 0.5)
    v = np.clip(v, 0, 65535).astype(np.uint16)
    return ImagePlane(v, value_range=(meta.norm_min, meta.norm_max))


# --- PNG I/O ----------------------------------------------------------------

def load_image(path, expected: str):
    """Decode a PNG as one of the three pipeline kinds.

    expected: 'rgb8' (3xu8) -> ImagePlane, 'gray16' (1xu16) -> ImagePlane,
    'mask8' (1xu8, values {0,255}) -> MaskGrid.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    except OSError as e:
        raise IoError(f"{path}: {e}") from e

    if expected == "rgb8":
        if mode != "RGB" or arr.dtype != np.uint8:
            raise FormatError(f"{path}: expected 8-bit RGB, got mode {mode}")
        return ImagePlane(arr, value_range=(0, 255))
    if expected == "gray16":
        if mode not in ("I;16", "I") or arr.ndim != 2:
            raise FormatError(f"{path}: expected 16-bit grayscale, got mode {mode}")
        if arr.dtype != np.uint16:
            if arr.min() < 0 or arr.max() > 65535:
                raise FormatError(f"{path}: gray16 values exceed u16 range")
            arr = arr.astype(np.uint16)
        return ImagePlane(arr, value_range=(0, 65535))
    if expected == "mask8":
        if mode != "L" or arr.dtype != np.uint8:
            raise FormatError(f"{path}: expected 8-bit grayscale mask, got mode {mode}")
        bad = (arr != 0) & (arr != 255)
        if bad.any():
            raise MaskValueError(f"{path}: mask pixels outside {{0,255}}")
        return MaskGrid(arr == 255)
    raise ValueError(f"unknown expected kind {expected!r}")


def save_image(obj, path) -> None:
    """Write an ImagePlane or MaskGrid as PNG (inverse of load_image)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, MaskGrid):
        arr = np.where(obj.bits, 255, 0).astype(np.uint8)
        Image.fromarray(arr).save(path)
        return
    if obj.dtype == np.uint8 and obj.channels == 3:
        Image.fromarray(obj.data).save(path)
    elif obj.dtype == np.uint16 and obj.channels == 1:
        Image.fromarray(obj.plane()).save(path)
    else:
        raise FormatError("save_image supports rgb8, gray16, and masks only")


# --- TMF1 tensor files -------------------------------------------------------

TMF_MAGIC = b"TMF1"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<u2")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2, np.dtype(np.uint16): 3}


def write_tensor(arr: np.ndarray, path) -> None:
    """Serialize an array as a TMF1 file (little-endian, row-major)."""
    arr = np.ascontiguousarray(arr)
    code = _CODE_FOR.get(arr.dtype)
    if code is None:
        raise UnknownDtype(f"cannot serialize dtype {arr.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(TMF_MAGIC)
        f.write(struct.pack("<BB", code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if arr.dtype.itemsize > 1:
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        f.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Load a TMF1 file back into a native-endian numpy array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    if len(raw) < 6 or raw[:4] != TMF_MAGIC:
        raise MagicMismatch(f"{path}: bad TMF1 header")
    code, ndim = struct.unpack_from("<BB", raw, 4)
    if code not in _DTYPE_CODES:
        raise UnknownDtype(f"{path}: dtype code {code}")
    header_end = 6 + 4 * ndim
    if len(raw) < header_end:
        raise TruncatedPayload(f"{path}: header truncated")
    dims = struct.unpack_from(f"<{ndim}I", raw, 6)
    dtype = _DTYPE_CODES[code]
    expect = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expect:
        raise TruncatedPayload(
            f"{path}: payload {len(payload)} bytes, expected {expect}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


# --- manifest JSON -----------------------------------------------------------

def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; paths resolve relative to its folder."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e}") from e

    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    version = doc.get("version")
    if version != MANIFEST_VERSION:
        raise SchemaError(f"{path}: unsupported manifest version {version!r}")

    meta = {}
    for name, m in (doc.get("modality_meta") or {}).items():
        if not isinstance(m, dict):
            raise SchemaError(f"{path}: modality_meta[{name!r}] must be an object")
        try:
            meta[name] = ModalityMeta(
                modality=m["modality"],
                unit=m["unit"],
                norm_min=float(m["norm_min"]),
                norm_max=float(m["norm_max"]),
                encoding=m.get("encoding", "u16"),
            )
        except KeyError as e:
            raise SchemaError(f"{path}: modality_meta[{name!r}] missing {e}") from e

    raw_samples = doc.get("samples")
    if not isinstance(raw_samples, list):
        raise SchemaError(f"{path}: samples must be a list")
    samples = []
    for i, s in enumerate(raw_samples):
        if not isinstance(s, dict) or "id" not in s or "rgb" not in s:
            raise SchemaError(f"{path}: samples[{i}] needs id and rgb")
        samples.append(
            SampleRecord(
                id=str(s["id"]),
                rgb=str(s["rgb"]),
                mask=s.get("mask"),
                depth=s.get("depth"),
                thermal=s.get("thermal"),
                action_label=s.get("action_label"),
                split=s.get("split"),
            )
        )

    manifest = DatasetManifest(
        samples=samples, modality_meta=meta, version=version, root=path.parent
    )
    if check_files:
        for s in manifest.samples:
            for attr in ("rgb", "mask", "depth", "thermal"):
                rel = getattr(s, attr)
                if rel is not None and not manifest.resolve(rel).exists():
                    raise MissingFile(f"sample {s.id!r}: {attr} file {rel!r} missing")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write manifest JSON with a fixed key order (byte-deterministic)."""
    path = Path(path)
    doc = {
        "version": manifest.version,
        "modality_meta": {
            name: {
                "modality": m.modality,
                "encoding": m.encoding,
                "unit": m.unit,
                "norm_min": m.norm_min,
                "norm_max": m.norm_max,
            }
            for name, m in sorted(manifest.modality_meta.items())
        },
        "samples": [
            {
                k: v
                for k, v in (
                    ("id", s.id),
                    ("rgb", s.rgb),
                    ("mask", s.mask),
                    ("depth", s.depth),
                    ("thermal", s.thermal),
                    ("action_label", s.action_label),
                    ("split", s.split),
                )
                if v is not None
            }
            for s in manifest.samples
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", "utf-8")
