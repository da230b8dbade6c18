"""End-to-end dataset synthesis: match a background, build the
conditioning bundle, translate, composite, and write the output dataset.

Samples are independent, so a worker pool fans them out; each sample
writes only its own files and results are collected in manifest order,
which keeps outputs bit-identical for any worker count. A failing sample
is logged and skipped rather than aborting the run.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from . import retrieval
from .composite import blend_weights, composite_frame
from .core import (
    DatasetManifest,
    ImagePlane,
    MaskGrid,
    ModalityMeta,
    SampleRecord,
    denormalize,
    load_image,
    load_manifest,
    normalize,
    read_tensor,
    save_image,
    save_manifest,
    write_tensor,
)
from .errors import (
    EmptyStore,
    ForgeError,
    MissingFile,
    SchemaError,
    ValidationError,
)
from .maskgeom import BBox, normalized_sdf
from .preprocess import assemble_input, build_crop_bundle, resize_bilinear
from .translation import SidecarPool, StubBackend, finalize, translate

log = logging.getLogger("triforge")

MODALITIES = ("depth", "thermal")


class PipelineConfig(BaseModel):
    """Every knob the synthesis run exposes; flags > config file > defaults."""

    pad_frac: float = Field(default=0.1, ge=0.0, le=1.0)
    dilate_kernel: tuple[int, int] = (8, 8)
    backend: Literal["stub", "sidecar"] = "stub"
    sidecar_cmd: Optional[str] = None
    mode: Literal["residual", "absolute"] = "residual"
    select: Literal["max", "min"] = "max"
    workers: int = Field(default=1, ge=1)
    per_frame: bool = False
    modalities: list[Literal["depth", "thermal"]] = ["depth", "thermal"]
    timeout: float = Field(default=120.0, gt=0.0)

    @model_validator(mode="after")
    def _sidecar_cmd_matches_backend(self):
        if self.backend == "sidecar" and not self.sidecar_cmd:
            raise ValueError("backend=sidecar requires sidecar_cmd")
        return self


def load_config(path=None, env=None, **overrides) -> PipelineConfig:
    """Merge defaults, a JSON config file, FORGE_SIDECAR, and explicit
    overrides (highest precedence)."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingFile(str(p))
        try:
            data.update(json.loads(p.read_text("utf-8")))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{p}: invalid config JSON: {e}") from e
    env = os.environ if env is None else env
    if "sidecar_cmd" not in data and env.get("FORGE_SIDECAR"):
        data["sidecar_cmd"] = env["FORGE_SIDECAR"]
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**data)
    except ValueError as e:
        raise ValidationError(str(e)) from e


class BackgroundPool:
    """Directory of candidate background frames per modality.

    Layout: meta.json with {"modality_meta": {...}}, one subdirectory of
    16-bit PNGs per modality (frame id = file stem, sorted by name), and
    optionally a precomputed <modality>.emb embedding store whose ids
    match the frame ids.
    """

    def __init__(self, root):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.exists():
            raise MissingFile(f"background pool meta {meta_path}")
        doc = json.loads(meta_path.read_text("utf-8"))
        self.meta: dict[str, ModalityMeta] = {}
        for name, m in (doc.get("modality_meta") or {}).items():
            self.meta[name] = ModalityMeta(
                modality=m["modality"],
                unit=m["unit"],
                norm_min=float(m["norm_min"]),
                norm_max=float(m["norm_max"]),
                encoding=m.get("encoding", "u16"),
            )

    def frames(self, modality: str) -> list[tuple[str, Path]]:
        d = self.root / modality
        if not d.is_dir():
            raise MissingFile(f"background pool has no {modality}/ directory")
        out = [(p.stem, p) for p in sorted(d.glob("*.png"))]
        if not out:
            raise EmptyStore(f"background pool {modality}/ holds no PNGs")
        return out

    def frame_path(self, modality: str, frame_id: str) -> Path:
        p = self.root / modality / f"{frame_id}.png"
        if not p.exists():
            raise MissingFile(f"background frame {p}")
        return p

    def meta_for(self, modality: str) -> ModalityMeta:
        if modality not in self.meta:
            raise SchemaError(f"pool meta.json lacks modality_meta for {modality!r}")
        return self.meta[modality]

    def store_path(self, modality: str) -> Path:
        return self.root / f"{modality}.emb"

    def load_background(self, modality: str, frame_id: str) -> np.ndarray:
        img = load_image(self.frame_path(modality, frame_id), "gray16")
        return normalize(img, self.meta_for(modality)).plane()


class _BackendLease:
    """Hands out backend instances, one in-flight user per instance.

    The stub is pure and reentrant, so every lease is the same object;
    sidecar processes are distinct and queue-guarded.
    """

    def __init__(self, config: PipelineConfig):
        import queue as _queue

        self._q: "_queue.Queue" = _queue.Queue()
        self._pool = None
        if config.backend == "stub":
            shared = StubBackend(mode=config.mode)
            for _ in range(config.workers):
                self._q.put(shared)
        else:
            self._pool = SidecarPool(
                config.sidecar_cmd,
                config.workers,
                mode=config.mode,
                timeout=config.timeout,
            )
            for p in self._pool.procs:
                self._q.put(p)

    def acquire(self):
        return self._q.get()

    def release(self, backend) -> None:
        self._q.put(backend)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()


def _select_backgrounds(
    bg_store: retrieval.EmbeddingStore,
    query_store: retrieval.EmbeddingStore,
    sample_ids: list[str],
    config: PipelineConfig,
) -> dict[str, tuple[str, int, float]]:
    """Background choice per sample id: one aggregated pick by default,
    per-frame picks when configured."""
    by_id = {sid: i for i, sid in enumerate(query_store.ids)}
    missing = [sid for sid in sample_ids if sid not in by_id]
    if missing:
        raise ValidationError(
            f"query embeddings missing for samples {missing[:5]}"
            + ("..." if len(missing) > 5 else "")
        )
    vecs = [query_store.vectors[by_id[sid]] for sid in sample_ids]
    if config.per_frame:
        out = {}
        for sid, v in zip(sample_ids, vecs):
            scores = retrieval.score_vector(v, bg_store)
            out[sid] = retrieval.select_background(scores, bg_store, config.select)
        return out
    scores = [retrieval.score_vector(v, bg_store) for v in vecs]
    avg = retrieval.aggregate(scores)
    chosen = retrieval.select_background(avg, bg_store, config.select)
    return {sid: chosen for sid in sample_ids}


def synthesize_sample(
    rgb: ImagePlane,
    mask: MaskGrid,
    bg_plane: np.ndarray,
    backend,
    config: PipelineConfig,
    sdf: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Full per-sample chain on normalized planes: SDF, crop bundle,
    translation, finalize, composite. Returns the (h, w) f32 frame.

    The mask-derived sdf and blend weights are modality-independent and
    may be precomputed once when the sample runs for several modalities.
    """
    rgb_f = ImagePlane(rgb.data.astype(np.float32) / 255.0)
    if bg_plane.shape != (rgb.height, rgb.width):
        log.warning(
            "background %s resized to frame %s", bg_plane.shape, (rgb.height, rgb.width)
        )
        bg_plane = resize_bilinear(bg_plane, rgb.width, rgb.height)
    bg = ImagePlane(np.ascontiguousarray(bg_plane, dtype=np.float32))
    if sdf is None:
        sdf = normalized_sdf(mask)
    bundle = build_crop_bundle(rgb_f, mask, bg, sdf, config.pad_frac)
    x = assemble_input(bundle)
    result = translate(backend, x)
    crop = finalize(result.crop_pred, x, result.mode)
    return composite_frame(
        bg.plane(), crop, bundle.bbox, mask, config.dilate_kernel, weights
    )


def _relpath(target: Path, base: Path) -> str:
    return os.path.relpath(target.resolve(), base.resolve())


def synthesize_dataset(
    manifest_path,
    bg_dir,
    out_dir,
    out_manifest_path,
    config: PipelineConfig,
    query_emb: Optional[dict[str, str]] = None,
) -> dict:
    """Run match -> preprocess -> translate -> composite for every sample
    and modality; write PNGs plus the combined output manifest.

    query_emb maps modality -> EMB1 path of per-sample query embeddings
    (ids == sample ids). When absent for a modality, a sidecar backend is
    required to embed frames on the fly.
    """
    manifest = load_manifest(manifest_path)
    pool = BackgroundPool(bg_dir)
    out_dir = Path(out_dir)
    out_manifest_path = Path(out_manifest_path)
    query_emb = query_emb or {}

    usable: list[SampleRecord] = []
    skipped: list[dict] = []
    for s in manifest.samples:
        if s.mask is None:
            skipped.append({"id": s.id, "reason": "no mask"})
        else:
            usable.append(s)

    embedder: Optional[object] = None

    def get_embedder():
        nonlocal embedder
        if embedder is None:
            if config.backend != "sidecar":
                raise ValidationError(
                    "no precomputed embeddings and no sidecar configured"
                )
            from .translation import SidecarProcess

            embedder = SidecarProcess(
                config.sidecar_cmd, mode=config.mode, timeout=config.timeout
            )
        return embedder

    backgrounds: dict[str, dict[str, tuple[str, int, float]]] = {}
    failures: list[dict] = []
    results: list[Optional[dict[str, Path]]] = [None] * len(usable)
    try:
        for modality in config.modalities:
            bg_store = _background_store(pool, modality, get_embedder)
            q_path = query_emb.get(modality)
            if q_path is not None:
                q_store = retrieval.load_store(q_path)
            else:
                q_store = _embed_queries(manifest, usable, get_embedder())
            backgrounds[modality] = _select_backgrounds(
                bg_store, q_store, [s.id for s in usable], config
            )

        bg_planes = {
            modality: {
                fid: pool.load_background(modality, fid)
                for fid in {c[0] for c in backgrounds[modality].values()}
            }
            for modality in config.modalities
        }

        lease = _BackendLease(config)

        def run_one(i: int, s: SampleRecord) -> None:
            rgb = load_image(manifest.resolve(s.rgb), "rgb8")
            mask = load_image(manifest.resolve(s.mask), "mask8")
            if mask.bits.shape != (rgb.height, rgb.width):
                raise ValidationError(f"sample {s.id!r}: mask dims differ from rgb")
            if not mask.any():
                raise ValidationError(f"sample {s.id!r}: empty mask")
            sdf = normalized_sdf(mask)
            weights = blend_weights(mask, config.dilate_kernel)
            written = {}
            backend = lease.acquire()
            try:
                for modality in config.modalities:
                    bg_id, _, _ = backgrounds[modality][s.id]
                    frame = synthesize_sample(
                        rgb,
                        mask,
                        bg_planes[modality][bg_id],
                        backend,
                        config,
                        sdf=sdf,
                        weights=weights,
                    )
                    plane = denormalize(ImagePlane(frame), pool.meta_for(modality))
                    out_path = out_dir / modality / f"{s.id}.png"
                    save_image(plane, out_path)
                    written[modality] = out_path
            finally:
                lease.release(backend)
            results[i] = written

        def worker(task) -> Optional[dict]:
            i, s = task
            try:
                run_one(i, s)
                return None
            except ForgeError as e:
                log.warning("sample %s failed: %s", s.id, e)
                return {"id": s.id, "reason": str(e)}

        try:
            with ThreadPoolExecutor(max_workers=config.workers) as executor:
                outcomes = list(executor.map(worker, enumerate(usable)))
            failures = [o for o in outcomes if o is not None]
        finally:
            lease.close()
    finally:
        if embedder is not None:
            try:
                embedder.close()
            except ForgeError as e:
                log.warning("embed sidecar shutdown: %s", e)

    out_samples = []
    for i, s in enumerate(usable):
        if results[i] is None:
            continue
        base = out_manifest_path.parent
        rec = SampleRecord(
            id=s.id,
            rgb=_relpath(manifest.resolve(s.rgb), base),
            mask=_relpath(manifest.resolve(s.mask), base),
            action_label=s.action_label,
            split=s.split,
        )
        for modality, p in results[i].items():
            setattr(rec, modality, _relpath(p, base))
        out_samples.append(rec)

    meta = {m: pool.meta_for(m) for m in config.modalities}
    out_manifest = DatasetManifest(
        samples=out_samples, modality_meta=meta, root=out_manifest_path.parent
    )
    save_manifest(out_manifest, out_manifest_path)

    return {
        "synthesized": len(out_samples),
        "failed": failures,
        "skipped": skipped,
        "backgrounds": {
            modality: _bg_report(backgrounds[modality], config)
            for modality in config.modalities
        },
        "out_manifest": str(out_manifest_path),
    }


def _bg_report(choice_by_id: dict, config: PipelineConfig):
    if not choice_by_id:
        return None
    if config.per_frame:
        return {
            sid: {"selected_id": c[0], "selected_index": c[1], "mean_score": c[2]}
            for sid, c in choice_by_id.items()
        }
    c = next(iter(choice_by_id.values()))
    return {"selected_id": c[0], "selected_index": c[1], "mean_score": c[2]}


def _background_store(pool: BackgroundPool, modality: str, get_embedder):
    path = pool.store_path(modality)
    if path.exists():
        store = retrieval.load_store(path)
        frame_ids = {fid for fid, _ in pool.frames(modality)}
        unknown = [i for i in store.ids if i not in frame_ids]
        if unknown:
            raise ValidationError(
                f"{modality}.emb ids without pool frames: {unknown[:5]}"
            )
        return store
    embedder = get_embedder()
    ids, vecs = [], []
    for fid, p in pool.frames(modality):
        img = load_image(p, "gray16")
        plane = normalize(img, pool.meta_for(modality)).plane()
        vecs.append(embedder.call("embed", plane[None], {"modality": modality}))
        ids.append(fid)
    return retrieval.EmbeddingStore(ids=ids, vectors=np.stack(vecs))


def _embed_queries(manifest, samples, embedder):
    ids, vecs = [], []
    for s in samples:
        rgb = load_image(manifest.resolve(s.rgb), "rgb8")
        tensor = np.moveaxis(rgb.data, 2, 0)  # (3, h, w) u8
        vecs.append(embedder.call("embed", tensor, {"modality": "rgb"}))
        ids.append(s.id)
    return retrieval.EmbeddingStore(ids=ids, vectors=np.stack(vecs))


# --- stage-wise helpers (one CLI subcommand each) -----------------------------

def preprocess_stage(
    manifest_path, bg_dir, bg_id, modality, out_dir, pad_frac: float = 0.1
) -> dict:
    """Write the per-sample conditioning tensors plus an index JSON
    {sample_id: {tensor, bbox}}."""
    manifest = load_manifest(manifest_path)
    pool = BackgroundPool(bg_dir)
    bg_plane = pool.load_background(modality, bg_id)
    out_dir = Path(out_dir)
    index: dict[str, dict] = {}
    skipped = []
    for s in manifest.samples:
        try:
            if s.mask is None:
                raise ValidationError("no mask")
            rgb = load_image(manifest.resolve(s.rgb), "rgb8")
            mask = load_image(manifest.resolve(s.mask), "mask8")
            rgb_f = ImagePlane(rgb.data.astype(np.float32) / 255.0)
            plane = bg_plane
            if plane.shape != (rgb.height, rgb.width):
                plane = resize_bilinear(plane, rgb.width, rgb.height)
            bg = ImagePlane(np.ascontiguousarray(plane, dtype=np.float32))
            sdf = normalized_sdf(mask)
            bundle = build_crop_bundle(rgb_f, mask, bg, sdf, pad_frac)
            tensor_path = out_dir / f"{s.id}.tmf"
            write_tensor(assemble_input(bundle), tensor_path)
            b = bundle.bbox
            index[s.id] = {
                "tensor": tensor_path.name,
                "bbox": [b.x0, b.y0, b.x1, b.y1],
            }
        except ForgeError as e:
            log.warning("preprocess: sample %s skipped: %s", s.id, e)
            skipped.append({"id": s.id, "reason": str(e)})
    index_path = out_dir / "index.json"
    index_path.parent.mkdir(parents=True, exist_ok=True)
    index_path.write_text(
        json.dumps(
            {"modality": modality, "bg_id": bg_id, "samples": index}, indent=2
        )
        + "\n",
        "utf-8",
    )
    return {"index": str(index_path), "processed": sorted(index), "skipped": skipped}


def translate_stage(pre_index_path, out_dir, config: PipelineConfig) -> dict:
    """Translate every preprocessed tensor; write finalized [0,1] crops
    plus an index JSON."""
    pre_index_path = Path(pre_index_path)
    if not pre_index_path.exists():
        raise MissingFile(str(pre_index_path))
    doc = json.loads(pre_index_path.read_text("utf-8"))
    out_dir = Path(out_dir)
    lease = _BackendLease(config)
    index = {}
    failed = []
    try:
        backend = lease.acquire()
        for sid in sorted(doc["samples"]):
            entry = doc["samples"][sid]
            try:
                x = read_tensor(pre_index_path.parent / entry["tensor"])
                result = translate(backend, x)
                crop = finalize(result.crop_pred, x, result.mode)
                crop_path = out_dir / f"{sid}.tmf"
                write_tensor(crop, crop_path)
                index[sid] = {"tensor": crop_path.name}
            except ForgeError as e:
                log.warning("translate: sample %s failed: %s", sid, e)
                failed.append({"id": sid, "reason": str(e)})
    finally:
        lease.close()
    index_path = out_dir / "index.json"
    index_path.parent.mkdir(parents=True, exist_ok=True)
    index_path.write_text(
        json.dumps(
            {
                "backend": config.backend,
                "mode": config.mode,
                "samples": index,
            },
            indent=2,
        )
        + "\n",
        "utf-8",
    )
    return {"index": str(index_path), "translated": sorted(index), "failed": failed}


def composite_stage(
    manifest_path,
    pre_index_path,
    pred_index_path,
    bg_dir,
    modality,
    out_dir,
    out_manifest_path,
    kernel: tuple[int, int] = (8, 8),
) -> dict:
    """Merge finalized crops into the background and write 16-bit PNGs
    plus the updated manifest."""
    manifest = load_manifest(manifest_path)
    pool = BackgroundPool(bg_dir)
    pre_index_path = Path(pre_index_path)
    pred_index_path = Path(pred_index_path)
    pre = json.loads(pre_index_path.read_text("utf-8"))
    pred = json.loads(pred_index_path.read_text("utf-8"))
    bg_plane = pool.load_background(modality, pre["bg_id"])
    meta = pool.meta_for(modality)
    out_dir = Path(out_dir)
    out_manifest_path = Path(out_manifest_path)

    written = []
    failed = []
    out_samples = []
    for s in manifest.samples:
        if s.id not in pre["samples"] or s.id not in pred["samples"]:
            continue
        try:
            mask = load_image(manifest.resolve(s.mask), "mask8")
            bbox = BBox(*pre["samples"][s.id]["bbox"])
            crop = read_tensor(pred_index_path.parent / pred["samples"][s.id]["tensor"])
            plane = bg_plane
            if plane.shape != mask.bits.shape:
                plane = resize_bilinear(plane, mask.width, mask.height)
            frame = composite_frame(
                np.ascontiguousarray(plane, dtype=np.float32), crop, bbox, mask, kernel
            )
            out_path = out_dir / modality / f"{s.id}.png"
            save_image(denormalize(ImagePlane(frame), meta), out_path)
            base = out_manifest_path.parent
            rec = SampleRecord(
                id=s.id,
                rgb=_relpath(manifest.resolve(s.rgb), base),
                mask=_relpath(manifest.resolve(s.mask), base),
                action_label=s.action_label,
                split=s.split,
            )
            setattr(rec, modality, _relpath(out_path, base))
            out_samples.append(rec)
            written.append(s.id)
        except ForgeError as e:
            log.warning("composite: sample %s failed: %s", s.id, e)
            failed.append({"id": s.id, "reason": str(e)})

    out_manifest = DatasetManifest(
        samples=out_samples,
        modality_meta={modality: meta},
        root=out_manifest_path.parent,
    )
    save_manifest(out_manifest, out_manifest_path)
    return {"out_manifest": str(out_manifest_path), "written": written, "failed": failed}


def eval_datasets(
    features_real_path,
    features_synth_path,
    real_manifest_path=None,
    synth_manifest_path=None,
    modality: Optional[str] = None,
    block_size: int = 50,
) -> dict:
    """FID/KID over feature files plus per-pixel MSE over manifests
    paired by sample id."""
    from . import metrics
    from .errors import MissingPair

    real = read_tensor(features_real_path).astype(np.float32)
    synth = read_tensor(features_synth_path).astype(np.float32)
    report: dict = {
        "fid": metrics.fid(real, synth),
        "kid": metrics.kid(real, synth),
        "n_real": int(real.shape[0]),
        "n_synth": int(synth.shape[0]),
    }
    try:
        mean, std, n_blocks = metrics.kid_blocks(real, synth, block_size)
        report["kid_blocks"] = {"mean": mean, "std": std, "n_blocks": n_blocks}
    except ForgeError:
        report["kid_blocks"] = None

    if real_manifest_path is not None and synth_manifest_path is not None:
        if modality is None:
            raise ValidationError("modality required for manifest MSE")
        m_real = load_manifest(real_manifest_path)
        m_synth = load_manifest(synth_manifest_path)
        ids_real = {s.id for s in m_real.samples}
        ids_synth = {s.id for s in m_synth.samples}
        if ids_real != ids_synth:
            odd = sorted(ids_real ^ ids_synth)
            raise MissingPair(f"unpaired sample ids: {odd[:5]}")
        values = []
        for s in m_synth.samples:
            r = m_real.sample_by_id(s.id)
            if getattr(s, modality) is None or getattr(r, modality) is None:
                raise MissingPair(f"sample {s.id!r} lacks a {modality} frame")
            a = normalize(
                load_image(m_real.resolve(getattr(r, modality)), "gray16"),
                m_real.meta_for(modality),
            ).plane()
            b = normalize(
                load_image(m_synth.resolve(getattr(s, modality)), "gray16"),
                m_synth.meta_for(modality),
            ).plane()
            values.append(metrics.mse(a, b))
        report["mse_mean"] = float(np.mean(values)) if values else None
        report["n_pairs"] = len(values)
    return report
