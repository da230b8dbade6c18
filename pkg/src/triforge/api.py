"""Request/response models and the handlers behind every endpoint.

The FastAPI service and the CLI both speak these models: the service
binds them to HTTP routes, the CLI either calls the handlers in-process
or posts the same JSON bodies to a remote server. File payloads stay on
the (shared) filesystem; requests carry paths.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from . import metrics, pipeline, retrieval
from .core import load_image, load_manifest, normalize, write_tensor
from .errors import ValidationError
from .pipeline import PipelineConfig
from .translation import SidecarProcess


class MatchRequest(BaseModel):
    bg_store: str
    query_store: str
    select: Literal["max", "min"] = "max"
    per_frame: bool = False
    include_scores: bool = False


class FrameMatch(BaseModel):
    query_id: str
    selected_id: str
    selected_index: int
    score: float


class MatchResponse(BaseModel):
    selected_id: Optional[str] = None
    selected_index: Optional[int] = None
    mean_score: Optional[float] = None
    scores: Optional[list[float]] = None
    frames: Optional[list[FrameMatch]] = None


def run_match(req: MatchRequest) -> MatchResponse:
    bg = retrieval.load_store(req.bg_store)
    queries = retrieval.load_store(req.query_store)
    if len(queries) == 0:
        raise ValidationError("query store is empty")
    per_query = [
        retrieval.score_vector(queries.vectors[i], bg) for i in range(len(queries))
    ]
    if req.per_frame:
        frames = []
        for qid, scores in zip(queries.ids, per_query):
            sid, idx, score = retrieval.select_background(scores, bg, req.select)
            frames.append(
                FrameMatch(query_id=qid, selected_id=sid, selected_index=idx, score=score)
            )
        return MatchResponse(frames=frames)
    avg = retrieval.aggregate(per_query)
    sid, idx, score = retrieval.select_background(avg, bg, req.select)
    return MatchResponse(
        selected_id=sid,
        selected_index=idx,
        mean_score=score,
        scores=[float(x) for x in avg] if req.include_scores else None,
    )


class IndexRequest(BaseModel):
    manifest: Optional[str] = None
    images_dir: Optional[str] = None
    modality: Literal["rgb", "depth", "thermal"] = "rgb"
    sidecar_cmd: str
    out: str
    norm_min: Optional[float] = None
    norm_max: Optional[float] = None
    timeout: float = 120.0


class IndexResponse(BaseModel):
    out: str
    count: int
    dim: int


def run_index(req: IndexRequest) -> IndexResponse:
    """Embed a set of frames through the sidecar and write an EMB1 store."""
    if (req.manifest is None) == (req.images_dir is None):
        raise ValidationError("provide exactly one of manifest or images_dir")
    jobs: list[tuple[str, np.ndarray]] = []
    if req.manifest is not None:
        manifest = load_manifest(req.manifest)
        for s in manifest.samples:
            if req.modality == "rgb":
                img = load_image(manifest.resolve(s.rgb), "rgb8")
                jobs.append((s.id, np.moveaxis(img.data, 2, 0)))
            else:
                rel = getattr(s, req.modality)
                if rel is None:
                    raise ValidationError(f"sample {s.id!r} lacks {req.modality}")
                img = load_image(manifest.resolve(rel), "gray16")
                plane = normalize(img, manifest.meta_for(req.modality)).plane()
                jobs.append((s.id, plane[None]))
    else:
        d = Path(req.images_dir)
        if not d.is_dir():
            raise ValidationError(f"{d} is not a directory")
        if req.modality != "rgb":
            if req.norm_min is None or req.norm_max is None:
                raise ValidationError("norm_min/norm_max required for gray16 directories")
            if not req.norm_max > req.norm_min:
                raise ValidationError("norm_max must exceed norm_min")
        for p in sorted(d.glob("*.png")):
            if req.modality == "rgb":
                img = load_image(p, "rgb8")
                jobs.append((p.stem, np.moveaxis(img.data, 2, 0)))
            else:
                img = load_image(p, "gray16")
                span = req.norm_max - req.norm_min
                plane = np.clip(
                    (img.plane().astype(np.float64) - req.norm_min) / span, 0, 1
                ).astype(np.float32)
                jobs.append((p.stem, plane[None]))
    if not jobs:
        raise ValidationError("nothing to index")

    ids, vecs = [], []
    with SidecarProcess(req.sidecar_cmd, timeout=req.timeout) as sidecar:
        for sid, tensor in jobs:
            vecs.append(sidecar.call("embed", tensor, {"modality": req.modality}))
            ids.append(sid)
    store = retrieval.EmbeddingStore(ids=ids, vectors=np.stack(vecs))
    retrieval.save_store(store, req.out)
    return IndexResponse(out=req.out, count=len(store), dim=store.dim)


class PreprocessRequest(BaseModel):
    manifest: str
    bg_dir: str
    bg_id: str
    modality: Literal["depth", "thermal"]
    out_dir: str
    pad_frac: float = Field(default=0.1, ge=0.0, le=1.0)


class SkippedSample(BaseModel):
    id: str
    reason: str


class PreprocessResponse(BaseModel):
    index: str
    processed: list[str]
    skipped: list[SkippedSample]


def run_preprocess(req: PreprocessRequest) -> PreprocessResponse:
    report = pipeline.preprocess_stage(
        req.manifest, req.bg_dir, req.bg_id, req.modality, req.out_dir, req.pad_frac
    )
    return PreprocessResponse(**report)


class TranslateRequest(BaseModel):
    index: str
    out_dir: str
    backend: Literal["stub", "sidecar"] = "stub"
    sidecar_cmd: Optional[str] = None
    mode: Literal["residual", "absolute"] = "residual"
    timeout: float = 120.0


class TranslateResponse(BaseModel):
    index: str
    translated: list[str]
    failed: list[SkippedSample]


def run_translate(req: TranslateRequest) -> TranslateResponse:
    config = pipeline.load_config(
        backend=req.backend,
        sidecar_cmd=req.sidecar_cmd,
        mode=req.mode,
        timeout=req.timeout,
    )
    report = pipeline.translate_stage(req.index, req.out_dir, config)
    return TranslateResponse(**report)


class CompositeRequest(BaseModel):
    manifest: str
    pre_index: str
    pred_index: str
    bg_dir: str
    modality: Literal["depth", "thermal"]
    out_dir: str
    out_manifest: str
    dilate_kernel: tuple[int, int] = (8, 8)


class CompositeResponse(BaseModel):
    out_manifest: str
    written: list[str]
    failed: list[SkippedSample]


def run_composite(req: CompositeRequest) -> CompositeResponse:
    report = pipeline.composite_stage(
        req.manifest,
        req.pre_index,
        req.pred_index,
        req.bg_dir,
        req.modality,
        req.out_dir,
        req.out_manifest,
        req.dilate_kernel,
    )
    return CompositeResponse(**report)


class SynthesizeRequest(BaseModel):
    manifest: str
    bg_dir: str
    out_dir: str
    out_manifest: str
    config: PipelineConfig = PipelineConfig()
    query_emb: Optional[dict[str, str]] = None


class BackgroundChoice(BaseModel):
    selected_id: str
    selected_index: int
    mean_score: float


class SynthesizeResponse(BaseModel):
    synthesized: int
    failed: list[SkippedSample]
    skipped: list[SkippedSample]
    backgrounds: dict
    out_manifest: str


def run_synthesize(req: SynthesizeRequest) -> SynthesizeResponse:
    report = pipeline.synthesize_dataset(
        req.manifest,
        req.bg_dir,
        req.out_dir,
        req.out_manifest,
        req.config,
        req.query_emb,
    )
    return SynthesizeResponse(**report)


class EvalRequest(BaseModel):
    features_real: str
    features_synth: str
    real_manifest: Optional[str] = None
    synth_manifest: Optional[str] = None
    modality: Optional[Literal["depth", "thermal"]] = None
    block_size: int = Field(default=50, ge=2)


class KidBlocks(BaseModel):
    mean: float
    std: Optional[float]
    n_blocks: int


class EvalResponse(BaseModel):
    fid: float
    kid: float
    kid_blocks: Optional[KidBlocks] = None
    mse_mean: Optional[float] = None
    n_pairs: Optional[int] = None
    n_real: int
    n_synth: int


def run_eval(req: EvalRequest) -> EvalResponse:
    report = pipeline.eval_datasets(
        req.features_real,
        req.features_synth,
        req.real_manifest,
        req.synth_manifest,
        req.modality,
        req.block_size,
    )
    return EvalResponse(**report)


class ClsMetricsRequest(BaseModel):
    pred: list[str]
    truth: list[str]
    classes: Optional[list[str]] = None


class ClsMetricsResponse(BaseModel):
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict[str, dict]


def run_cls_metrics(req: ClsMetricsRequest) -> ClsMetricsResponse:
    return ClsMetricsResponse(**metrics.cls_metrics(req.pred, req.truth, req.classes))


class FeaturesRequest(BaseModel):
    """Extract FID/KID features for every frame of one manifest modality
    through the sidecar 'features' op."""

    manifest: str
    modality: Literal["depth", "thermal"]
    sidecar_cmd: str
    out: str
    params: dict = Field(default_factory=dict)
    timeout: float = 120.0


class FeaturesResponse(BaseModel):
    out: str
    count: int
    dim: int


def run_features(req: FeaturesRequest) -> FeaturesResponse:
    manifest = load_manifest(req.manifest)
    rows = []
    with SidecarProcess(req.sidecar_cmd, timeout=req.timeout) as sidecar:
        for s in manifest.samples:
            rel = getattr(s, req.modality)
            if rel is None:
                raise ValidationError(f"sample {s.id!r} lacks {req.modality}")
            img = load_image(manifest.resolve(rel), "gray16")
            plane = normalize(img, manifest.meta_for(req.modality)).plane()
            rows.append(sidecar.call("features", plane[None], req.params))
    if len(rows) < 2:
        raise ValidationError("need at least 2 frames for feature stats")
    write_tensor(np.stack(rows).astype(np.float32), req.out)
    return FeaturesResponse(out=req.out, count=len(rows), dim=int(rows[0].shape[-1]))
