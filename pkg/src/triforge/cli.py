"""Thin command-line client.

Each subcommand builds the same request model the HTTP service accepts,
then either calls the handler in-process (default) or posts it to a
running server (--server). Machine-readable JSON goes to stdout, logs to
stderr. Exit codes: 0 ok, 1 runtime/partial failure, 2 validation error,
3 I/O error.
"""

from __future__ import annotations

import json
import logging
import sys

import click
import httpx

from . import api
from .errors import BackendError, ForgeError, IoError, ValidationError
from .pipeline import load_config

EXIT_VALIDATION = 2
EXIT_IO = 3


def _exit_code(exc: ForgeError) -> int:
    if isinstance(exc, IoError):
        return EXIT_IO
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, BackendError):
        return 1
    return 1


def _emit(doc: dict) -> None:
    click.echo(json.dumps(doc, indent=2))


def _call(ctx, route: str, req, handler) -> dict:
    """Dispatch one request: in-process handler or remote POST."""
    server = ctx.obj.get("server")
    if server is None:
        try:
            resp = handler(req)
        except ForgeError as e:
            _emit({"error": {"type": type(e).__name__, "message": str(e)}})
            sys.exit(_exit_code(e))
        return resp.model_dump(exclude_none=True)

    r = httpx.post(
        server.rstrip("/") + route,
        json=req.model_dump(mode="json", exclude_none=True),
        timeout=None,
    )
    if r.status_code != 200:
        try:
            body = r.json()
        except ValueError:
            body = {"error": {"message": r.text}}
        _emit(body)
        sys.exit({400: EXIT_VALIDATION, 422: EXIT_VALIDATION, 404: EXIT_IO}.get(r.status_code, 1))
    return r.json()


@click.group()
@click.option("--server", default=None, metavar="URL", help="Talk to a running service instead of working in-process.")
@click.option("--config", "config_path", default=None, type=click.Path(), help="JSON config file (flags win over it).")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging on stderr.")
@click.pass_context
def main(ctx, server, config_path, verbose):
    """Synthesize depth/thermal counterparts for RGB datasets."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["config_path"] = config_path


def _cfg(ctx, **overrides):
    try:
        return load_config(ctx.obj.get("config_path"), **overrides)
    except ForgeError as e:
        _emit({"error": {"type": type(e).__name__, "message": str(e)}})
        sys.exit(_exit_code(e))


@main.command()
@click.option("--bg-store", required=True, type=click.Path())
@click.option("--query-store", required=True, type=click.Path())
@click.option("--select", type=click.Choice(["max", "min"]), default=None)
@click.option("--per-frame", is_flag=True, help="Pick one background per query frame.")
@click.option("--scores", "include_scores", is_flag=True, help="Include the mean score vector.")
@click.pass_context
def match(ctx, bg_store, query_store, select, per_frame, include_scores):
    """Choose the best-matching background frame(s)."""
    cfg = _cfg(ctx, select=select)
    req = api.MatchRequest(
        bg_store=bg_store,
        query_store=query_store,
        select=cfg.select,
        per_frame=per_frame,
        include_scores=include_scores,
    )
    _emit(_call(ctx, "/v1/match", req, api.run_match))


@main.command()
@click.option("--manifest", default=None, type=click.Path())
@click.option("--images-dir", default=None, type=click.Path())
@click.option("--modality", type=click.Choice(["rgb", "depth", "thermal"]), default="rgb")
@click.option("--sidecar-cmd", default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--norm-min", type=float, default=None)
@click.option("--norm-max", type=float, default=None)
@click.pass_context
def index(ctx, manifest, images_dir, modality, sidecar_cmd, out, norm_min, norm_max):
    """Embed frames via the sidecar into an EMB1 store."""
    cfg = _cfg(ctx, sidecar_cmd=sidecar_cmd, backend="sidecar")
    req = api.IndexRequest(
        manifest=manifest,
        images_dir=images_dir,
        modality=modality,
        sidecar_cmd=cfg.sidecar_cmd,
        out=out,
        norm_min=norm_min,
        norm_max=norm_max,
        timeout=cfg.timeout,
    )
    _emit(_call(ctx, "/v1/index", req, api.run_index))


@main.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--bg-dir", required=True, type=click.Path())
@click.option("--bg-id", required=True)
@click.option("--modality", type=click.Choice(["depth", "thermal"]), required=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--pad-frac", type=float, default=None)
@click.pass_context
def preprocess(ctx, manifest, bg_dir, bg_id, modality, out_dir, pad_frac):
    """Write five-channel conditioning tensors plus an index JSON."""
    cfg = _cfg(ctx, pad_frac=pad_frac)
    req = api.PreprocessRequest(
        manifest=manifest,
        bg_dir=bg_dir,
        bg_id=bg_id,
        modality=modality,
        out_dir=out_dir,
        pad_frac=cfg.pad_frac,
    )
    _emit(_call(ctx, "/v1/preprocess", req, api.run_preprocess))


@main.command()
@click.option("--index", "pre_index", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--backend", type=click.Choice(["stub", "sidecar"]), default=None)
@click.option("--sidecar-cmd", default=None)
@click.option("--mode", type=click.Choice(["residual", "absolute"]), default=None)
@click.pass_context
def translate(ctx, pre_index, out_dir, backend, sidecar_cmd, mode):
    """Translate preprocessed tensors into finalized crops."""
    cfg = _cfg(ctx, backend=backend, sidecar_cmd=sidecar_cmd, mode=mode)
    req = api.TranslateRequest(
        index=pre_index,
        out_dir=out_dir,
        backend=cfg.backend,
        sidecar_cmd=cfg.sidecar_cmd,
        mode=cfg.mode,
        timeout=cfg.timeout,
    )
    _emit(_call(ctx, "/v1/translate", req, api.run_translate))


@main.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--pre-index", required=True, type=click.Path())
@click.option("--pred-index", required=True, type=click.Path())
@click.option("--bg-dir", required=True, type=click.Path())
@click.option("--modality", type=click.Choice(["depth", "thermal"]), required=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--out-manifest", required=True, type=click.Path())
@click.pass_context
def composite(ctx, manifest, pre_index, pred_index, bg_dir, modality, out_dir, out_manifest):
    """Blend translated crops back into full frames; write 16-bit PNGs."""
    cfg = _cfg(ctx)
    req = api.CompositeRequest(
        manifest=manifest,
        pre_index=pre_index,
        pred_index=pred_index,
        bg_dir=bg_dir,
        modality=modality,
        out_dir=out_dir,
        out_manifest=out_manifest,
        dilate_kernel=cfg.dilate_kernel,
    )
    _emit(_call(ctx, "/v1/composite", req, api.run_composite))


@main.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--bg-dir", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--out-manifest", required=True, type=click.Path())
@click.option("--query-emb", multiple=True, metavar="MODALITY=PATH",
              help="Precomputed query embeddings, e.g. depth=dq.emb (repeatable).")
@click.option("--backend", type=click.Choice(["stub", "sidecar"]), default=None)
@click.option("--sidecar-cmd", default=None)
@click.option("--mode", type=click.Choice(["residual", "absolute"]), default=None)
@click.option("--select", type=click.Choice(["max", "min"]), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--pad-frac", type=float, default=None)
@click.option("--per-frame", is_flag=True, default=None)
@click.option("--modalities", default=None, help="Comma-separated subset of depth,thermal.")
@click.pass_context
def synthesize(ctx, manifest, bg_dir, out_dir, out_manifest, query_emb, backend,
               sidecar_cmd, mode, select, workers, pad_frac, per_frame, modalities):
    """Run the full match/preprocess/translate/composite chain."""
    cfg = _cfg(
        ctx,
        backend=backend,
        sidecar_cmd=sidecar_cmd,
        mode=mode,
        select=select,
        workers=workers,
        pad_frac=pad_frac,
        per_frame=per_frame,
        modalities=modalities.split(",") if modalities else None,
    )
    emb = {}
    for item in query_emb:
        if "=" not in item:
            _emit({"error": {"type": "ValidationError",
                             "message": f"--query-emb wants MODALITY=PATH, got {item!r}"}})
            sys.exit(EXIT_VALIDATION)
        k, v = item.split("=", 1)
        emb[k] = v
    req = api.SynthesizeRequest(
        manifest=manifest,
        bg_dir=bg_dir,
        out_dir=out_dir,
        out_manifest=out_manifest,
        config=cfg,
        query_emb=emb or None,
    )
    doc = _call(ctx, "/v1/synthesize", req, api.run_synthesize)
    _emit(doc)
    if doc.get("failed"):
        sys.exit(1)


@main.command(name="eval")
@click.option("--features-real", required=True, type=click.Path())
@click.option("--features-synth", required=True, type=click.Path())
@click.option("--real-manifest", default=None, type=click.Path())
@click.option("--synth-manifest", default=None, type=click.Path())
@click.option("--modality", type=click.Choice(["depth", "thermal"]), default=None)
@click.option("--block-size", type=int, default=50)
@click.pass_context
def eval_cmd(ctx, features_real, features_synth, real_manifest, synth_manifest, modality, block_size):
    """FID/KID over feature sets, MSE over paired manifests."""
    req = api.EvalRequest(
        features_real=features_real,
        features_synth=features_synth,
        real_manifest=real_manifest,
        synth_manifest=synth_manifest,
        modality=modality,
        block_size=block_size,
    )
    _emit(_call(ctx, "/v1/eval", req, api.run_eval))


@main.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--modality", type=click.Choice(["depth", "thermal"]), required=True)
@click.option("--sidecar-cmd", default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--param", "params", multiple=True, metavar="KEY=JSON",
              help="Feature-op parameter, e.g. triplicate=true (repeatable).")
@click.pass_context
def features(ctx, manifest, modality, sidecar_cmd, out, params):
    """Extract FID/KID features for one manifest modality via the sidecar."""
    cfg = _cfg(ctx, sidecar_cmd=sidecar_cmd, backend="sidecar")
    p = {}
    for item in params:
        k, _, v = item.partition("=")
        try:
            p[k] = json.loads(v)
        except ValueError:
            p[k] = v
    req = api.FeaturesRequest(
        manifest=manifest,
        modality=modality,
        sidecar_cmd=cfg.sidecar_cmd,
        out=out,
        params=p,
        timeout=cfg.timeout,
    )
    _emit(_call(ctx, "/v1/features", req, api.run_features))


@main.command(name="cls-metrics")
@click.option("--pred", "pred_path", required=True, type=click.Path(),
              help="JSON file holding a list of predicted labels.")
@click.option("--truth", "truth_path", required=True, type=click.Path(),
              help="JSON file holding a list of true labels.")
@click.option("--classes", default=None, help="Comma-separated class list.")
@click.pass_context
def cls_metrics(ctx, pred_path, truth_path, classes):
    """Accuracy and macro precision/recall/F1 for label files."""
    try:
        pred = json.loads(open(pred_path, encoding="utf-8").read())
        truth = json.loads(open(truth_path, encoding="utf-8").read())
    except FileNotFoundError as e:
        _emit({"error": {"type": "MissingFile", "message": str(e)}})
        sys.exit(EXIT_IO)
    except ValueError as e:
        _emit({"error": {"type": "SchemaError", "message": str(e)}})
        sys.exit(EXIT_VALIDATION)
    req = api.ClsMetricsRequest(
        pred=pred, truth=truth, classes=classes.split(",") if classes else None
    )
    _emit(_call(ctx, "/v1/cls-metrics", req, api.run_cls_metrics))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8021)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("triforge.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
