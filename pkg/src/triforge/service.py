"""HTTP face of the pipeline: one POST route per stage.

Domain errors map onto status codes the CLI translates back into exit
codes: validation problems are 400, missing/broken files 404, backend
trouble 502. Error bodies always carry {"error": {"kind", "type",
"message"}}.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import api
from .errors import BackendError, ForgeError, IoError, ValidationError

app = FastAPI(title="triforge", version="0.1.0")


def _kind_status(exc: ForgeError) -> tuple[str, int]:
    if isinstance(exc, IoError):
        return "io", 404
    if isinstance(exc, BackendError):
        return "backend", 502
    if isinstance(exc, ValidationError):
        return "validation", 400
    return "internal", 500


@app.exception_handler(ForgeError)
async def forge_error_handler(request: Request, exc: ForgeError):
    kind, status = _kind_status(exc)
    return JSONResponse(
        status_code=status,
        content={
            "error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}
        },
    )


@app.get("/v1/health")
def health():
    return {"status": "ok"}


@app.post("/v1/match", response_model=api.MatchResponse, response_model_exclude_none=True)
def match(req: api.MatchRequest):
    return api.run_match(req)


@app.post("/v1/index", response_model=api.IndexResponse)
def index(req: api.IndexRequest):
    return api.run_index(req)


@app.post("/v1/preprocess", response_model=api.PreprocessResponse)
def preprocess(req: api.PreprocessRequest):
    return api.run_preprocess(req)


@app.post("/v1/translate", response_model=api.TranslateResponse)
def translate(req: api.TranslateRequest):
    return api.run_translate(req)


@app.post("/v1/composite", response_model=api.CompositeResponse)
def composite(req: api.CompositeRequest):
    return api.run_composite(req)


@app.post("/v1/synthesize", response_model=api.SynthesizeResponse)
def synthesize(req: api.SynthesizeRequest):
    return api.run_synthesize(req)


@app.post("/v1/eval", response_model=api.EvalResponse, response_model_exclude_none=True)
def eval_(req: api.EvalRequest):
    return api.run_eval(req)


@app.post("/v1/features", response_model=api.FeaturesResponse)
def features(req: api.FeaturesRequest):
    return api.run_features(req)


@app.post("/v1/cls-metrics", response_model=api.ClsMetricsResponse)
def cls_metrics(req: api.ClsMetricsRequest):
    return api.run_cls_metrics(req)
