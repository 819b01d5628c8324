"""FastAPI application exposing synthesize, extract and evaluate over run directories."""
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from datetime import datetime
from pathlib import Path
from typing import List
import logging
import re
import uuid

from core.config import config
from core.errors import BlurClipError
from extraction.orchestrator import run_extraction
from schemas.models import (
    EvaluateRequest,
    ExtractRequest,
    RunManifest,
    RunSummary,
    SynthesizeRequest,
)
from services.evaluation import run_evaluation
from services.run_store import METRICS_FILE, load_solver_config, read_manifests
from services.synthesis import run_synthesis

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

RUN_ID_PATTERN = re.compile(r"^[A-Za-z0-9_.-]+$")

app = FastAPI(
    title="BlurClip",
    description="Video clip extraction from single motion-blurred images",
    version="1.0.0"
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _runs_dir() -> Path:
    return Path(config.RUNS_DIR)


def _run_dir(run_id: str) -> Path:
    if not RUN_ID_PATTERN.match(run_id) or run_id in (".", ".."):
        raise HTTPException(status_code=422, detail=f"Invalid run id: {run_id}")
    return _runs_dir() / run_id


def _new_run_dir(run_id: str = None) -> Path:
    return _run_dir(run_id or uuid.uuid4().hex[:12])


def _require_files(*paths: str) -> None:
    for path in paths:
        if not Path(path).exists():
            raise HTTPException(status_code=404, detail=f"File not found: {path}")


def _summary(run_dir: Path) -> RunSummary:
    manifests = read_manifests(run_dir)
    last = manifests[-1] if manifests else None
    return RunSummary(
        run_id=run_dir.name,
        commands=[m.command for m in manifests],
        status=last.status if last else None,
        duration_seconds=sum(m.duration_seconds for m in manifests) if manifests else None,
    )


@app.get("/", tags=["Root"])
def root():
    """Root endpoint."""
    return {
        "message": "BlurClip video extraction service",
        "version": "1.0.0",
        "endpoints": ["/health", "/runs", "/synthesize", "/extract", "/evaluate"]
    }


@app.get("/health", tags=["Health"])
def get_health():
    """
    Health check endpoint with the runs directory status.
    """
    runs_dir = _runs_dir()
    return {
        "status": "healthy",
        "runs_dir": str(runs_dir),
        "runs_dir_exists": runs_dir.is_dir(),
        "timestamp": datetime.utcnow()
    }


@app.get("/runs", response_model=List[RunSummary], tags=["Runs"])
def get_runs():
    """
    List every run directory that holds at least one manifest.
    """
    runs_dir = _runs_dir()
    if not runs_dir.is_dir():
        return []
    try:
        return [
            _summary(d) for d in sorted(runs_dir.iterdir())
            if d.is_dir() and any(d.glob("manifest_*.json"))
        ]
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error listing runs: {str(e)}")


@app.get("/runs/{run_id}", response_model=List[RunManifest], tags=["Runs"])
def get_run(run_id: str):
    """
    Get the manifests of one run.
    """
    run_dir = _run_dir(run_id)
    manifests = read_manifests(run_dir) if run_dir.is_dir() else []
    if not manifests:
        raise HTTPException(status_code=404, detail=f"Run not found: {run_id}")
    return manifests


@app.post("/synthesize", tags=["Pipeline"])
def synthesize(request: SynthesizeRequest):
    """
    Build a synthetic blurred case inside a new run directory.

    - **motion**: "translate dx [dy]", "rotate r", "zoom s" or "matrix t11 t12 t13 t21 t22 t23"
    """
    _require_files(request.sharp_path, request.alpha_path)
    run_dir = _new_run_dir(request.run_id)
    try:
        result = run_synthesis(
            request.sharp_path, request.alpha_path, request.motion,
            request.n_frames, request.noise, request.seed, str(run_dir),
        )
    except BlurClipError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"❌ Synthesis failed: {e}")
        raise HTTPException(status_code=500, detail=f"Error synthesizing case: {str(e)}")
    return {"run_id": run_dir.name, **result}


@app.post("/extract", tags=["Pipeline"])
def extract(request: ExtractRequest):
    """
    Extract frames for every alpha map of the request.

    - **config**: solver settings overriding the built-in defaults
    """
    _require_files(request.blurred_path, *request.alpha_paths)
    run_dir = _new_run_dir(request.run_id)
    try:
        cfg = load_solver_config(overrides=request.config)
        result = run_extraction(request.blurred_path, request.alpha_paths, str(run_dir), cfg)
    except BlurClipError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"❌ Extraction failed: {e}")
        raise HTTPException(status_code=500, detail=f"Error extracting frames: {str(e)}")
    return {"run_id": run_dir.name, **result}


@app.post("/evaluate", tags=["Pipeline"])
def evaluate(request: EvaluateRequest):
    """
    Compare recovered frames with ground truth and write metrics.json.

    The body is metrics.json as written; identical frames give Infinity PSNR.
    """
    _require_files(request.result_dir, request.truth_dir)
    try:
        run_evaluation(request.result_dir, request.truth_dir)
        body = (Path(request.result_dir) / METRICS_FILE).read_text()
        return Response(content=body, media_type="application/json")
    except BlurClipError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error evaluating run: {str(e)}")


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=config.API_HOST, port=config.API_PORT)
