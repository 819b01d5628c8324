"""Reading and writing run outputs: frames, parameters, loss traces, manifests."""
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from core.config import config
from core.errors import ConfigError, ImageFormatError
from core.imaging import load_image, save_image
from extraction.affine import AffineParams
from extraction.regularization import epsilon_at
from schemas.models import RunManifest, SolverConfig, TruthManifest

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PARAMS_FILE = "params.json"
TRUTH_FILE = "truth.json"
LOSS_TRACE_FILE = "loss_trace.csv"
METRICS_FILE = "metrics.json"
FRAME_PATTERN = re.compile(r"frame_(\d+)\.png")


def frame_name(index: int) -> str:
    """1-based, zero-padded: frame_01.png."""
    return f"frame_{index:02d}.png"


def write_frames(frames: Sequence[np.ndarray], out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [save_image(frame, out_dir / frame_name(i)) for i, frame in enumerate(frames, start=1)]


def frame_index(path: PathLike) -> Optional[int]:
    """Integer index of a frame_N.png name, None for anything else."""
    match = FRAME_PATTERN.fullmatch(Path(path).name)
    return int(match.group(1)) if match else None


def read_frames(directory: PathLike) -> List[np.ndarray]:
    """All frame_N.png files of a directory, ordered by N as an integer."""
    directory = Path(directory)
    indexed = [(frame_index(p), p) for p in directory.glob("frame_*.png")]
    paths = [p for _, p in sorted(item for item in indexed if item[0] is not None)]
    if not paths:
        raise ImageFormatError(f"no frame_XX.png files in {directory}")
    return [load_image(p) for p in paths]


def _json_default(value: Any) -> Any:
    if hasattr(value, "isoformat"):
        return value.isoformat()
    return str(value)


def write_json(data: Union[BaseModel, Dict[str, Any]], path: PathLike) -> Path:
    """Pretty JSON; non-finite floats are written as Infinity/NaN."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="python")
    path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    return json.loads(path.read_text())


def write_params(params: AffineParams, path: PathLike) -> Path:
    return write_json({
        "theta": params.as_vector().tolist(),
        "linear": params.linear.tolist(),
        "translation": params.translation.tolist(),
    }, path)


def read_params(path: PathLike) -> AffineParams:
    return AffineParams.from_vector(read_json(path)["theta"])


def write_truth(truth: TruthManifest, out_dir: PathLike) -> Path:
    return write_json(truth, Path(out_dir) / TRUTH_FILE)


def read_truth(directory: PathLike) -> TruthManifest:
    return TruthManifest.model_validate(read_json(Path(directory) / TRUTH_FILE))


def loss_trace_frame(component_trace, cfg: SolverConfig) -> pd.DataFrame:
    """One row per iteration: scale, iteration, epsilon and every objective term."""
    rows = []
    for scale, trace in enumerate(component_trace, start=1):
        for t, components in enumerate(trace):
            row = {
                "scale": scale,
                "iteration": t,
                "epsilon": epsilon_at(t, cfg.epsilon_init, cfg.epsilon_halving_period),
            }
            row.update(components.as_dict())
            rows.append(row)
    columns = ["scale", "iteration", "epsilon", "total", "data", "tv",
               "prior_linear", "prior_translation", "prior_alpha"]
    return pd.DataFrame(rows, columns=columns)


def write_loss_trace(component_trace, cfg: SolverConfig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    loss_trace_frame(component_trace, cfg).to_csv(path, index=False, float_format="%.10g")
    return path


def manifest_path(out_dir: PathLike, command: str) -> Path:
    return Path(out_dir) / f"manifest_{command}.json"


def write_manifest(manifest: RunManifest) -> Path:
    path = write_json(manifest, manifest_path(manifest.output_dir, manifest.command))
    logger.info(f"Manifest written: {path}")
    return path


def read_manifests(run_dir: PathLike) -> List[RunManifest]:
    """Every manifest_*.json of a run directory, sorted by file name."""
    return [
        RunManifest.model_validate(read_json(p))
        for p in sorted(Path(run_dir).glob("manifest_*.json"))
    ]


def load_solver_config(path: Optional[PathLike] = None, overrides: Optional[Dict[str, Any]] = None) -> SolverConfig:
    """Built-in defaults < config file < explicit overrides.

    The file is either flat KEY=VALUE text or JSON (a flat object or a
    run manifest, whose config snapshot is used).
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        if path.suffix.lower() == ".json":
            data = read_json(path)
            if "command" in data:
                data = data.get("config") or {}
            values.update(data)
        else:
            values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return SolverConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid solver config: {e}") from e
