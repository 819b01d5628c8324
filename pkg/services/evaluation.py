"""Evaluate recovered frames (and parameters) against a synthesized ground truth."""
import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np

from core.config import config
from core.errors import ShapeMismatchError
from core.imaging import psnr, ssim
from schemas.models import FrameMetrics, MetricsReport, ParamErrors, RunManifest
from services.run_store import (
    METRICS_FILE,
    PARAMS_FILE,
    TRUTH_FILE,
    read_frames,
    read_params,
    read_truth,
    write_json,
    write_manifest,
)

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)


def _param_errors(result_dir: Path, truth_dir: Path) -> Optional[ParamErrors]:
    if not (result_dir / PARAMS_FILE).exists() or not (truth_dir / TRUTH_FILE).exists():
        return None
    recovered = read_params(result_dir / PARAMS_FILE).as_vector()
    truth = np.asarray(read_truth(truth_dir).params, dtype=np.float64)
    absolute = np.abs(recovered - truth)
    relative = [float(a / abs(t)) if t != 0 else None for a, t in zip(absolute, truth)]
    return ParamErrors(
        recovered=recovered.tolist(),
        truth=truth.tolist(),
        absolute=absolute.tolist(),
        relative=relative,
        max_absolute=float(absolute.max()),
    )


def evaluate_dirs(result_dir: str, truth_dir: str) -> MetricsReport:
    """Compare frames literally, in file order; order reversal is not corrected."""
    result_path, truth_path = Path(result_dir), Path(truth_dir)
    results = read_frames(result_path)
    truths = read_frames(truth_path)
    if len(results) != len(truths):
        raise ShapeMismatchError(
            f"frame counts differ: {len(results)} in {result_dir}, {len(truths)} in {truth_dir}"
        )
    frames = []
    for i, (a, b) in enumerate(zip(results, truths), start=1):
        if a.shape != b.shape:
            raise ShapeMismatchError(f"frame {i} differs in size: {a.shape} vs {b.shape}")
        frames.append(FrameMetrics(frame=i, psnr=psnr(a, b), ssim=ssim(a, b)))

    middle = frames[(len(frames) + 1) // 2 - 1]
    return MetricsReport(
        result_dir=str(result_path),
        truth_dir=str(truth_path),
        n_frames=len(frames),
        frames=frames,
        mean_psnr=float(np.mean([f.psnr for f in frames])),
        mean_ssim=float(np.mean([f.ssim for f in frames])),
        middle=middle,
        params=_param_errors(result_path, truth_path),
        generated_at=datetime.utcnow(),
    )


def run_evaluation(result_dir: str, truth_dir: str) -> MetricsReport:
    """Write metrics.json and the evaluate manifest into the result directory."""
    start_time = time.time()
    report = evaluate_dirs(result_dir, truth_dir)
    write_json(report, Path(result_dir) / METRICS_FILE)
    write_manifest(RunManifest(
        command="evaluate",
        inputs={"result": str(result_dir), "truth": str(truth_dir)},
        output_dir=str(result_dir),
        duration_seconds=round(time.time() - start_time, 3),
    ))
    logger.info(
        f"✅ Evaluation: mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}"
    )
    return report
