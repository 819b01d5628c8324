"""Extraction orchestrator: one solver run per object alpha map, plus compositing."""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.config import config
from core.errors import ShapeMismatchError
from core.imaging import load_image
from extraction.formation import composite_clips, object_layers
from extraction.segmentation import as_alpha
from extraction.solver import ExtractionResult, extract
from schemas.models import RunManifest, SolverConfig
from services.run_store import (
    LOSS_TRACE_FILE,
    PARAMS_FILE,
    write_frames,
    write_loss_trace,
    write_manifest,
    write_params,
)

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)


class ExtractionOrchestrator:
    """Runs the solver for every object of a blurred image and writes the outputs."""

    def __init__(self, cfg: Optional[SolverConfig] = None, max_workers: Optional[int] = None):
        self.cfg = cfg or SolverConfig()
        self.max_workers = max_workers or config.EXTRACT_WORKERS
        self.results: List[ExtractionResult] = []

    def _solve_object(self, index: int, blurred: np.ndarray, alpha: np.ndarray) -> ExtractionResult:
        """Solve one object."""
        logger.info(f"\n📊 Extracting object {index + 1}...")
        try:
            result = extract(blurred, alpha, self.cfg)
        except Exception as e:
            logger.error(f"❌ Object {index + 1} failed: {e}")
            raise
        logger.info(
            f"✅ Object {index + 1}: theta={np.round(result.params.as_vector(), 4).tolist()}"
        )
        return result

    def _write_object(self, result: ExtractionResult, out_dir: Path) -> None:
        write_frames(result.clip.frames, out_dir)
        write_params(result.params, out_dir / PARAMS_FILE)
        write_loss_trace(result.component_trace, self.cfg, out_dir / LOSS_TRACE_FILE)

    def run_all(self, blurred_path: str, alpha_paths: Sequence[str], out_dir: str) -> Dict:
        """Extract every object, write frames, parameters, loss traces and the manifest."""
        logger.info("=" * 60)
        logger.info("🚀 Starting extraction")
        logger.info("=" * 60)
        start_time = time.time()
        out = Path(out_dir)

        blurred = load_image(blurred_path)
        alphas = []
        for path in alpha_paths:
            alpha = as_alpha(load_image(path), name=str(path))
            if alpha.shape[:2] != blurred.shape[:2]:
                raise ShapeMismatchError(
                    f"alpha map {path} is {alpha.shape[1]}x{alpha.shape[0]}, "
                    f"blurred image is {blurred.shape[1]}x{blurred.shape[0]}"
                )
            alphas.append(alpha)

        inputs = {"blurred": str(blurred_path), "alpha": [str(p) for p in alpha_paths]}
        try:
            if self.max_workers > 1 and len(alphas) > 1:
                with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                    self.results = list(pool.map(
                        self._solve_object, range(len(alphas)), [blurred] * len(alphas), alphas
                    ))
            else:
                self.results = [self._solve_object(i, blurred, a) for i, a in enumerate(alphas)]
        except Exception:
            write_manifest(RunManifest(
                command="extract",
                config=self.cfg,
                inputs=inputs,
                output_dir=str(out),
                seed=self.cfg.seed,
                duration_seconds=round(time.time() - start_time, 3),
                status="failed",
            ))
            logger.error("❌ Extraction failed")
            raise

        if len(self.results) == 1:
            self._write_object(self.results[0], out)
        else:
            for i, result in enumerate(self.results, start=1):
                self._write_object(result, out / f"object_{i:02d}")
            n = self.cfg.n_frames
            layers = [object_layers(r.state, r.params, n) for r in self.results]
            frames = composite_clips(
                [fg for fg, _ in layers], [m for _, m in layers], self.results[0].state.background
            )
            write_frames(frames, out)

        final_losses = {}
        for i, result in enumerate(self.results, start=1):
            components = result.final_components
            final_losses[f"object_{i:02d}"] = components.as_dict() if components else {}

        manifest = RunManifest(
            command="extract",
            config=self.cfg,
            inputs=inputs,
            output_dir=str(out),
            seed=self.cfg.seed,
            duration_seconds=round(time.time() - start_time, 3),
            final_losses=final_losses,
        )
        write_manifest(manifest)

        logger.info("\n" + "=" * 60)
        logger.info("✅ Extraction completed")
        logger.info("=" * 60)

        return {
            'status': 'success',
            'objects': len(self.results),
            'output_dir': str(out),
            'params': [r.params.as_vector().tolist() for r in self.results],
            'duration_seconds': manifest.duration_seconds,
        }


def run_extraction(blurred_path: str, alpha_paths: Sequence[str], out_dir: str, cfg: Optional[SolverConfig] = None) -> Dict:
    """Run the extraction pipeline."""
    orchestrator = ExtractionOrchestrator(cfg)
    return orchestrator.run_all(blurred_path, alpha_paths, out_dir)
