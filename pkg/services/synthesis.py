"""Synthetic test cases: motion presets and the synthesize command body."""
import logging
import math
import time
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from core.config import config
from core.errors import MotionSpecError, ShapeMismatchError
from core.imaging import load_image, require_same_shape, save_image, temporal_mean
from extraction.affine import AffineParams
from extraction.formation import synthesize_case
from extraction.segmentation import as_alpha
from schemas.models import RunManifest, TruthManifest
from services.run_store import read_frames, write_frames, write_manifest, write_truth

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

PRESETS = ("translate", "rotate", "zoom", "matrix")


def parse_motion(spec: str) -> AffineParams:
    """Turn a motion description into per-frame-step affine parameters.

    - "translate dx [dy]"  pure translation (normalized units)
    - "rotate angle"       rotation by angle radians
    - "zoom s"             uniform scaling (motion in depth)
    - "matrix t11 t12 t13 t21 t22 t23"
    """
    parts = spec.split()
    if not parts:
        raise MotionSpecError("empty motion spec")
    name, args = parts[0].lower(), parts[1:]
    try:
        values = [float(a) for a in args]
    except ValueError as e:
        raise MotionSpecError(f"non-numeric value in motion spec '{spec}'") from e

    if name == "translate" and len(values) in (1, 2):
        dx = values[0]
        dy = values[1] if len(values) == 2 else 0.0
        return AffineParams.from_vector([1.0, 0.0, dx, 0.0, 1.0, dy])
    if name == "rotate" and len(values) == 1:
        c, s = math.cos(values[0]), math.sin(values[0])
        return AffineParams([[c, -s], [s, c]], [0.0, 0.0])
    if name == "zoom" and len(values) == 1:
        if values[0] <= 0:
            raise MotionSpecError(f"zoom factor must be positive, got {values[0]}")
        return AffineParams([[values[0], 0.0], [0.0, values[0]]], [0.0, 0.0])
    if name == "matrix" and len(values) == 6:
        return AffineParams.from_vector(values)
    raise MotionSpecError(
        f"invalid motion spec '{spec}'; expected one of {', '.join(PRESETS)} with its arguments"
    )


def run_synthesis(
    sharp_path: str,
    alpha_path: str,
    motion: str,
    n_frames: int,
    noise: float,
    seed: int,
    out_dir: str,
) -> Dict:
    """Write blurred.png, alpha.png, the truth frames, truth.json and the manifest."""
    start_time = time.time()
    out = Path(out_dir)
    params = parse_motion(motion)
    sharp = load_image(sharp_path)
    alpha_truth = as_alpha(load_image(alpha_path), name=str(alpha_path))
    if alpha_truth.shape[:2] != sharp.shape[:2]:
        raise ShapeMismatchError(
            f"alpha map {alpha_path} does not match sharp image {sharp_path}"
        )

    blurred, alpha, truth = synthesize_case(sharp, alpha_truth, params, n_frames, noise, seed)
    save_image(blurred, out / "blurred.png")
    save_image(alpha, out / "alpha.png")
    write_frames(truth.frames, out)
    write_truth(TruthManifest(
        params=params.as_vector().tolist(),
        n_frames=n_frames,
        noise_sigma=noise,
        seed=seed,
        motion=motion,
    ), out)

    manifest = RunManifest(
        command="synthesize",
        inputs={"sharp": str(sharp_path), "alpha": str(alpha_path), "motion": motion,
                "n_frames": n_frames, "noise": noise},
        output_dir=str(out),
        seed=seed,
        duration_seconds=round(time.time() - start_time, 3),
    )
    write_manifest(manifest)
    logger.info(f"✅ Synthetic case written to {out}")
    return {
        'status': 'success',
        'output_dir': str(out),
        'params': params.as_vector().tolist(),
    }


def run_sequence_synthesis(
    sequence_dir: str,
    out_dir: str,
    masks_dir: Optional[str] = None,
    noise: float = 0.0,
    seed: int = 0,
) -> Dict:
    """Average a captured frame sequence into a blurred observation.

    sequence_dir holds frame_N.png with an odd frame count; they are written
    back out as the truth frames. masks_dir, when given, holds one binary
    object mask per frame under the same names, and their mean is written as
    alpha.png. No truth.json is written since the motion is unknown.
    """
    start_time = time.time()
    out = Path(out_dir)
    frames = read_frames(sequence_dir)
    n = len(frames)
    if n % 2 == 0:
        raise ShapeMismatchError(f"sequence needs an odd frame count, {sequence_dir} has {n}")
    for i, frame in enumerate(frames[1:], start=2):
        require_same_shape(frames[0], frame, f"frame 1 and frame {i} of {sequence_dir}")

    middle = n // 2
    blurred = temporal_mean(frames, middle)
    if noise > 0:
        rng = np.random.default_rng(seed)
        blurred = np.clip(blurred + rng.normal(0.0, noise, size=blurred.shape), 0.0, 1.0)
    save_image(blurred, out / "blurred.png")
    write_frames(frames, out)

    inputs = {"sequence": str(sequence_dir), "n_frames": n, "noise": noise}
    if masks_dir is not None:
        masks = [as_alpha(m, name=f"mask of {masks_dir}") for m in read_frames(masks_dir)]
        if len(masks) != n:
            raise ShapeMismatchError(f"{masks_dir} has {len(masks)} masks for {n} frames")
        if masks[0].shape[:2] != frames[0].shape[:2]:
            raise ShapeMismatchError(f"masks in {masks_dir} do not match the frame size")
        save_image(np.clip(temporal_mean(masks, middle), 0.0, 1.0), out / "alpha.png")
        inputs["masks"] = str(masks_dir)

    write_manifest(RunManifest(
        command="synthesize",
        inputs=inputs,
        output_dir=str(out),
        seed=seed,
        duration_seconds=round(time.time() - start_time, 3),
    ))
    logger.info(f"✅ Averaged {n} frames from {sequence_dir} into {out}")
    return {
        'status': 'success',
        'output_dir': str(out),
        'n_frames': n,
    }
