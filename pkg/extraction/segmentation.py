"""Alpha-channel masks: middle-frame binarization, mask propagation and alpha synthesis.

The alpha map of a moving object is the temporal average of its per-frame
binary masks; the middle mask is approximated by rounding the alpha map and
the others are affine propagations of it.
"""
import logging
from typing import List

import numpy as np
from scipy import ndimage

from core.config import config
from core.errors import DegenerateAlphaError, ShapeMismatchError
from core.imaging import as_image, temporal_mean
from extraction.affine import AffineParams, grid_generate, grid_sample, step_transform

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)


def as_alpha(alpha: np.ndarray, name: str = "alpha") -> np.ndarray:
    """Validate a single-channel map with values in [0, 1]."""
    alpha = as_image(alpha, name)
    if alpha.shape[2] != 1:
        raise ShapeMismatchError(f"{name} must have one channel, got {alpha.shape[2]}")
    if alpha.min() < 0.0 or alpha.max() > 1.0:
        raise ShapeMismatchError(f"{name} values must lie in [0, 1]")
    return alpha


def frame_offsets(n: int) -> List[int]:
    """Signed step index i - m of every frame i = 1..n, with m = (n + 1) / 2."""
    if n < 1 or n % 2 == 0:
        raise ValueError(f"frame count must be odd and >= 1, got {n}")
    m = (n + 1) // 2
    return [i - m for i in range(1, n + 1)]


def middle_mask(alpha: np.ndarray) -> np.ndarray:
    """round(alpha) with ties rounded up: 1 where alpha >= 0.5."""
    alpha = as_alpha(alpha)
    return (alpha >= 0.5).astype(np.float64)


def propagate_masks(middle: np.ndarray, params: AffineParams, n: int) -> List[np.ndarray]:
    """Mask of frame i = middle sampled through step_transform(params, i - m)."""
    middle = as_alpha(middle, "middle mask")
    height, width = middle.shape[:2]
    masks = []
    for k in frame_offsets(n):
        if k == 0:
            masks.append(middle.copy())
            continue
        grid = grid_generate(step_transform(params, k), height, width)
        masks.append(np.clip(grid_sample(middle, grid), 0.0, 1.0))
    return masks


def synth_alpha(middle_truth: np.ndarray, params: AffineParams, n: int) -> np.ndarray:
    """(1/n) * sum of the propagated masks."""
    masks = propagate_masks(middle_truth, params, n)
    return np.clip(temporal_mean(masks, reference_index=len(masks) // 2), 0.0, 1.0)


def inpaint_background(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Fill region pixels by repeated dilation with the mean of known 8-neighbours.

    Pixels outside the region are returned unchanged. If nothing is known the
    region is filled with zeros.
    """
    image = as_image(image)
    unknown = np.asarray(region, dtype=bool).reshape(image.shape[:2])
    filled = np.where(unknown[:, :, np.newaxis], 0.0, image)
    if unknown.all():
        logger.warning("Inpainting region covers the whole image; background left at 0")
        return filled

    footprint = np.ones((3, 3))
    while unknown.any():
        known = (~unknown).astype(np.float64)
        counts = ndimage.convolve(known, footprint, mode="constant")
        frontier = unknown & (counts > 0)
        for c in range(image.shape[2]):
            sums = ndimage.convolve(filled[:, :, c] * known, footprint, mode="constant")
            filled[:, :, c] = np.where(frontier, sums / np.maximum(counts, 1.0), filled[:, :, c])
        unknown = unknown & ~frontier
    return filled


def require_object(alpha: np.ndarray) -> None:
    """Raise DegenerateAlphaError when no pixel reaches the 0.5 threshold."""
    if not np.any(np.asarray(alpha) >= 0.5):
        raise DegenerateAlphaError("alpha map selects no object pixels (all values < 0.5)")
