"""Pixel-grid helpers: validation, raster I/O, bicubic resampling and quality metrics.

Images are float64 numpy arrays of shape (height, width, channels) with
intensities in [0, 1]. Channels is 1 (grayscale, masks, alpha maps) or 3.
"""
import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError
from skimage.metrics import structural_similarity

from core.config import config
from core.errors import ImageFormatError, ShapeMismatchError

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SUPPORTED_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}

# Catmull-Rom member of the cubic convolution family
BICUBIC_A = -0.5

SSIM_SIGMA = 1.5
# window side implied by sigma 1.5 and a 3.5-sigma truncation
SSIM_WINDOW = 11


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate and coerce an array into the (H, W, C) float64 image layout.

    2-D input is treated as a single-channel image.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeMismatchError(f"{name} must be HxWx1 or HxWx3, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ShapeMismatchError(f"{name} must be at least 2x2, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatchError(f"{name} contains non-finite intensities")
    return np.ascontiguousarray(arr)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    """Raise ShapeMismatchError unless both arrays share their shape."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def load_image(path: PathLike) -> np.ndarray:
    """Load an 8-bit PNG/PPM/PGM file as an image scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise ImageFormatError(f"image not found: {path}")
    try:
        with PILImage.open(path) as raw:
            raw.load()
            mode = raw.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise ImageFormatError(f"unsupported bit depth ({mode}) in {path}")
            if mode in ("1", "L", "LA"):
                pixels = np.asarray(raw.convert("L"), dtype=np.uint8)
            else:
                pixels = np.asarray(raw.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageFormatError(f"cannot read image {path}: {e}") from e

    if pixels.size == 0:
        raise ImageFormatError(f"zero-sized image: {path}")
    logger.debug(f"Loaded {path} ({mode}, {pixels.shape[1]}x{pixels.shape[0]})")
    return as_image(pixels.astype(np.float64) / 255.0, name=str(path))


def save_image(img: np.ndarray, path: PathLike) -> Path:
    """Quantize to 8 bits and write PNG (or PGM/PPM, chosen by suffix)."""
    path = Path(path)
    img = as_image(img)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageFormatError(f"unsupported output format: {path.suffix}")
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if pixels.shape[2] == 1:
        out = PILImage.fromarray(pixels[:, :, 0])
    else:
        out = PILImage.fromarray(pixels)
    path.parent.mkdir(parents=True, exist_ok=True)
    out.save(path)
    logger.debug(f"Wrote {path}")
    return path


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    a = BICUBIC_A
    ax = np.abs(x)
    near = ((a + 2) * ax - (a + 3)) * ax * ax + 1
    far = ((a * ax - 5 * a) * ax + 8 * a) * ax - 4 * a
    return np.where(ax < 1, near, np.where(ax < 2, far, 0.0))


def _bicubic_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix with half-pixel centres and clamped taps."""
    scale = n_out / n_in
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(centres).astype(int)
    frac = centres - base
    weights = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        w = _cubic_kernel(frac - tap)
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(weights, (rows, idx), w)
    return weights / weights.sum(axis=1, keepdims=True)


def resize_to(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bicubic resample to an explicit shape; output clamped to [0, 1]."""
    img = as_image(img)
    if height < 2 or width < 2:
        raise ShapeMismatchError(f"resampled size {height}x{width} is below 2x2")
    if (height, width) == img.shape[:2]:
        return img.copy()
    wy = _bicubic_weights(img.shape[0], height)
    wx = _bicubic_weights(img.shape[1], width)
    out = np.einsum("ih,hwc,jw->ijc", wy, img, wx)
    return np.clip(out, 0.0, 1.0)


def scaled_shape(height: int, width: int, factor: float) -> tuple:
    """round(dim * factor) per axis, rounding halves up."""
    return int(np.floor(height * factor + 0.5)), int(np.floor(width * factor + 0.5))


def resample_bicubic(img: np.ndarray, factor: float) -> np.ndarray:
    """Resample by a positive factor with the Catmull-Rom bicubic kernel."""
    if not factor > 0:
        raise ShapeMismatchError(f"resample factor must be positive, got {factor}")
    img = as_image(img)
    height, width = scaled_shape(img.shape[0], img.shape[1], factor)
    return resize_to(img, height, width)


def temporal_mean(frames: Sequence[np.ndarray], reference_index: int = 0) -> np.ndarray:
    """Average frames as reference + sum(frame - reference) / n.

    Averaging identical frames returns the reference bit-for-bit.
    """
    if not frames:
        raise ShapeMismatchError("cannot average an empty frame list")
    reference = frames[reference_index]
    offset = np.zeros_like(reference)
    for frame in frames:
        offset += frame - reference
    return reference + offset / len(frames)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio with unit peak; inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """PSNR restricted to pixels where mask > 0.5 (all channels of those pixels)."""
    a = as_image(a, "a")
    b = as_image(b, "b")
    require_same_shape(a, b)
    region = np.asarray(mask, dtype=np.float64).reshape(a.shape[0], a.shape[1], -1)[:, :, 0] > 0.5
    if not region.any():
        raise ShapeMismatchError("mask selects no pixels")
    mse = float(np.mean((a[region] - b[region]) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    a = as_image(a, "a")
    b = as_image(b, "b")
    require_same_shape(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}"
        )
    if np.array_equal(a, b):
        return 1.0
    return float(structural_similarity(
        a, b,
        data_range=1.0,
        channel_axis=2,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
    ))
