"""Exception hierarchy shared by the pipeline, the CLI and the API."""
from typing import Optional


class BlurClipError(ValueError):
    """Base class for every failure the pipeline reports deliberately."""


class ImageFormatError(BlurClipError):
    """Unreadable raster, unsupported bit depth or zero-sized image."""


class ShapeMismatchError(BlurClipError):
    """Images that must agree in shape do not, or an image is too small."""


class SingularTransformError(BlurClipError):
    """Affine linear part with |det| below the invertibility floor."""


class DegenerateAlphaError(BlurClipError):
    """Alpha map that selects no object pixels."""


class MotionSpecError(BlurClipError):
    """Motion description that cannot be turned into affine parameters."""


class ConfigError(BlurClipError):
    """Invalid solver configuration."""


class NonFiniteLossError(BlurClipError):
    """Objective or an updated unknown became NaN or infinite during optimization."""

    def __init__(self, scale_index: int, iteration: int, value: Optional[float] = None, what: str = "objective"):
        self.scale_index = scale_index
        self.iteration = iteration
        self.value = value
        self.what = what
        detail = f" ({value})" if value is not None else ""
        super().__init__(
            f"non-finite {what}{detail} at scale {scale_index}, iteration {iteration}"
        )
