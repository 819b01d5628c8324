"""Forward blur model: render N frames from the reference state and average them.

Frame i (offset k = i - m from the middle frame) is

    M_k * F_k + (1 - M_k) * background

where F_k and M_k are the foreground and the middle mask sampled through
step_transform(params, k). The background is static over the exposure.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse

from core.config import config
from core.errors import DegenerateAlphaError, ShapeMismatchError
from core.imaging import as_image, require_same_shape, temporal_mean
from extraction.affine import (
    AffineParams,
    SampleGrid,
    apply_operator,
    grid_generate,
    sampling_operator,
    step_transform,
)
from extraction.segmentation import (
    as_alpha,
    frame_offsets,
    inpaint_background,
    require_object,
    synth_alpha,
)

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

DEFAULT_NOISE_SIGMA = 0.01


@dataclass(frozen=True, eq=False)
class ReferenceState:
    """Optimized unknowns: foreground appearance, static background, soft middle mask."""
    foreground: np.ndarray
    background: np.ndarray
    middle_mask: np.ndarray

    def __post_init__(self):
        fg = as_image(self.foreground, "foreground")
        bg = as_image(self.background, "background")
        mask = as_alpha(self.middle_mask, "middle mask")
        require_same_shape(fg, bg, "foreground and background")
        if mask.shape[:2] != fg.shape[:2]:
            raise ShapeMismatchError(
                f"middle mask {mask.shape[:2]} does not match foreground {fg.shape[:2]}"
            )
        object.__setattr__(self, "foreground", fg)
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "middle_mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.foreground.shape[:2]

    def composite(self) -> np.ndarray:
        m = self.middle_mask
        return m * self.foreground + (1.0 - m) * self.background

    def replace(self, **changes) -> "ReferenceState":
        values = {
            "foreground": self.foreground,
            "background": self.background,
            "middle_mask": self.middle_mask,
        }
        values.update(changes)
        return ReferenceState(**values)


@dataclass(frozen=True, eq=False)
class VideoClip:
    """N sharp frames generated from one reference state and one affine step."""
    frames: List[np.ndarray]
    params: AffineParams
    middle_index: int

    @property
    def middle_frame(self) -> np.ndarray:
        return self.frames[self.middle_index - 1]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class FramePass:
    """Intermediates of one rendered frame, kept for back-propagation."""
    offset: int
    transform: AffineParams
    grid: SampleGrid
    operator: sparse.csr_matrix
    foreground: np.ndarray
    mask: np.ndarray
    frame: np.ndarray


@dataclass
class RenderStack:
    """All frame passes of one forward evaluation."""
    passes: List[FramePass] = field(default_factory=list)

    @property
    def frames(self) -> List[np.ndarray]:
        return [p.frame for p in self.passes]

    @property
    def masks(self) -> List[np.ndarray]:
        return [p.mask for p in self.passes]

    @property
    def middle_position(self) -> int:
        return len(self.passes) // 2

    def blurred(self) -> np.ndarray:
        return temporal_mean(self.frames, self.middle_position)

    def predicted_alpha(self) -> np.ndarray:
        return np.clip(temporal_mean(self.masks, self.middle_position), 0.0, 1.0)


def render_stack(state: ReferenceState, params: AffineParams, n: int) -> RenderStack:
    """Forward pass shared by rendering, blurring and the solver's gradients."""
    height, width = state.shape
    stack = RenderStack()
    for k in frame_offsets(n):
        transform = step_transform(params, k)
        grid = grid_generate(transform, height, width)
        op = sampling_operator(grid, height, width)
        fg = apply_operator(op, state.foreground, (height, width))
        if k == 0:
            mask = state.middle_mask.copy()
        else:
            mask = np.clip(apply_operator(op, state.middle_mask, (height, width)), 0.0, 1.0)
        frame = mask * fg + (1.0 - mask) * state.background
        stack.passes.append(FramePass(k, transform, grid, op, fg, mask, frame))
    return stack


def render_frames(state: ReferenceState, params: AffineParams, n: int) -> VideoClip:
    """Frames I_1..I_n; the middle one uses the identity transform."""
    stack = render_stack(state, params, n)
    return VideoClip(frames=stack.frames, params=params, middle_index=(n + 1) // 2)


def blur_forward(state: ReferenceState, params: AffineParams, n: int) -> np.ndarray:
    """Pixel-wise mean of the n rendered frames."""
    return render_stack(state, params, n).blurred()


def blur_forward_mask(middle_mask: np.ndarray, params: AffineParams, n: int) -> np.ndarray:
    """Mean of the n propagated soft masks, i.e. the model-predicted alpha map."""
    return synth_alpha(middle_mask, params, n)


def reference_state_from_sharp(sharp: np.ndarray, alpha_truth: np.ndarray) -> ReferenceState:
    """Binarize the alpha at 0.5, cut the object out and inpaint the background behind it."""
    sharp = as_image(sharp, "sharp")
    mask = (as_alpha(alpha_truth, "alpha truth") >= 0.5).astype(np.float64)
    return ReferenceState(
        foreground=sharp * mask,
        background=inpaint_background(sharp, mask[:, :, 0] > 0),
        middle_mask=mask,
    )


def synthesize_case(
    sharp: np.ndarray,
    alpha_truth: np.ndarray,
    params: AffineParams,
    n: int,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray, VideoClip]:
    """Build a blurred observation, its alpha map and the ground-truth clip.

    alpha_truth is the object's coverage in the middle (sharp) frame; it is
    binarized at 0.5. The background behind the object is inpainted from the
    surrounding pixels of the sharp image.
    """
    sharp = as_image(sharp, "sharp")
    alpha_truth = as_alpha(alpha_truth, "alpha truth")
    if alpha_truth.shape[:2] != sharp.shape[:2]:
        raise ShapeMismatchError(
            f"alpha {alpha_truth.shape[:2]} does not match sharp image {sharp.shape[:2]}"
        )
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    try:
        require_object(alpha_truth)
    except DegenerateAlphaError:
        logger.error("❌ Synthetic case has an empty object mask")
        raise

    state = reference_state_from_sharp(sharp, alpha_truth)
    mask = state.middle_mask
    stack = render_stack(state, params, n)
    truth = VideoClip(frames=stack.frames, params=params, middle_index=(n + 1) // 2)
    blurred = stack.blurred()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        blurred = np.clip(blurred + rng.normal(0.0, noise_sigma, size=blurred.shape), 0.0, 1.0)
    alpha = synth_alpha(mask, params, n)
    logger.info(
        f"Synthesized {sharp.shape[1]}x{sharp.shape[0]} case: n={n}, noise={noise_sigma}, "
        f"params={np.round(params.as_vector(), 4).tolist()}"
    )
    return blurred, alpha, truth


def composite_clips(
    foregrounds: Sequence[List[np.ndarray]],
    masks: Sequence[List[np.ndarray]],
    background: np.ndarray,
) -> List[np.ndarray]:
    """Alpha-blend each object's warped foreground over a shared background, in argument order.

    foregrounds[j][i] and masks[j][i] are object j's warped foreground and
    propagated mask in frame i; frame i is built as m * F + (1 - m) * frame.
    """
    if not foregrounds:
        return []
    if len(foregrounds) != len(masks):
        raise ShapeMismatchError("need one mask sequence per object")
    n = len(foregrounds[0])
    if any(len(f) != n for f in foregrounds) or any(len(m) != n for m in masks):
        raise ShapeMismatchError("all objects must have the same frame count")
    frames = []
    for i in range(n):
        frame = background.copy()
        for object_foregrounds, object_masks in zip(foregrounds, masks):
            m = object_masks[i]
            frame = m * object_foregrounds[i] + (1.0 - m) * frame
        frames.append(frame)
    return frames


def object_layers(state: ReferenceState, params: AffineParams, n: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Per-frame warped foregrounds and masks of one object, as used for compositing."""
    stack = render_stack(state, params, n)
    return [p.foreground for p in stack.passes], stack.masks
