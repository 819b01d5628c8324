"""Alternating gradient descent over the reference state and the affine step.

Each iteration updates the image unknowns with the affine parameters fixed,
then the affine parameters with the image fixed. The loop runs over a
coarse-to-fine pyramid spaced by sqrt(2), carrying the (resolution-free)
affine parameters unchanged from scale to scale.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.config import config
from core.errors import NonFiniteLossError, ShapeMismatchError, SingularTransformError
from core.imaging import as_image, psnr, resize_to, scaled_shape, ssim
from extraction.affine import (
    DET_FLOOR,
    AffineParams,
    coords_to_params_grad,
    pixel_scale,
    sample_grad_coords,
    step_transform_jacobian,
    transpose_operator,
)
from extraction.formation import ReferenceState, RenderStack, VideoClip, render_frames, render_stack
from extraction.regularization import (
    TvNorm,
    affine_prior_grad,
    affine_prior_terms,
    data_term_grad,
    data_term_value,
    epsilon_at,
    tv_grad,
    tv_value,
)
from extraction.segmentation import as_alpha, middle_mask, require_object
from schemas.models import Metrics, SolverConfig

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

# singular-value floor used when re-projecting A_l; its square clears DET_FLOOR
MIN_SINGULAR_VALUE = 1.1e-3

# alpha values above this count as object support when sizing the affine step
ALPHA_SUPPORT_FLOOR = 1.0 / 255.0


@dataclass
class ObjectiveComponents:
    """Objective terms of one evaluation."""
    data: float
    tv: float
    prior_linear: float
    prior_translation: float
    prior_alpha: float

    @property
    def total(self) -> float:
        return self.data + self.tv + self.prior_linear + self.prior_translation + self.prior_alpha

    def as_dict(self) -> Dict[str, float]:
        return {
            "total": self.total,
            "data": self.data,
            "tv": self.tv,
            "prior_linear": self.prior_linear,
            "prior_translation": self.prior_translation,
            "prior_alpha": self.prior_alpha,
        }


@dataclass
class ObjectiveGradient:
    """Gradient of the objective; the affine part is split by term."""
    foreground: Optional[np.ndarray]
    background: Optional[np.ndarray]
    params_data: np.ndarray = field(default_factory=lambda: np.zeros(6))
    params_alpha: np.ndarray = field(default_factory=lambda: np.zeros(6))
    params_prior: np.ndarray = field(default_factory=lambda: np.zeros(6))

    @property
    def params(self) -> np.ndarray:
        return self.params_data + self.params_alpha + self.params_prior


@dataclass
class ExtractionResult:
    """Recovered clip, unknowns and per-scale loss traces."""
    clip: VideoClip
    state: ReferenceState
    params: AffineParams
    loss_trace: List[List[float]]
    component_trace: List[List[ObjectiveComponents]]
    metrics: Optional[Metrics] = None
    selected_components: List[Optional[ObjectiveComponents]] = field(default_factory=list)

    @property
    def final_components(self) -> Optional[ObjectiveComponents]:
        """Objective terms of the iterate kept at the last scale that ran."""
        for components in reversed(self.selected_components):
            if components is not None:
                return components
        return None


def _check_inputs(state: ReferenceState, blurred: np.ndarray, alpha: np.ndarray) -> None:
    if blurred.shape != state.foreground.shape:
        raise ShapeMismatchError(
            f"blurred image {blurred.shape} does not match state {state.foreground.shape}"
        )
    if alpha.shape != state.middle_mask.shape:
        raise ShapeMismatchError(
            f"alpha map {alpha.shape} does not match middle mask {state.middle_mask.shape}"
        )


def _tv_norm(cfg: SolverConfig, epsilon: Optional[float]) -> TvNorm:
    return TvNorm(cfg.tv_variant, cfg.epsilon_init if epsilon is None else epsilon)


def _evaluate(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float],
) -> Tuple[RenderStack, ObjectiveComponents, np.ndarray, np.ndarray]:
    _check_inputs(state, blurred, alpha)
    stack = render_stack(state, params, cfg.n_frames)
    residual = stack.blurred() - blurred
    predicted_alpha = stack.predicted_alpha()
    prior_linear, prior_translation, prior_alpha = affine_prior_terms(
        params, cfg.weights, predicted_alpha, alpha
    )
    components = ObjectiveComponents(
        data=data_term_value(residual, cfg.data_term, cfg.charbonnier_delta),
        tv=cfg.w_tv * tv_value(state.foreground, _tv_norm(cfg, epsilon)),
        prior_linear=prior_linear,
        prior_translation=prior_translation,
        prior_alpha=prior_alpha,
    )
    return stack, components, residual, predicted_alpha


def objective(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float] = None,
) -> Tuple[float, ObjectiveComponents]:
    """Data fidelity + w_tv * TV(foreground) + affine prior."""
    _, components, _, _ = _evaluate(state, params, blurred, alpha, cfg, epsilon)
    return components.total, components


def _gradient_from_stack(
    stack: RenderStack,
    state: ReferenceState,
    params: AffineParams,
    residual: np.ndarray,
    predicted_alpha: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float],
    need_image: bool,
    need_affine: bool,
) -> ObjectiveGradient:
    height, width = state.shape
    n = len(stack.passes)
    upstream = data_term_grad(residual, cfg.data_term, cfg.charbonnier_delta) / n
    d_params_prior, d_alpha = affine_prior_grad(params, cfg.weights, predicted_alpha, alpha)
    alpha_upstream = d_alpha / n
    sx, sy = pixel_scale(height, width)

    grad = ObjectiveGradient(
        foreground=np.zeros_like(state.foreground) if need_image else None,
        background=np.zeros_like(state.background) if need_image else None,
        params_prior=d_params_prior if need_affine else np.zeros(6),
    )
    # ordered accumulation over frames keeps results bit-reproducible
    for p in stack.passes:
        if need_image:
            grad.foreground += transpose_operator(p.operator, p.mask * upstream, (height, width))
            grad.background += (1.0 - p.mask) * upstream
        if need_affine and p.offset != 0:
            dfx, dfy = sample_grad_coords(state.foreground, p.grid)
            dmx, dmy = sample_grad_coords(state.middle_mask, p.grid)
            contrast = p.foreground - state.background
            data_x = np.sum(upstream * (p.mask * dfx + contrast * dmx), axis=2) * sx
            data_y = np.sum(upstream * (p.mask * dfy + contrast * dmy), axis=2) * sy
            alpha_x = alpha_upstream[:, :, 0] * dmx[:, :, 0] * sx
            alpha_y = alpha_upstream[:, :, 0] * dmy[:, :, 0] * sy
            jac = step_transform_jacobian(params, p.offset)
            grad.params_data += jac.T @ coords_to_params_grad(p.grid, data_x, data_y)
            grad.params_alpha += jac.T @ coords_to_params_grad(p.grid, alpha_x, alpha_y)
    if need_image and cfg.w_tv > 0:
        grad.foreground += cfg.w_tv * tv_grad(state.foreground, _tv_norm(cfg, epsilon))
    return grad


def objective_gradient(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float] = None,
) -> ObjectiveGradient:
    """Exact gradient of objective() w.r.t. foreground, background and the six entries."""
    stack, _, residual, predicted_alpha = _evaluate(state, params, blurred, alpha, cfg, epsilon)
    return _gradient_from_stack(
        stack, state, params, residual, predicted_alpha, alpha, cfg, epsilon,
        need_image=True, need_affine=True,
    )


def _image_update(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float],
) -> Tuple[np.ndarray, np.ndarray, ObjectiveComponents]:
    """Updated (foreground, background), unvalidated, and the objective before the step."""
    stack, components, residual, predicted_alpha = _evaluate(state, params, blurred, alpha, cfg, epsilon)
    grad = _gradient_from_stack(
        stack, state, params, residual, predicted_alpha, alpha, cfg, epsilon,
        need_image=True, need_affine=False,
    )
    foreground = np.clip(state.foreground - cfg.lr_image * grad.foreground, 0.0, 1.0)
    background = np.clip(state.background - cfg.lr_image * grad.background, 0.0, 1.0)
    return foreground, background, components


def step_image(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float] = None,
) -> ReferenceState:
    """One descent step on foreground and background with the affine step fixed."""
    foreground, background, _ = _image_update(state, params, blurred, alpha, cfg, epsilon)
    return state.replace(foreground=foreground, background=background)


def project_invertible(theta: np.ndarray) -> AffineParams:
    """Clamp the singular values of A_l from below so |det A_l| >= DET_FLOOR."""
    if not np.all(np.isfinite(theta)):
        raise SingularTransformError(f"affine update produced non-finite entries: {theta}")
    params = AffineParams.from_vector(theta)
    if abs(params.det) >= DET_FLOOR:
        return params
    u, s, vt = np.linalg.svd(params.linear)
    logger.warning(f"Re-projecting near-singular A_l (singular values {s})")
    linear = u @ np.diag(np.maximum(s, MIN_SINGULAR_VALUE)) @ vt
    projected = AffineParams(linear, params.translation)
    if abs(projected.det) < DET_FLOOR:
        raise SingularTransformError(f"re-projection failed, det={projected.det:.3e}")
    return projected


def affine_step_divisor(alpha: np.ndarray, cfg: SolverConfig) -> float:
    """Constant the affine gradient is divided by at this scale.

    "support" counts the pixels with alpha above ALPHA_SUPPORT_FLOOR, "pixels"
    is H*W and "none" is 1. The divisor is at least 1.
    """
    if cfg.affine_step_scale == "none":
        return 1.0
    if cfg.affine_step_scale == "pixels":
        return float(alpha.shape[0] * alpha.shape[1])
    return float(max(np.count_nonzero(alpha[:, :, 0] > ALPHA_SUPPORT_FLOOR), 1))


def _affine_update(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float],
) -> np.ndarray:
    """Raw theta after one gradient step, before re-projection."""
    stack, _, residual, predicted_alpha = _evaluate(state, params, blurred, alpha, cfg, epsilon)
    grad = _gradient_from_stack(
        stack, state, params, residual, predicted_alpha, alpha, cfg, epsilon,
        need_image=False, need_affine=True,
    )
    step = cfg.lr_affine / affine_step_divisor(alpha, cfg)
    return params.as_vector() - step * grad.params


def step_affine(
    state: ReferenceState,
    params: AffineParams,
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: SolverConfig,
    epsilon: Optional[float] = None,
) -> AffineParams:
    """One descent step on the six entries with the image unknowns fixed.

    The step follows the full objective gradient; its length is lr_affine
    divided by affine_step_divisor(), which is constant within a scale.
    """
    return project_invertible(_affine_update(state, params, blurred, alpha, cfg, epsilon))


def run_scale(
    blurred: np.ndarray,
    alpha: np.ndarray,
    middle_mask: np.ndarray,
    state_init: ReferenceState,
    params_init: AffineParams,
    cfg: SolverConfig,
    scale_index: int,
) -> Tuple[ReferenceState, AffineParams, List[ObjectiveComponents], Optional[ObjectiveComponents]]:
    """Alternate image and affine steps for this scale's iteration count.

    The recorded objective of iteration t is the value before its updates.
    The iterate returned is the one with the lowest objective among the
    recorded ones and the state after the last iteration, together with
    its components (None when the scale has no iterations).
    """
    state = state_init.replace(middle_mask=middle_mask)
    params = params_init
    iterations = cfg.iterations_per_scale[scale_index]
    trace: List[ObjectiveComponents] = []
    best: Optional[Tuple[ReferenceState, AffineParams, ObjectiveComponents]] = None
    epsilon = cfg.epsilon_init
    for t in range(iterations):
        epsilon = epsilon_at(t, cfg.epsilon_init, cfg.epsilon_halving_period)
        foreground, background, components = _image_update(state, params, blurred, alpha, cfg, epsilon)
        if not math.isfinite(components.total):
            raise NonFiniteLossError(scale_index, t, components.total)
        if not (np.all(np.isfinite(foreground)) and np.all(np.isfinite(background))):
            raise NonFiniteLossError(scale_index, t, what="image update")
        trace.append(components)
        if best is None or components.total < best[2].total:
            best = (state, params, components)
        state = state.replace(foreground=foreground, background=background)
        theta = _affine_update(state, params, blurred, alpha, cfg, epsilon)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteLossError(scale_index, t, what="affine update")
        params = project_invertible(theta)
        logger.debug(
            f"scale {scale_index} iter {t}: loss={components.total:.6f} eps={epsilon:.4g} "
            f"theta={np.round(params.as_vector(), 5).tolist()}"
        )
    if best is None:
        return state, params, trace, None

    _, final = objective(state, params, blurred, alpha, cfg, epsilon)
    if math.isfinite(final.total) and final.total <= best[2].total:
        best = (state, params, final)
    return best[0], best[1], trace, best[2]


def initial_params(cfg: SolverConfig) -> AffineParams:
    """Identity plus a seeded uniform perturbation of A_l; A_t = 0."""
    rng = np.random.default_rng(cfg.seed)
    perturbation = rng.uniform(-cfg.init_perturbation, cfg.init_perturbation, size=(2, 2))
    return AffineParams(np.eye(2) + perturbation, np.zeros(2))


def scale_factors(num_scales: int) -> List[float]:
    """(sqrt 2)^(s - S) for s = 1..S."""
    return [math.sqrt(2.0) ** (s - num_scales) for s in range(1, num_scales + 1)]


def extract(
    blurred: np.ndarray,
    alpha: np.ndarray,
    cfg: Optional[SolverConfig] = None,
    truth: Optional[VideoClip] = None,
) -> ExtractionResult:
    """Recover the reference state and affine step, then render the clip."""
    cfg = cfg or SolverConfig()
    blurred = as_image(blurred, "blurred")
    alpha = as_alpha(alpha)
    if alpha.shape[:2] != blurred.shape[:2]:
        raise ShapeMismatchError(
            f"alpha map {alpha.shape[:2]} does not match blurred image {blurred.shape[:2]}"
        )
    require_object(alpha)

    height, width, channels = blurred.shape
    mask_full = middle_mask(alpha)
    params = initial_params(cfg)
    state: Optional[ReferenceState] = None
    traces: List[List[ObjectiveComponents]] = []
    selected: List[Optional[ObjectiveComponents]] = []

    for s, factor in enumerate(scale_factors(cfg.num_scales)):
        h, w = scaled_shape(height, width, factor)
        blurred_s = resize_to(blurred, h, w)
        alpha_s = resize_to(alpha, h, w)
        mask_s = resize_to(mask_full, h, w)
        if state is None:
            fg = np.zeros((h, w, channels))
            bg = np.zeros((h, w, channels))
        else:
            fg = resize_to(state.foreground, h, w)
            bg = resize_to(state.background, h, w)
        state_s = ReferenceState(fg, bg, mask_s)
        logger.info(
            f"Scale {s + 1}/{cfg.num_scales}: {w}x{h}, {cfg.iterations_per_scale[s]} iterations"
        )
        try:
            state, params, trace, kept = run_scale(blurred_s, alpha_s, mask_s, state_s, params, cfg, s)
        except NonFiniteLossError:
            logger.error(f"❌ Objective diverged at scale {s + 1}")
            raise
        traces.append(trace)
        selected.append(kept)
        if kept is not None:
            logger.info(
                f"Scale {s + 1} done: loss {trace[0].total:.4f} -> {kept.total:.4f}, "
                f"theta={np.round(params.as_vector(), 4).tolist()}"
            )

    clip = render_frames(state, params, cfg.n_frames)
    metrics = None
    if truth is not None:
        metrics = Metrics(
            psnr=psnr(clip.middle_frame, truth.middle_frame),
            ssim=ssim(clip.middle_frame, truth.middle_frame),
        )
    return ExtractionResult(
        clip=clip,
        state=state,
        params=params,
        loss_trace=[[c.total for c in trace] for trace in traces],
        component_trace=traces,
        metrics=metrics,
        selected_components=selected,
    )
