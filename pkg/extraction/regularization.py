"""Penalty terms of the objective: TV under l0/l1/l2, the affine prior, data fidelity.

Every term exposes its value and its exact (sub)gradient.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from core.errors import ShapeMismatchError
from extraction.affine import AffineParams
from schemas.models import RegWeights


class TvVariant(str, Enum):
    L0 = "L0"
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class TvNorm:
    """Penalty applied to each forward difference; epsilon only matters for L0."""
    variant: TvVariant = TvVariant.L0
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", TvVariant(self.variant))
        if self.variant is TvVariant.L0 and not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"L0 epsilon must lie in (0, 1], got {self.epsilon}")


def epsilon_at(iteration: int, epsilon_init: float, halving_period: int) -> float:
    """epsilon_init / 2^floor(iteration / halving_period)."""
    return epsilon_init / 2.0 ** (iteration // halving_period)


def _as_3d(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[:, :, np.newaxis] if img.ndim == 2 else img


def forward_differences(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical forward differences; zero in the last column/row."""
    img = _as_3d(img)
    dh = np.zeros_like(img)
    dv = np.zeros_like(img)
    dh[:, :-1] = img[:, 1:] - img[:, :-1]
    dv[:-1, :] = img[1:, :] - img[:-1, :]
    return dh, dv


def _phi(d: np.ndarray, norm: TvNorm) -> np.ndarray:
    if norm.variant is TvVariant.L0:
        return np.where(np.abs(d) <= norm.epsilon, d * d / norm.epsilon ** 2, 1.0)
    if norm.variant is TvVariant.L1:
        return np.abs(d)
    return d * d


def _phi_prime(d: np.ndarray, norm: TvNorm) -> np.ndarray:
    if norm.variant is TvVariant.L0:
        return np.where(np.abs(d) <= norm.epsilon, 2.0 * d / norm.epsilon ** 2, 0.0)
    if norm.variant is TvVariant.L1:
        return np.sign(d)
    return 2.0 * d


def tv_value(img: np.ndarray, norm: TvNorm) -> float:
    dh, dv = forward_differences(img)
    return float(np.sum(_phi(dh, norm)) + np.sum(_phi(dv, norm)))


def tv_grad(img: np.ndarray, norm: TvNorm) -> np.ndarray:
    """Exact gradient of tv_value, same shape as the (3-D) image."""
    img = _as_3d(img)
    dh, dv = forward_differences(img)
    ph = _phi_prime(dh, norm)
    pv = _phi_prime(dv, norm)
    grad = np.zeros_like(img)
    grad[:, 1:] += ph[:, :-1]
    grad[:, :-1] -= ph[:, :-1]
    grad[1:, :] += pv[:-1, :]
    grad[:-1, :] -= pv[:-1, :]
    return grad


def affine_prior_value(
    params: AffineParams,
    weights: RegWeights,
    predicted_alpha: np.ndarray,
    alpha: np.ndarray,
) -> float:
    """w_l ||A_l - E||^2 + w_t ||A_t||^2 + w_alpha sum |predicted_alpha - alpha|."""
    linear, translation, alpha_term = affine_prior_terms(params, weights, predicted_alpha, alpha)
    return linear + translation + alpha_term


def affine_prior_terms(
    params: AffineParams,
    weights: RegWeights,
    predicted_alpha: np.ndarray,
    alpha: np.ndarray,
) -> Tuple[float, float, float]:
    """The three prior terms separately, in value order."""
    if predicted_alpha.shape != alpha.shape:
        raise ShapeMismatchError(
            f"predicted alpha {predicted_alpha.shape} and alpha {alpha.shape} differ in shape"
        )
    linear = weights.w_l * float(np.sum((params.linear - np.eye(2)) ** 2))
    translation = weights.w_t * float(np.sum(params.translation ** 2))
    alpha_term = weights.w_alpha * float(np.sum(np.abs(predicted_alpha - alpha)))
    return linear, translation, alpha_term


def affine_prior_grad(
    params: AffineParams,
    weights: RegWeights,
    predicted_alpha: np.ndarray,
    alpha: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """(gradient over the six entries, gradient over predicted_alpha)."""
    if predicted_alpha.shape != alpha.shape:
        raise ShapeMismatchError(
            f"predicted alpha {predicted_alpha.shape} and alpha {alpha.shape} differ in shape"
        )
    d_linear = 2.0 * weights.w_l * (params.linear - np.eye(2))
    d_translation = 2.0 * weights.w_t * params.translation
    d_params = np.hstack([d_linear, d_translation[:, np.newaxis]]).ravel()
    d_alpha = weights.w_alpha * np.sign(predicted_alpha - alpha)
    return d_params, d_alpha


def data_term_value(residual: np.ndarray, kind: str = "l1", delta: float = 1e-3) -> float:
    """Sum of |r| (l1) or of sqrt(r^2 + delta^2) - delta (charbonnier)."""
    if kind == "charbonnier":
        return float(np.sum(np.sqrt(residual * residual + delta * delta) - delta))
    return float(np.sum(np.abs(residual)))


def data_term_grad(residual: np.ndarray, kind: str = "l1", delta: float = 1e-3) -> np.ndarray:
    """d(data term)/d(residual); sign(0) = 0 for l1."""
    if kind == "charbonnier":
        return residual / np.sqrt(residual * residual + delta * delta)
    return np.sign(residual)
