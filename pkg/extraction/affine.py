"""Six-parameter affine motion model with a differentiable bilinear grid sampler.

Coordinates are normalized per axis to [-1, 1]: pixel 0 maps to -1 and
pixel dim-1 to +1, so the same parameters apply at every resolution.
Grids map TARGET coordinates to SOURCE coordinates:

    (x_s, y_s) = linear @ (x_t, y_t) + translation

Parameter vectors use the order (θ11, θ12, θ13, θ21, θ22, θ23), i.e. the
2x3 matrix [linear | translation] read row by row.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import sparse

from core.errors import SingularTransformError

DET_FLOOR = 1e-6
# pixel coordinates this close to an integer are snapped onto it
SNAP_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class AffineParams:
    """A = [A_l | A_t] in normalized coordinates."""
    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        linear = np.array(self.linear, dtype=np.float64).reshape(2, 2)
        translation = np.array(self.translation, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(linear)) and np.all(np.isfinite(translation))):
            raise SingularTransformError("affine parameters must be finite")
        linear.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_vector(cls, theta) -> "AffineParams":
        m = np.asarray(theta, dtype=np.float64).reshape(2, 3)
        return cls(m[:, :2], m[:, 2])

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.linear, self.translation[:, np.newaxis]])

    def as_vector(self) -> np.ndarray:
        return self.matrix.ravel()

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.linear, np.eye(2)) and not np.any(self.translation))


@dataclass(frozen=True, eq=False)
class SampleGrid:
    """Per-target-pixel source coordinates (normalized), each of shape (height, width)."""
    x: np.ndarray
    y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.x.shape


def normalized_axis(n: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n)


def grid_generate(params: AffineParams, height: int, width: int) -> SampleGrid:
    """Apply the affine map to every target pixel's normalized coordinate."""
    if height < 2 or width < 2:
        raise ValueError(f"grid must be at least 2x2, got {height}x{width}")
    ty, tx = np.meshgrid(normalized_axis(height), normalized_axis(width), indexing="ij")
    (a11, a12), (a21, a22) = params.linear
    t1, t2 = params.translation
    xs = a11 * tx + a12 * ty + t1
    ys = a21 * tx + a22 * ty + t2
    return SampleGrid(x=xs, y=ys, target_x=tx, target_y=ty)


def _to_pixels(coord: np.ndarray, n: int) -> np.ndarray:
    px = (coord + 1.0) * (0.5 * (n - 1))
    nearest = np.rint(px)
    return np.where(np.abs(px - nearest) < SNAP_TOLERANCE, nearest, px)


def _bilinear_taps(grid: SampleGrid, src_height: int, src_width: int):
    """Floor indices and fractional offsets of the 2x2 footprint per target pixel."""
    px = _to_pixels(grid.x, src_width).ravel()
    py = _to_pixels(grid.y, src_height).ravel()
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    return px, py, x0, y0


def sampling_operator(grid: SampleGrid, src_height: int, src_width: int) -> sparse.csr_matrix:
    """Sparse (target pixels x source pixels) matrix of bilinear weights.

    Taps falling outside the source contribute nothing.
    """
    px, py, x0, y0 = _bilinear_taps(grid, src_height, src_width)
    fx = px - x0
    fy = py - y0
    n_target = px.size
    target = np.arange(n_target)

    rows, cols, vals = [], [], []
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            w = wx * wy
            keep = (xi >= 0) & (xi < src_width) & (yi >= 0) & (yi < src_height) & (w != 0.0)
            rows.append(target[keep])
            cols.append(yi[keep] * src_width + xi[keep])
            vals.append(w[keep])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_target, src_height * src_width),
    )


def apply_operator(operator: sparse.csr_matrix, src: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Sample a (H, W, C) source through a sampling operator onto a target shape."""
    channels = src.shape[2]
    flat = src.reshape(-1, channels)
    return np.asarray(operator @ flat).reshape(shape[0], shape[1], channels)


def transpose_operator(operator: sparse.csr_matrix, grad: np.ndarray, src_shape: Tuple[int, int]) -> np.ndarray:
    """Back-propagate a target-shaped gradient onto the source grid."""
    channels = grad.shape[2]
    flat = grad.reshape(-1, channels)
    return np.asarray(operator.T @ flat).reshape(src_shape[0], src_shape[1], channels)


def grid_sample(src: np.ndarray, grid: SampleGrid) -> np.ndarray:
    """Bilinear read of src at the grid's source coordinates (zero outside)."""
    op = sampling_operator(grid, src.shape[0], src.shape[1])
    return apply_operator(op, src, grid.shape)


def sample_grad_image(grid: SampleGrid, src_height: int, src_width: int) -> sparse.csr_matrix:
    """Jacobian of grid_sample with respect to the source pixels.

    The sampler is linear in the source, so this is the sampling operator
    itself; its transpose carries output gradients back to the source.
    """
    return sampling_operator(grid, src_height, src_width)


def sample_grad_coords(src: np.ndarray, grid: SampleGrid) -> Tuple[np.ndarray, np.ndarray]:
    """d(output)/d(x_s), d(output)/d(y_s) per target pixel and channel, in pixel units.

    Uses g(x, m) = 0 if |m - x| >= 1, +1 if m >= x, -1 if m < x, so at
    integer-aligned coordinates only the pixel at x itself contributes (+1).
    """
    src_height, src_width, channels = src.shape
    px, py, x0, y0 = _bilinear_taps(grid, src_height, src_width)
    flat = src.reshape(-1, channels)

    def tap_values(xi, yi):
        inside = (xi >= 0) & (xi < src_width) & (yi >= 0) & (yi < src_height)
        idx = np.where(inside, yi * src_width + xi, 0)
        return np.where(inside[:, np.newaxis], flat[idx], 0.0)

    def kernel(dist):
        return np.maximum(0.0, 1.0 - np.abs(dist))

    def g(pos, tap):
        return np.where(np.abs(tap - pos) >= 1.0, 0.0, np.where(tap >= pos, 1.0, -1.0))

    gx = np.zeros((px.size, channels))
    gy = np.zeros((px.size, channels))
    for dy in (0, 1):
        yi = y0 + dy
        for dx in (0, 1):
            xi = x0 + dx
            vals = tap_values(xi, yi)
            gx += vals * (kernel(py - yi) * g(px, xi))[:, np.newaxis]
            gy += vals * (kernel(px - xi) * g(py, yi))[:, np.newaxis]
    height, width = grid.shape
    return gx.reshape(height, width, channels), gy.reshape(height, width, channels)


def pixel_scale(src_height: int, src_width: int) -> Tuple[float, float]:
    """d(pixel)/d(normalized) factors for x and y."""
    return 0.5 * (src_width - 1), 0.5 * (src_height - 1)


def coords_to_params_grad(grid: SampleGrid, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Chain per-pixel normalized-coordinate gradients into the six entries."""
    return np.array([
        np.sum(gx * grid.target_x),
        np.sum(gx * grid.target_y),
        np.sum(gx),
        np.sum(gy * grid.target_x),
        np.sum(gy * grid.target_y),
        np.sum(gy),
    ])


def invert(params: AffineParams) -> AffineParams:
    """(A_l^-1, -A_l^-1 A_t)."""
    if abs(params.det) < DET_FLOOR:
        raise SingularTransformError(f"affine linear part is singular (det={params.det:.3e})")
    inv = np.linalg.inv(params.linear)
    return AffineParams(inv, -inv @ params.translation)


def compose(a: AffineParams, b: AffineParams) -> AffineParams:
    """Coordinate map of b followed by a: (a.L b.L, a.L b.t + a.t)."""
    return AffineParams(a.linear @ b.linear, a.linear @ b.translation + a.translation)


def step_transform(params: AffineParams, k: int) -> AffineParams:
    """k-fold composition of params (k > 0), identity (k = 0) or of invert(params) (k < 0)."""
    if k == 0:
        return AffineParams.identity()
    base = params if k > 0 else invert(params)
    result = base
    for _ in range(abs(k) - 1):
        result = compose(base, result)
    return result


def _basis_directions() -> np.ndarray:
    return np.eye(6).reshape(6, 2, 3)


def step_transform_jacobian(params: AffineParams, k: int) -> np.ndarray:
    """6x6 matrix J with J[i, j] = d step_transform(params, k)[i] / d params[j].

    Forward-mode product rule through the recursion
    L_k = B L_{k-1}, t_k = B t_{k-1} + b, with (B, b) = params or its inverse.
    """
    if k == 0:
        return np.zeros((6, 6))
    directions = _basis_directions()
    if k > 0:
        base_l, base_t = params.linear, params.translation
        d_base_l = directions[:, :, :2]
        d_base_t = directions[:, :, 2]
    else:
        inv = invert(params)
        base_l, base_t = inv.linear, inv.translation
        d_lin = directions[:, :, :2]
        d_tr = directions[:, :, 2]
        # d(L^-1) = -L^-1 dL L^-1 ; d(-L^-1 t) = -d(L^-1) t - L^-1 dt
        d_base_l = -np.einsum("ij,njk,kl->nil", base_l, d_lin, base_l)
        d_base_t = -np.einsum("nij,j->ni", d_base_l, params.translation) - np.einsum("ij,nj->ni", base_l, d_tr)

    acc_l, acc_t = base_l, base_t
    d_acc_l, d_acc_t = d_base_l, d_base_t
    for _ in range(abs(k) - 1):
        d_acc_l, d_acc_t = (
            np.einsum("nij,jk->nik", d_base_l, acc_l) + np.einsum("ij,njk->nik", base_l, d_acc_l),
            np.einsum("nij,j->ni", d_base_l, acc_t) + np.einsum("ij,nj->ni", base_l, d_acc_t) + d_base_t,
        )
        acc_l, acc_t = base_l @ acc_l, base_l @ acc_t + base_t

    d_matrix = np.concatenate([d_acc_l, d_acc_t[:, :, np.newaxis]], axis=2)
    return d_matrix.reshape(6, 6).T


def step_transform_jacobian_fd(params: AffineParams, k: int, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference counterpart of step_transform_jacobian."""
    theta = params.as_vector()
    jac = np.zeros((6, 6))
    for j in range(6):
        step = np.zeros(6)
        step[j] = h
        plus = step_transform(AffineParams.from_vector(theta + step), k).as_vector()
        minus = step_transform(AffineParams.from_vector(theta - step), k).as_vector()
        jac[:, j] = (plus - minus) / (2 * h)
    return jac
