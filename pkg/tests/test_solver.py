"""Tests for the objective, its gradient and the alternating optimizer."""
import math

import numpy as np
import pytest

from core.errors import DegenerateAlphaError, NonFiniteLossError, ShapeMismatchError, SingularTransformError
from extraction.affine import DET_FLOOR, AffineParams
from extraction.formation import ReferenceState, reference_state_from_sharp, synthesize_case
from extraction.regularization import TvNorm, tv_grad
from extraction.segmentation import middle_mask
from extraction.solver import (
    ObjectiveComponents,
    affine_step_divisor,
    extract,
    initial_params,
    objective,
    objective_gradient,
    project_invertible,
    run_scale,
    scale_factors,
    step_affine,
    step_image,
)
from schemas.models import SolverConfig
from tests.conftest import make_disk_scene

TRUTH = AffineParams(np.eye(2), [0.05, -0.02])


@pytest.fixture
def gradient_case():
    """16x16 noisy case evaluated away from the truth so no residual sits on a kink."""
    sharp, alpha = make_disk_scene(size=16, radius=4.5, channels=1, seed=3)
    blurred, observed_alpha, _ = synthesize_case(sharp, alpha, TRUTH, 3, noise_sigma=0.01, seed=0)
    state = reference_state_from_sharp(sharp, alpha)
    rng = np.random.default_rng(9)
    state = state.replace(
        foreground=np.clip(state.foreground + 0.05 * rng.random(state.foreground.shape), 0.0, 1.0),
        background=np.clip(state.background + 0.05 * rng.random(state.background.shape), 0.0, 1.0),
    )
    params = AffineParams(np.eye(2), [0.04, -0.03])
    cfg = SolverConfig(n_frames=3, w_tv=1e-3, tv_variant="L2")
    return state, params, blurred, observed_alpha, cfg


class TestObjective:
    """Test the objective and its terms."""

    def test_noiseless_truth_has_no_residual(self, disk_scene):
        """At the generating state and params the data and alpha terms vanish."""
        sharp, alpha = disk_scene
        blurred, observed_alpha, _ = synthesize_case(sharp, alpha, TRUTH, 7, noise_sigma=0.0)
        state = reference_state_from_sharp(sharp, alpha)
        total, components = objective(state, TRUTH, blurred, observed_alpha, SolverConfig())
        assert components.data == 0.0
        assert components.prior_alpha == 0.0
        assert total == pytest.approx(components.tv + components.prior_linear + components.prior_translation)

    def test_components_sum_to_total(self, gradient_case):
        """total is the sum of the five terms."""
        state, params, blurred, alpha, cfg = gradient_case
        total, components = objective(state, params, blurred, alpha, cfg)
        assert total == pytest.approx(sum(v for k, v in components.as_dict().items() if k != "total"))

    def test_shape_mismatch(self, gradient_case):
        """Observations must match the state."""
        state, params, blurred, alpha, cfg = gradient_case
        with pytest.raises(ShapeMismatchError):
            objective(state, params, blurred[:-1], alpha, cfg)


class TestObjectiveGradient:
    """Test the assembled gradient against finite differences."""

    def test_matches_finite_differences(self, gradient_case):
        """Foreground, background and affine gradients agree with central differences."""
        state, params, blurred, alpha, cfg = gradient_case
        grad = objective_gradient(state, params, blurred, alpha, cfg)
        h = 1e-6

        def total(s, p):
            return objective(s, p, blurred, alpha, cfg)[0]

        analytic, numeric = [], []
        pixels = [(3, 3), (5, 8), (7, 7), (8, 4), (10, 9), (12, 12), (1, 14), (14, 1)]
        for name in ("foreground", "background"):
            image = getattr(state, name)
            for (i, j) in pixels:
                plus = image.copy()
                minus = image.copy()
                plus[i, j, 0] += h
                minus[i, j, 0] -= h
                fd = (total(state.replace(**{name: plus}), params) - total(state.replace(**{name: minus}), params)) / (2 * h)
                analytic.append(getattr(grad, name)[i, j, 0])
                numeric.append(fd)

        theta = params.as_vector()
        for j, e in enumerate(np.eye(6)):
            fd = (total(state, AffineParams.from_vector(theta + h * e))
                  - total(state, AffineParams.from_vector(theta - h * e))) / (2 * h)
            analytic.append(grad.params[j])
            numeric.append(fd)

        analytic = np.array(analytic)
        numeric = np.array(numeric)
        assert np.linalg.norm(analytic - numeric) <= 1e-3 * np.linalg.norm(numeric)

    def test_affine_parts_add_up(self, gradient_case):
        """params is the sum of the data, alpha and prior parts."""
        state, params, blurred, alpha, cfg = gradient_case
        grad = objective_gradient(state, params, blurred, alpha, cfg)
        assert np.allclose(grad.params, grad.params_data + grad.params_alpha + grad.params_prior)
        assert np.any(grad.params_alpha != 0.0)

    def test_image_gradient_at_noiseless_truth_is_tv_only(self, disk_scene):
        """With zero residual only the TV term pushes the foreground."""
        sharp, alpha = disk_scene
        blurred, observed_alpha, _ = synthesize_case(sharp, alpha, TRUTH, 5, noise_sigma=0.0)
        state = reference_state_from_sharp(sharp, alpha)
        cfg = SolverConfig(n_frames=5, w_tv=1e-2)
        grad = objective_gradient(state, TRUTH, blurred, observed_alpha, cfg, epsilon=1.0)
        assert np.allclose(grad.foreground, 1e-2 * tv_grad(state.foreground, TvNorm("L0", 1.0)))
        assert np.all(grad.background == 0.0)


class TestSteps:
    """Test the two sub-problem steps."""

    def test_image_step_keeps_noiseless_truth(self, disk_scene):
        """At the optimum the image step barely moves."""
        sharp, alpha = disk_scene
        blurred, observed_alpha, _ = synthesize_case(sharp, alpha, TRUTH, 7, noise_sigma=0.0)
        state = reference_state_from_sharp(sharp, alpha)
        updated = step_image(state, TRUTH, blurred, observed_alpha, SolverConfig())
        assert np.allclose(updated.foreground, state.foreground, atol=1e-8)
        assert np.array_equal(updated.background, state.background)

    def test_image_step_stays_in_range(self, gradient_case):
        """Updated images are clamped to [0, 1]."""
        state, params, blurred, alpha, cfg = gradient_case
        updated = step_image(state, params, blurred, alpha, cfg.model_copy(update={"lr_image": 5.0}))
        assert updated.foreground.min() >= 0.0 and updated.foreground.max() <= 1.0
        assert updated.background.min() >= 0.0 and updated.background.max() <= 1.0

    def test_single_frame_step_by_hand(self):
        """n = 1, identity, full mask, no TV: the foreground moves lr toward the observation."""
        foreground = np.array([[0.2, 0.5], [0.7, 0.4]])[:, :, np.newaxis]
        blurred = np.array([[0.3, 0.5], [0.6, 0.9]])[:, :, np.newaxis]
        background = np.full((2, 2, 1), 0.5)
        mask = np.ones((2, 2, 1))
        state = ReferenceState(foreground, background, mask)
        cfg = SolverConfig(n_frames=1, w_tv=0.0, lr_image=0.02)
        updated = step_image(state, AffineParams.identity(), blurred, mask, cfg)
        expected = np.array([[0.22, 0.5], [0.68, 0.42]])[:, :, np.newaxis]
        assert np.allclose(updated.foreground, expected)
        assert np.array_equal(updated.background, background)

    def test_affine_step_is_scaled_gradient(self, gradient_case):
        """The affine step is -lr / divisor times the full objective gradient."""
        state, params, blurred, alpha, cfg = gradient_case
        grad = objective_gradient(state, params, blurred, alpha, cfg)
        for scale in ("support", "pixels", "none"):
            scaled = cfg.model_copy(update={"lr_affine": 1e-4, "affine_step_scale": scale})
            step = step_affine(state, params, blurred, alpha, scaled).as_vector() - params.as_vector()
            expected = -1e-4 / affine_step_divisor(alpha, scaled) * grad.params
            assert np.allclose(step, expected, rtol=1e-6, atol=1e-12)

    def test_affine_step_divisor(self):
        """support counts alpha above 1/255, pixels is H*W, none is 1."""
        alpha = np.zeros((4, 5, 1))
        alpha[1, 1:4, 0] = [1.0, 0.5, 0.003]
        assert affine_step_divisor(alpha, SolverConfig()) == 2.0
        assert affine_step_divisor(alpha, SolverConfig(affine_step_scale="pixels")) == 20.0
        assert affine_step_divisor(alpha, SolverConfig(affine_step_scale="none")) == 1.0
        assert affine_step_divisor(np.zeros((4, 5, 1)), SolverConfig()) == 1.0

    def test_prior_pulls_towards_identity(self, gradient_case):
        """With blank data only the prior acts and A_t decays by 1 - 2 * lr * w_t."""
        state, params, _, alpha, _ = gradient_case
        blank_alpha = np.zeros_like(alpha)
        blank = np.zeros_like(state.foreground)
        cfg = SolverConfig(n_frames=1, lr_affine=0.1)
        updated = step_affine(state.replace(middle_mask=blank_alpha), params, blank, blank_alpha, cfg)
        assert np.allclose(updated.translation, params.translation * (1 - 0.2))

    def test_prior_step_shrinks_with_support(self, gradient_case):
        """Under the support scale the prior-only step is divided by the support size."""
        state, params, blurred, alpha, _ = gradient_case
        cfg = SolverConfig(n_frames=1, w_alpha=0.0, lr_affine=0.1)
        updated = step_affine(state, params, blurred, alpha, cfg)
        support = np.count_nonzero(alpha[:, :, 0] > 1.0 / 255.0)
        assert np.allclose(updated.translation, params.translation * (1 - 0.2 / support))


class TestProjection:
    """Test the invertibility re-projection."""

    def test_well_conditioned_unchanged(self):
        """Invertible params pass through."""
        theta = np.array([1.01, 0.02, 0.03, -0.01, 0.99, 0.0])
        assert np.array_equal(project_invertible(theta).as_vector(), theta)

    def test_singular_is_projected(self):
        """A rank-deficient A_l is pushed back above the floor."""
        projected = project_invertible(np.array([1.0, 1.0, 0.1, 1.0, 1.0, -0.1]))
        assert abs(projected.det) >= DET_FLOOR
        assert np.array_equal(projected.translation, [0.1, -0.1])

    def test_zero_matrix_is_projected(self):
        """Even A_l = 0 is recovered."""
        assert abs(project_invertible(np.zeros(6)).det) >= DET_FLOOR

    def test_non_finite(self):
        """NaN updates abort."""
        with pytest.raises(SingularTransformError):
            project_invertible(np.array([np.nan, 0, 0, 0, 1, 0]))


class TestExtract:
    """Test the coarse-to-fine driver."""

    def test_initial_params_are_seeded(self):
        """Same seed, same start; A_t starts at zero."""
        cfg = SolverConfig(seed=4)
        a, b = initial_params(cfg), initial_params(cfg)
        assert np.array_equal(a.as_vector(), b.as_vector())
        assert np.all(a.translation == 0.0)
        assert np.max(np.abs(a.linear - np.eye(2))) <= 0.01
        assert not np.array_equal(a.linear, initial_params(SolverConfig(seed=5)).linear)

    def test_scale_factors(self):
        """Scales are spaced by sqrt(2) and end at full resolution."""
        assert scale_factors(3) == pytest.approx([0.5, 1 / math.sqrt(2), 1.0])
        assert scale_factors(1) == [1.0]

    def test_small_run(self, disk_scene, fast_config):
        """A short run returns N full-size frames and one trace per scale."""
        sharp, alpha = disk_scene
        blurred, observed_alpha, truth = synthesize_case(sharp, alpha, TRUTH, 3, noise_sigma=0.0)
        result = extract(blurred, observed_alpha, fast_config, truth=truth)
        assert len(result.clip) == 3
        assert all(frame.shape == sharp.shape for frame in result.clip.frames)
        assert [len(trace) for trace in result.loss_trace] == [2, 3]
        assert isinstance(result.final_components, ObjectiveComponents)
        assert result.metrics is not None and math.isfinite(result.metrics.psnr)
        assert abs(result.params.det) >= DET_FLOOR

    def test_deterministic(self, disk_scene, fast_config):
        """Two runs with the same inputs and seed agree bit-for-bit."""
        sharp, alpha = disk_scene
        blurred, observed_alpha, _ = synthesize_case(sharp, alpha, TRUTH, 3, noise_sigma=0.01, seed=2)
        first = extract(blurred, observed_alpha, fast_config)
        second = extract(blurred, observed_alpha, fast_config)
        assert np.array_equal(first.params.as_vector(), second.params.as_vector())
        for a, b in zip(first.clip.frames, second.clip.frames):
            assert np.array_equal(a, b)
        assert first.loss_trace == second.loss_trace

    def test_single_frame(self, disk_scene):
        """N = 1 recovers only the middle frame."""
        sharp, alpha = disk_scene
        result = extract(sharp, alpha, SolverConfig(n_frames=1, iterations_per_scale=[2]))
        assert len(result.clip) == 1

    def test_zero_iterations(self, disk_scene):
        """Without iterations the trace is empty and the clip is still rendered."""
        sharp, alpha = disk_scene
        result = extract(sharp, alpha, SolverConfig(n_frames=3, iterations_per_scale=[0]))
        assert result.loss_trace == [[]]
        assert result.final_components is None
        assert len(result.clip) == 3

    def test_empty_alpha(self, disk_scene):
        """An alpha with no object pixels is rejected."""
        sharp, _ = disk_scene
        with pytest.raises(DegenerateAlphaError):
            extract(sharp, np.full(sharp.shape[:2], 0.2), SolverConfig(iterations_per_scale=[1]))

    def test_alpha_size_mismatch(self, disk_scene):
        """The alpha map must match the blurred image."""
        sharp, alpha = disk_scene
        with pytest.raises(ShapeMismatchError):
            extract(sharp, alpha[:-2], SolverConfig(iterations_per_scale=[1]))

    def test_non_finite_loss_aborts(self, disk_scene, monkeypatch):
        """A NaN objective stops the run with its scale and iteration."""
        sharp, alpha = disk_scene
        monkeypatch.setattr("extraction.solver.data_term_value", lambda *args, **kwargs: float("nan"))
        with pytest.raises(NonFiniteLossError) as excinfo:
            extract(sharp, alpha, SolverConfig(n_frames=3, iterations_per_scale=[2]))
        assert excinfo.value.scale_index == 0
        assert excinfo.value.iteration == 0

    def test_non_finite_affine_update_aborts(self, disk_scene, monkeypatch):
        """A NaN affine gradient stops the run instead of reaching the re-projection."""
        sharp, alpha = disk_scene
        monkeypatch.setattr(
            "extraction.solver.affine_prior_grad",
            lambda params, weights, predicted, observed: (np.full(6, np.nan), np.zeros_like(observed)),
        )
        with pytest.raises(NonFiniteLossError) as excinfo:
            extract(sharp, alpha, SolverConfig(n_frames=3, iterations_per_scale=[2]))
        assert excinfo.value.what == "affine update"
        assert (excinfo.value.scale_index, excinfo.value.iteration) == (0, 0)

    def test_non_finite_image_update_aborts(self, disk_scene, monkeypatch):
        """A NaN image gradient stops the run with its scale and iteration."""
        sharp, alpha = disk_scene
        monkeypatch.setattr(
            "extraction.solver.tv_grad", lambda image, norm: np.full(image.shape, np.nan)
        )
        with pytest.raises(NonFiniteLossError) as excinfo:
            extract(sharp, alpha, SolverConfig(n_frames=3, iterations_per_scale=[2]))
        assert excinfo.value.what == "image update"
        assert (excinfo.value.scale_index, excinfo.value.iteration) == (0, 0)


class TestDescent:
    """Test that each scale hands on an iterate no worse than where it started."""

    @pytest.fixture
    def translation_case(self):
        sharp, alpha = make_disk_scene(size=32, radius=6.0, seed=1)
        blurred, observed_alpha, _ = synthesize_case(sharp, alpha, TRUTH, 3, noise_sigma=0.0)
        return blurred, observed_alpha

    def test_run_scale_returns_lowest_objective(self, translation_case):
        """The returned pair evaluates to the minimum of the trace and the final state."""
        blurred, alpha = translation_case
        cfg = SolverConfig(n_frames=3, iterations_per_scale=[8], epsilon_halving_period=50)
        mask = middle_mask(alpha)
        state = ReferenceState(np.zeros_like(blurred), np.zeros_like(blurred), mask)
        state, params, trace, kept = run_scale(blurred, alpha, mask, state, initial_params(cfg), cfg, 0)
        assert len(trace) == 8
        total, _ = objective(state, params, blurred, alpha, cfg, cfg.epsilon_init)
        assert total == pytest.approx(kept.total)
        assert kept.total <= min(c.total for c in trace)
        assert kept.total <= trace[0].total

    def test_every_scale_ends_no_higher(self, translation_case):
        """Across a three-scale run no scale ends above its first recorded value."""
        blurred, alpha = translation_case
        cfg = SolverConfig(n_frames=3, iterations_per_scale=[4, 4, 4], epsilon_halving_period=2)
        result = extract(blurred, alpha, cfg)
        for trace, kept in zip(result.component_trace, result.selected_components):
            assert kept.total <= trace[0].total
        assert result.final_components is result.selected_components[-1]
