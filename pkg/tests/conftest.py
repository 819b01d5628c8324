"""Shared synthetic scenes: a textured disk over a smooth background."""
import numpy as np
import pytest

from core.config import config
from core.imaging import save_image
from schemas.models import SolverConfig


def make_disk_scene(size: int = 32, radius: float = None, channels: int = 3, seed: int = 0):
    """Return (sharp, alpha) with a textured disk centred in the frame."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = (size - 1) / 2.0
    radius = radius if radius is not None else size / 4.0
    disk = (((xx - centre) ** 2 + (yy - centre) ** 2) <= radius ** 2).astype(np.float64)

    background = 0.2 + 0.3 * (xx + yy) / (2.0 * (size - 1))
    stripes = 0.5 + 0.25 * np.sin(xx * 0.9) * np.cos(yy * 0.7)
    layers = []
    for c in range(channels):
        obj = np.clip(stripes + 0.05 * rng.standard_normal((size, size)) + 0.1 * c, 0.0, 1.0)
        layers.append(disk * obj + (1.0 - disk) * background)
    sharp = np.stack(layers, axis=2)
    return sharp, disk[:, :, np.newaxis]


@pytest.fixture
def disk_scene():
    """32x32 RGB textured disk and its binary alpha."""
    return make_disk_scene()


@pytest.fixture
def gray_scene():
    """16x16 single-channel scene for finite-difference checks."""
    return make_disk_scene(size=16, radius=4.5, channels=1, seed=3)


@pytest.fixture
def fast_config():
    """Tiny two-scale solver run."""
    return SolverConfig(n_frames=3, iterations_per_scale=[2, 3], epsilon_halving_period=2)


@pytest.fixture
def scene_files(tmp_path, disk_scene):
    """The disk scene written to sharp.png / alpha.png."""
    sharp, alpha = disk_scene
    sharp_path = save_image(sharp, tmp_path / "sharp.png")
    alpha_path = save_image(alpha, tmp_path / "alpha.png")
    return sharp_path, alpha_path


@pytest.fixture
def runs_dir(tmp_path, monkeypatch):
    """Point RUNS_DIR at a temporary directory."""
    runs = tmp_path / "runs"
    monkeypatch.setattr(config, "RUNS_DIR", str(runs))
    return runs
