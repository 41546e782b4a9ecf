import numpy as np
import pytest

from pdm.core import stream
from pdm.datos import stripes, two_point
from pdm.denoiser import DenoiserConfig
from pdm.schedule import ScheduleConfig, build_schedule, linear_schedule
from pdm.verificacion import randomized_checkpoint


@pytest.fixture(scope="session")
def schedule():
    """Cronograma lineal por defecto (T=1000)."""
    return build_schedule(ScheduleConfig())


@pytest.fixture(scope="session")
def small_schedule():
    return linear_schedule(50, 1e-3, 0.2)


@pytest.fixture
def rng():
    return stream(1234, "tests")


@pytest.fixture(scope="session")
def two_points():
    return two_point(0.9, 1)


@pytest.fixture(scope="session")
def toy_images():
    return stripes(n=8, size=4, channels=1, seed=0)


@pytest.fixture
def tiny_config():
    return DenoiserConfig(P=2, width=8, blocks=1, time_dim=8, classes=2, channels=1, timesteps=50)


@pytest.fixture
def tiny_ckpt(tiny_config, small_schedule):
    ckpt = randomized_checkpoint(tiny_config, seed=7)
    ckpt.schedule_fingerprint = small_schedule.fingerprint
    return ckpt


@pytest.fixture
def images(rng):
    from pdm.core import gaussian
    return np.clip(gaussian((3, 4, 4, 1), rng) * 0.5, -1.0, 1.0)
