import numpy as np
import pytest

from gabor_odo.mask import FIXED_GABOR, rasterize
from gabor_odo.sensor_sim import SensorConfig
from gabor_odo.texture import TextureSpec, generate


@pytest.fixture(scope="session")
def small_sensor():
    # 64 px views keep simulations quick; brightness is renormalised to 128 px
    return SensorConfig(view_px=64)


@pytest.fixture(scope="session")
def small_masks(small_sensor):
    return rasterize(FIXED_GABOR, small_sensor.view_px)


@pytest.fixture(scope="session")
def noise_texture():
    return generate(TextureSpec("bandlimited_noise", {"low": 5.0, "high": 300.0, "seed": 3}, resolution_px=1024))


def quadrature_tone(f_hz, n=1000, rate=1000.0, phase=0.3):
    t = np.arange(n) / rate
    return np.cos(2 * np.pi * f_hz * t + phase), np.sin(2 * np.pi * f_hz * t + phase)
