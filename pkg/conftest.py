"""
Shared fixtures for the test suites
"""
import numpy as np
import pytest

from synthetic_oracle import SyntheticScene, cos4_vignette, flat_vignette, gamma_response, gen_loop_trajectory


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_scene():
    """32x24 gamma-2.2 camera with cos^4 vignetting"""
    return SyntheticScene(width=32, height=24, response=gamma_response(2.2),
                          vignette=cos4_vignette(32, 24), seed=0)


@pytest.fixture
def flat_scene():
    return SyntheticScene(width=32, height=24, response=gamma_response(2.2),
                          vignette=flat_vignette(32, 24), seed=0)


@pytest.fixture
def loop():
    """Drift-free loop trajectory with exact start/end ground truth"""
    return gen_loop_trajectory(200, seed=3)
