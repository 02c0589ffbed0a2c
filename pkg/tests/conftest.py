import sys

import numpy as np
import pytest

from pcdvamp.signal_model import SceneParams, make_partial_fourier
from pcdvamp.unfolding import TrainConfig, train_layerwise


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_model():
    return make_partial_fourier(200, 256, 1)


@pytest.fixture(scope="session")
def small_test_scene():
    return SceneParams(N=256, rho_min=0.02, rho_max=0.02, snr_min=13.0, snr_max=13.0)


@pytest.fixture(scope="session")
def small_train_scene():
    return SceneParams(N=256, a_min=0.7, a_max=1.3, rho_min=0.01, rho_max=0.03,
                       snr_min=8.0, snr_max=18.0)


@pytest.fixture(scope="session")
def trained_small(small_model, small_train_scene):
    return train_layerwise(small_model, small_train_scene, TrainConfig(T=7, seed=7))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "REPORT", []), key=lambda s: int(s.split()[2].rstrip(":")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
