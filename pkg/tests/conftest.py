import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_homography(rng, shift=20.0, tilt=1e-4) -> np.ndarray:
    """Well-conditioned random projective matrix near identity."""
    noise = rng.normal(0, [[0.1, 0.1, shift], [0.1, 0.1, shift], [tilt, tilt, 0]])
    return np.eye(3) + noise


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Four part masks and six rendered samples under the desk-scale perturbation ranges."""
    from ctfmatch.config import PipelineConfig
    from ctfmatch.synth import make_masks, synth_dataset

    root = tmp_path_factory.mktemp("data")
    make_masks(root / "masks", 4, seed=0)
    synth_dataset(root / "masks", root / "samples", 6, PipelineConfig(), seed=3)
    return root


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
