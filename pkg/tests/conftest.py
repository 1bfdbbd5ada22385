import numpy as np
import pytest

from mosaikit import synth


@pytest.fixture(scope="session")
def vessel():
    return synth.vessel_texture(512, seed=3)


@pytest.fixture(scope="session")
def checker():
    return synth.checkerboard_texture(512, seed=4)


@pytest.fixture(scope="session")
def ramp_noise():
    return synth.ramp_texture(512, seed=5)


@pytest.fixture(scope="session")
def big_vessel():
    # large enough for a radius-300 orbit of 256 px frames
    return synth.vessel_texture(1024, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_similarity(rng, max_scale_dev=0.3, max_shift=50.0):
    theta, gamma = rng.uniform(-np.pi, np.pi, 2)
    s = np.sort(rng.uniform(1 - max_scale_dev, 1 + max_scale_dev, 2))[::-1]
    from mosaikit import homography as hg

    h = np.eye(3)
    h[:2, :2] = hg.rotation(theta) @ np.diag(s) @ hg.rotation(gamma)
    h[:2, 2] = rng.uniform(-max_shift, max_shift, 2)
    return h


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import RESULTS

    lines = config.stash.get(RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
