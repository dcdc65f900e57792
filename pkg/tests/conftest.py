import numpy as np
import pytest
import torch

from motionsynth.config import PRESETS
from motionsynth.phantom import PhantomConfig, generate_phantom_video

torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    return PRESETS["tiny"]


@pytest.fixture(scope="session")
def tiny_clip():
    clip, _ = generate_phantom_video(PhantomConfig(resolution=32, frames_per_video=8, rng_seed=3, n_landmarks=1))
    return clip


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
