import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spacetime_mae.model import MaeConfig
from spacetime_mae.tokenizer import PatchSpec

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def tiny_config(**overrides) -> MaeConfig:
    """2+1 blocks on a 2x4x4 grid: the gradient-check geometry."""
    base = dict(
        patch=PatchSpec(2, 4, 1),
        input_size=(4, 16, 16),
        d_enc=16,
        depth_enc=2,
        heads_enc=2,
        d_dec=8,
        depth_dec=1,
        heads_dec=2,
        mlp_ratio=2,
        mask_ratio=0.75,
    )
    base.update(overrides)
    return MaeConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each; the lines are repeated in the
# terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
