import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from irsopt.channel import ChannelSet, FadingParams, LinkGeometry, complex_normal, sample_channels

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_channels(rng, n=3, m=4, scale=1.0) -> ChannelSet:
    """Unit-scale Rayleigh instance, handy for algebraic checks."""
    return ChannelSet(
        scale * complex_normal(rng, n),
        scale * complex_normal(rng, (m, n)),
        scale * complex_normal(rng, m),
    )


def default_channels(rng, n=10, m=16) -> ChannelSet:
    return sample_channels(rng, FadingParams.for_elements(n, m), LinkGeometry())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines are collected by tests/test_acceptance.py and echoed here
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
