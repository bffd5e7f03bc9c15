"""Shared fixtures: tiny hand-built models with known exact behaviour."""

import numpy as np
import pytest

from mkvlab.lyapunov import LyapunovSpec, Rate
from mkvlab.model import DomainLadder, ModelSpec

#: verdict lines collected by the acceptance tests; echoed after the run so
#: each criterion's outcome is visible even when everything passes
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.line(line)


def _zero_drift(t, x, fv):
    return np.zeros_like(x)


def _zero_diffusion(t, x, fv):
    return np.zeros((x.shape[0], x.shape[1], 1))


@pytest.fixture
def zero_model():
    """b = σ = 0: particles never move, every diagnostic is constant."""
    return ModelSpec(
        name="zero",
        dim=1,
        noise_dim=1,
        drift=_zero_drift,
        diffusion=_zero_diffusion,
        functionals=(),
        ladder=DomainLadder.full_space(1),
        local_bound=lambda k: 0.0,
    )


@pytest.fixture
def contraction_model():
    """dx = −x dt, no noise: x_t = x_0 e^{−t} exactly (up to Euler)."""
    return ModelSpec(
        name="contraction",
        dim=1,
        noise_dim=1,
        drift=lambda t, x, fv: -x,
        diffusion=_zero_diffusion,
        functionals=(),
        ladder=DomainLadder.full_space(1),
        local_bound=lambda k: float(k),
    )


def quartic_lyap(m1=0.0, m2=0.0, mode="pointwise"):
    """v = x⁴ with configurable rates; measure-free."""
    return LyapunovSpec(
        name="quartic-free",
        mode=mode,
        v=lambda t, x, fv: x[:, 0] ** 4,
        dv_dt=lambda t, x, fv: np.zeros(x.shape[0]),
        dv_dx=lambda t, x, fv: 4.0 * x**3,
        d2v_dx2=lambda t, x, fv: (12.0 * x[:, 0] ** 2)[:, None, None],
        m1=Rate.constant(m1),
        m2=Rate.constant(m2),
        floor_V=lambda t, x: x[:, 0] ** 4,
        boundary_infimum=lambda k: float(k) ** 4,
    )


@pytest.fixture
def quartic_lyap_zero_rates():
    return quartic_lyap(0.0, 0.0)
