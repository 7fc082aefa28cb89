import numpy as np
import pytest

from spde_ac.spectral import GridSpec, ScalarField


@pytest.fixture
def grid64():
    return GridSpec(1, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def smooth_field(rng, grid, modes=8, amp=1.0, bias=None, decay=1.0):
    """Random band-limited field; coefficients decay like (1+k^2)^-decay."""
    x = grid.coords()[0]
    mean = 0.3 * rng.standard_normal() if bias is None else bias
    vals = mean * np.ones(grid.shape)
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        vals = vals + ((a * np.cos(k * x) + b * np.sin(k * x)) / (1.0 + k * k) ** decay) * np.ones(
            grid.shape
        )
    return ScalarField(grid, amp * vals)
