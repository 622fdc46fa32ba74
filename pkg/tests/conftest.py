import numpy as np
import pytest

from qgc.spectral import apply_dealias, build_grid, forward_transform, inverse_transform


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def band_limited(rng, g, layers=2, scale=1.0, zero_mean=True):
    """Random real field truncated to the grid's dealiased modes."""
    f = rng.standard_normal((layers, g.ny, g.nx)) * scale
    fh = apply_dealias(forward_transform(f, g), g)
    if zero_mean:
        fh[..., 0, 0] = 0.0
    return inverse_transform(fh, g)


@pytest.fixture
def grid32():
    return build_grid(32, 32, 1e6, 1e6)


@pytest.fixture
def grid16():
    return build_grid(16, 16, 1e6, 1e6)
