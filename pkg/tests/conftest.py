"""Shared helpers for the test suite."""

import warnings

import numpy as np
import pytest

from homolab.grid import PeriodicGrid
from homolab.randomfield import ParameterField


def layered_field(grid: PeriodicGrid, block: int, lo: float = -1.0, hi: float = 1.0,
                  epsilon: float | None = None) -> ParameterField:
    """d = 1 piecewise-constant field alternating between lo and hi every `block` sites."""
    assert grid.d == 1
    idx = np.arange(grid.n) // block
    vals = np.where(idx % 2 == 0, lo, hi)[:, None]
    return ParameterField(grid, vals, epsilon or block * grid.h)


def constant_field(grid: PeriodicGrid, value: float = 0.0, k: int = 1,
                   epsilon: float | None = None) -> ParameterField:
    return ParameterField(grid, np.full(grid.shape + (k,), value), epsilon or 4 * grid.h)


@pytest.fixture(autouse=True)
def _quiet_torus_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="torus edge")
        yield
