"""Shared builders for the test suite."""

import numpy as np

from artifact.data import FunctionalDataset
from artifact.warp import PiecewiseLinearWarp


def make_pair(n1=60, n2=50, seed=0, noise=0.05, shift=0.0):
    """Two noisy samples of ``sin(2 pi t)`` on [0, 1] with an identity warp."""
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1, n1))
    s = np.sort(rng.uniform(0, 1, n2))
    ds1 = FunctionalDataset(t, np.sin(2 * np.pi * t) + noise * rng.standard_normal(n1),
                            label="a", time_support=(0.0, 1.0))
    ds2 = FunctionalDataset(s, np.sin(2 * np.pi * s) + shift + noise * rng.standard_normal(n2),
                            label="b", time_support=(0.0, 1.0))
    return ds1, ds2


def random_warp(rng, n_knots=None, lo=None, hi=None):
    """Random strictly increasing piecewise-linear warp with exponential slopes."""
    k = int(rng.integers(2, 40)) if n_knots is None else n_knots
    lo = rng.uniform(-50, 50) if lo is None else lo
    hi = lo + rng.uniform(0.5, 500) if hi is None else hi
    steps = rng.exponential(1.0, k - 1) + 1e-3
    values = rng.uniform(-100, 100) + np.concatenate([[0.0], np.cumsum(steps)]) * rng.uniform(0.1, 10)
    return PiecewiseLinearWarp(np.linspace(lo, hi, k), values)
