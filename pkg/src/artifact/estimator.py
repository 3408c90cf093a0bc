"""Pooled Nadaraya-Watson estimation of the common mean function."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import FunctionalDataset
from .errors import AllPointsThin, EmptyFirstDataset, InsufficientPoints
from .kernels import TRUNCATED8, KernelSpec, nw_predict, select_bandwidth_loocv
from .registration import RegistrationConfig, RegistrationResult, register

OK, THIN, OUTSIDE = "ok", "thin_support", "outside_range"


@dataclass(frozen=True)
class EstimateConfig:
    h_n: Optional[float] = None  # None selects by leave-one-out CV on the pooled sample
    kernel: KernelSpec = TRUNCATED8
    grid_size: int = 512
    mass_floor: float = 1e-12
    cv_grid: Optional[tuple] = None
    cv_sample: str = "pooled"  # or "first": which sample tunes h_n

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if not self.mass_floor > 0:
            raise ValueError("mass_floor must be positive")
        if self.h_n is not None and not self.h_n > 0:
            raise ValueError("h_n must be positive")
        if self.cv_sample not in ("pooled", "first"):
            raise ValueError("cv_sample must be 'pooled' or 'first'")


@dataclass
class MeanCurve:
    grid: np.ndarray
    estimate: np.ndarray
    mass: np.ndarray
    flags: np.ndarray
    h_n: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return self.flags == OK

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,estimate,mass,flag\n")
        for t, e, m, f in zip(self.grid, self.estimate, self.mass, self.flags):
            buf.write(f"{t:.17g},{e:.17g},{m:.17g},{f}\n")
        return buf.getvalue()


def pooled_sample(ds1: FunctionalDataset, ds2: Optional[FunctionalDataset], warp: Optional[Callable],
                  kernel: KernelSpec = TRUNCATED8, h: Optional[float] = None):
    """Pooled ``(times, values)`` sorted by time, with ds2's times warped.

    When ``h`` is given, second-sample points warped further than the kernel
    support beyond ds1's time support are dropped. Returns
    ``(x, y, n_dropped)``.
    """
    x = [ds1.times]
    y = [ds1.values]
    dropped = 0
    if ds2 is not None and ds2.size:
        g = np.asarray(warp(ds2.times), dtype=float)
        keep = np.ones(g.size, dtype=bool)
        if h is not None and kernel.cutoff is not None:
            a, b = ds1.time_support
            r = kernel.cutoff * h
            keep = (g >= a - r) & (g <= b + r)
            dropped = int(g.size - keep.sum())
        x.append(g[keep])
        y.append(ds2.values[keep])
    x = np.concatenate(x)
    y = np.concatenate(y)
    order = np.argsort(x, kind="stable")
    return x[order], y[order], dropped


def resolve_bandwidth(ds1, ds2, warp, cfg: EstimateConfig) -> float:
    if cfg.h_n is not None:
        return float(cfg.h_n)
    if cfg.cv_sample == "first" or ds2 is None or ds2.size == 0:
        x, y = ds1.times, ds1.values
    else:
        x, y, _ = pooled_sample(ds1, ds2, warp)
    if x.size < 3:
        raise InsufficientPoints("bandwidth selection needs at least 3 points")
    return select_bandwidth_loocv(x, y, cfg.cv_grid, cfg.kernel)


def default_grid(ds1: FunctionalDataset, h: float, size: int) -> np.ndarray:
    a, b = ds1.time_support
    lo, hi = a + h, b - h
    if not lo < hi:
        lo, hi = a, b
    return np.linspace(lo, hi, size)


def pooled_nw(ds1: FunctionalDataset, ds2: Optional[FunctionalDataset], warp: Optional[Callable],
              cfg: EstimateConfig = EstimateConfig(), grid=None) -> MeanCurve:
    """Nadaraya-Watson estimate from ds1 pooled with ds2 re-timed by ``warp``.

    With ``ds2`` empty or None this is the ordinary single-sample estimator.
    """
    if ds1 is None or ds1.size == 0:
        raise EmptyFirstDataset("the first dataset is required")
    h = resolve_bandwidth(ds1, ds2, warp, cfg)
    x, y, dropped = pooled_sample(ds1, ds2, warp, cfg.kernel, h)
    if grid is None:
        grid = default_grid(ds1, h, cfg.grid_size)
    grid = np.asarray(grid, dtype=float)
    est, den = nw_predict(grid, x, y, h, cfg.kernel)
    n_total = ds1.size + (0 if ds2 is None else ds2.size)
    mass = den / (n_total * h)
    a, b = ds1.time_support
    flags = np.full(grid.size, OK, dtype=object)
    thin = ~(mass >= cfg.mass_floor)
    flags[thin] = THIN
    flags[(grid <= a) | (grid >= b)] = OUTSIDE
    est = np.where(thin, np.nan, est)
    if not np.any(flags == OK):
        raise AllPointsThin("no evaluation point has kernel mass inside the first dataset's range")
    diag = {"dropped_second_sample": dropped, "n_pooled": int(x.size)}
    return MeanCurve(grid=grid, estimate=est, mass=mass, flags=flags, h_n=h, diagnostics=diag)


def first_sample_nw(ds1: FunctionalDataset, cfg: EstimateConfig = EstimateConfig(), grid=None) -> MeanCurve:
    return pooled_nw(ds1, None, None, cfg, grid=grid)


def plugin_estimate(ds1: FunctionalDataset, ds2: FunctionalDataset,
                    reg_cfg: RegistrationConfig = RegistrationConfig(),
                    est_cfg: EstimateConfig = EstimateConfig(), grid=None):
    """Register ds2 onto ds1, then estimate from the pooled data with the fitted warp."""
    if ds2 is None or ds2.size < 2:
        raise InsufficientPoints("plug-in estimation needs a second dataset of at least 2 points; "
                                 "use pooled_nw with an empty second dataset instead")
    reg: RegistrationResult = register(ds1, ds2, reg_cfg)
    return reg, pooled_nw(ds1, ds2, reg.warp, est_cfg, grid=grid)


def predict_at(ds1, ds2, warp, h: float, points, kernel: KernelSpec = TRUNCATED8) -> np.ndarray:
    """Pooled estimate at arbitrary points (NaN where no kernel mass)."""
    x, y, _ = pooled_sample(ds1, ds2, warp, kernel, h)
    est, _ = nw_predict(np.asarray(points, dtype=float), x, y, h, kernel)
    return est


def imse(grid, sq_err) -> float:
    """Trapezoid integral of a pointwise squared-error curve."""
    if len(grid) < 2:
        return math.nan
    return float(np.trapezoid(sq_err, grid))
