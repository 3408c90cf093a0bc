"""Kernels, bandwidth rules, leave-one-out bandwidth selection and smoothed KDE sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AllPredictionsUndefined, DegenerateRange, InsufficientPoints

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# exp(-u**2 / 2) underflows to exactly 0.0 in double precision beyond this
_GAUSS_UNDERFLOW = 38.6


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel, optionally truncated at ``cutoff`` bandwidths.

    The truncated kernel is not renormalised; the lost mass at the default
    cutoff of 8 is about 1e-15 and cancels in ratio estimators anyway.
    """

    family: str = "gaussian"
    cutoff: Optional[float] = None

    def __post_init__(self):
        if self.family == "gaussian":
            if self.cutoff is not None:
                raise ValueError("plain gaussian kernel takes no cutoff")
        elif self.family == "gaussian_truncated":
            if self.cutoff is None or not self.cutoff > 0:
                raise ValueError("gaussian_truncated needs a positive cutoff")
        else:
            raise ValueError(f"unknown kernel family {self.family!r}")

    @classmethod
    def gaussian(cls) -> "KernelSpec":
        return cls("gaussian")

    @classmethod
    def truncated(cls, cutoff: float = 8.0) -> "KernelSpec":
        return cls("gaussian_truncated", float(cutoff))

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``gaussian`` or ``gaussian_truncated(8)``."""
        text = text.strip()
        if text == "gaussian":
            return cls.gaussian()
        if text.startswith("gaussian_truncated"):
            inner = text[len("gaussian_truncated"):].strip("() ")
            return cls.truncated(float(inner) if inner else 8.0)
        raise ValueError(f"cannot parse kernel {text!r}")

    def __str__(self):
        return "gaussian" if self.cutoff is None else f"gaussian_truncated({self.cutoff:g})"

    @property
    def support_radius(self) -> float:
        """Distance (in bandwidths) beyond which the kernel is exactly zero."""
        return _GAUSS_UNDERFLOW if self.cutoff is None else self.cutoff

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        k = np.exp(-0.5 * u * u) * _INV_SQRT_2PI
        if self.cutoff is not None:
            k = np.where(np.abs(u) <= self.cutoff, k, 0.0)
        return k

    def constants(self) -> tuple:
        """Return ``(||K||_2^2, mu_2(K))``."""
        if self.cutoff is None:
            return 1.0 / (2.0 * math.sqrt(math.pi)), 1.0
        c = self.cutoff
        # closed forms for the (unnormalised) truncated gaussian
        l2 = math.erf(c) / (2.0 * math.sqrt(math.pi))
        mu2 = math.erf(c / math.sqrt(2.0)) - 2.0 * c * math.exp(-0.5 * c * c) * _INV_SQRT_2PI
        return l2, mu2


def kernel_eval(spec: KernelSpec, u):
    return spec(u)


GAUSSIAN = KernelSpec.gaussian()
TRUNCATED8 = KernelSpec.truncated(8.0)


# ---------------------------------------------------------------------------
# windowed kernel sums


def kernel_sums(points, x, y, h, kernel: KernelSpec, self_index=None, max_block=2_000_000):
    """Return ``(sum_j K((p - x_j)/h) y_j, sum_j K((p - x_j)/h))`` for each point p.

    ``x`` must be sorted ascending. Only the data inside the kernel's exact
    support window of each point is visited, so the result equals the full
    double sum. If ``self_index`` is given, data index ``self_index[i]`` is
    left out of the sums for point ``i`` (leave-one-out).
    """
    points = np.asarray(points, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = points.size
    num = np.zeros(m)
    den = np.zeros(m)
    if m == 0 or x.size == 0:
        return num, den
    order = np.argsort(points, kind="stable")
    p = points[order]
    radius = kernel.support_radius * h
    lo = np.searchsorted(x, p - radius, side="left")
    hi = np.searchsorted(x, p + radius, side="right")
    sidx = None if self_index is None else np.asarray(self_index)[order]
    start = 0
    while start < m:
        stop = start + 1
        # grow the chunk while the block stays within budget
        while stop < m and (stop + 1 - start) * (hi[stop] - lo[start]) <= max_block:
            stop += 1
        c0, c1 = lo[start], max(hi[start:stop].max(), lo[start])
        if c1 > c0:
            u = (p[start:stop, None] - x[None, c0:c1]) / h
            k = kernel(u)
            if sidx is not None:
                rows = np.arange(stop - start)
                cols = sidx[start:stop] - c0
                ok = (cols >= 0) & (cols < c1 - c0)
                k[rows[ok], cols[ok]] = 0.0
            num[order[start:stop]] = k @ y[c0:c1]
            den[order[start:stop]] = k.sum(axis=1)
        start = stop
    return num, den


def nw_predict(points, x, y, h, kernel: KernelSpec, self_index=None):
    """Nadaraya-Watson values at ``points`` from sorted ``x``; NaN where no kernel mass.

    Returns ``(estimate, den)`` with ``den`` the raw kernel sum.
    """
    y = np.asarray(y, dtype=float)
    lo_y, hi_y = float(y.min()), float(y.max())
    ref = 0.5 * (lo_y + hi_y)
    num, den = kernel_sums(points, x, y - ref, h, kernel, self_index=self_index)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = ref + num / den
    est = np.where(den > 0, np.clip(est, lo_y, hi_y), np.nan)
    return est, den


# ---------------------------------------------------------------------------
# bandwidth rules


def _mean_gap(ds) -> float:
    if ds.size < 2:
        raise InsufficientPoints(f"dataset {ds.label!r} needs at least 2 points")
    return float(np.mean(np.diff(ds.times)))


def bandwidth_rules(ds1, ds2) -> tuple:
    """Registration bandwidths ``(h_t, h_y)``.

    ``h_t`` is half the mean successive time gap of the less dense dataset
    (points per unit time); ``h_y`` is 10% of the combined value range.
    """
    y_all = np.concatenate([ds1.values, ds2.values])
    span = float(y_all.max() - y_all.min())
    if not span > 0:
        raise DegenerateRange("all values are equal; h_y would be zero")
    d1, d2 = ds1.density, ds2.density
    if d1 < d2:
        sparse = [ds1]
    elif d2 < d1:
        sparse = [ds2]
    else:
        sparse = [ds1, ds2]
    h_t = 0.5 * max(_mean_gap(ds) for ds in sparse)
    return h_t, 0.1 * span


def silverman_bandwidth(sample) -> float:
    sample = np.asarray(sample, dtype=float)
    n = sample.size
    sd = float(np.std(sample, ddof=1)) if n > 1 else 0.0
    if sd > 0:
        return 1.06 * sd * n ** (-0.2)
    # degenerate sample: keep draws distinct without visibly moving them
    return 1e-9 * max(1.0, float(np.max(np.abs(sample))))


def pilot_bandwidth(t, y, kernel: KernelSpec = GAUSSIAN) -> float:
    """Rule-of-thumb regression bandwidth from blocked quartic fits.

    ``h = [sigma^2 (b - a) ||K||^2 / (n mu_2^2 theta_22)]^(1/5)`` with
    ``theta_22`` the mean squared second derivative of the block fits. The
    result is clamped to ``[mean spacing, range]``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = t.size
    span = float(t.max() - t.min())
    spacing = span / max(n - 1, 1)
    if n < 6 or span <= 0:
        return max(spacing, span, 1.0)
    n_blocks = max(1, min(5, n // 20))
    edges = np.quantile(t, np.linspace(0, 1, n_blocks + 1))
    rss = 0.0
    m2 = np.empty(n)
    for b in range(n_blocks):
        sel = (t >= edges[b]) & ((t < edges[b + 1]) if b < n_blocks - 1 else (t <= edges[b + 1]))
        tb, yb = t[sel], y[sel]
        deg = min(4, tb.size - 1)
        poly = np.polynomial.Polynomial.fit(tb, yb, deg)
        rss += float(np.sum((yb - poly(tb)) ** 2))
        m2[sel] = poly.deriv(2)(tb)
    dof = max(n - 5 * n_blocks, 1)
    sigma2 = rss / dof
    theta22 = float(np.mean(m2 ** 2))
    l2, mu2 = kernel.constants()
    if theta22 <= 0 or sigma2 <= 0:
        return spacing if sigma2 <= 0 else span
    h = (sigma2 * span * l2 / (n * mu2 ** 2 * theta22)) ** 0.2
    return float(min(max(h, spacing), span))


def default_cv_grid(t, y, kernel: KernelSpec = GAUSSIAN, size: int = 20) -> np.ndarray:
    """``size`` log-spaced bandwidths between 0.25x and 4x the pilot bandwidth."""
    h0 = pilot_bandwidth(t, y, kernel)
    return np.geomspace(0.25 * h0, 4.0 * h0, size)


def loocv_curve(t, y, grid: Sequence[float], kernel: KernelSpec) -> np.ndarray:
    """Leave-one-out sum of squared prediction errors for each bandwidth.

    Entries are ``inf`` where some observation has no kernel mass left.
    ``t`` need not be sorted.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(t, kind="stable")
    ts, ys = t[order], y[order]
    idx = np.arange(ts.size)
    out = np.empty(len(grid))
    for k, h in enumerate(grid):
        est, den = nw_predict(ts, ts, ys, float(h), kernel, self_index=idx)
        out[k] = np.inf if np.any(den <= 0) else float(np.sum((ys - est) ** 2))
    return out


def select_bandwidth_loocv(t, y, grid: Optional[Sequence[float]] = None,
                           kernel: KernelSpec = TRUNCATED8) -> float:
    """Grid bandwidth minimising the leave-one-out squared error.

    Ties go to the largest bandwidth.
    """
    t = np.asarray(t, dtype=float)
    if t.size < 3:
        raise InsufficientPoints("leave-one-out selection needs at least 3 points")
    if grid is None:
        grid = default_cv_grid(t, y, kernel)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("bandwidth grid must be nonempty and positive")
    cv = loocv_curve(t, y, grid, kernel)
    if not np.any(np.isfinite(cv)):
        raise AllPredictionsUndefined("every candidate bandwidth leaves a point without kernel mass")
    best = cv.min()
    return float(grid[cv == best].max())


# ---------------------------------------------------------------------------
# kernel density estimates


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    sample: np.ndarray
    bandwidth: float
    kernel: KernelSpec = GAUSSIAN

    def __post_init__(self):
        if self.sample.size == 0:
            raise ValueError("density estimate needs a nonempty sample")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        u = (x[..., None] - self.sample) / self.bandwidth
        return self.kernel(u).mean(axis=-1) / self.bandwidth


def kde_fit(sample, kernel: KernelSpec = GAUSSIAN, bandwidth: Optional[float] = None) -> DensityEstimate:
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size == 0:
        raise ValueError("density estimate needs a nonempty sample")
    h = silverman_bandwidth(sample) if bandwidth is None else float(bandwidth)
    return DensityEstimate(sample.copy(), h, kernel)


def _kernel_noise(kernel: KernelSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal(n)
    if kernel.cutoff is not None:
        bad = np.abs(z) > kernel.cutoff
        while bad.any():
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > kernel.cutoff
    return z


def kde_sample(d: DensityEstimate, rng: np.random.Generator, n: int) -> np.ndarray:
    """Smoothed-bootstrap draws: a uniformly chosen sample point plus kernel noise."""
    if n == 0:
        return np.empty(0)
    idx = rng.integers(0, d.sample.size, size=n)
    return d.sample[idx] + d.bandwidth * _kernel_noise(d.kernel, rng, n)
