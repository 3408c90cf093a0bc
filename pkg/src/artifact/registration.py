"""Kernel-matched registration of a second dataset onto the first one's time scale.

The criterion for a candidate warp ``g`` is

    sum_ij K1((t_i - g(s_j))/h_t) K2((y1_i - y2_j)/h_y) / h_y
    ---------------------------------------------------------
                sum_ij K1((t_i - g(s_j))/h_t)

i.e. the average value-kernel agreement between the two samples, weighted by
how close the warped second-sample times land to first-sample times. It is
maximised by sequential grid search over the knot values of a piecewise-linear
warp, sweeping knots left to right and starting from the identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import FunctionalDataset
from .errors import InsufficientPoints, NoAdmissibleCandidate, ZeroTimeMass
from .kernels import GAUSSIAN, KernelSpec, bandwidth_rules
from .warp import DEFAULT_KNOTS, PiecewiseLinearWarp

log = logging.getLogger(__name__)

_MASS_FLOOR = 1e-300
# relative gain a move must exceed; keeps accepted moves well above rounding noise
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class RegistrationConfig:
    knot_count: int = DEFAULT_KNOTS
    rounds: int = 5
    window: Optional[float] = None  # None: one knot spacing of ds2's support / knot_count
    steps: int = 11
    refine: float = 0.5
    h_t: Optional[float] = None  # None: bandwidth_rules
    h_y: Optional[float] = None
    k1: KernelSpec = GAUSSIAN
    k2: KernelSpec = GAUSSIAN
    early_stop: Optional[float] = None  # relative sweep gain below which to stop
    # each schedule lists coarser knot counts searched before the full one; the
    # schedule ending at the highest criterion wins. ((),) is a single plain search.
    schedules: tuple = ((3, 5, 9, 16), (4, 8, 16), (3, 6, 12, 24))
    clamp: bool = True  # keep knot values inside ds1's time support
    slope_bounds: tuple = (0.25, 4.0)  # admissible segment slopes; (0, inf) is plain monotonicity
    max_slope_ratio: Optional[float] = 2.0  # bound on neighbouring segment slope ratios
    block_sizes: tuple = (1,)  # runs of adjacent knots shifted jointly, one pass per size
    fixed_ends: bool = False  # keep the two boundary knots at their starting values

    def __post_init__(self):
        if self.knot_count < 2:
            raise ValueError("knot_count must be at least 2")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.window is not None and not self.window > 0:
            raise ValueError("window must be positive")
        if not 0 < self.refine < 1:
            raise ValueError("refine must lie in (0, 1)")
        if not 0 <= self.slope_bounds[0] < 1 < self.slope_bounds[1]:
            raise ValueError("slope_bounds must satisfy 0 <= lo < 1 < hi")
        if not self.schedules or any(any(int(n) < 2 for n in sch) for sch in self.schedules):
            raise ValueError("schedules must be a nonempty tuple of knot-count tuples (counts >= 2)")
        if not self.block_sizes or any(int(b) < 1 for b in self.block_sizes):
            raise ValueError("block_sizes must be positive counts")
        if self.max_slope_ratio is not None and not self.max_slope_ratio > 1:
            raise ValueError("max_slope_ratio must exceed 1")

    def resolve(self, ds1, ds2) -> "RegistrationConfig":
        """Fill in automatic bandwidths and window for this pair of datasets."""
        h_t, h_y = self.h_t, self.h_y
        if h_t is None or h_y is None:
            auto_t, auto_y = bandwidth_rules(ds1, ds2)
            h_t = auto_t if h_t is None else h_t
            h_y = auto_y if h_y is None else h_y
        window = self.window
        if window is None:
            c, d = ds2.time_support
            window = (d - c) / self.knot_count
        return replace(self, h_t=float(h_t), h_y=float(h_y), window=float(window))


@dataclass
class RegistrationResult:
    warp: PiecewiseLinearWarp
    criterion_trace: list = field(default_factory=list)
    evaluations: int = 0
    config: Optional[RegistrationConfig] = None


def _pair_sums(t, y1, g, y2, h_t, h_y, k1: KernelSpec, k2: KernelSpec, max_block=2_000_000):
    """Per second-sample point ``j``: (sum_i K1 K2, sum_i K1).

    ``t`` must be sorted; ``g`` (warped times) may be in any order. Only the
    exact support window of K1 around each ``g_j`` is visited.
    """
    m = g.size
    num = np.zeros(m)
    den = np.zeros(m)
    order = np.argsort(g, kind="stable")
    gs, ys = g[order], y2[order]
    radius = k1.support_radius * h_t
    lo = np.searchsorted(t, gs - radius, side="left")
    hi = np.searchsorted(t, gs + radius, side="right")
    start = 0
    while start < m:
        stop = start + 1
        while stop < m and (stop + 1 - start) * (hi[stop] - lo[start]) <= max_block:
            stop += 1
        c0, c1 = lo[start], hi[stop - 1]
        if c1 > c0:
            a = k1((t[None, c0:c1] - gs[start:stop, None]) / h_t)
            b = k2((y1[None, c0:c1] - ys[start:stop, None]) / h_y)
            num[order[start:stop]] = np.einsum("ij,ij->i", a, b)
            den[order[start:stop]] = a.sum(axis=1)
        start = stop
    return num, den


def km_criterion(ds1: FunctionalDataset, ds2: FunctionalDataset, w, h_t: float, h_y: float,
                 k1: KernelSpec = GAUSSIAN, k2: KernelSpec = GAUSSIAN) -> float:
    """Kernel-matched criterion of warp ``w`` (any callable on ds2's times)."""
    if not (h_t > 0 and h_y > 0):
        raise ValueError("bandwidths must be positive")
    g = np.asarray(w(ds2.times), dtype=float)
    num, den = _pair_sums(ds1.times, ds1.values, g, ds2.values, h_t, h_y, k1, k2)
    total = den.sum()
    if total < _MASS_FLOOR:
        raise ZeroTimeMass("no warped second-sample time is near any first-sample time")
    return float(num.sum() / h_y / total)


def register(ds1: FunctionalDataset, ds2: FunctionalDataset,
             cfg: RegistrationConfig = RegistrationConfig(),
             init: Optional[PiecewiseLinearWarp] = None) -> RegistrationResult:
    """Estimate the warp mapping ds2's time scale onto ds1's."""
    if ds1.size < 2 or ds2.size < 2:
        raise InsufficientPoints("registration needs at least 2 points in each dataset")
    cfg = cfg.resolve(ds1, ds2)
    c, d = ds2.time_support
    start = PiecewiseLinearWarp.identity(c, d, cfg.knot_count) if init is None else init
    best, evaluations = None, 0
    for schedule in cfg.schedules:
        res = _run_schedule(ds1, ds2, cfg, start, schedule)
        evaluations += res.evaluations
        # strict improvement only, so earlier schedules win ties
        if best is None or res.criterion_trace[-1] > best.criterion_trace[-1]:
            best = res
    best.evaluations = evaluations
    return best


def _run_schedule(ds1, ds2, cfg, warp, schedule) -> RegistrationResult:
    c, d = ds2.time_support
    evaluations = 0
    for n_coarse in schedule:
        if n_coarse >= warp.knots.size:
            continue
        coarse = PiecewiseLinearWarp.from_function(warp, c, d, n_coarse)
        res = _sweep(ds1, ds2, replace(cfg, window=(d - c) / n_coarse), coarse)
        warp = PiecewiseLinearWarp.from_function(res.warp, c, d, warp.knots.size)
        evaluations += res.evaluations
    res = _sweep(ds1, ds2, cfg, warp)
    res.evaluations += evaluations
    return res


def _ratio_ok(vals, k0, k1, cand, limit):
    """Candidate rows for knots ``k0..k1`` keeping neighbouring slope ratios within ``limit``."""
    n = vals.size
    lo, hi = max(k0 - 2, 0), min(k1 + 2, n - 1)
    cv = np.broadcast_to(vals[lo:hi + 1], (cand.shape[0], hi - lo + 1)).copy()
    cv[:, k0 - lo:k1 + 1 - lo] = cand
    rises = np.diff(cv, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = rises[:, 1:] / rises[:, :-1]
    return np.all((r <= limit) & (r >= 1.0 / limit), axis=1)


def _sweep(ds1, ds2, cfg: RegistrationConfig, warp: PiecewiseLinearWarp) -> RegistrationResult:
    h_t, h_y, k1, k2 = cfg.h_t, cfg.h_y, cfg.k1, cfg.k2
    a, b = ds1.time_support
    knots = warp.knots
    vals = warp.values.copy()
    n_k = knots.size
    spacing = knots[1] - knots[0]
    s_lo, s_hi = cfg.slope_bounds

    t, y1 = ds1.times, ds1.values
    s, y2 = ds2.times, ds2.values
    seg = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, n_k - 2)
    frac = (s - knots[seg]) / spacing
    # s is sorted, so the points moved by knots k0..k1 form the slice [first[k0-1], first[k1+1])
    first = np.searchsorted(seg, np.arange(n_k + 1), side="left")

    def warped(v_left, v_right, f):
        return v_left + (v_right - v_left) * f

    g = warped(vals[seg], vals[seg + 1], frac)
    num, den = _pair_sums(t, y1, g, y2, h_t, h_y, k1, k2)
    if den.sum() < _MASS_FLOOR:
        raise ZeroTimeMass("starting warp puts no second-sample time near first-sample times")

    def score(n_tot, d_tot):
        return n_tot / h_y / d_tot if d_tot >= _MASS_FLOOR else -np.inf

    def rise_ok(rise):
        return (rise > 0) & (rise >= s_lo * spacing) & (rise <= s_hi * spacing)

    evaluations = 1

    def move(k0, k1_, offsets, rnd, half):
        """Try shifting knots k0..k1_ jointly by each offset; apply the best gain."""
        nonlocal evaluations
        mono = np.ones(offsets.size, bool)
        ok = offsets != 0
        if k0 > 0:
            rise = vals[k0] + offsets - vals[k0 - 1]
            mono &= rise > 0
            ok &= rise_ok(rise)
        if k1_ < n_k - 1:
            rise = vals[k1_ + 1] - vals[k1_] - offsets
            mono &= rise > 0
            ok &= rise_ok(rise)
        if not mono.any():
            raise NoAdmissibleCandidate(
                f"no admissible value for knots {k0}..{k1_} in round {rnd} (window {half:g})")
        shift = offsets[ok]
        ok = ok[ok]
        block = vals[k0:k1_ + 1][None, :] + shift[:, None]
        if cfg.clamp:
            # never move a knot further outside ds1's support than it already is
            lo_ok = np.minimum(a, vals[k0:k1_ + 1])
            hi_ok = np.maximum(b, vals[k0:k1_ + 1])
            ok &= np.all((block >= lo_ok) & (block <= hi_ok), axis=1)
        if cfg.max_slope_ratio is not None:
            ok &= _ratio_ok(vals, k0, k1_, block, cfg.max_slope_ratio)
        shift, block = shift[ok], block[ok]
        if shift.size == 0:
            return
        j0, j1 = first[max(k0 - 1, 0)], first[k1_ + 1]
        evaluations += shift.size
        if j1 <= j0:
            return
        cand = np.vstack([vals[k0:k1_ + 1][None, :], block])
        sl = slice(j0, j1)
        sg = seg[sl]
        cv = np.broadcast_to(vals, (cand.shape[0], n_k)).copy()
        cv[:, k0:k1_ + 1] = cand
        gc = warped(cv[:, sg], cv[:, sg + 1], frac[sl])
        cn, cd = _pair_sums(t, y1, gc.ravel(), np.tile(y2[sl], cand.shape[0]), h_t, h_y, k1, k2)
        cn = cn.reshape(cand.shape[0], -1)
        cd = cd.reshape(cand.shape[0], -1)
        rest_n = num[:j0].sum() + num[j1:].sum()
        rest_d = den[:j0].sum() + den[j1:].sum()
        scores = np.array([score(rest_n + cn[i].sum(), rest_d + cd[i].sum())
                           for i in range(cand.shape[0])])
        base = scores[0]
        best = scores[1:].max()
        if np.isfinite(best) and best > base + _MIN_GAIN * abs(base):
            tied = np.flatnonzero(scores[1:] == best)
            pick = 1 + tied[np.argmin(shift[tied])]
            vals[k0:k1_ + 1] = cand[pick]
            num[j0:j1] = cn[pick]
            den[j0:j1] = cd[pick]
            g[j0:j1] = gc[pick]

    trace = []
    current = score(num.sum(), den.sum())
    for rnd in range(cfg.rounds):
        half = cfg.window * cfg.refine ** rnd
        offsets = np.linspace(-half, half, cfg.steps) if cfg.steps > 1 else np.zeros(cfg.steps)
        start_score = current
        for size in cfg.block_sizes:
            for k0 in range(n_k - size + 1):
                if cfg.fixed_ends and (k0 == 0 or k0 + size == n_k):
                    continue
                move(k0, k0 + size - 1, offsets, rnd, half)
        current = score(num.sum(), den.sum())
        trace.append(float(current))
        log.debug("round %d: criterion %.12g", rnd, current)
        if cfg.early_stop is not None and current - start_score <= cfg.early_stop * abs(start_score):
            break
    return RegistrationResult(warp=PiecewiseLinearWarp(knots, vals, label="registered"),
                              criterion_trace=trace, evaluations=evaluations, config=cfg)
