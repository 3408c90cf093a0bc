"""Model-based bootstrap uncertainty and the leave-one-out check of whether pooling helps."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import FunctionalDataset
from .errors import ReplicateFailure
from .estimator import EstimateConfig, MeanCurve, pooled_nw, pooled_sample, resolve_bandwidth
from .kernels import GAUSSIAN, kde_fit, kde_sample, nw_predict
from .parallel import derived_rng, parallel_map
from .registration import RegistrationConfig, RegistrationResult, register

log = logging.getLogger(__name__)

MAX_FAIL_FRAC = 0.10


# --------------------------------------------------------------------------
# bootstrap
# --------------------------------------------------------------------------

@dataclass
class BootstrapSummary:
    grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    B: int
    seed: int
    alpha: float
    failed: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,estimate,se,ci_lo,ci_hi,band_lo,band_hi\n")
        cols = (self.grid, self.estimate, self.se, self.ci_lo, self.ci_hi, self.band_lo, self.band_hi)
        for row in zip(*cols):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def reflect_into(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold values back into ``[lo, hi]`` by mirror reflection at the ends."""
    x = np.asarray(x, dtype=float)
    width = hi - lo
    if width <= 0:
        return np.full_like(x, lo)
    u = np.mod(x - lo, 2 * width)
    return lo + np.where(u > width, 2 * width - u, u)


def _fitted_mean(ds1, ds2, warp, curve: MeanCurve, kernel):
    """Callable pooled estimate; where it has no kernel mass, interpolate the fitted curve."""
    ok = np.isfinite(curve.estimate)
    gx, gy = curve.grid[ok], curve.estimate[ok]
    x, y, _ = pooled_sample(ds1, ds2, warp, kernel, curve.h_n)

    def m_hat(t):
        t = np.asarray(t, dtype=float)
        est, _ = nw_predict(t, x, y, curve.h_n, kernel)
        miss = ~np.isfinite(est)
        if miss.any():
            est[miss] = np.interp(t[miss], gx, gy)
        return est

    return m_hat


def _smoothed_errors(residuals, rng, n, scale):
    if scale == 0 or n == 0:
        return np.zeros(n)
    r = residuals - residuals.mean()
    return scale * kde_sample(kde_fit(r, GAUSSIAN), rng, n)


def bootstrap(ds1: FunctionalDataset, ds2: FunctionalDataset, fitted: tuple, B: int,
              alpha: float = 0.05, seed: int = 0,
              reg_cfg: RegistrationConfig = RegistrationConfig(),
              est_cfg: EstimateConfig = EstimateConfig(),
              resample_times: bool = True, error_scale: float = 1.0, reregister: bool = True,
              refit_bandwidth: bool = False, threads: int = 1) -> BootstrapSummary:
    """Model-based smoothed bootstrap of the plug-in mean estimate.

    Each replicate rebuilds both datasets from the fitted model: times are
    drawn from kernel density estimates of the observed times (reflected into
    each dataset's support), values are the fitted mean at those times plus
    errors drawn from kernel density estimates of the centred residuals. The
    warp is re-estimated and the mean re-fitted on the original grid.

    Parameters
    ----------
    fitted : (RegistrationResult, MeanCurve)
        Output of :func:`artifact.estimator.plugin_estimate`.
    resample_times, error_scale, reregister : optional
        Switches for degenerate resampling; ``error_scale=0`` with fixed
        times and no re-registration reproduces the fit exactly.
    refit_bandwidth : bool
        Re-select ``h_n`` per replicate instead of reusing the fitted value.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    reg, curve = fitted
    warp = reg.warp
    kernel = est_cfg.kernel
    grid = curve.grid
    m_hat = _fitted_mean(ds1, ds2, warp, curve, kernel)
    a, b = ds1.time_support
    c, d = ds2.time_support
    res1 = ds1.values - m_hat(ds1.times)
    res2 = ds2.values - m_hat(warp(ds2.times))
    kde_t1 = kde_fit(ds1.times, GAUSSIAN)
    kde_t2 = kde_fit(ds2.times, GAUSSIAN)
    rep_est_cfg = est_cfg if refit_bandwidth else replace(est_cfg, h_n=curve.h_n)

    def replicate(i):
        rng = derived_rng(seed, i)
        if resample_times:
            t1 = reflect_into(kde_sample(kde_t1, rng, ds1.size), a, b)
            t2 = reflect_into(kde_sample(kde_t2, rng, ds2.size), c, d)
        else:
            t1, t2 = ds1.times, ds2.times
        y1 = m_hat(t1) + _smoothed_errors(res1, rng, t1.size, error_scale)
        y2 = m_hat(warp(t2)) + _smoothed_errors(res2, rng, t2.size, error_scale)
        b1 = FunctionalDataset(t1, y1, label=ds1.label, time_support=(a, b), resolve_ties=True)
        b2 = FunctionalDataset(t2, y2, label=ds2.label, time_support=(c, d), resolve_ties=True)
        w = register(b1, b2, reg_cfg).warp if reregister else warp
        return pooled_nw(b1, b2, w, rep_est_cfg, grid=grid).estimate

    def work(i):
        try:
            return replicate(i)
        except Exception as exc:  # dropped and counted below
            log.warning("bootstrap replicate %d failed: %s", i, exc)
            return None

    results = parallel_map(work, range(B), threads)
    good = [r for r in results if r is not None]
    failed = B - len(good)
    if failed > MAX_FAIL_FRAC * B or len(good) < 2:
        raise ReplicateFailure(f"{failed} of {B} bootstrap replicates failed")
    est = np.vstack(good)
    base = curve.estimate
    usable = np.isfinite(base) & (np.sum(np.isfinite(est), axis=0) >= 2)
    se = np.full(grid.size, np.nan)
    ci_lo = np.full(grid.size, np.nan)
    ci_hi = np.full(grid.size, np.nan)
    band_lo = np.full(grid.size, np.nan)
    band_hi = np.full(grid.size, np.nan)
    if usable.any():
        e = est[:, usable]
        # centring on one replicate first makes identical replicates give exactly zero
        ref = e[np.argmax(np.isfinite(e), axis=0), np.arange(e.shape[1])]
        se[usable] = np.nanstd(e - ref, axis=0, ddof=1)
        ci_lo[usable] = np.nanquantile(e, alpha / 2, axis=0)
        ci_hi[usable] = np.nanquantile(e, 1 - alpha / 2, axis=0)
        dev = np.nanmax(np.abs(e - base[usable]), axis=1)
        q = float(np.quantile(dev[np.isfinite(dev)], 1 - alpha))
        # the band is widened where needed so it always contains the pointwise interval
        band_lo[usable] = np.minimum(base[usable] - q, ci_lo[usable])
        band_hi[usable] = np.maximum(base[usable] + q, ci_hi[usable])
    diag = {"h_n": curve.h_n, "resample_times": resample_times, "error_scale": error_scale,
            "reregister": reregister, "refit_bandwidth": refit_bandwidth}
    return BootstrapSummary(grid=grid, estimate=base, se=se, ci_lo=ci_lo, ci_hi=ci_hi,
                            band_lo=band_lo, band_hi=band_hi, B=len(good), seed=int(seed),
                            alpha=alpha, failed=failed, diagnostics=diag)


# --------------------------------------------------------------------------
# cross-validation comparison
# --------------------------------------------------------------------------

@dataclass
class CvReport:
    """Leave-one-out squared prediction errors with and without the second dataset.

    ``cv_first_only`` and ``cv_pooled`` average over the same first-dataset
    observations; ``cv_pooled_all`` also includes the deleted second-dataset
    observations, predicted at their warped times.
    """

    cv_first_only: float
    cv_pooled: float
    cv_pooled_all: float
    mode: str
    deletions: int
    total_deletions: int
    skipped: int
    h_first: float
    h_pooled: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def useful(self) -> bool:
        return self.cv_pooled < self.cv_first_only

    @property
    def verdict(self) -> str:
        return "useful" if self.useful else "not useful"

    def as_dict(self) -> dict:
        return {"cv_first_only": self.cv_first_only, "cv_pooled": self.cv_pooled,
                "cv_pooled_all": self.cv_pooled_all, "mode": self.mode,
                "deletions": self.deletions, "total_deletions": self.total_deletions,
                "skipped": self.skipped, "h_first": self.h_first, "h_pooled": self.h_pooled,
                "verdict": self.verdict, "diagnostics": self.diagnostics}


def _choose_deletions(n1, n2, max_deletions, seed):
    """Deleted indices per dataset; a proportional random subset when capped."""
    total = n1 + n2
    if max_deletions is None or max_deletions >= total:
        return np.arange(n1), np.arange(n2)
    if max_deletions < 1:
        raise ValueError("cv_max_deletions must be positive")
    rng = derived_rng(seed, 0)
    k1 = max(1, int(round(max_deletions * n1 / total)))
    k2 = max_deletions - k1
    i1 = np.sort(rng.choice(n1, size=min(k1, n1), replace=False))
    i2 = np.sort(rng.choice(n2, size=max(min(k2, n2), 0), replace=False))
    return i1, i2


def _mean(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    return math.fsum(v) / v.size if v.size else math.nan


def cv_usefulness(ds1: FunctionalDataset, ds2: FunctionalDataset,
                  reg_cfg: RegistrationConfig = RegistrationConfig(),
                  est_cfg: EstimateConfig = EstimateConfig(), mode: str = "fast",
                  max_deletions: Optional[int] = None, seed: int = 0,
                  warp=None, threads: int = 1) -> CvReport:
    """Compare leave-one-out prediction error of the first-only and pooled estimators.

    Bandwidths are chosen once per estimator on the full data and then held
    fixed. In ``fast`` mode the warp fitted on all data is reused for every
    deletion; in ``exact`` mode the warp is re-estimated after each deletion.
    ``warp`` overrides the fitted warp (fast mode only).
    """
    if mode not in ("fast", "exact"):
        raise ValueError("mode must be 'fast' or 'exact'")
    if ds1.size < 3 or ds2.size < 2:
        raise ValueError("cross-validation needs at least 3 first and 2 second observations")
    kernel = est_cfg.kernel
    if warp is None:
        warp = register(ds1, ds2, reg_cfg).warp
    h1 = resolve_bandwidth(ds1, None, None, est_cfg)
    hp = resolve_bandwidth(ds1, ds2, warp, est_cfg)
    idx1, idx2 = _choose_deletions(ds1.size, ds2.size, max_deletions, seed)

    # first-sample-only: one vectorised leave-one-out pass
    est1, den1 = nw_predict(ds1.times, ds1.times, ds1.values, h1, kernel,
                            self_index=np.arange(ds1.size))
    err_first = np.where(den1 > 0, (ds1.values - est1) ** 2, np.nan)[idx1]

    if mode == "fast":
        g2 = np.asarray(warp(ds2.times), dtype=float)
        x = np.concatenate([ds1.times, g2])
        y = np.concatenate([ds1.values, ds2.values])
        order = np.argsort(x, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        xs, ys = x[order], y[order]
        pts = np.concatenate([ds1.times[idx1], g2[idx2]])
        self_idx = np.concatenate([rank[idx1], rank[ds1.size + idx2]])
        est, den = nw_predict(pts, xs, ys, hp, kernel, self_index=self_idx)
        obs = np.concatenate([ds1.values[idx1], ds2.values[idx2]])
        err = np.where(den > 0, (obs - est) ** 2, np.nan)
        err_pool1, err_pool2 = err[:idx1.size], err[idx1.size:]
    else:
        def delete_first(i):
            d1 = ds1.drop(i)
            w = register(d1, ds2, reg_cfg).warp
            x, y, _ = pooled_sample(d1, ds2, w)
            est, _ = nw_predict(np.array([ds1.times[i]]), x, y, hp, kernel)
            return float((ds1.values[i] - est[0]) ** 2)

        def delete_second(j):
            d2 = ds2.drop(j)
            w = register(ds1, d2, reg_cfg).warp
            x, y, _ = pooled_sample(ds1, d2, w)
            est, _ = nw_predict(np.asarray(w(np.array([ds2.times[j]]))), x, y, hp, kernel)
            return float((ds2.values[j] - est[0]) ** 2)

        jobs = [("1", int(i)) for i in idx1] + [("2", int(j)) for j in idx2]
        out = parallel_map(lambda job: delete_first(job[1]) if job[0] == "1" else delete_second(job[1]),
                           jobs, threads)
        err_pool1 = np.asarray(out[:idx1.size], dtype=float)
        err_pool2 = np.asarray(out[idx1.size:], dtype=float)

    # both estimators are scored on the same first-sample points
    both = np.isfinite(err_first) & np.isfinite(err_pool1)
    skipped = int(np.sum(~both) + np.sum(~np.isfinite(err_pool2)))
    cv_first = _mean(err_first[both])
    cv_pool = _mean(err_pool1[both])
    cv_all = _mean(np.concatenate([err_pool1[both], err_pool2[np.isfinite(err_pool2)]]))
    diag = {"first_points": int(both.sum()), "second_points": int(np.isfinite(err_pool2).sum())}
    return CvReport(cv_first_only=cv_first, cv_pooled=cv_pool, cv_pooled_all=cv_all, mode=mode,
                    deletions=int(idx1.size + idx2.size), total_deletions=ds1.size + ds2.size,
                    skipped=skipped, h_first=h1, h_pooled=hp, diagnostics=diag)
