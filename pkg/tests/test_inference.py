import numpy as np
import pytest

from artifact.errors import ReplicateFailure
from artifact.estimator import EstimateConfig, plugin_estimate
from artifact.inference import bootstrap, cv_usefulness, reflect_into
from artifact.registration import RegistrationConfig
from helpers import make_pair

REG = RegistrationConfig(knot_count=6, rounds=2, schedules=((),))
FROZEN = RegistrationConfig(knot_count=6, rounds=1, steps=1, schedules=((),))
EST = EstimateConfig(h_n=0.05, grid_size=64)


@pytest.fixture(scope="module")
def fitted_pair():
    ds1, ds2 = make_pair(60, 50, seed=11, noise=0.1)
    return ds1, ds2, plugin_estimate(ds1, ds2, REG, EST)


def test_reflect_into():
    x = np.array([-0.25, 0.0, 0.5, 1.0, 1.25, 2.5])
    assert reflect_into(x, 0.0, 1.0).tolist() == [0.25, 0.0, 0.5, 1.0, 0.75, 0.5]


def test_bootstrap_deterministic(fitted_pair):
    ds1, ds2, fit = fitted_pair
    a = bootstrap(ds1, ds2, fit, 2, seed=4, reg_cfg=REG, est_cfg=EST)
    b = bootstrap(ds1, ds2, fit, 2, seed=4, reg_cfg=REG, est_cfg=EST)
    assert a.to_csv() == b.to_csv()


def test_bootstrap_thread_independent(fitted_pair):
    ds1, ds2, fit = fitted_pair
    a = bootstrap(ds1, ds2, fit, 6, seed=2, reg_cfg=REG, est_cfg=EST, threads=1)
    b = bootstrap(ds1, ds2, fit, 6, seed=2, reg_cfg=REG, est_cfg=EST, threads=3)
    assert a.to_csv() == b.to_csv()


def test_bootstrap_degenerate_zero_se(fitted_pair):
    ds1, ds2, fit = fitted_pair
    s = bootstrap(ds1, ds2, fit, 5, seed=1, reg_cfg=REG, est_cfg=EST, resample_times=False,
                  error_scale=0.0, reregister=False)
    ok = np.isfinite(s.se)
    assert ok.any()
    assert np.all(s.se[ok] == 0.0)


def test_bootstrap_invariants(fitted_pair):
    ds1, ds2, fit = fitted_pair
    s = bootstrap(ds1, ds2, fit, 20, alpha=0.1, seed=3, reg_cfg=REG, est_cfg=EST)
    ok = np.isfinite(s.se)
    assert np.all(s.se[ok] >= 0)
    assert np.all(s.ci_lo[ok] <= s.ci_hi[ok])
    assert np.all(s.band_lo[ok] <= s.ci_lo[ok])
    assert np.all(s.band_hi[ok] >= s.ci_hi[ok])
    assert s.B == 20 and s.failed == 0
    assert s.to_csv().splitlines()[0] == "t,estimate,se,ci_lo,ci_hi,band_lo,band_hi"


def test_bootstrap_argument_checks(fitted_pair):
    ds1, ds2, fit = fitted_pair
    with pytest.raises(ValueError):
        bootstrap(ds1, ds2, fit, 1)
    with pytest.raises(ValueError):
        bootstrap(ds1, ds2, fit, 5, alpha=1.5)


def test_bootstrap_failure_policy(fitted_pair):
    ds1, ds2, fit = fitted_pair
    with pytest.raises(ReplicateFailure):
        bootstrap(ds1, ds2, fit, 4, reg_cfg=RegistrationConfig(steps=0, schedules=((),)), est_cfg=EST)


def test_cv_fast_equals_exact_when_warp_frozen():
    ds1, ds2 = make_pair(25, 20, seed=2, noise=0.1)
    fast = cv_usefulness(ds1, ds2, FROZEN, EST, mode="fast")
    exact = cv_usefulness(ds1, ds2, FROZEN, EST, mode="exact")
    assert fast.cv_first_only == exact.cv_first_only
    assert fast.cv_pooled == pytest.approx(exact.cv_pooled, rel=1e-12)
    assert fast.cv_pooled_all == pytest.approx(exact.cv_pooled_all, rel=1e-12)


def test_cv_same_prediction_points():
    ds1, ds2 = make_pair(40, 40, seed=3, noise=0.1)
    r = cv_usefulness(ds1, ds2, REG, EST)
    d = r.diagnostics
    assert d["first_points"] + d["second_points"] + r.skipped == 80
    assert r.cv_first_only >= 0 and r.cv_pooled >= 0


def test_cv_sign_small():
    good = cv_usefulness(*make_pair(80, 80, seed=5, noise=0.2), REG, EST)
    bad = cv_usefulness(*make_pair(80, 80, seed=5, noise=0.2, shift=0.6), REG, EST)
    assert good.useful and good.verdict == "useful"
    assert not bad.useful


def test_cv_subsampled_deletions():
    ds1, ds2 = make_pair(40, 40, seed=4, noise=0.1)
    r = cv_usefulness(ds1, ds2, REG, EST, max_deletions=10, seed=9)
    assert r.deletions == 10 and r.total_deletions == 80
    again = cv_usefulness(ds1, ds2, REG, EST, max_deletions=10, seed=9)
    assert r.as_dict() == again.as_dict()


def test_cv_argument_checks():
    ds1, ds2 = make_pair(10, 10)
    with pytest.raises(ValueError):
        cv_usefulness(ds1, ds2, REG, EST, mode="slow")
