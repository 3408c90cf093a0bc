import json

import numpy as np
import pytest

from artifact.errors import InvalidWarp
from artifact.simulate import true_warp_sim
from artifact.warp import (PiecewiseLinearWarp, sup_distance, warp_derivative, warp_eval,
                           warp_inverse_eval)
from helpers import random_warp

DOUBLER = PiecewiseLinearWarp([0.0, 1.0], [0.0, 2.0])


def test_identity_eval_and_inverse():
    w = PiecewiseLinearWarp.identity(0, 10, 7)
    t = np.array([-3.0, 0.0, 2.5, 3.7, 10.0, 12.0])
    assert np.allclose(warp_eval(w, t), t, atol=1e-14)
    assert warp_inverse_eval(w, 3.7) == pytest.approx(3.7, abs=1e-14)
    assert np.all(warp_derivative(w, t) == pytest.approx(1.0))


def test_two_knot_examples():
    assert warp_eval(DOUBLER, 0.5) == 1.0
    assert warp_eval(DOUBLER, 2.0) == 4.0
    assert warp_eval(DOUBLER, -1.0) == -2.0
    assert warp_inverse_eval(DOUBLER, 1.0) == 0.5
    assert warp_derivative(DOUBLER, 0.0) == 2.0
    assert warp_derivative(DOUBLER, 0.99) == 2.0


def test_right_hand_slope_at_knot():
    w = PiecewiseLinearWarp([0, 1, 2], [0, 1, 3])
    assert warp_derivative(w, 1.0) == 2.0
    assert warp_derivative(w, 0.999) == 1.0


@pytest.mark.parametrize("knots,values", [
    ([0, 1], [1, 1]),
    ([0, 1, 2], [0, 2, 1]),
    ([0, 1, 3], [0, 1, 2]),
    ([0], [0]),
    ([0, 1], [0, np.nan]),
])
def test_invalid_warps(knots, values):
    with pytest.raises(InvalidWarp):
        PiecewiseLinearWarp(knots, values)


def test_immutable():
    with pytest.raises(AttributeError):
        DOUBLER.label = "x"
    with pytest.raises(ValueError):
        DOUBLER.values[0] = 3.0


def test_round_trip_random(rng):
    for _ in range(100):
        w = random_warp(rng)
        t = rng.uniform(*w.domain, 50)
        assert np.max(np.abs(w.inverse(w(t)) - t)) <= 1e-10 * max(1.0, np.abs(t).max())
        x = rng.uniform(w.values[0], w.values[-1], 100)
        assert np.max(np.abs(w(w.inverse(x)) - x)) <= 1e-10 * max(1.0, np.abs(x).max())


def test_monotone_output(rng):
    w = random_warp(rng, n_knots=25)
    t = np.sort(rng.uniform(w.domain[0] - 10, w.domain[1] + 10, 500))
    assert np.all(np.diff(w(t)) > 0)


def test_inverse_derivative_rule(rng):
    w = random_warp(rng, n_knots=12)
    x = rng.uniform(w.values[0], w.values[-1], 100)
    # avoid points that sit exactly on a knot image
    assert np.allclose(w.inverse_derivative(x), 1.0 / w.derivative(w.inverse(x)), rtol=1e-12)


def test_identity_fixed_point_of_inversion():
    w = PiecewiseLinearWarp.identity(0, 415, 30)
    inv = PiecewiseLinearWarp(w.values, w.knots)
    assert np.array_equal(inv.values, w.values)


def test_extrapolated_flags():
    mask = DOUBLER.extrapolated([-0.1, 0.0, 0.5, 1.0, 1.1])
    assert mask.tolist() == [True, False, False, False, True]


def test_json_round_trip():
    w = PiecewiseLinearWarp([0, 1, 2, 3], [0, 0.5, 2.0, 2.1], label="x")
    again = PiecewiseLinearWarp.from_json(w.to_json())
    assert np.array_equal(again.values, w.values)
    assert again.label == "x"
    assert json.loads(w.to_json())["domain"] == [0.0, 3.0]


def test_json_rejects_non_monotone():
    bad = '{"knots": [0, 1, 2], "values": [0, 2, 1]}'
    with pytest.raises(InvalidWarp):
        PiecewiseLinearWarp.from_json(bad)
    with pytest.raises(InvalidWarp):
        PiecewiseLinearWarp.from_dict({"knots": [0, 1], "values": [0, 1], "domain": [0, 2]})


def test_sup_distance_self_zero(rng):
    w = random_warp(rng)
    assert sup_distance(w, w) == 0.0


def test_sup_distance_small_grid_rejected():
    with pytest.raises(ValueError):
        sup_distance(DOUBLER, DOUBLER, n_grid=100)


def test_sup_distance_simulation_warp():
    d = sup_distance(lambda t: t, true_warp_sim, (0.0, 415.0))
    # dense-grid oracle, independent of the implementation
    t = np.linspace(0, 415, 1_000_001)
    oracle = np.max(np.abs(0.05 * t * np.sin(4 * np.pi * t / 415)))
    assert abs(d - oracle) < 1e-3
    assert d == pytest.approx(18.2, abs=0.1)
    # the maximiser sits a little past the sin = -1 point at 363.1 because t grows
    peak = t[np.argmax(np.abs(0.05 * t * np.sin(4 * np.pi * t / 415)))]
    assert 363.1 <= peak < 368.0


def test_sup_distance_piecewise_exact(rng):
    for _ in range(5):
        # knot counts whose knots land exactly on the brute-force grid
        w1 = random_warp(rng, n_knots=int(rng.choice([5, 11, 26])), lo=0.0, hi=10.0)
        w2 = random_warp(rng, n_knots=int(rng.choice([6, 21, 41])), lo=0.0, hi=10.0)
        t = np.linspace(0, 10, 1_000_001)
        brute = np.max(np.abs(w1(t) - w2(t)))
        assert abs(sup_distance(w1, w2) - brute) < 1e-6


def test_sup_distance_metric_axioms(rng):
    for _ in range(20):
        ws = [random_warp(rng, lo=0.0, hi=5.0) for _ in range(3)]
        d = lambda a, b: sup_distance(a, b, (0.0, 5.0))
        assert d(ws[0], ws[1]) == d(ws[1], ws[0])
        assert d(ws[0], ws[2]) <= d(ws[0], ws[1]) + d(ws[1], ws[2]) + 1e-9
