"""Strictly increasing piecewise-linear time warps on equidistant knots."""

from __future__ import annotations

import json
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import InvalidWarp

DEFAULT_KNOTS = 30


class PiecewiseLinearWarp:
    """Continuous, strictly increasing piecewise-linear map.

    Linear interpolation between ``knots`` (equidistant, ascending) and
    ``values``; outside the knot span the boundary segments are continued
    with their own slopes. Instances are immutable.
    """

    __slots__ = ("knots", "values", "label", "_slopes")

    def __init__(self, knots: Sequence[float], values: Sequence[float], label: str = ""):
        knots = np.array(knots, dtype=float)
        values = np.array(values, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or values.shape != knots.shape:
            raise InvalidWarp("need at least two knots and one value per knot")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise InvalidWarp("knots and values must be finite")
        steps = np.diff(knots)
        if np.any(steps <= 0):
            raise InvalidWarp("knots must be strictly ascending")
        spacing = (knots[-1] - knots[0]) / (knots.size - 1)
        if np.max(np.abs(steps - spacing)) > 1e-9 * max(abs(spacing), abs(knots[0]), abs(knots[-1])):
            raise InvalidWarp("knots must be equidistant")
        if np.any(np.diff(values) <= 0):
            raise InvalidWarp("warp values must be strictly increasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        slopes = np.diff(values) / steps
        slopes.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "_slopes", slopes)

    def __setattr__(self, name, value):
        raise AttributeError("PiecewiseLinearWarp is immutable")

    @classmethod
    def identity(cls, lo: float, hi: float, n_knots: int = DEFAULT_KNOTS, label="identity"):
        k = np.linspace(lo, hi, n_knots)
        return cls(k, k, label=label)

    @classmethod
    def from_function(cls, fn: Callable, lo: float, hi: float, n_knots: int = DEFAULT_KNOTS, label=""):
        k = np.linspace(lo, hi, n_knots)
        return cls(k, fn(k), label=label)

    def with_values(self, values, label=None) -> "PiecewiseLinearWarp":
        return PiecewiseLinearWarp(self.knots, values, self.label if label is None else label)

    @property
    def domain(self) -> tuple:
        return float(self.knots[0]), float(self.knots[-1])

    def _segment(self, t):
        # segment k covers [knots[k], knots[k+1]); the boundary segments extend outward
        return np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self._slopes.size - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        seg = self._segment(t)
        return self.values[seg] + self._slopes[seg] * (t - self.knots[seg])

    def inverse(self, x):
        """Exact inverse, extended linearly like the forward map."""
        x = np.asarray(x, dtype=float)
        seg = np.clip(np.searchsorted(self.values, x, side="right") - 1, 0, self._slopes.size - 1)
        return self.knots[seg] + (x - self.values[seg]) / self._slopes[seg]

    def derivative(self, t):
        """Segment slope; right-hand slope at knots."""
        return self._slopes[self._segment(np.asarray(t, dtype=float))]

    def inverse_derivative(self, x):
        return 1.0 / self.derivative(self.inverse(x))

    def extrapolated(self, t) -> np.ndarray:
        """Boolean mask of inputs that fall outside the knot span."""
        t = np.asarray(t, dtype=float)
        return (t < self.knots[0]) | (t > self.knots[-1])

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "domain": [float(self.knots[0]), float(self.knots[-1])],
            "knots": [float(v) for v in self.knots],
            "values": [float(v) for v in self.values],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLinearWarp":
        w = cls(d["knots"], d["values"], label=d.get("label", ""))
        if "domain" in d:
            lo, hi = d["domain"]
            if not (np.isclose(lo, w.knots[0]) and np.isclose(hi, w.knots[-1])):
                raise InvalidWarp("domain does not match the knot span")
        return w

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseLinearWarp":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"PiecewiseLinearWarp(n_knots={self.knots.size}, domain={self.domain}, label={self.label!r})"


def warp_eval(w: PiecewiseLinearWarp, t):
    return w(t)


def warp_inverse_eval(w: PiecewiseLinearWarp, x):
    return w.inverse(x)


def warp_derivative(w: PiecewiseLinearWarp, t):
    return w.derivative(t)


WarpLike = Union[PiecewiseLinearWarp, Callable]


def sup_distance(w1: WarpLike, w2: WarpLike, domain: Optional[tuple] = None,
                 n_grid: int = 4096, grid=None) -> float:
    """``sup |w1 - w2|`` over a dense grid of ``domain`` plus every knot.

    For two piecewise-linear warps the difference is linear between knots, so
    the maximum over the knots is the exact supremum.
    """
    if n_grid < 2048:
        raise ValueError("comparison grid needs at least 2048 points")
    if domain is None:
        for w in (w1, w2):
            if isinstance(w, PiecewiseLinearWarp):
                domain = w.domain
                break
        else:
            raise ValueError("domain is required when neither warp is piecewise linear")
    lo, hi = domain
    pts = [np.linspace(lo, hi, n_grid)]
    if grid is not None:
        pts.append(np.asarray(grid, dtype=float))
    for w in (w1, w2):
        if isinstance(w, PiecewiseLinearWarp):
            pts.append(w.knots[(w.knots >= lo) & (w.knots <= hi)])
    t = np.concatenate(pts)
    return float(np.max(np.abs(np.asarray(w1(t)) - np.asarray(w2(t)))))
