"""Closed-form asymptotics for the pooled estimator and the sawtooth identifiability toolkit.

Two groups of calculators live here:

* leading-order MSE of the pooled Nadaraya-Watson estimator with the true
  warp, and the ratios comparing it with the first-sample-only estimator;
* the two-segment ("sawtooth") warp on [0, 1], for which a symmetric
  decomposition ``g0 = g1^{-1} o g2`` with ``(g1 + g2)/2 = id`` exists only
  when the warp is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import DensityZero, InvalidSawtooth
from .kernels import KernelSpec

_DENSITY_TOL = 1e-6


# --------------------------------------------------------------------------
# model description
# --------------------------------------------------------------------------

def _scalar(fn: Callable) -> Callable:
    return lambda x: float(fn(x))


@dataclass(frozen=True)
class ModelSpec:
    """Ingredients of the two-sample model needed by the MSE expansion.

    Parameters
    ----------
    f1, f2 : callable
        Sampling densities of the first-sample times on ``support1`` and the
        second-sample times on ``support2``.
    m, m_prime, m_second : callable
        Mean function and its first two derivatives. Missing derivatives are
        replaced by central differences.
    g0 : callable
        True warp, strictly increasing on ``support2``.
    g0_inverse, g0_inverse_derivative, g0_inverse_second : callable, optional
        Inverse warp and its derivatives. The inverse is found by root
        bracketing when absent.
    f1_prime, f2_prime : callable, optional
        Density derivatives; with ``g0_inverse_second`` they give an analytic
        derivative of the mixture density.
    sigma1_sq, sigma2_sq : float
        Noise variances.
    xi : float
        Limiting share ``n1 / n`` of the first sample, in ``(0, 1]``.
    """

    f1: Callable
    f2: Callable
    m: Callable
    g0: Callable
    support1: tuple = (0.0, 1.0)
    support2: tuple = (0.0, 1.0)
    sigma1_sq: float = 1.0
    sigma2_sq: float = 1.0
    xi: float = 0.5
    m_prime: Optional[Callable] = None
    m_second: Optional[Callable] = None
    g0_inverse: Optional[Callable] = None
    g0_inverse_derivative: Optional[Callable] = None
    g0_inverse_second: Optional[Callable] = None
    f1_prime: Optional[Callable] = None
    f2_prime: Optional[Callable] = None
    check: bool = True
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0 < self.xi <= 1:
            raise ValueError("xi must lie in (0, 1]")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ValueError("noise variances must be nonnegative")
        for name in ("support1", "support2"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be an interval with lo < hi")
        if self.check:
            self.validate()

    def validate(self):
        for name, f, (lo, hi) in (("f1", self.f1, self.support1), ("f2", self.f2, self.support2)):
            grid = np.linspace(lo, hi, 257)
            if np.any(np.asarray([f(x) for x in grid], dtype=float) < 0):
                raise ValueError(f"{name} takes negative values")
            mass, _ = integrate.quad(_scalar(f), lo, hi, limit=200)
            if abs(mass - 1.0) > _DENSITY_TOL:
                raise ValueError(f"{name} integrates to {mass:.9g}, not 1")
        c, d = self.support2
        probe = np.asarray(self.g0(np.linspace(c, d, 1025)), dtype=float)
        if np.any(np.diff(probe) <= 0):
            raise ValueError("g0 must be strictly increasing on support2")

    @property
    def step(self) -> float:
        """Finite-difference step: 1e-5 of the first support's length."""
        a, b = self.support1
        return 1e-5 * (b - a)

    # -- derived pieces ---------------------------------------------------

    def ginv(self, t: float) -> float:
        if self.g0_inverse is not None:
            return float(self.g0_inverse(t))
        c, d = self.support2
        lo, hi = float(self.g0(c)), float(self.g0(d))
        if not lo <= t <= hi:
            # outside the warped support the second sample has no mass
            return math.nan
        return optimize.brentq(lambda s: float(self.g0(s)) - t, c, d, xtol=1e-14, rtol=4 * np.finfo(float).eps)

    def ginv_prime(self, t: float) -> float:
        if self.g0_inverse_derivative is not None:
            return float(self.g0_inverse_derivative(t))
        s = self.ginv(t)
        if math.isnan(s):
            return math.nan
        e = self.step
        return 2 * e / (float(self.g0(s + e)) - float(self.g0(s - e)))

    def q(self, t: float) -> float:
        """``f2(g0^{-1}(t)) (g0^{-1})'(t)``: density of warped second-sample times."""
        s = self.ginv(t)
        if math.isnan(s):
            return 0.0
        return float(self.f2(s)) * self.ginv_prime(t)

    def f_g0(self, t: float) -> float:
        """Mixture density of pooled, correctly warped times."""
        return self.xi * float(self.f1(t)) + (1 - self.xi) * self.q(t)

    def f_g0_prime(self, t: float) -> tuple:
        """Derivative of :meth:`f_g0` and the method used (``analytic`` or ``finite-difference``)."""
        xi = self.xi
        if self.f1_prime is not None and (xi == 1 or (
                self.f2_prime is not None and self.g0_inverse is not None
                and self.g0_inverse_derivative is not None and self.g0_inverse_second is not None)):
            val = xi * float(self.f1_prime(t))
            if xi < 1:
                s = float(self.g0_inverse(t))
                gp = float(self.g0_inverse_derivative(t))
                val += (1 - xi) * (float(self.f2_prime(s)) * gp * gp
                                   + float(self.f2(s)) * float(self.g0_inverse_second(t)))
            return val, "analytic"
        e = self.step
        return (self.f_g0(t + e) - self.f_g0(t - e)) / (2 * e), "finite-difference"

    def f1_log_prime(self, t: float) -> float:
        if self.f1_prime is not None:
            d1 = float(self.f1_prime(t))
        else:
            e = self.step
            d1 = (float(self.f1(t + e)) - float(self.f1(t - e))) / (2 * e)
        return d1 / float(self.f1(t))

    def m1(self, t: float) -> float:
        if self.m_prime is not None:
            return float(self.m_prime(t))
        e = self.step
        return (float(self.m(t + e)) - float(self.m(t - e))) / (2 * e)

    def m2(self, t: float) -> float:
        if self.m_second is not None:
            return float(self.m_second(t))
        # a wider step keeps the second difference above rounding noise
        e = self.step * 100
        return (float(self.m(t + e)) - 2 * float(self.m(t)) + float(self.m(t - e))) / (e * e)

    # -- construction from text -------------------------------------------

    @classmethod
    def from_expressions(cls, f1: str, f2: str, m: str, g0: str = "t",
                         support1=(0.0, 1.0), support2=(0.0, 1.0), sigma1_sq=1.0,
                         sigma2_sq=1.0, xi=0.5, g0_inverse: Optional[str] = None) -> "ModelSpec":
        """Build a spec from formulas in ``t``, differentiating them symbolically.

        Densities are taken as written inside their supports and as zero
        outside. When ``g0_inverse`` is omitted the inverse is solved
        symbolically if possible and numerically otherwise.
        """
        import sympy as sp

        t = sp.Symbol("t", real=True)

        def parse(expr):
            return sp.sympify(expr, locals={"t": t})

        def fn(e):
            return sp.lambdify(t, e, "numpy")

        def on_support(f, lo, hi):
            return lambda x: np.where((np.asarray(x) >= lo) & (np.asarray(x) <= hi),
                                      f(np.asarray(x, dtype=float)) + 0.0 * np.asarray(x, dtype=float), 0.0)

        ef1, ef2, em, eg = parse(f1), parse(f2), parse(m), parse(g0)
        a, b = (float(v) for v in support1)
        c, d = (float(v) for v in support2)
        if g0_inverse is not None:
            einv = parse(g0_inverse)
        else:
            x = sp.Symbol("x", real=True)
            sols = [s for s in sp.solve(sp.Eq(eg.subs(t, x), t), x) if s.is_real is not False]
            einv = None
            mid = 0.5 * (c + d)
            for s in sols:
                try:
                    if abs(float(s.subs(t, eg.subs(t, mid))) - mid) < 1e-9:
                        einv = s
                        break
                except (TypeError, ValueError):
                    continue
        kwargs = dict(
            f1=on_support(fn(ef1), a, b), f2=on_support(fn(ef2), c, d), m=fn(em),
            g0=fn(eg), support1=(a, b), support2=(c, d), sigma1_sq=float(sigma1_sq),
            sigma2_sq=float(sigma2_sq), xi=float(xi),
            m_prime=fn(sp.diff(em, t)), m_second=fn(sp.diff(em, t, 2)),
            f1_prime=fn(sp.diff(ef1, t)), f2_prime=fn(sp.diff(ef2, t)),
        )
        if einv is not None:
            kwargs.update(g0_inverse=fn(einv), g0_inverse_derivative=fn(sp.diff(einv, t)),
                          g0_inverse_second=fn(sp.diff(einv, t, 2)))
        notes = {"f1": f1, "f2": f2, "m": m, "g0": g0,
                 "g0_inverse": str(einv) if einv is not None else "numeric"}
        return cls(notes=notes, **kwargs)


@dataclass(frozen=True)
class KernelConstants:
    """``k_l2`` is the squared L2 norm of the kernel, ``mu2`` its second moment."""

    k_l2: float
    mu2: float

    def __post_init__(self):
        if not (self.k_l2 > 0 and self.mu2 > 0):
            raise ValueError("kernel constants must be positive")

    @classmethod
    def of(cls, kernel: KernelSpec) -> "KernelConstants":
        k_l2, mu2 = kernel.constants()
        return cls(k_l2=k_l2, mu2=mu2)


GAUSSIAN_CONSTANTS = KernelConstants(k_l2=1.0 / (2.0 * math.sqrt(math.pi)), mu2=1.0)


@dataclass(frozen=True)
class MseTerms:
    variance: float
    bias_sq: float
    total: float
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.variance, self.bias_sq, self.total))


def asymptotic_mse(spec: ModelSpec, kc: KernelConstants, t: float, n: int, h: float) -> MseTerms:
    """Leading variance and squared-bias terms of the pooled estimator at ``t``.

    Raises
    ------
    DensityZero
        If the pooled time density vanishes at ``t``.
    """
    if n <= 0 or not h > 0:
        raise ValueError("n and h must be positive")
    a, b = spec.support1
    if not a < t < b:
        raise ValueError("t must be interior to the first sample's support")
    fg = spec.f_g0(t)
    if not fg > 0:
        raise DensityZero(f"pooled time density is zero at t={t}")
    f1 = float(spec.f1(t))
    q = spec.q(t)
    xi = spec.xi
    variance = (xi * f1 * spec.sigma1_sq + (1 - xi) * q * spec.sigma2_sq) / (n * h) * kc.k_l2 / fg ** 2
    dfg, method = spec.f_g0_prime(t)
    bracket = spec.m2(t) + 2 * spec.m1(t) * dfg / fg
    bias_sq = h ** 4 / 4 * bracket ** 2 * kc.mu2 ** 2
    diag = {"f_g0": fg, "f_g0_prime": dfg, "derivative_method": method, "bias_bracket": bracket}
    return MseTerms(variance=float(variance), bias_sq=float(bias_sq),
                    total=float(variance + bias_sq), diagnostics=diag)


@dataclass(frozen=True)
class ImprovementRatios:
    variance_factor2: float
    variance_limit_factor1: float
    bias_factor2: float
    bias_limit_factor1: float
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.variance_factor2, self.variance_limit_factor1,
                     self.bias_factor2, self.bias_limit_factor1))


def variance_factor2(rho: float, noise_ratio: float) -> float:
    """``(1 + rho s) / (1 + rho)^2`` with ``s = sigma2^2 / sigma1^2``."""
    return (1.0 + rho * noise_ratio) / (1.0 + rho) ** 2


def improvement_ratios(spec: ModelSpec, t: float, bandwidth_exponent: float = 0.2) -> ImprovementRatios:
    """Pooled-versus-first-sample ratios of the leading variance and squared bias.

    The bias factor is NaN, with ``diagnostics["bias_defined"]`` false, when
    the first-sample bracket vanishes at ``t``.
    """
    f1 = float(spec.f1(t))
    if not f1 > 0:
        raise DensityZero(f"f1 is zero at t={t}")
    xi = spec.xi
    rho = (1 - xi) * spec.q(t) / (xi * f1)
    if spec.sigma1_sq > 0:
        s = spec.sigma2_sq / spec.sigma1_sq
    else:
        s = math.inf if spec.sigma2_sq > 0 else 1.0
    vf2 = variance_factor2(rho, s) if rho > 0 or math.isfinite(s) else 1.0
    fg = spec.f_g0(t)
    dfg, method = spec.f_g0_prime(t)
    m1, m2 = spec.m1(t), spec.m2(t)
    num = m2 + 2 * m1 * dfg / fg
    den = m2 + 2 * m1 * spec.f1_log_prime(t)
    defined = den != 0
    bf2 = (num / den) ** 2 if defined else math.nan
    e = bandwidth_exponent
    diag = {"rho": rho, "noise_ratio": s, "bias_defined": bool(defined),
            "derivative_method": method}
    return ImprovementRatios(variance_factor2=float(vf2), variance_limit_factor1=xi ** (-e),
                             bias_factor2=float(bf2), bias_limit_factor1=xi ** (4 * e),
                             diagnostics=diag)


# --------------------------------------------------------------------------
# sawtooth warps and symmetric decompositions
# --------------------------------------------------------------------------

_EXIST_TOL = 1e-12


@dataclass(frozen=True)
class SawtoothWarp:
    """``g0(t) = v t`` on ``[0, t0)`` and ``1 - r (1 - t)`` on ``[t0, 1]``.

    ``v = (1 - r (1 - t0)) / t0`` makes the two pieces meet at ``t0``.
    """

    t0: float
    r: float

    def __post_init__(self):
        if not 0 < self.t0 < 1:
            raise InvalidSawtooth("t0 must lie in (0, 1)")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise InvalidSawtooth("r must be positive and finite")
        if not self.v > 0:
            raise InvalidSawtooth(f"lower slope v = {self.v:g} is not positive")

    @property
    def v(self) -> float:
        return (1.0 - self.r * (1.0 - self.t0)) / self.t0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.t0, self.v * t, 1.0 - self.r * (1.0 - t))

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        x0 = self.v * self.t0
        return np.where(x < x0, x / self.v, 1.0 - (1.0 - x) / self.r)


@dataclass(frozen=True)
class LinearMap:
    """``x -> 1 - slope (1 - x)``: affine map fixing 1, used for the canonical pair."""

    slope: float

    def __call__(self, t):
        return 1.0 - self.slope * (1.0 - np.asarray(t, dtype=float))

    def inverse(self, x):
        return 1.0 - (1.0 - np.asarray(x, dtype=float)) / self.slope


def canonical_upper_pair(t0: float, r: float) -> tuple:
    """The pair ``(g1, g2)`` on ``[t0, 1]`` with ``g1^{-1} o g2 = g0`` and ``(g1 + g2)/2 = id``.

    Examples
    --------
    >>> g1, g2 = canonical_upper_pair(0.25, 0.5)
    >>> round(float(g1(0.5)), 12), round(float(g2(0.5)), 12)
    (0.333333333333, 0.666666666667)
    """
    SawtoothWarp(t0, r)
    return LinearMap(2.0 / (1.0 + r)), LinearMap(2.0 * r / (1.0 + r))


def quadratic_roots(t0: float) -> tuple:
    """Values of ``r`` closing the continuity gap: 1 and ``(1 + 2 t0)/(1 - 2 t0)``."""
    second = math.inf if t0 == 0.5 else (1.0 + 2.0 * t0) / (1.0 - 2.0 * t0)
    return 1.0, second


def _root_feasible(t0: float, r: float) -> bool:
    if not (math.isfinite(r) and r > 0):
        return False
    v = (1.0 - r * (1.0 - t0)) / t0
    g1_t0 = 1.0 - 2.0 * (1.0 - t0) / (1.0 + r)
    return v > 0 and 0 < g1_t0 < 1


def _forced_value(t0: float, ratio: float) -> float:
    return 2.0 * t0 * ratio / (1.0 + ratio)


def symmetric_decomposition_check(t0: float, r: float) -> tuple:
    """Whether a symmetric decomposition of the sawtooth warp exists, with diagnostics.

    Returns
    -------
    exists : bool
        True only for the identity (``r = 1``).
    diagnostics : dict
        ``required_g1_t0`` is the value forced at ``t0`` by the lower piece,
        ``canonical_g1_t0`` the value forced by the upper piece, ``gap`` their
        absolute difference; ``roots`` lists both quadratic roots with
        feasibility flags.
    """
    w = SawtoothWarp(t0, r)
    required = _forced_value(t0, w.v)
    canonical = float(canonical_upper_pair(t0, r)[0](t0))
    roots = [{"r": rt, "feasible": _root_feasible(t0, rt)} for rt in quadratic_roots(t0)]
    exists = any(rt["feasible"] and abs(rt["r"] - r) <= _EXIST_TOL for rt in roots)
    ratio = w.v if w.v <= 1 else 1.0 / w.v
    diag = {
        "t0": t0, "r": r, "v": w.v,
        "required_g1_t0": required,
        "canonical_g1_t0": canonical,
        "gap": abs(canonical - required),
        "contraction_ratio": ratio,
        "sequence_gap": abs(canonical - _forced_value(t0, ratio)),
        "roots": roots,
    }
    return exists, diag


def lower_extension_sequence(t0: float, r: float, n_terms: int) -> tuple:
    """Points ``t_n = q^n t0`` and values forced by ``g1(t_n) = 2 t_n - g1(t_{n-1})``.

    ``q`` is the lower slope ``v`` when it is below 1 and ``1/v`` otherwise,
    so the points always contract toward 0. The sequence starts from the
    canonical ``g1(t0)``. Without a symmetric decomposition the successive
    differences settle at twice ``diagnostics["sequence_gap"]`` instead of
    shrinking to 0.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    w = SawtoothWarp(t0, r)
    q = w.v if w.v <= 1 else 1.0 / w.v
    t_seq = t0 * q ** np.arange(n_terms + 1)
    g1 = np.empty(n_terms + 1)
    g1[0] = canonical_upper_pair(t0, r)[0](t0)
    for k in range(1, n_terms + 1):
        g1[k] = 2.0 * t_seq[k] - g1[k - 1]
    return t_seq, g1
