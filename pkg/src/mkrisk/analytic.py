"""Closed-form oracles.

* the regularised lower incomplete gamma function,
* the generalised gamma model: independent components with density
  proportional to ``exp(-x**p)`` on the half line, whose center-outward
  quantile, superquantile and shortfall maps against the positive
  ``q``-conjugate reference are explicit,
* empirical univariate quantiles, superquantiles and expected shortfalls,
  both in the classical (``alpha`` in ``(0, 1)``) and the center-outward
  (``u`` in ``(-1, 1)``) parametrisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import ParameterError
from .reference import ReferenceSpec, gamma_variates

__all__ = [
    "reg_lower_incomplete_gamma",
    "GammaModel",
    "gamma_radial_cdf",
    "gamma_radial_quantile",
    "gamma_radial_superquantile",
    "gamma_radial_shortfall",
    "gamma_mk_distribution",
    "gamma_mk_quantile",
    "gamma_mk_superquantile",
    "gamma_mk_expected_shortfall",
    "sample_gamma_model",
    "UnivariateSample",
    "univariate_quantile",
    "univariate_superquantile",
    "univariate_expected_shortfall",
    "center_outward_quantile",
    "center_outward_superquantile",
    "center_outward_shortfall",
]

_TINY = 1e-300
_EPS = 2.220446049250313e-16


# ---------------------------------------------------------------------------
# incomplete gamma


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a + 1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    # upper tail Q(a, x) by the modified Lentz algorithm
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _reg_lower_scalar(a: float, x: float) -> float:
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_continued_fraction(a, x))


def reg_lower_incomplete_gamma(a, x):
    """Regularised lower incomplete gamma ``P(a, x)``.

    Series expansion for ``x < a + 1``, Lentz continued fraction for the
    complement otherwise.

    Parameters
    ----------
    a : float
        Shape, > 0.
    x : float or array_like
        Argument(s), >= 0.

    Returns
    -------
    float or ndarray
    """
    a = float(a)
    if not a > 0 or math.isinf(a):
        raise ParameterError(f"shape a must be positive and finite, got {a!r}")
    xs = np.asarray(x, dtype=float)
    if np.any(np.isnan(xs)) or np.any(xs < 0):
        raise ParameterError("incomplete gamma argument must be >= 0")
    if xs.ndim == 0:
        return _reg_lower_scalar(a, float(xs))
    flat = [_reg_lower_scalar(a, float(v)) for v in xs.ravel()]
    return np.array(flat).reshape(xs.shape)


# ---------------------------------------------------------------------------
# generalised gamma model


@dataclass(frozen=True)
class GammaModel:
    """Independent components with density ``p / Gamma(1/p) * exp(-x**p)`` on ``x >= 0``.

    The radius ``R = |X|_p`` satisfies ``R**p ~ Gamma(d/p, 1)`` and is
    independent of ``X / R``.
    """

    d: int
    p: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.d!r}")
        if not self.p > 1 or math.isinf(self.p):
            raise ParameterError(f"the gamma model needs finite p > 1, got {self.p!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "p", float(self.p))

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def shape(self) -> float:
        return self.d / self.p

    @property
    def mean_radius(self) -> float:
        """``E|X|_p = Gamma((d+1)/p) / Gamma(d/p)``."""
        return math.exp(math.lgamma((self.d + 1) / self.p) - math.lgamma(self.d / self.p))

    def reference(self) -> ReferenceSpec:
        """The positive-orthant conjugate reference the explicit maps are built for."""
        return ReferenceSpec.conjugate(self.d, self.p, positive=True)

    def radial_density(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            logr = np.log(r)
        logg = math.log(self.p) + (self.d - 1) * logr - r**self.p - math.lgamma(self.shape)
        out = np.exp(logg)
        if self.d == 1:
            out = np.where(r == 0, self.p / math.gamma(self.shape), out)
        return np.where(r < 0, 0.0, out)


def gamma_radial_cdf(model: GammaModel, r):
    """``G(r) = P(d/p, r**p)``, the distribution function of ``|X|_p``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ParameterError("radius must be >= 0")
    out = reg_lower_incomplete_gamma(model.shape, r**model.p)
    return float(out) if np.ndim(out) == 0 else out


def _radial_quantile_scalar(model: GammaModel, t: float) -> float:
    lo, hi = 0.0, 1.0
    while gamma_radial_cdf(model, hi) < t:
        lo, hi = hi, 2.0 * hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gamma_radial_cdf(model, mid) < t:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    r = 0.5 * (lo + hi)
    for _ in range(8):
        dens = float(model.radial_density(r))
        err = gamma_radial_cdf(model, r) - t
        if dens <= 0 or abs(err) <= 1e-15:
            break
        step = r - err / dens
        if not lo <= step <= hi:
            break
        r = step
    return r


def gamma_radial_quantile(model: GammaModel, t):
    """``G^{-1}(t)`` by bracketed bisection refined with Newton steps."""
    ts = np.asarray(t, dtype=float)
    if np.any(~((ts > 0) & (ts < 1))):
        raise ParameterError("radial quantile level must lie in (0, 1)")
    if ts.ndim == 0:
        return _radial_quantile_scalar(model, float(ts))
    return np.array([_radial_quantile_scalar(model, float(v)) for v in ts.ravel()]).reshape(ts.shape)


def _radial_moment(model: GammaModel, lo: float, hi: float) -> float:
    # integral of r g(r) on [lo, hi]; equals the integral of G^{-1} over [G(lo), G(hi)]
    f = lambda r: r * float(model.radial_density(r))
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def gamma_radial_superquantile(model: GammaModel, alpha: float) -> float:
    """``(1 / (1 - alpha)) * integral_alpha^1 G^{-1}(t) dt``."""
    alpha = _open_level(alpha)
    r = _radial_quantile_scalar(model, alpha)
    return _radial_moment(model, r, np.inf) / (1.0 - alpha)


def gamma_radial_shortfall(model: GammaModel, alpha: float) -> float:
    """``(1 / alpha) * integral_0^alpha G^{-1}(t) dt``."""
    alpha = _open_level(alpha)
    r = _radial_quantile_scalar(model, alpha)
    return _radial_moment(model, 0.0, r) / alpha


def _open_level(alpha) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"level must lie in (0, 1), got {alpha!r}")
    return alpha


def _orthant_points(x, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if np.any(x2 < 0):
        raise ParameterError(f"{what} must lie in the positive orthant")
    return x2, single


def _signed_power(x, e):
    return np.sign(x) * np.abs(x) ** e


def gamma_mk_distribution(model: GammaModel, x):
    """``F_q(x) = (x / |x|_p) ** (p - 1) * G(|x|_p)``, one point or a batch."""
    x2, single = _orthant_points(x, "x")
    radius = np.sum(x2**model.p, axis=1) ** (1.0 / model.p)
    if np.any(radius == 0):
        raise ParameterError("the distribution map direction is undefined at the origin")
    direction = _signed_power(x2 / radius[:, None], model.p - 1.0)
    out = direction * np.atleast_1d(gamma_radial_cdf(model, radius))[:, None]
    return out[0] if single else out


def _conjugate_polar(model: GammaModel, u, closed_top: bool):
    u2, single = _orthant_points(u, "u")
    level = np.sum(u2**model.q, axis=1) ** (1.0 / model.q)
    if np.any(level == 0):
        raise ParameterError("the direction is undefined at the origin")
    if np.any(level > 1 + 1e-12) or (not closed_top and np.any(level >= 1)):
        raise ParameterError("u must lie inside the unit q-ball")
    direction = _signed_power(u2 / level[:, None], model.q - 1.0)
    return direction, level, single


def gamma_mk_quantile(model: GammaModel, u):
    """``Q_q(u) = (u / |u|_q) ** (q - 1) * G^{-1}(|u|_q)`` for ``0 < |u|_q < 1``."""
    direction, level, single = _conjugate_polar(model, u, closed_top=False)
    out = direction * np.atleast_1d(gamma_radial_quantile(model, level))[:, None]
    return out[0] if single else out


def gamma_mk_superquantile(model: GammaModel, u):
    """Direction factor of ``Q_q`` times the radial superquantile at ``|u|_q``."""
    direction, level, single = _conjugate_polar(model, u, closed_top=False)
    radial = np.array([gamma_radial_superquantile(model, a) for a in level])
    out = direction * radial[:, None]
    return out[0] if single else out


def gamma_mk_expected_shortfall(model: GammaModel, u):
    """Direction factor of ``Q_q`` times the radial expected shortfall at ``|u|_q``."""
    direction, level, single = _conjugate_polar(model, u, closed_top=False)
    radial = np.array([gamma_radial_shortfall(model, a) for a in level])
    out = direction * radial[:, None]
    return out[0] if single else out


def sample_gamma_model(model: GammaModel, n: int, seed=None) -> np.ndarray:
    """``n`` draws of the model, shape ``(n, d)``."""
    if n < 1:
        raise ParameterError("need at least one sample")
    rng = np.random.default_rng(seed)
    return gamma_variates(1.0 / model.p, (n, model.d), rng) ** (1.0 / model.p)


# ---------------------------------------------------------------------------
# empirical univariate tail functionals


@dataclass(frozen=True)
class UnivariateSample:
    """Sorted copy of a real sample; the empirical quantile function is a step function."""

    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise ParameterError("empty sample")
        if not np.all(np.isfinite(v)):
            raise ParameterError("sample contains NaN or infinite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    def _knot(self, alpha: float) -> int:
        # 1-based index k with (k-1)/n < alpha <= k/n; the slack absorbs rounding of alpha*n
        return min(self.n, max(1, math.ceil(alpha * self.n - 1e-10)))

    def lower_integral(self, alpha: float) -> float:
        """``integral_0^alpha Q(t) dt`` exactly, for ``alpha`` in ``[0, 1]``."""
        if alpha <= 0:
            return 0.0
        if alpha >= 1:
            return float(self.values.mean())
        k = self._knot(alpha)
        head = float(self.values[: k - 1].sum()) / self.n
        return head + (alpha - (k - 1) / self.n) * float(self.values[k - 1])


def _as_sample(sample) -> UnivariateSample:
    return sample if isinstance(sample, UnivariateSample) else UnivariateSample(sample)


def univariate_quantile(sample, alpha: float) -> float:
    """Left-continuous inverse of the empirical distribution function."""
    s = _as_sample(sample)
    alpha = _open_level(alpha)
    return float(s.values[s._knot(alpha) - 1])


def univariate_superquantile(sample, alpha: float) -> float:
    """``(1 / (1 - alpha)) * integral_alpha^1 Q(t) dt``."""
    s = _as_sample(sample)
    alpha = _open_level(alpha)
    upper = float(s.values.mean()) - s.lower_integral(alpha)
    return upper / (1.0 - alpha)


def univariate_expected_shortfall(sample, alpha: float) -> float:
    """``(1 / alpha) * integral_0^alpha Q(t) dt``."""
    s = _as_sample(sample)
    alpha = _open_level(alpha)
    return s.lower_integral(alpha) / alpha


def _signed_level(u) -> float:
    u = float(np.asarray(u, dtype=float).ravel()[0]) if np.ndim(u) else float(u)
    if not -1.0 < u < 1.0:
        raise ParameterError(f"center-outward level must lie in (-1, 1), got {u!r}")
    return u


def center_outward_quantile(sample, u) -> float:
    """Quantile against the uniform reference on ``[-1, 1]``: ``Q((1 + u) / 2)``."""
    u = _signed_level(u)
    return univariate_quantile(sample, 0.5 * (1.0 + u))


def center_outward_superquantile(sample, u) -> float:
    """Average of the center-outward quantile over ``t u / |u|``, ``|u| <= t <= 1``."""
    u = _signed_level(u)
    if u == 0:
        raise ParameterError("the superquantile is undefined at the center")
    s = _as_sample(sample)
    a = abs(u)
    if u > 0:
        return univariate_superquantile(s, 0.5 * (1.0 + a))
    return univariate_expected_shortfall(s, 0.5 * (1.0 - a))


def center_outward_shortfall(sample, u) -> float:
    """Average of the center-outward quantile over ``t u / |u|``, ``0 <= t <= |u|``."""
    u = _signed_level(u)
    if u == 0:
        raise ParameterError("the expected shortfall is undefined at the center")
    s = _as_sample(sample)
    a = abs(u)
    lo, hi = (0.5, 0.5 * (1.0 + a)) if u > 0 else (0.5 * (1.0 - a), 0.5)
    return (s.lower_integral(hi) - s.lower_integral(lo)) / (0.5 * a)
