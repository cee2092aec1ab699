"""Center-outward superquantiles and expected shortfalls.

For ``u = a * theta`` with ``a = |u|`` (reference norm) and unit ``theta``,

    S(u) = 1 / (1 - a) * integral_a^1 Q(t theta) dt,
    E(u) = 1 / a       * integral_0^a Q(t theta) dt,

so that ``a E(u) + (1 - a) S(u)`` is the full radial average. Both
integrals are estimated with the midpoint rule on ``[r_min, a]`` and
``[a, r_max]``; the truncation keeps the nodes away from the centre (where
``Q`` may be discontinuous) and from the boundary (where it may blow up).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .maps import Contour, ContourKind, _check_direction, _check_grid
from .reference import DirectionGrid, radial_grid, reference_norm

__all__ = [
    "TailEvalOptions",
    "superquantile",
    "expected_shortfall",
    "radial_average",
    "decomposition_residual",
    "tail_contour",
    "averaged_sign_curve",
]


@dataclass(frozen=True)
class TailEvalOptions:
    """Midpoint-rule settings: ``radial_steps`` nodes per integral on ``[r_min, r_max]``."""

    radial_steps: int = 128
    r_min: float = 1e-6
    r_max: float = 1.0 - 1e-6

    def __post_init__(self):
        if int(self.radial_steps) != self.radial_steps or self.radial_steps < 1:
            raise ParameterError(f"radial_steps must be a positive integer, got {self.radial_steps!r}")
        if not 0.0 <= self.r_min < self.r_max <= 1.0:
            raise ParameterError(
                f"need 0 <= r_min < r_max <= 1, got r_min={self.r_min}, r_max={self.r_max}"
            )
        object.__setattr__(self, "radial_steps", int(self.radial_steps))


def _polar(handle, u, opts: TailEvalOptions):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    if u2.shape[1] != handle.d:
        raise ParameterError(f"expected points of dimension {handle.d}, got shape {u.shape}")
    level = reference_norm(handle.reference, u2)
    if np.any(level == 0):
        raise ParameterError("tail functionals are undefined at the origin")
    if np.any(level >= 1):
        raise ParameterError("u must lie strictly inside the unit ball")
    if np.any(level <= opts.r_min) or np.any(level >= opts.r_max):
        raise ParameterError(
            f"|u| must lie strictly between r_min={opts.r_min} and r_max={opts.r_max}"
        )
    return u2 / level[:, None], level, single


def _segment_means(handle, theta, lo, hi, k):
    """Midpoint means of ``Q(t theta_i)`` over ``[lo_i, hi_i]``, shape ``(m, d)``."""
    frac = (np.arange(k) + 0.5) / k
    t = lo[:, None] + frac[None, :] * (hi - lo)[:, None]
    pts = t[:, :, None] * theta[:, None, :]
    q = handle.quantile(pts.reshape(-1, theta.shape[1]))
    return q.reshape(len(theta), k, -1).mean(axis=1)


def _tail_parts(handle, u, opts, want_upper=True, want_lower=True):
    theta, a, single = _polar(handle, u, opts)
    k = opts.radial_steps
    upper = lower = None
    if want_upper:
        hi = np.full_like(a, opts.r_max)
        upper = _segment_means(handle, theta, a, hi, k) * (hi - a)[:, None]
    if want_lower:
        lo = np.full_like(a, opts.r_min)
        lower = _segment_means(handle, theta, lo, a, k) * (a - lo)[:, None]
    return theta, a, single, upper, lower


def superquantile(handle, u, opts: TailEvalOptions | None = None) -> np.ndarray:
    """Superquantile ``S(u)``: average of ``Q`` along the ray beyond ``u``.

    Parameters
    ----------
    handle : FittedPotential or AnalyticMap
    u : array_like, shape (d,) or (m, d)
        Points with ``0 < |u| < 1`` in the reference norm.
    opts : TailEvalOptions, optional

    Returns
    -------
    ndarray, shape (d,) or (m, d)
    """
    opts = opts or TailEvalOptions()
    _, a, single, upper, _ = _tail_parts(handle, u, opts, want_lower=False)
    out = upper / (1.0 - a)[:, None]
    return out[0] if single else out


def expected_shortfall(handle, u, opts: TailEvalOptions | None = None) -> np.ndarray:
    """Expected shortfall ``E(u)``: average of ``Q`` along the ray up to ``u``."""
    opts = opts or TailEvalOptions()
    _, a, single, _, lower = _tail_parts(handle, u, opts, want_upper=False)
    out = lower / a[:, None]
    return out[0] if single else out


def radial_average(handle, direction, opts: TailEvalOptions | None = None) -> np.ndarray:
    """``integral_{r_min}^{r_max} Q(t direction) dt`` on ``radial_steps`` uniform nodes."""
    opts = opts or TailEvalOptions()
    direction = _check_direction(handle, direction)
    nodes = radial_grid(opts.radial_steps, opts.r_min, opts.r_max)
    q = handle.quantile(nodes[:, None] * direction[None, :])
    return q.mean(axis=0) * (opts.r_max - opts.r_min)


def decomposition_residual(handle, u, opts: TailEvalOptions | None = None, shared_grid: bool = True):
    """Norm of ``I - (|u| E(u) + (1 - |u|) S(u))`` with ``I`` the full radial integral.

    With ``shared_grid`` the integral ``I`` reuses the nodes of ``S`` and
    ``E`` (split at ``|u|``), so only rounding remains. Otherwise ``I`` is
    computed on its own uniform grid of ``2 * radial_steps`` nodes and the
    residual measures the quadrature error.
    """
    opts = opts or TailEvalOptions()
    theta, a, single, upper, lower = _tail_parts(handle, u, opts)
    s = upper / (1.0 - a)[:, None]
    e = lower / a[:, None]
    if shared_grid:
        # same nodes, summed as one weighted sum instead of two partial means
        k = opts.radial_steps
        frac = (np.arange(k) + 0.5) / k
        residuals = np.empty(len(a))
        for i in range(len(a)):
            t = np.concatenate([opts.r_min + frac * (a[i] - opts.r_min), a[i] + frac * (opts.r_max - a[i])])
            w = np.concatenate([np.full(k, (a[i] - opts.r_min) / k), np.full(k, (opts.r_max - a[i]) / k)])
            total = w @ handle.quantile(t[:, None] * theta[i][None, :])
            residuals[i] = np.linalg.norm(total - (a[i] * e[i] + (1.0 - a[i]) * s[i]))
    else:
        wide = TailEvalOptions(2 * opts.radial_steps, opts.r_min, opts.r_max)
        residuals = np.array(
            [
                np.linalg.norm(radial_average(handle, th, wide) - (ai * ei + (1.0 - ai) * si))
                for th, ai, ei, si in zip(theta, a, e, s)
            ]
        )
    return float(residuals[0]) if single else residuals


def tail_contour(handle, alpha: float, kind, grid: DirectionGrid, opts: TailEvalOptions | None = None) -> Contour:
    """Superquantile or expected-shortfall images of ``alpha * direction`` over ``grid``."""
    opts = opts or TailEvalOptions()
    kind = ContourKind(kind)
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"level must lie in (0, 1), got {alpha!r}")
    _check_grid(handle, grid)
    pts = alpha * grid.directions
    if kind is ContourKind.SUPERQUANTILE:
        vertices = superquantile(handle, pts, opts)
    elif kind is ContourKind.EXPECTED_SHORTFALL:
        vertices = expected_shortfall(handle, pts, opts)
    else:
        raise ParameterError("tail contours are superquantile or shortfall contours")
    return Contour(alpha, kind, np.atleast_2d(vertices), grid)


def averaged_sign_curve(handle, direction, kind, radii, opts: TailEvalOptions | None = None) -> np.ndarray:
    """``S(t direction)`` or ``E(t direction)`` for each ``t`` in ``radii``."""
    opts = opts or TailEvalOptions()
    kind = ContourKind(kind)
    direction = _check_direction(handle, direction)
    radii = np.asarray(radii, dtype=float).ravel()
    pts = radii[:, None] * direction[None, :]
    if kind is ContourKind.SUPERQUANTILE:
        return np.atleast_2d(superquantile(handle, pts, opts))
    if kind is ContourKind.EXPECTED_SHORTFALL:
        return np.atleast_2d(expected_shortfall(handle, pts, opts))
    raise ParameterError("averaged sign curves use the superquantile or the shortfall")
