"""Vector-valued and scalar multivariate risk measures, and toy loss scenarios.

At level ``alpha`` the Vector-at-Risk is the vertex of the quantile contour
with the largest 1-norm and the Conditional-Vector-at-Risk the same vertex
search over the superquantile contour; ``rho_q`` and ``rho_s`` are the
corresponding largest 1-norms.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .maps import ContourKind, quantile_contour
from .reference import DirectionGrid, ReferenceSpec
from .tails import TailEvalOptions, tail_contour

__all__ = [
    "RiskReport",
    "ScenarioKind",
    "ScenarioSpec",
    "default_direction_count",
    "vector_at_risk",
    "conditional_vector_at_risk",
    "rho_q",
    "rho_s",
    "risk_report",
    "generate_scenario",
    "rescaled_pair",
]

# relative slack under which two 1-norms count as tied
_TIE_RTOL = 1e-12


def default_direction_count(d: int) -> int:
    """Contour directions used by default: 512 in the plane, 2048 otherwise."""
    return 2 if d == 1 else 512 if d == 2 else 2048


@dataclass(frozen=True)
class RiskReport:
    alpha: float
    vector_at_risk: np.ndarray
    conditional_vector_at_risk: np.ndarray
    rho_q: float
    rho_s: float
    reference: ReferenceSpec
    grid_size: int

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "vector_at_risk": [float(x) for x in self.vector_at_risk],
            "conditional_vector_at_risk": [float(x) for x in self.conditional_vector_at_risk],
            "rho_q": self.rho_q,
            "rho_s": self.rho_s,
            "reference": self.reference.to_text(),
            "grid_size": self.grid_size,
        }


def _level(alpha) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"risk level must lie in (0, 1), got {alpha!r}")
    return alpha


def _argmax_l1(vertices: np.ndarray) -> tuple[np.ndarray, float]:
    norms = np.sum(np.abs(vertices), axis=1)
    top = norms.max()
    idx = int(np.flatnonzero(norms >= top - _TIE_RTOL * max(1.0, abs(top)))[0])
    return vertices[idx].copy(), float(norms[idx])


def _warn_if_negative(handle):
    data = getattr(handle, "data", None)
    if handle.reference.positive and data is not None and np.any(data.points < 0):
        warnings.warn(
            "positive-orthant reference used on data with negative coordinates",
            RuntimeWarning,
            stacklevel=3,
        )


def _quantile_argmax(handle, alpha, grid):
    contour = quantile_contour(handle, _level(alpha), grid)
    return _argmax_l1(contour.vertices)


def _superquantile_argmax(handle, alpha, grid, opts):
    contour = tail_contour(handle, _level(alpha), ContourKind.SUPERQUANTILE, grid, opts)
    return _argmax_l1(contour.vertices)


def vector_at_risk(handle, alpha: float, grid: DirectionGrid) -> np.ndarray:
    """Quantile-contour vertex with the largest 1-norm; ties go to the first direction."""
    return _quantile_argmax(handle, alpha, grid)[0]


def conditional_vector_at_risk(handle, alpha: float, grid: DirectionGrid, opts: TailEvalOptions | None = None) -> np.ndarray:
    """Superquantile-contour vertex with the largest 1-norm."""
    return _superquantile_argmax(handle, alpha, grid, opts)[0]


def rho_q(handle, alpha: float, grid: DirectionGrid) -> float:
    return _quantile_argmax(handle, alpha, grid)[1]


def rho_s(handle, alpha: float, grid: DirectionGrid, opts: TailEvalOptions | None = None) -> float:
    return _superquantile_argmax(handle, alpha, grid, opts)[1]


def risk_report(handle, alpha: float, grid: DirectionGrid, opts: TailEvalOptions | None = None) -> RiskReport:
    """All four risk quantities at one level, from one pair of contours."""
    _warn_if_negative(handle)
    var, rq = _quantile_argmax(handle, alpha, grid)
    cvar, rs = _superquantile_argmax(handle, alpha, grid, opts)
    return RiskReport(float(alpha), var, cvar, rq, rs, handle.reference, grid.m)


def rescaled_pair(first: float, second: float) -> tuple[float, float]:
    """Both values divided by the larger of the two."""
    top = max(first, second)
    if top <= 0:
        raise ParameterError("cannot rescale a pair whose maximum is not positive")
    return first / top, second / top


# ---------------------------------------------------------------------------
# scenarios


class ScenarioKind(str, enum.Enum):
    GAUSSIAN_SCALED_COV = "scaled"
    GAUSSIAN_OUTLIERS = "outliers"
    GAUSSIAN_SHIFT = "shift"
    GAUSSIAN_DIRECTIONAL = "directional"
    BANANA = "banana"


_DEFAULT_PARAMS = {
    ScenarioKind.GAUSSIAN_SCALED_COV: {"scale": 4.0},
    ScenarioKind.GAUSSIAN_OUTLIERS: {"fraction": 0.05, "radius": 8.0},
    ScenarioKind.GAUSSIAN_SHIFT: {"shift_x": 3.0, "shift_y": 0.0},
    ScenarioKind.GAUSSIAN_DIRECTIONAL: {"major": 2.0, "minor": 0.5},
    ScenarioKind.BANANA: {"curvature": 1.0, "width": 0.3},
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Two-dimensional toy scenario; missing ``params`` take their defaults.

    ``scaled``
        ``N(0, I)`` against ``N(0, scale * I)``.
    ``outliers``
        ``N(0, I)`` against a copy with a ``fraction`` of its points pushed
        ``radius`` further out in random directions.
    ``shift``
        ``N(0, I)`` against the same cloud shifted by ``(shift_x, shift_y)``.
    ``directional``
        Standard deviations ``(major, minor)`` against ``(minor, major)``.
    ``banana``
        One cloud ``(x, width * z + curvature * (x^2 - 1))``.
    """

    kind: ScenarioKind
    n: int = 2000
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = ScenarioKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.n) != self.n or self.n < 10:
            raise ParameterError(f"scenarios need n >= 10, got {self.n!r}")
        unknown = set(self.params) - set(_DEFAULT_PARAMS[kind])
        if unknown:
            raise ParameterError(f"unknown parameters for {kind.value}: {sorted(unknown)}")
        merged = {**_DEFAULT_PARAMS[kind], **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", merged)
        p = merged
        if kind is ScenarioKind.GAUSSIAN_SCALED_COV and not p["scale"] > 0:
            raise ParameterError("scale must be > 0")
        if kind is ScenarioKind.GAUSSIAN_OUTLIERS and not (0 <= p["fraction"] <= 1 and p["radius"] >= 0):
            raise ParameterError("need 0 <= fraction <= 1 and radius >= 0")
        if kind is ScenarioKind.GAUSSIAN_DIRECTIONAL and not (p["major"] > 0 and p["minor"] > 0):
            raise ParameterError("standard deviations must be > 0")
        if kind is ScenarioKind.BANANA and not p["width"] > 0:
            raise ParameterError("width must be > 0")

    @property
    def is_pair(self) -> bool:
        return self.kind is not ScenarioKind.BANANA


def generate_scenario(spec: ScenarioSpec):
    """Draw the scenario: one ``(n, 2)`` array for ``banana``, otherwise a pair.

    Paired clouds share their base Gaussian draw so that only the stated
    difference separates them.
    """
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    z = rng.standard_normal((spec.n, 2))
    kind = spec.kind
    if kind is ScenarioKind.BANANA:
        x = z[:, 0]
        return np.column_stack([x, p["width"] * z[:, 1] + p["curvature"] * (x * x - 1.0)])
    if kind is ScenarioKind.GAUSSIAN_SCALED_COV:
        return z, np.sqrt(p["scale"]) * z
    if kind is ScenarioKind.GAUSSIAN_OUTLIERS:
        moved = z.copy()
        k = int(round(p["fraction"] * spec.n))
        if k:
            idx = rng.choice(spec.n, size=k, replace=False)
            angle = rng.uniform(0.0, 2.0 * np.pi, size=k)
            moved[idx] += p["radius"] * np.column_stack([np.cos(angle), np.sin(angle)])
        return z, moved
    if kind is ScenarioKind.GAUSSIAN_SHIFT:
        return z, z + np.array([p["shift_x"], p["shift_y"]])
    sd = np.array([p["major"], p["minor"]])
    return z * sd, z * sd[::-1]
