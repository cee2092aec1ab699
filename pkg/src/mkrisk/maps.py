"""Quantile maps, potentials, ranks and signs, contours and sign curves.

Every function here takes a *map handle*: either a
:class:`~mkrisk.solver.FittedPotential` or an :class:`AnalyticMap` wrapping
closed-form callables. Both expose ``d``, ``reference``, ``quantile(u)`` and
``potential(u)`` on batches of shape ``(m, d)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError
from .reference import DirectionGrid, ReferenceSpec, reference_norm

__all__ = [
    "ContourKind",
    "Contour",
    "RankSign",
    "AnalyticMap",
    "identity_map",
    "entropic_quantile",
    "entropic_potential",
    "rank_sign",
    "rank_sign_batch",
    "quantile_contour",
    "sign_curve",
]

MAX_CONTOUR_LEVEL = 1.0 - 1e-6


class ContourKind(str, enum.Enum):
    QUANTILE = "quantile"
    SUPERQUANTILE = "superquantile"
    EXPECTED_SHORTFALL = "shortfall"


@dataclass(frozen=True)
class Contour:
    """Images of ``level * direction`` for each direction of a grid, in grid order."""

    level: float
    kind: ContourKind
    vertices: np.ndarray
    source_directions: DirectionGrid

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ParameterError(f"contour level must lie in [0, 1], got {self.level}")
        if len(self.vertices) != self.source_directions.m:
            raise ParameterError("one vertex per direction is required")
        object.__setattr__(self, "kind", ContourKind(self.kind))

    @property
    def d(self) -> int:
        return self.vertices.shape[1]


@dataclass(frozen=True)
class RankSign:
    rank: float
    sign: np.ndarray
    defined: bool = True


@dataclass(frozen=True)
class AnalyticMap:
    """Closed-form quantile map with the same evaluation surface as a fitted potential.

    Parameters
    ----------
    reference : ReferenceSpec
    quantile_fn : callable
        Maps an ``(m, d)`` batch of reference points to an ``(m, d)`` batch.
    potential_fn : callable, optional
        Convex potential on batches, normalised to vanish at the origin.
    """

    reference: ReferenceSpec
    quantile_fn: Callable[[np.ndarray], np.ndarray]
    potential_fn: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def d(self) -> int:
        return self.reference.d

    def _batch(self, u):
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        return np.atleast_2d(u), single

    def quantile(self, u):
        u2, single = self._batch(u)
        out = np.asarray(self.quantile_fn(u2), dtype=float)
        return out[0] if single else out

    def potential(self, u):
        if self.potential_fn is None:
            raise ParameterError("this analytic map carries no potential")
        u2, single = self._batch(u)
        out = np.asarray(self.potential_fn(u2), dtype=float)
        return out[0] if single else out


def identity_map(reference: ReferenceSpec) -> AnalyticMap:
    """``Q(u) = u`` with potential ``|u|^2 / 2``, the map of the reference onto itself."""
    return AnalyticMap(
        reference,
        lambda u: np.array(u, dtype=float),
        lambda u: 0.5 * np.sum(np.asarray(u) ** 2, axis=-1),
    )


def entropic_quantile(potential, u) -> np.ndarray:
    """Entropic quantile ``Q_eps(u)``; ``u`` of shape ``(d,)`` or ``(m, d)``."""
    return potential.quantile(u)


def entropic_potential(potential, u):
    """Convex potential ``psi_eps(u)`` normalised by ``psi_eps(0) = 0``."""
    return potential.potential(u)


def rank_sign_batch(potential, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ranks, signs and definedness flags for a batch of data-space points.

    The backward map averages the fitted potential's reference grid under the
    Gibbs weights of ``x``; the rank is its norm in the reference geometry,
    clamped to ``[0, 1]``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    back = potential.backward(x)
    norms = reference_norm(potential.reference, back)
    defined = norms >= 1e-12
    signs = np.zeros_like(back)
    signs[defined] = back[defined] / norms[defined, None]
    return np.clip(norms, 0.0, 1.0), signs, defined


def rank_sign(potential, x) -> RankSign:
    """Rank and sign of one data-space point through the entropic backward map."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != potential.d:
        raise ParameterError(f"expected a point of dimension {potential.d}")
    ranks, signs, defined = rank_sign_batch(potential, x)
    return RankSign(float(ranks[0]), signs[0], bool(defined[0]))


def _check_level(alpha, upper=MAX_CONTOUR_LEVEL) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= upper:
        raise ParameterError(f"level must lie in (0, {upper}], got {alpha!r}")
    return alpha


def quantile_contour(potential, alpha: float, grid: DirectionGrid) -> Contour:
    """Image of the level-``alpha`` sphere, sampled along ``grid``."""
    alpha = _check_level(alpha)
    _check_grid(potential, grid)
    vertices = potential.quantile(alpha * grid.directions)
    return Contour(alpha, ContourKind.QUANTILE, vertices, grid)


def _check_grid(potential, grid: DirectionGrid):
    if grid.directions.shape[1] != potential.d:
        raise ParameterError("direction grid dimension does not match the map")


def _check_direction(potential, direction) -> np.ndarray:
    direction = np.asarray(direction, dtype=float).ravel()
    if direction.shape != (potential.d,):
        raise ParameterError(f"direction must have dimension {potential.d}")
    norm = float(reference_norm(potential.reference, direction[None, :])[0])
    if abs(norm - 1.0) > 1e-9:
        raise ParameterError(f"direction must have unit norm, got {norm}")
    return direction


def sign_curve(potential, direction, radial) -> np.ndarray:
    """``Q(t * direction)`` for each ``t`` in ``radial``, shape ``(len(radial), d)``."""
    direction = _check_direction(potential, direction)
    radial = np.asarray(radial, dtype=float).ravel()
    return potential.quantile(radial[:, None] * direction[None, :])
