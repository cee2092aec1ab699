"""Reference measures on unit balls: sampling and deterministic direction grids.

Four references are supported, all of the form ``R * Phi`` with ``R`` uniform
on ``[0, 1]`` and ``Phi`` an independent random direction:

* ``SphericalUniform`` -- ``Phi`` uniform on the Euclidean sphere (``U_d``).
* ``SphericalUniformPositive`` -- its restriction to the positive orthant.
* ``QConjugate`` -- ``Phi = Psi ** (p - 1)`` (component-wise, sign kept) with
  ``Psi`` uniform on the unit ``p``-sphere; ``Phi`` has unit ``q``-norm where
  ``1/p + 1/q = 1``.
* ``QConjugatePositive`` -- its restriction to the positive orthant.

In every case the ball of radius ``alpha`` in the relevant norm has
probability ``alpha``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm as _std_normal
from scipy.stats import qmc

from .errors import ParameterError

__all__ = [
    "ReferenceKind",
    "ReferenceSpec",
    "DirectionGrid",
    "gamma_variates",
    "lp_sphere_sample",
    "sample_reference",
    "direction_grid",
    "radial_grid",
    "reference_norm",
]

# seed of the quasi-random direction grid used in dimension > 3
_HIGH_DIM_GRID_SEED = 20240917


class ReferenceKind(str, enum.Enum):
    SPHERICAL_UNIFORM = "SphericalUniform"
    SPHERICAL_UNIFORM_POSITIVE = "SphericalUniformPositive"
    Q_CONJUGATE = "QConjugate"
    Q_CONJUGATE_POSITIVE = "QConjugatePositive"


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference measure ``mu`` on the unit ball.

    Parameters
    ----------
    kind : ReferenceKind
        Which family of reference.
    d : int
        Dimension, at least 1.
    p : float, optional
        Exponent of the sampling sphere for the conjugate kinds (``p > 1``).
        Ignored (and stored as ``None``) for the spherical kinds.
    """

    kind: ReferenceKind
    d: int
    p: float | None = None

    def __post_init__(self):
        kind = ReferenceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        if self.is_conjugate:
            if self.p is None or not np.isfinite(self.p) or self.p <= 1:
                raise ParameterError(f"conjugate references need p > 1, got p={self.p!r}")
            object.__setattr__(self, "p", float(self.p))
        else:
            object.__setattr__(self, "p", None)

    @property
    def is_conjugate(self) -> bool:
        return self.kind in (ReferenceKind.Q_CONJUGATE, ReferenceKind.Q_CONJUGATE_POSITIVE)

    @property
    def positive(self) -> bool:
        return self.kind in (
            ReferenceKind.SPHERICAL_UNIFORM_POSITIVE,
            ReferenceKind.Q_CONJUGATE_POSITIVE,
        )

    @property
    def q(self) -> float:
        """Hoelder conjugate of ``p`` (2 for the spherical kinds)."""
        if not self.is_conjugate:
            return 2.0
        return self.p / (self.p - 1.0)

    @property
    def norm_order(self) -> float:
        """Order of the norm in which reference levels are measured."""
        return self.q

    @classmethod
    def spherical(cls, d: int, positive: bool = False) -> "ReferenceSpec":
        kind = ReferenceKind.SPHERICAL_UNIFORM_POSITIVE if positive else ReferenceKind.SPHERICAL_UNIFORM
        return cls(kind, d)

    @classmethod
    def conjugate(cls, d: int, p: float, positive: bool = False) -> "ReferenceSpec":
        kind = ReferenceKind.Q_CONJUGATE_POSITIVE if positive else ReferenceKind.Q_CONJUGATE
        return cls(kind, d, p)

    @classmethod
    def parse(cls, text: str, d: int) -> "ReferenceSpec":
        """Parse the command-line spelling ``ud``, ``ud-plus``, ``udq:<p>``, ``udq-plus:<p>``."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("ud", "ud-plus"):
            if arg:
                raise ParameterError(f"reference {name!r} takes no parameter")
            return cls.spherical(d, positive=name == "ud-plus")
        if name in ("udq", "udq-plus"):
            try:
                p = float(arg)
            except ValueError:
                raise ParameterError(f"reference {text!r} needs a numeric p, e.g. udq:2") from None
            return cls.conjugate(d, p, positive=name == "udq-plus")
        raise ParameterError(f"unknown reference {text!r}; expected ud, ud-plus, udq:<p> or udq-plus:<p>")

    def to_text(self) -> str:
        base = {
            ReferenceKind.SPHERICAL_UNIFORM: "ud",
            ReferenceKind.SPHERICAL_UNIFORM_POSITIVE: "ud-plus",
            ReferenceKind.Q_CONJUGATE: "udq",
            ReferenceKind.Q_CONJUGATE_POSITIVE: "udq-plus",
        }[self.kind]
        return f"{base}:{self.p!r}" if self.is_conjugate else base

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "d": self.d, "p": self.p}

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceSpec":
        return cls(ReferenceKind(data["kind"]), int(data["d"]), data.get("p"))


@dataclass(frozen=True)
class DirectionGrid:
    """Finite set of unit directions (2-norm or q-norm, depending on the reference)."""

    directions: np.ndarray
    reference: ReferenceSpec

    @property
    def m(self) -> int:
        return len(self.directions)


def reference_norm(spec: ReferenceSpec, u) -> np.ndarray:
    """Norm of ``u`` (last axis) in the geometry of ``spec``."""
    u = np.asarray(u, dtype=float)
    if spec.is_conjugate:
        q = spec.q
        return np.sum(np.abs(u) ** q, axis=-1) ** (1.0 / q)
    return np.linalg.norm(u, axis=-1)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gamma_variates(shape: float, size, rng) -> np.ndarray:
    """Gamma(shape, 1) variates by Marsaglia-Tsang squeeze/rejection.

    Shapes below one are handled with the boost ``G(a) = G(a + 1) * U**(1/a)``.
    """
    if shape <= 0:
        raise ParameterError(f"gamma shape must be positive, got {shape}")
    rng = _rng(rng)
    size = (size,) if np.isscalar(size) else tuple(size)
    total = int(np.prod(size))
    a = shape + 1.0 if shape < 1.0 else shape
    dd = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * dd)
    out = np.empty(total)
    todo = np.arange(total)
    while todo.size:
        k = todo.size
        x = rng.standard_normal(k)
        v = (1.0 + c * x) ** 3
        u = rng.random(k)
        ok = v > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            logv = np.log(np.where(ok, v, 1.0))
        # squeeze test first, then the exact log test
        accept = ok & (
            (u < 1.0 - 0.0331 * x**4)
            | (np.log(u) < 0.5 * x * x + dd * (1.0 - v + logv))
        )
        out[todo[accept]] = dd * v[accept]
        todo = todo[~accept]
    if shape < 1.0:
        out *= rng.random(total) ** (1.0 / shape)
    return out.reshape(size)


def lp_sphere_sample(d: int, p: float, n: int, seed=None, positive: bool = False) -> np.ndarray:
    """Uniform sample on the unit ``p``-sphere (or its positive part).

    Components are independent with density proportional to ``exp(-x**p)`` on
    the half line (``X_i**p ~ Gamma(1/p, 1)``); dividing by the ``p``-norm
    gives a direction independent of the radius.
    """
    if d < 1 or int(d) != d:
        raise ParameterError(f"dimension must be a positive integer, got {d!r}")
    if not p > 0:
        raise ParameterError(f"p must be positive, got {p!r}")
    if n < 0:
        raise ParameterError(f"sample size must be non-negative, got {n!r}")
    rng = _rng(seed)
    x = gamma_variates(1.0 / p, (n, d), rng) ** (1.0 / p)
    radius = np.sum(x**p, axis=1, keepdims=True) ** (1.0 / p)
    x = x / radius
    if not positive:
        x *= rng.choice(np.array([-1.0, 1.0]), size=(n, d))
    return x


def sample_reference(spec: ReferenceSpec, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` points ``R * Phi`` from the reference measure, shape ``(n, d)``."""
    if n < 1:
        raise ParameterError(f"need at least one sample, got n={n}")
    rng = _rng(seed)
    radius = rng.random(n)
    if spec.is_conjugate:
        psi = lp_sphere_sample(spec.d, spec.p, n, rng, positive=spec.positive)
        phi = np.sign(psi) * np.abs(psi) ** (spec.p - 1.0)
    else:
        phi = lp_sphere_sample(spec.d, 2.0, n, rng, positive=spec.positive)
    return radius[:, None] * phi


def _fibonacci_sphere(m: int) -> np.ndarray:
    k = np.arange(m) + 0.5
    z = 1.0 - 2.0 * k / m
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - math.sqrt(5.0)) * np.arange(m)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def _fibonacci_octant(m: int) -> np.ndarray:
    # smallest full lattice whose positive-octant part holds at least m points
    total = 8 * m
    while True:
        pts = _fibonacci_sphere(total)
        pts = pts[np.all(pts >= 0.0, axis=1)]
        if len(pts) >= m:
            return pts[:m]
        total += 1


def direction_grid(spec: ReferenceSpec, m: int) -> DirectionGrid:
    """Deterministic set of ``m`` unit directions for contour evaluation.

    d = 1 gives the two signs (one for positive kinds), d = 2 equally spaced
    angles (closed first quadrant for positive kinds), d = 3 a Fibonacci
    lattice, and d > 3 scrambled-Sobol Gaussian directions with a fixed seed.
    Conjugate kinds are rescaled to unit ``q``-norm.
    """
    if m < 1:
        raise ParameterError(f"need at least one direction, got m={m}")
    d = spec.d
    if d == 1:
        dirs = np.array([[1.0]]) if spec.positive else np.array([[1.0], [-1.0]])[: min(m, 2)]
    elif d == 2:
        if spec.positive:
            theta = np.array([np.pi / 4]) if m == 1 else 0.5 * np.pi * np.arange(m) / (m - 1)
        else:
            theta = 2.0 * np.pi * np.arange(m) / m
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    elif d == 3:
        dirs = _fibonacci_octant(m) if spec.positive else _fibonacci_sphere(m)
    else:
        sobol = qmc.Sobol(d, scramble=True, seed=_HIGH_DIM_GRID_SEED)
        with warnings.catch_warnings():
            # a prefix of the sequence is fine for a direction set of any size
            warnings.simplefilter("ignore", UserWarning)
            pts = sobol.random(m)
        dirs = _std_normal.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
        if spec.positive:
            dirs = np.abs(dirs)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.asarray(dirs, dtype=float)
    if spec.is_conjugate:
        dirs = dirs / reference_norm(spec, dirs)[:, None]
    return DirectionGrid(dirs, spec)


def radial_grid(k: int, r_min: float, r_max: float) -> np.ndarray:
    """Midpoint-rule nodes ``r_min + (j + 1/2) (r_max - r_min) / k``."""
    if k < 1:
        raise ParameterError(f"need at least one radial step, got k={k}")
    if not (0.0 <= r_min < r_max <= 1.0):
        raise ParameterError(f"radial bounds must satisfy 0 <= r_min < r_max <= 1, got ({r_min}, {r_max})")
    return r_min + (np.arange(k) + 0.5) * (r_max - r_min) / k
