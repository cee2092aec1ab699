"""Entropic semi-dual optimal transport from a reference measure to a point cloud.

The dual potential ``v`` on the data maximises

    F(v) = E_mu[v^{c,eps}(U)] + mean_i v_i - eps,
    v^{c,eps}(u) = -eps * log(mean_i exp((v_i - |u - x_i|^2 / 2) / eps)),

under the normalisation ``v[anchor] = 0``. Two backends are provided:

``FIXED_POINT``
    Freezes a seeded sample of the reference (the "grid") and alternates
    Sinkhorn sweeps ``v_i <- v_i - eps * log(n * mass_i)`` with a
    Newton-CG correction on the same concave objective, until the data
    marginal residual ``max_i |n * mass_i - 1|`` drops below the tolerance.
    Only grid/atom pairs within ``truncation`` units of ``eps`` of the row
    optimum are kept, which makes the kernel sparse; the neglected weights are
    below ``exp(-truncation)`` relative to the row maximum.

``AVERAGED_SGD``
    Robbins-Monro ascent on fresh reference minibatches with steps
    ``step_scale / sqrt(t)`` and Polyak averaging of the iterates.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.linalg import sqrtm
from scipy.sparse.linalg import LinearOperator, cg
from scipy.spatial import cKDTree

from ._gibbs import softmin, softmin_weights
from .errors import DataError, NumericalError, ParameterError
from .reference import ReferenceSpec, sample_reference

__all__ = [
    "PointCloud",
    "SolverMethod",
    "SolveOptions",
    "SolveLog",
    "FittedPotential",
    "smooth_c_transform",
    "semidual_objective",
    "solve_semidual",
]

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3
MAX_GRID_SIZE = 100_000


@dataclass(frozen=True)
class PointCloud:
    """Empirical measure with uniform weights on the rows of ``points``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DataError(f"points must be an (n, d) array, got shape {pts.shape}")
        if len(pts) < 2:
            raise DataError(f"need n >= 2 observations, got n={len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain NaN or infinite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def is_degenerate(self) -> bool:
        """True when every observation coincides."""
        return bool(np.all(self.points == self.points[0]))

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)


class SolverMethod(str, enum.Enum):
    AVERAGED_SGD = "sgd"
    FIXED_POINT = "fixed"


@dataclass(frozen=True)
class SolveOptions:
    """Solver configuration.

    ``iterations`` and ``batch_reference_size`` default per method: 500
    outer iterations on a grid of ``min(10 n, 100000)`` points for the fixed
    point, 2000 steps on minibatches of ``min(n, 256)`` points for SGD.
    """

    method: SolverMethod = SolverMethod.FIXED_POINT
    iterations: int | None = None
    batch_reference_size: int | None = None
    step_scale: float = 1.0
    tolerance: float = 1e-7
    seed: int = 0
    newton: bool = True
    truncation: float = 30.0
    continuation_stages: int = 3
    max_kernel_entries: int = 40_000_000

    def __post_init__(self):
        object.__setattr__(self, "method", SolverMethod(self.method))
        if self.iterations is not None and self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.batch_reference_size is not None and self.batch_reference_size < 1:
            raise ParameterError("batch_reference_size must be >= 1")
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be > 0")
        if not self.step_scale > 0:
            raise ParameterError("step_scale must be > 0")
        if not self.truncation >= 10:
            raise ParameterError("truncation must be >= 10")
        if self.continuation_stages < 0:
            raise ParameterError("continuation_stages must be >= 0")
        if self.max_kernel_entries < 1:
            raise ParameterError("max_kernel_entries must be >= 1")

    def resolved(self, n: int) -> "SolveOptions":
        if self.method is SolverMethod.FIXED_POINT:
            iters = self.iterations or 500
            batch = self.batch_reference_size or min(10 * n, MAX_GRID_SIZE)
        else:
            iters = self.iterations or 2000
            batch = self.batch_reference_size or min(n, 256)
        return replace(self, iterations=iters, batch_reference_size=batch)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "iterations": self.iterations,
            "batch_reference_size": self.batch_reference_size,
            "step_scale": self.step_scale,
            "tolerance": self.tolerance,
            "seed": self.seed,
            "newton": self.newton,
            "truncation": self.truncation,
            "continuation_stages": self.continuation_stages,
            "max_kernel_entries": self.max_kernel_entries,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SolveOptions":
        return cls(**data)


@dataclass(frozen=True)
class SolveLog:
    method: str
    iterations: int
    objective: float
    residual: float
    gradient_norm: float
    converged: bool
    grid_size: int
    warning: str | None = None
    objective_history: tuple = ()

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["objective_history"] = list(self.objective_history)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SolveLog":
        data = dict(data)
        data["objective_history"] = tuple(data.get("objective_history", ()))
        return cls(**data)


@dataclass(frozen=True)
class FittedPotential:
    """Solved dual potential; evaluates the entropic maps.

    ``v`` holds the potential at the data points with ``v[anchor_index] == 0``.
    ``psi_zero`` is ``-v^{c,eps}(0)``, so that the convex potential
    ``psi(u) = |u|^2/2 - v^{c,eps}(u) - psi_zero`` vanishes at the origin.
    """

    data: PointCloud
    v: np.ndarray
    epsilon: float
    reference: ReferenceSpec
    anchor_index: int
    psi_zero: float
    solve_log: SolveLog
    rank_grid_size: int = 4096
    rank_seed: int = 0

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.shape != (self.data.n,):
            raise ParameterError(f"v must have length n={self.data.n}, got shape {v.shape}")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")
        if self.reference.d != self.data.d:
            raise ParameterError(
                f"reference dimension {self.reference.d} != data dimension {self.data.d}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.data.d

    def _batch(self, u):
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u2 = np.atleast_2d(u)
        if self.d == 1 and u.ndim == 1 and u.shape[0] != 1:
            # a flat vector of scalar levels in dimension one
            u2, single = u[:, None], False
        if u2.shape[-1] != self.d:
            raise ParameterError(f"expected points of dimension {self.d}, got shape {u.shape}")
        return u2, single

    def c_transform(self, u) -> np.ndarray:
        """Smooth c-transform ``v^{c,eps}`` at one point ``(d,)`` or a batch ``(m, d)``."""
        u2, single = self._batch(u)
        lse, _ = softmin(u2, self.data.points, self.v, self.epsilon)
        out = -self.epsilon * (lse - math.log(self.data.n))
        return out[0] if single else out

    def quantile(self, u) -> np.ndarray:
        """Entropic quantile map: Gibbs-weighted barycentre of the data."""
        u2, single = self._batch(u)
        _, avg = softmin(u2, self.data.points, self.v, self.epsilon, values=self.data.points)
        return avg[0] if single else avg

    def potential(self, u) -> np.ndarray:
        """Convex potential ``psi_eps`` with ``psi_eps(0) = 0``; its gradient is ``quantile``."""
        u2, single = self._batch(u)
        lse, _ = softmin(u2, self.data.points, self.v, self.epsilon)
        c = -self.epsilon * (lse - math.log(self.data.n))
        out = 0.5 * np.sum(u2 * u2, axis=1) - c - self.psi_zero
        return out[0] if single else out

    @cached_property
    def rank_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Seeded reference sample and its c-transform, for the backward map."""
        grid = sample_reference(self.reference, self.rank_grid_size, self.rank_seed)
        return grid, self.c_transform(grid)

    def backward(self, x) -> np.ndarray:
        """Entropic backward map: conditional mean of the reference given ``x``."""
        x2, single = self._batch(x)
        grid, cgrid = self.rank_grid
        _, avg = softmin(x2, grid, cgrid, self.epsilon, values=grid)
        return avg[0] if single else avg

    def with_rank_grid(self, size: int, seed: int = 0) -> "FittedPotential":
        return replace(self, rank_grid_size=int(size), rank_seed=int(seed))


def smooth_c_transform(potential: FittedPotential, u) -> np.ndarray:
    """``-eps * log(mean_i exp((v_i - |u - x_i|^2/2) / eps))``, overflow-safe."""
    return potential.c_transform(u)


def semidual_objective(potential: FittedPotential, reference_sample) -> float:
    """Monte-Carlo value of the semi-dual objective on a reference sample."""
    sample = np.asarray(reference_sample, dtype=float)
    if sample.ndim == 1:
        sample = sample[:, None] if potential.d == 1 else sample[None, :]
    if len(sample) == 0:
        raise ParameterError("reference sample is empty")
    c = potential.c_transform(sample)
    return float(np.mean(c) + np.mean(potential.v) - potential.epsilon)


# ---------------------------------------------------------------------------
# sparse semi-discrete kernel used by the fixed-point backend


def _kd_blocks(points: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Permutation grouping ``points`` into spatially compact blocks of <= size."""
    order = np.arange(len(points))
    bounds = []
    stack = [(0, len(points))]
    while stack:
        lo, hi = stack.pop()
        if hi - lo <= size:
            bounds.append((lo, hi))
            continue
        idx = order[lo:hi]
        pts = points[idx]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(pts[:, axis], mid)
        order[lo:hi] = idx[part]
        stack.append((lo + mid, hi))
        stack.append((lo, lo + mid))
    bounds.sort()
    starts = np.array([b[0] for b in bounds] + [len(points)])
    return order, starts


class _SparseKernel:
    """Truncated Gibbs kernel between a frozen grid and the data atoms.

    Pairs are kept when their log-weight is within ``truncation + margin`` of
    the row maximum at build time; the structure stays exact to
    ``exp(-truncation)`` while the oscillation of ``v - v_build`` is at most
    ``margin * eps``.
    """

    def __init__(self, grid, data, eps, truncation=30.0, margin=10.0, block=64):
        order, self.starts = _kd_blocks(grid, block)
        self.grid = np.ascontiguousarray(grid[order])
        self.data = data
        self.eps = eps
        self.truncation = truncation
        self.margin = margin
        self.m = len(grid)
        self.n = len(data)
        self.v_build = None
        self.rebuilds = 0
        centers = np.add.reduceat(self.grid, self.starts[:-1], axis=0)
        centers /= np.diff(self.starts)[:, None]
        self.centers = centers
        lengths = np.diff(self.starts)
        block_of = np.repeat(np.arange(len(lengths)), lengths)
        dist = np.linalg.norm(self.grid - centers[block_of], axis=1)
        self.radii = np.maximum.reduceat(dist, self.starts[:-1])

    def valid_for(self, v) -> bool:
        if self.v_build is None:
            return False
        dv = v - self.v_build
        return float(dv.max() - dv.min()) <= self.margin * self.eps

    def build(self, v):
        eps = self.eps
        cut = self.truncation + self.margin
        lift = np.sqrt(2.0 * (v.max() - v))
        tree = cKDTree(np.column_stack([self.data, lift]))
        zeros = np.zeros((len(self.centers), 1))
        queries = np.column_stack([self.centers, zeros])
        nearest, _ = tree.query(queries)
        radius = self.radii + np.sqrt((nearest + self.radii) ** 2 + 2.0 * cut * eps)
        # up to a per-row constant the log-weight is <u, x_j> + v_j - |x_j|^2 / 2,
        # one matrix product per block; exact costs are recomputed for kept pairs
        offset = v - 0.5 * np.einsum("ij,ij->i", self.data, self.data)
        slack = cut * eps
        cols, counts = [], []
        for b in range(len(self.centers)):
            cand = np.asarray(tree.query_ball_point(queries[b], radius[b]), dtype=np.int64)
            rows = self.grid[self.starts[b]:self.starts[b + 1]]
            w = rows @ self.data[cand].T
            w += offset[cand]
            keep = w >= w.max(axis=1, keepdims=True) - slack
            r, c = np.nonzero(keep)
            counts.append(np.bincount(r, minlength=len(rows)))
            cols.append(cand[c])
        counts = np.concatenate(counts)
        # 32-bit indices let scipy wrap the arrays without copying
        itype = np.int32 if counts.sum() < 2**31 - 1 else np.int64
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(itype)
        self.indices = np.concatenate(cols).astype(itype)
        self.rows = np.repeat(np.arange(self.m, dtype=np.int32), counts)
        self.costs = np.zeros(len(self.indices))
        for j in range(self.data.shape[1]):
            diff = self.grid[self.rows, j] - self.data[self.indices, j]
            self.costs += 0.5 * diff * diff
        self.v_build = v.copy()
        self.rebuilds += 1

    def ensure(self, v):
        if not self.valid_for(v):
            self.build(v)

    def evaluate(self, v):
        """Objective, row probabilities (CSR data) and column masses."""
        eps = self.eps
        z = v[self.indices] - self.costs
        z /= eps
        zmax = np.maximum.reduceat(z, self.indptr[:-1])
        z -= zmax[self.rows]
        np.exp(z, out=z)
        s = np.add.reduceat(z, self.indptr[:-1])
        z /= s[self.rows]
        c = -eps * (np.log(s) + zmax - math.log(self.n))
        objective = float(c.mean() + v.mean() - eps)
        mass = np.bincount(self.indices, weights=z, minlength=self.n) / self.m
        return objective, z, mass

    def max_step(self, v, direction) -> float:
        """Largest ``t`` in ``[0, 1]`` keeping ``v + t * direction`` inside the valid range."""
        base = v - self.v_build
        budget = self.margin * self.eps

        def osc(t):
            w = base + t * direction
            return float(w.max() - w.min())

        if osc(1.0) <= budget:
            return 1.0
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if osc(mid) <= budget:
                lo = mid
            else:
                hi = mid
        return lo

    def orphans(self) -> np.ndarray:
        return np.flatnonzero(np.bincount(self.indices, minlength=self.n) == 0)

    def best_gaps(self, v, atoms) -> np.ndarray:
        """Smallest log-weight gap to the row maximum, per atom, over all grid rows."""
        eps = self.eps
        z = (v[self.indices] - self.costs) / eps
        zmax = np.maximum.reduceat(z, self.indptr[:-1])
        gaps = np.empty(len(atoms))
        for k, i in enumerate(atoms):
            zi = (v[i] - 0.5 * np.sum((self.grid - self.data[i]) ** 2, axis=1)) / eps
            gaps[k] = np.min(zmax - zi)
        return gaps

    def hessian(self, probs, mass):
        """Positive semi-definite Hessian of ``-F`` as a linear operator."""
        P = sparse.csr_matrix((probs, self.indices, self.indptr), shape=(self.m, self.n))
        # the implicit (CSC) transpose is a little slower per product than a
        # CSR copy but avoids converting and storing a second structure
        PT = P.T
        inv_m = 1.0 / self.m
        eps = self.eps

        def matvec(z):
            return (mass * z - inv_m * (PT @ (P @ z))) / eps

        sq = np.bincount(self.indices, weights=probs * probs, minlength=self.n) * inv_m
        diag = (mass - sq) / eps
        return matvec, diag


def _affine_start(points: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Dual potential of the Gaussian (affine) transport matching first two moments.

    ``psi0(u) = <b, u> + u^T A u / 2`` with ``A`` the Monge map between the
    grid and data covariances; returns ``|x|^2/2 - psi0^*(x)``.
    """
    d = points.shape[1]
    mx, mu = points.mean(axis=0), grid.mean(axis=0)
    sx = np.atleast_2d(np.cov(points, rowvar=False))
    su = np.atleast_2d(np.cov(grid, rowvar=False))
    jitter = 1e-10 * (np.trace(sx) / d + 1e-300)
    sx = sx + jitter * np.eye(d)
    su_half = np.real(sqrtm(su))
    su_ihalf = np.linalg.inv(su_half)
    a = su_ihalf @ np.real(sqrtm(su_half @ sx @ su_half)) @ su_ihalf
    a = 0.5 * (a + a.T)
    b = mx - a @ mu
    centred = points - b
    conj = 0.5 * np.einsum("ij,ij->i", centred, np.linalg.solve(a, centred.T).T)
    return 0.5 * np.sum(points * points, axis=1) - conj


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite values in {what}")


def _anchor(v, anchor):
    return v - v[anchor]


def _rescue_orphans(kernel, v, anchor):
    # atoms missing from every kept pair have been pushed too low; lift them so
    # they enter the structure with a negligible (exp(-20)) weight
    for _ in range(5):
        lost = kernel.orphans()
        if lost.size == 0:
            break
        gaps = kernel.best_gaps(v, lost)
        v = v.copy()
        v[lost] += kernel.eps * np.maximum(gaps - 20.0, 0.0)
        v = _anchor(v, anchor)
        kernel.build(v)
    return v


def _affordable_rows(grid, points, eps, v, opts) -> int:
    """Grid rows whose truncated kernel fits in ``opts.max_kernel_entries``."""
    probe_rows = min(len(grid), 512)
    probe = _SparseKernel(grid[:probe_rows], points, eps, truncation=opts.truncation)
    probe.build(v)
    # converged potentials are usually a little denser than early iterates
    per_row = 1.25 * len(probe.indices) / probe_rows
    return int(min(len(grid), max(probe_rows, opts.max_kernel_entries // max(per_row, 1.0))))


def _fixed_point_stage(points, eps, grid, opts, v, anchor, tolerance, budget_iters):
    n = len(points)
    kernel = _SparseKernel(grid, points, eps, truncation=opts.truncation)
    kernel.build(v)
    v = _rescue_orphans(kernel, v, anchor)
    history = []
    objective, probs, mass = kernel.evaluate(v)
    residual = float(np.max(np.abs(n * mass - 1.0)))
    it = 0
    free = np.arange(n) != anchor
    while residual >= tolerance and it < budget_iters:
        it += 1
        history.append(objective)
        # Sinkhorn sweep: exact maximisation over v of the full dual at fixed grid potential
        with np.errstate(divide="ignore"):
            step = -eps * np.log(n * mass)
        if not np.all(np.isfinite(step)):
            lost = np.flatnonzero(~np.isfinite(step))
            step[lost] = eps * np.maximum(kernel.best_gaps(v, lost) - 20.0, 0.0)
        v = _anchor(v + step, anchor)
        _check_finite(v, "Sinkhorn update")
        kernel.ensure(v)
        objective, probs, mass = kernel.evaluate(v)
        residual = float(np.max(np.abs(n * mass - 1.0)))
        if residual >= tolerance and opts.newton:
            v, objective, probs, mass = _newton_step(kernel, v, objective, probs, mass, free, anchor, residual)
            residual = float(np.max(np.abs(n * mass - 1.0)))
        logger.debug(
            "eps %.3g iteration %d: objective %.12g residual %.3e builds %d",
            eps, it, objective, residual, kernel.rebuilds,
        )
    history.append(objective)
    return v, it, objective, residual, mass, history


def _solve_fixed_point(points, eps, grid, opts, v0, anchor, stages):
    n = len(points)
    v = _anchor(v0, anchor)
    total = 0
    notes = []
    # continuation in eps: coarse problems move the potential far cheaply, the
    # final stage only corrects locally
    for k in range(stages, -1, -1):
        eps_k = eps * 4.0**k
        final = k == 0
        rows = _affordable_rows(grid, points, eps_k, v, opts)
        if not final:
            # smoother coarse problems need fewer reference points
            rows = min(rows, max(2 * n, len(grid) // 4**k))
        if final and rows < len(grid):
            notes.append(f"reference grid reduced from {len(grid)} to {rows} points to respect max_kernel_entries")
        tol_k = opts.tolerance if final else max(opts.tolerance, 1e-2)
        left = opts.iterations - total if final else max(1, min(50, opts.iterations - total))
        v, it, objective, residual, mass, history = _fixed_point_stage(
            points, eps_k, grid[:rows], opts, v, anchor, tol_k, max(left, 0)
        )
        total += it
    converged = residual < opts.tolerance
    if not converged:
        notes.append(f"marginal residual {residual:.3e} above tolerance after {total} iterations")
    return v, SolveLog(
        method=SolverMethod.FIXED_POINT.value,
        iterations=total,
        objective=objective,
        residual=residual,
        gradient_norm=float(np.linalg.norm(1.0 / n - mass)),
        converged=converged,
        grid_size=rows,
        warning="; ".join(notes) or None,
        objective_history=tuple(history),
    )


def _accept(obj_t, mass_t, objective, residual, slope) -> bool:
    # Armijo, or, once the objective is flat to rounding, a smaller marginal residual
    if obj_t >= objective + 1e-4 * slope:
        return True
    flat = obj_t >= objective - 1e-14 * max(1.0, abs(objective))
    return flat and float(np.max(np.abs(len(mass_t) * mass_t - 1.0))) < residual


def _newton_step(kernel, v, objective, probs, mass, free, anchor, residual):
    n = len(v)
    grad = 1.0 / n - mass
    matvec, diag = kernel.hessian(probs, mass)
    diag_free = np.maximum(diag[free], 1e-300)
    ridge = 1e-12 * float(np.mean(diag_free))

    def reduced(z):
        full = np.zeros(n)
        full[free] = z
        return matvec(full)[free] + ridge * z

    k = int(free.sum())
    op = LinearOperator((k, k), matvec=reduced)
    prec = LinearOperator((k, k), matvec=lambda z: z / (diag_free + ridge))
    rtol = min(0.1, 0.1 * math.sqrt(residual))
    sol, _ = cg(op, grad[free], rtol=rtol, maxiter=2000, M=prec)
    direction = np.zeros(n)
    direction[free] = sol
    slope = float(grad @ direction)
    if not slope > 0:
        return v, objective, probs, mass
    t = kernel.max_step(v, direction)
    if t < 1.0:
        # the full step leaves the exact range: try it on a structure built around it
        trial = v + direction
        trial -= trial[anchor]
        kernel.build(trial)
        obj_t, probs_t, mass_t = kernel.evaluate(trial)
        if _accept(obj_t, mass_t, objective, residual, slope):
            _check_finite(trial, "Newton update")
            return trial, obj_t, probs_t, mass_t
        t = 0.0
    # otherwise stay inside the range where the sparse structure is exact,
    # rebuilding at v first when that range is nearly used up
    if t < 0.5:
        kernel.build(v)
        objective, probs, mass = kernel.evaluate(v)
        t = kernel.max_step(v, direction)
    while t > 1e-8:
        trial = v + t * direction
        trial -= trial[anchor]
        kernel.ensure(trial)
        obj_t, probs_t, mass_t = kernel.evaluate(trial)
        if _accept(obj_t, mass_t, objective, residual, t * slope):
            _check_finite(trial, "Newton update")
            return trial, obj_t, probs_t, mass_t
        t *= 0.5
    kernel.ensure(v)
    obj, probs, mass = kernel.evaluate(v)
    return v, obj, probs, mass


def _solve_sgd(points, eps, reference, opts, v0, anchor, seed):
    n = len(points)
    rng = np.random.default_rng(seed)
    v = _anchor(v0, anchor)
    avg = v.copy()
    history = []
    scale = opts.step_scale * eps
    for t in range(1, opts.iterations + 1):
        batch = sample_reference(reference, opts.batch_reference_size, rng)
        mass = softmin_weights(batch, points, v, eps).mean(axis=0)
        v = v + (scale / math.sqrt(t)) * (1.0 - n * mass)
        v -= v[anchor]
        avg += (v - avg) / (t + 1)
        _check_finite(v, "SGD update")
        if t % 50 == 0 or t == opts.iterations:
            lse, _ = softmin(batch, points, avg, eps)
            history.append(float(-eps * (lse - math.log(n)).mean() + avg.mean() - eps))
    avg = _anchor(avg, anchor)
    # held-out estimate of the data marginal under the averaged potential
    check = sample_reference(reference, min(10 * n, 20_000), rng)
    mass = np.zeros(n)
    objective = 0.0
    for start in range(0, len(check), 2048):
        chunk = check[start:start + 2048]
        mass += softmin_weights(chunk, points, avg, eps).sum(axis=0)
        lse, _ = softmin(chunk, points, avg, eps)
        objective += float(np.sum(-eps * (lse - math.log(n))))
    mass /= len(check)
    objective = objective / len(check) + float(avg.mean()) - eps
    residual = float(np.max(np.abs(n * mass - 1.0)))
    converged = residual < opts.tolerance
    return avg, SolveLog(
        method=SolverMethod.AVERAGED_SGD.value,
        iterations=opts.iterations,
        objective=objective,
        residual=residual,
        gradient_norm=float(np.linalg.norm(1.0 / n - mass)),
        converged=converged,
        grid_size=len(check),
        warning=None if converged else f"Monte-Carlo marginal residual {residual:.3e} above tolerance",
        objective_history=tuple(history),
    )


def solve_semidual(
    data,
    reference: ReferenceSpec,
    epsilon: float = DEFAULT_EPSILON,
    options: SolveOptions | None = None,
    *,
    initial=None,
    reference_grid=None,
) -> FittedPotential:
    """Fit the entropic dual potential between ``reference`` and ``data``.

    Parameters
    ----------
    data : PointCloud or array-like, shape (n, d)
    reference : ReferenceSpec
    epsilon : float
        Entropic regularisation, > 0.
    options : SolveOptions, optional
    initial : array-like, shape (n,), optional
        Starting potential. Defaults to the potential of the affine map
        matching the first two moments of reference and data, refined by
        continuation in ``epsilon``; a supplied start skips the continuation.
    reference_grid : array-like, shape (M, d), optional
        Frozen reference sample for the fixed-point backend; overrides the
        seeded draw of ``options.batch_reference_size`` points.

    Returns
    -------
    FittedPotential
    """
    cloud = data if isinstance(data, PointCloud) else PointCloud(data)
    if cloud.is_degenerate:
        raise DataError("all observations coincide; the quantile map is undefined")
    if not (epsilon > 0 and np.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be a positive finite number, got {epsilon!r}")
    if reference.d != cloud.d:
        raise ParameterError(f"reference dimension {reference.d} != data dimension {cloud.d}")
    opts = (options or SolveOptions()).resolved(cloud.n)
    points = np.asarray(cloud.points)
    anchor = 0

    if reference_grid is not None:
        grid = np.asarray(reference_grid, dtype=float)
        if grid.ndim != 2 or grid.shape[1] != cloud.d:
            raise ParameterError(f"reference_grid must have shape (M, {cloud.d})")
    else:
        grid = sample_reference(reference, opts.batch_reference_size, opts.seed)

    if initial is None:
        v0 = _affine_start(points, grid)
    else:
        v0 = np.asarray(initial, dtype=float)
        if v0.shape != (cloud.n,):
            raise ParameterError(f"initial potential must have length {cloud.n}")
    _check_finite(v0, "initial potential")

    if opts.method is SolverMethod.FIXED_POINT:
        # a caller-supplied start is taken to be close already: no continuation
        stages = opts.continuation_stages if initial is None else 0
        v, log = _solve_fixed_point(points, epsilon, grid, opts, v0, anchor, stages)
    else:
        v, log = _solve_sgd(points, epsilon, reference, opts, v0, anchor, opts.seed + 1)
    if log.warning:
        logger.warning("solve_semidual: %s", log.warning)
    v = v - v[anchor]
    lse, _ = softmin(np.zeros((1, cloud.d)), points, v, epsilon)
    psi_zero = float(epsilon * (lse[0] - math.log(cloud.n)))
    return FittedPotential(
        data=cloud,
        v=v,
        epsilon=float(epsilon),
        reference=reference,
        anchor_index=anchor,
        psi_zero=psi_zero,
        solve_log=log,
    )
