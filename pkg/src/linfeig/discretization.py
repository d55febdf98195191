"""Finite-difference gradient/Hessian operators, boundary modes and rescaled norms."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _accel
from .geometry import GridSpec


class BCMode(str, enum.Enum):
    CLAMPED = "clamped"
    HINGED = "hinged"


def _first_rows(nb, h, bc):
    """COO triplets of the first-derivative stencil along one axis."""
    n = nb.shape[0]
    rows, cols, vals = [], [], []

    def put(mask, offs, coefs):
        idx = np.flatnonzero(mask)
        for off, c in zip(offs, coefs):
            rows.append(idx)
            cols.append(idx if off == 0 else nb[idx, off + 3])
            vals.append(np.full(len(idx), c))

    has = {k: nb[:, k + 3] >= 0 for k in (-3, -2, -1, 1, 2, 3)}
    both = has[-1] & has[1]
    put(both, (1, -1), (1 / (2 * h), -1 / (2 * h)))
    if bc is BCMode.HINGED:
        fwd = ~has[-1] & has[1]
        bwd = has[-1] & ~has[1]
        put(fwd & has[2], (0, 1, 2), (-3 / (2 * h), 4 / (2 * h), -1 / (2 * h)))
        put(fwd & ~has[2], (0, 1), (-1 / h, 1 / h))
        put(bwd & has[-2], (0, -1, -2), (3 / (2 * h), -4 / (2 * h), 1 / (2 * h)))
        put(bwd & ~has[-2], (0, -1), (1 / h, -1 / h))
    # clamped: ghost reflection makes one-sided first derivatives vanish
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def _second_rows(nb, h, bc):
    n = nb.shape[0]
    rows, cols, vals = [], [], []
    h2 = h * h

    def put(mask, offs, coefs):
        idx = np.flatnonzero(mask)
        for off, c in zip(offs, coefs):
            rows.append(idx)
            cols.append(idx if off == 0 else nb[idx, off + 3])
            vals.append(np.full(len(idx), c / h2))

    has = {k: nb[:, k + 3] >= 0 for k in (-3, -2, -1, 1, 2, 3)}
    put(has[-1] & has[1], (1, 0, -1), (1.0, -2.0, 1.0))
    fwd = ~has[-1] & has[1]
    bwd = has[-1] & ~has[1]
    if bc is BCMode.HINGED:
        for sgn, side in ((1, fwd), (-1, bwd)):
            four = side & has[2 * sgn] & has[3 * sgn]
            three = side & has[2 * sgn] & ~has[3 * sgn]
            put(four, (0, sgn, 2 * sgn, 3 * sgn), (2.0, -5.0, 4.0, -1.0))
            put(three, (0, sgn, 2 * sgn), (1.0, -2.0, 1.0))
    else:
        put(fwd, (1, 0), (2.0, -2.0))
        put(bwd, (-1, 0), (2.0, -2.0))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


class Discretization:
    """Sparse derivative operators on the active nodes of a grid for one boundary mode.

    Gradient and Hessian act on node arrays of shape ``(nodes, N)``; the
    Hessian's mixed entries use the symmetrised product of first-derivative
    operators, so the output is symmetric bit for bit.
    """

    def __init__(self, grid: GridSpec, bc: BCMode | str = BCMode.HINGED):
        self.grid = grid
        self.bc = BCMode(bc)
        nb = grid.neighbour_table()
        self.first = [_first_rows(nb[:, a], grid.spacing[a], self.bc) for a in range(grid.dim)]
        self.second = [_second_rows(nb[:, a], grid.spacing[a], self.bc) for a in range(grid.dim)]
        self.mixed = {}
        for a in range(grid.dim):
            for b in range(a + 1, grid.dim):
                self.mixed[a, b] = (0.5 * (self.first[a] @ self.first[b]
                                           + self.first[b] @ self.first[a])).tocsr()
        self.weights = grid.cell_volumes
        self.volume = float(self.weights.sum())
        self.interior_idx = np.flatnonzero(grid.interior)
        self.boundary_idx = np.flatnonzero(grid.boundary)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def num_nodes(self) -> int:
        return self.grid.num_nodes

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """(nodes, N) -> (nodes, N, n)."""
        return np.stack([D @ u for D in self.first], axis=-1)

    def hessian(self, u: np.ndarray) -> np.ndarray:
        """(nodes, N) -> (nodes, N, n, n)."""
        n = self.dim
        out = np.empty(u.shape + (n, n))
        for a in range(n):
            out[..., a, a] = self.second[a] @ u
        for (a, b), D in self.mixed.items():
            v = D @ u
            out[..., a, b] = v
            out[..., b, a] = v
        return out

    def gradient_adjoint(self, T: np.ndarray) -> np.ndarray:
        """Transpose of ``gradient``: (nodes, N, n) -> (nodes, N)."""
        return sum(D.T @ T[..., a] for a, D in enumerate(self.first))

    def hessian_adjoint(self, T: np.ndarray) -> np.ndarray:
        """Transpose of ``hessian`` against the Frobenius pairing."""
        out = sum(D.T @ T[..., a, a] for a, D in enumerate(self.second))
        for (a, b), D in self.mixed.items():
            out = out + D.T @ (T[..., a, b] + T[..., b, a])
        return out

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Interior unknowns (n_int, N) -> full node field with zero boundary."""
        u = np.zeros((self.num_nodes,) + x.shape[1:])
        u[self.interior_idx] = x
        return u

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.interior_idx]

    @cached_property
    def _interior_laplacian(self):
        lap = sum(self.second_central)
        return lap[self.interior_idx][:, self.interior_idx].tocsc()

    @cached_property
    def _laplace_lu(self):
        return spla.splu(-self._interior_laplacian)

    @cached_property
    def second_central(self):
        nb = self.grid.neighbour_table()
        mats = []
        for a in range(self.dim):
            h2 = self.grid.spacing[a] ** 2
            ok = (nb[:, a, 2] >= 0) & (nb[:, a, 4] >= 0)
            idx = np.flatnonzero(ok)
            rows = np.concatenate([idx, idx, idx])
            cols = np.concatenate([nb[idx, a, 4], idx, nb[idx, a, 2]])
            vals = np.concatenate([np.full(len(idx), 1 / h2), np.full(len(idx), -2 / h2),
                                   np.full(len(idx), 1 / h2)])
            mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(self.num_nodes,) * 2))
        return mats

    def precondition(self, z: np.ndarray) -> np.ndarray:
        """Apply the inverse Dirichlet Laplacian on interior unknowns (symmetric)."""
        return self._laplace_lu.solve(np.asarray(z, dtype=float))

    def unprecondition(self, x: np.ndarray) -> np.ndarray:
        return -(self._interior_laplacian @ x)

    def mean(self, h: np.ndarray) -> float:
        return float(np.dot(self.weights, h)) / self.volume


@dataclass(frozen=True, eq=False)
class GridField:
    """A discrete map u: nodes -> R^N with lazily derived Du and D^2u."""

    disc: Discretization
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        v = v.copy()
        v[self.disc.boundary_idx] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, disc: Discretization, fn) -> "GridField":
        vals = np.asarray(fn(disc.grid.coords), dtype=float)
        return cls(disc, vals)

    @property
    def bc_mode(self) -> BCMode:
        return self.disc.bc

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @cached_property
    def Du(self) -> np.ndarray:
        return self.disc.gradient(self.values)

    @cached_property
    def D2u(self) -> np.ndarray:
        return self.disc.hessian(self.values)

    def scaled(self, t: float) -> "GridField":
        return GridField(self.disc, t * self.values)

    def is_zero(self) -> bool:
        return not np.any(self.values)


def gradient(u: GridField) -> np.ndarray:
    return u.Du


def hessian(u: GridField) -> np.ndarray:
    return u.D2u


def raw_gradient(disc: Discretization, values: np.ndarray) -> np.ndarray:
    """Gradient of an arbitrary node field (no boundary zeroing)."""
    v = np.asarray(values, dtype=float)
    return disc.gradient(v[:, None] if v.ndim == 1 else v)


def raw_hessian(disc: Discretization, values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return disc.hessian(v[:, None] if v.ndim == 1 else v)


# -- rescaled norms --------------------------------------------------------

@dataclass(frozen=True)
class QuadratureResult:
    """Rescaled L^p mean norm stored as ``max_factor * (mean (|h|/m)^p)^(1/p)``."""

    value: float
    max_factor: float
    log_mean: float
    p: float
    scaled_mean: float

    def power(self) -> float:
        """mean |h|^p itself; may be ``inf`` when it overflows."""
        if self.max_factor == 0.0:
            return 0.0
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_mean))


def lp_mean_norm(h, p: float, weights) -> QuadratureResult:
    """(1/|Omega| sum w |h|^p)^(1/p) in max-factored form; finite for huge p."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if math.isinf(p):
        v = linf_norm(h)
        return QuadratureResult(v, v, math.log(v) if v > 0 else -math.inf, p, 1.0)
    h = np.ravel(np.asarray(h, dtype=float))
    w = np.ravel(np.asarray(weights, dtype=float))
    m, s = _accel.power_sum(h, w, p)
    if m == 0.0:
        return QuadratureResult(0.0, 0.0, -math.inf, p, 0.0)
    mean = s / float(np.add.accumulate(w)[-1])
    value = m * mean ** (1.0 / p)
    return QuadratureResult(value, m, p * math.log(m) + math.log(mean), p, mean)


def linf_norm(h) -> float:
    h = np.asarray(h, dtype=float)
    return float(np.max(np.abs(h))) if h.size else 0.0
