"""Computational domains, tensor grids and geometric descriptors."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


class UpperBoundUnavailable(GeometryError):
    """Raised when curvature data is requested for a domain without C^2 boundary."""


class ProjectionNotUnique(GeometryError):
    pass


class DomainKind(str, enum.Enum):
    INTERVAL = "interval"
    RECTANGLE = "rectangle"
    DISC = "disc"


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind
    bounds: tuple[float, ...]
    target_dim: int = 1

    def __post_init__(self):
        kind = DomainKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        if self.target_dim < 1:
            raise GeometryError("target dimension N must be >= 1")
        b = self.bounds
        if kind is DomainKind.INTERVAL:
            if len(b) != 2 or not b[1] > b[0]:
                raise GeometryError("interval needs (a, b) with b > a")
        elif kind is DomainKind.RECTANGLE:
            if len(b) != 4 or not (b[1] > b[0] and b[3] > b[2]):
                raise GeometryError("rectangle needs (ax, bx, ay, by) with positive sides")
        else:
            if len(b) != 3 or not b[2] > 0:
                raise GeometryError("disc needs (cx, cy, radius) with radius > 0")

    @classmethod
    def interval(cls, a: float, b: float, target_dim: int = 1) -> "DomainSpec":
        return cls(DomainKind.INTERVAL, (a, b), target_dim)

    @classmethod
    def rectangle(cls, ax, bx, ay, by, target_dim: int = 1) -> "DomainSpec":
        return cls(DomainKind.RECTANGLE, (ax, bx, ay, by), target_dim)

    @classmethod
    def disc(cls, center=(0.0, 0.0), radius: float = 1.0, target_dim: int = 1) -> "DomainSpec":
        return cls(DomainKind.DISC, (center[0], center[1], radius), target_dim)

    @property
    def dim(self) -> int:
        return 1 if self.kind is DomainKind.INTERVAL else 2

    @property
    def measure(self) -> float:
        b = self.bounds
        if self.kind is DomainKind.INTERVAL:
            return b[1] - b[0]
        if self.kind is DomainKind.RECTANGLE:
            return (b[1] - b[0]) * (b[3] - b[2])
        return math.pi * b[2] ** 2

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        b = self.bounds
        if self.kind is DomainKind.INTERVAL:
            return (pts[:, 0] >= b[0]) & (pts[:, 0] <= b[1])
        if self.kind is DomainKind.RECTANGLE:
            return ((pts[:, 0] >= b[0]) & (pts[:, 0] <= b[1])
                    & (pts[:, 1] >= b[2]) & (pts[:, 1] <= b[3]))
        return (pts[:, 0] - b[0]) ** 2 + (pts[:, 1] - b[1]) ** 2 <= b[2] ** 2


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform tensor grid restricted to the active nodes of a domain.

    ``shape`` is the full tensor shape; ``active`` indexes into the raveled
    tensor grid. All per-node arrays (coords, weights, masks) refer to the
    active nodes in that order.
    """

    domain: DomainSpec
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    active: np.ndarray
    coords: np.ndarray
    boundary: np.ndarray
    cell_volumes: np.ndarray
    _lookup: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def nodes_per_axis(self) -> tuple[int, ...]:
        return self.shape

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    @property
    def measure(self) -> float:
        return float(self.cell_volumes.sum())

    def index(self, multi: tuple[int, ...]) -> int:
        """Active-node index of a tensor multi-index, or -1 when inactive/outside."""
        for i, s in zip(multi, self.shape):
            if i < 0 or i >= s:
                return -1
        return int(self._lookup[np.ravel_multi_index(multi, self.shape)])

    def neighbour_table(self) -> np.ndarray:
        """``(nodes, dim, 7)`` table of active indices at axis offsets -3..3 (or -1)."""
        mi = np.array(np.unravel_index(self.active, self.shape)).T
        out = np.full((self.num_nodes, self.dim, 7), -1, dtype=np.int64)
        for a in range(self.dim):
            for k, off in enumerate(range(-3, 4)):
                shifted = mi.copy()
                shifted[:, a] += off
                ok = (shifted[:, a] >= 0) & (shifted[:, a] < self.shape[a])
                flat = np.zeros(len(mi), dtype=np.int64)
                flat[ok] = np.ravel_multi_index(tuple(shifted[ok].T), self.shape)
                vals = np.where(ok, self._lookup[flat], -1)
                out[:, a, k] = vals
        return out

    def diagonal_neighbours(self) -> np.ndarray:
        """``(nodes, 4)`` active indices at (+,+), (+,-), (-,+), (-,-) (2-D only)."""
        mi = np.array(np.unravel_index(self.active, self.shape)).T
        out = np.full((self.num_nodes, 4), -1, dtype=np.int64)
        for k, (dx, dy) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
            sx, sy = mi[:, 0] + dx, mi[:, 1] + dy
            ok = (sx >= 0) & (sx < self.shape[0]) & (sy >= 0) & (sy < self.shape[1])
            flat = np.zeros(len(mi), dtype=np.int64)
            flat[ok] = np.ravel_multi_index((sx[ok], sy[ok]), self.shape)
            out[:, k] = np.where(ok, self._lookup[flat], -1)
        return out


def _disc_fractions(xs, ys, cx, cy, r, hx, hy, sub=4):
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    frac = np.zeros_like(X)
    for ox in offs:
        for oy in offs:
            inside = (X + ox * hx - cx) ** 2 + (Y + oy * hy - cy) ** 2 <= r * r
            frac += inside
    return frac / sub**2


def build_grid(domain: DomainSpec, resolution: int) -> GridSpec:
    """Tensor grid with ``resolution`` nodes per axis and quadrature weights.

    Interval and rectangle use trapezoid weights; the disc uses cut-cell
    fractions from 4x4 sub-sampling of each node's cell.
    """
    if resolution < 5:
        raise GeometryError(f"resolution must be >= 5, got {resolution}")
    b = domain.bounds
    if domain.kind is DomainKind.INTERVAL:
        xs = np.linspace(b[0], b[1], resolution)
        h = (b[1] - b[0]) / (resolution - 1)
        w = np.full(resolution, h)
        w[[0, -1]] = h / 2
        boundary = np.zeros(resolution, dtype=bool)
        boundary[[0, -1]] = True
        active = np.arange(resolution)
        lookup = np.arange(resolution)
        return GridSpec(domain, (resolution,), (h,), (b[0],), active, xs[:, None],
                        boundary, w, lookup)

    if domain.kind is DomainKind.RECTANGLE:
        xs = np.linspace(b[0], b[1], resolution)
        ys = np.linspace(b[2], b[3], resolution)
        hx = (b[1] - b[0]) / (resolution - 1)
        hy = (b[3] - b[2]) / (resolution - 1)
        wx = np.full(resolution, hx)
        wx[[0, -1]] = hx / 2
        wy = np.full(resolution, hy)
        wy[[0, -1]] = hy / 2
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        bmask = np.zeros((resolution, resolution), dtype=bool)
        bmask[[0, -1], :] = True
        bmask[:, [0, -1]] = True
        n = resolution * resolution
        return GridSpec(domain, (resolution, resolution), (hx, hy), (b[0], b[2]),
                        np.arange(n), np.column_stack([X.ravel(), Y.ravel()]),
                        bmask.ravel(), np.outer(wx, wy).ravel(), np.arange(n))

    cx, cy, r = b
    xs = np.linspace(cx - r, cx + r, resolution)
    ys = np.linspace(cy - r, cy + r, resolution)
    h = 2 * r / (resolution - 1)
    frac = _disc_fractions(xs, ys, cx, cy, r, h, h)
    act = frac > 0
    shape = (resolution, resolution)

    def _boundary(act):
        pad = np.pad(act, 1, constant_values=False)
        allnb = np.ones_like(act)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                allnb &= pad[1 + dx:1 + dx + shape[0], 1 + dy:1 + dy + shape[1]]
        return act & ~allnb

    bnd = _boundary(act)
    inner = act & ~bnd
    # Boundary nodes touching no interior node are folded into a neighbour.
    pad_in = np.pad(inner, 1, constant_values=False)
    touches = np.zeros_like(act)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                touches |= pad_in[1 + dx:1 + dx + shape[0], 1 + dy:1 + dy + shape[1]]
    orphan = bnd & ~touches
    weights = frac * h * h
    for i, j in zip(*np.nonzero(orphan)):
        best = None
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                k, m = i + dx, j + dy
                if (dx or dy) and 0 <= k < shape[0] and 0 <= m < shape[1] \
                        and act[k, m] and not orphan[k, m]:
                    best = (k, m)
                    break
            if best:
                break
        if best is not None:
            weights[best] += weights[i, j]
        weights[i, j] = 0.0
        act[i, j] = False
    bnd = bnd & act
    flat_act = np.flatnonzero(act.ravel())
    lookup = np.full(act.size, -1, dtype=np.int64)
    lookup[flat_act] = np.arange(len(flat_act))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    coords = np.column_stack([X.ravel()[flat_act], Y.ravel()[flat_act]])
    return GridSpec(domain, shape, (h, h), (cx - r, cy - r), flat_act, coords,
                    bnd.ravel()[flat_act], weights.ravel()[flat_act], lookup)


def area_tolerance(grid: GridSpec) -> float:
    """Declared quadrature-area tolerance: exact grids 1e-10 relative, disc 2h."""
    if grid.domain.kind is DomainKind.DISC:
        return 2 * grid.spacing[0]
    return 1e-10 * grid.domain.measure


@dataclass(frozen=True)
class GeometryDescriptors:
    diameter: float
    perimeter: float
    principal_curvatures: tuple[float, ...] | None
    eps0: float
    poincare_const_clamped: float
    poincare_wirtinger_const: float
    dim: int

    def curvature_sup_norms(self) -> tuple[float, ...]:
        if self.principal_curvatures is None:
            raise UpperBoundUnavailable(
                "upper bound unavailable for this geometry (boundary is not C^2)")
        return self.principal_curvatures

    def curvature_quotient_sup(self) -> float:
        """sup over the eps0-collar of sum_i kappa_i / (1 - kappa_i d); closed form
        for constant curvature."""
        return sum(k / (1 - k * self.eps0) for k in self.curvature_sup_norms())


def descriptors(domain: DomainSpec) -> GeometryDescriptors:
    b = domain.bounds
    if domain.kind is DomainKind.INTERVAL:
        length = b[1] - b[0]
        return GeometryDescriptors(length, 2.0, (), min(1.0, length / 2) / 2,
                                   length, length, 1)
    if domain.kind is DomainKind.RECTANGLE:
        lx, ly = b[1] - b[0], b[3] - b[2]
        diam = math.hypot(lx, ly)
        return GeometryDescriptors(diam, 2 * (lx + ly), None,
                                   min(1.0, min(lx, ly) / 2) / 2, diam, diam, 2)
    r = b[2]
    return GeometryDescriptors(2 * r, 2 * math.pi * r, (1.0 / r,),
                               min(1.0, r) / 2, 2 * r, 2 * r, 2)


def boundary_projection(domain: DomainSpec, x) -> tuple[np.ndarray, float]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = domain.bounds
    if domain.kind is DomainKind.INTERVAL:
        a, c = b
        if x[0] < a or x[0] > c:
            raise GeometryError("point outside the closed interval")
        if x[0] - a == c - x[0]:
            raise ProjectionNotUnique("projection not unique at the interval midpoint")
        proj = a if x[0] - a < c - x[0] else c
        return np.array([proj]), abs(x[0] - proj)
    if domain.kind is DomainKind.DISC:
        c = np.array(b[:2])
        d = x - c
        rho = float(np.hypot(d[0], d[1]))
        if rho > b[2] * (1 + 1e-14):
            raise GeometryError("point outside the closed disc")
        if rho == 0.0:
            raise ProjectionNotUnique("projection not unique at the disc centre")
        proj = c + d * (b[2] / rho)
        return proj, b[2] - rho
    raise UpperBoundUnavailable("boundary projection needs a C^2 boundary or an interval")
