"""Domains, dyadic cubes and convex cells.

All shapes are immutable. Vectorized methods take point arrays of shape
(n, d) and box arrays ``lo``, ``hi`` of shape (n, d).

Composite shapes (L-shape, dumbbell, room-and-passage) are finite unions of
closed axis-aligned boxes. Their open interior is handled exactly by
splitting space along every box coordinate: each grid cell of the resulting
product partition is either inside or outside, so the complement is a finite
union of (possibly unbounded) boxes and box-to-complement distances are exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyDomain, UnboundedDomain

_CHUNK = 8192


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == d else x.reshape(-1, 1)
    if x.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    if np.isnan(x).any():
        raise ValueError("NaN coordinates")
    return x


def _box_gap(alo, ahi, blo, bhi):
    """Per-axis gap between box batches a (n, d) and b (m, d): (n, m, d)."""
    g1 = blo[None, :, :] - ahi[:, None, :]
    g2 = alo[:, None, :] - bhi[None, :, :]
    return np.maximum(np.maximum(g1, g2), 0.0)


# ---------------------------------------------------------------------------
# cubes


@dataclass(frozen=True)
class DyadicCube:
    """Closed cube {x : m_j 2^-l <= x_j <= (m_j + 1) 2^-l}."""

    level: int
    index: tuple

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(m) for m in self.index))

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.index, dtype=float) * self.side

    @property
    def hi(self) -> np.ndarray:
        return (np.array(self.index, dtype=float) + 1.0) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.index, dtype=float) + 0.5) * self.side

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(self.dim)

    def vertices(self) -> np.ndarray:
        return _box_vertices(self.lo, self.hi)

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(m >> 1 for m in self.index))

    def children(self) -> list["DyadicCube"]:
        base = [2 * m for m in self.index]
        return [DyadicCube(self.level + 1, tuple(b + o for b, o in zip(base, off)))
                for off in itertools.product((0, 1), repeat=self.dim)]

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)


@dataclass(frozen=True)
class ScaledCube:
    """Cube with the center of ``base`` and sidelength ``dilation * side(base)``."""

    base: DyadicCube
    dilation: float = 1.0

    def __post_init__(self):
        if not self.dilation >= 1.0:
            raise ValueError("dilation must be >= 1")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def side(self) -> float:
        return self.dilation * self.base.side

    @property
    def center(self) -> np.ndarray:
        return self.base.center

    @property
    def lo(self) -> np.ndarray:
        return self.center - 0.5 * self.side

    @property
    def hi(self) -> np.ndarray:
        return self.center + 0.5 * self.side

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(self.dim)

    def vertices(self) -> np.ndarray:
        return _box_vertices(self.lo, self.hi)

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def bbox(self):
        return self.lo, self.hi

    def scaled(self, factor: float) -> "ScaledCube":
        return ScaledCube(self.base, self.dilation * factor)


def _box_vertices(lo, hi) -> np.ndarray:
    d = len(lo)
    corners = np.array(list(itertools.product((0, 1), repeat=d)), dtype=float)
    return lo + corners * (hi - lo)


def cube_geometry(c: DyadicCube | ScaledCube):
    """Return (center, sidelength, diameter, vertices) of a cube."""
    return c.center, c.side, c.diameter, c.vertices()


# ---------------------------------------------------------------------------
# axis boxes used as generic integration regions


@dataclass(frozen=True)
class AxisBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("invalid box bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def bbox(self):
        return self.lo, self.hi


def box_of(region):
    """Return (lo, hi) if ``region`` is an axis-aligned box, else None."""
    if isinstance(region, (AxisBox, ScaledCube, DyadicCube, Box)):
        return np.asarray(region.lo, float), np.asarray(region.hi, float)
    return None


# ---------------------------------------------------------------------------
# convex cells


@dataclass(frozen=True)
class BallCell:
    """Closed ball centered at ``center``."""

    radius: float
    center: tuple = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.linalg.norm(x - np.array(self.center), axis=1) <= self.radius

    def bbox(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class SectorCell:
    """B(0, R) intersected with the orthant of ``sigma`` and {<sigma, x> >= c}.

    For R = 2^(J+1) and c = 2^(J-1) this is the convex hull of the annulus
    sector {2^(J-1) <= |x| <= 2^(J+1)} in that orthant.
    """

    outer_radius: float
    sigma: tuple
    offset: float

    def __post_init__(self):
        sig = tuple(int(s) for s in self.sigma)
        if any(s not in (-1, 1) for s in sig):
            raise ValueError("sigma entries must be +-1")
        object.__setattr__(self, "sigma", sig)

    @property
    def dim(self) -> int:
        return len(self.sigma)

    @classmethod
    def annulus(cls, J: int, sigma: Sequence[int]) -> "SectorCell":
        return cls(2.0 ** (J + 1), tuple(sigma), 2.0 ** (J - 1))

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        s = np.array(self.sigma, dtype=float)
        y = x * s
        return ((np.linalg.norm(x, axis=1) <= self.outer_radius)
                & np.all(y >= 0.0, axis=1)
                & (y.sum(axis=1) >= self.offset))

    def is_empty(self) -> bool:
        # the closest feasible point to the origin is on the diagonal plane
        return self.offset > math.sqrt(self.dim) * self.outer_radius

    def bbox(self):
        s = np.array(self.sigma, dtype=float)
        a = np.zeros(self.dim)
        b = s * self.outer_radius
        return np.minimum(a, b), np.maximum(a, b)


def cell_membership(cell, x) -> np.ndarray:
    return cell.contains(x)


def intersect_cells(a, b):
    """Intersection of two cells, or None when it is Lebesgue-null.

    Supported: box/box, ball/ball (common center), ball/sector and
    sector/sector with balls centered at the origin.
    """
    ba, bb = box_of(a), box_of(b)
    if ba is not None and bb is not None:
        lo = np.maximum(ba[0], bb[0])
        hi = np.minimum(ba[1], bb[1])
        if np.any(hi <= lo):
            return None
        return AxisBox(lo, hi)
    if isinstance(a, BallCell) and isinstance(b, BallCell):
        if a.center != b.center:
            raise NotImplementedError("balls with different centers")
        return a if a.radius <= b.radius else b
    if isinstance(a, SectorCell) and isinstance(b, BallCell):
        a, b = b, a
    if isinstance(a, BallCell) and isinstance(b, SectorCell):
        if any(c != 0.0 for c in a.center):
            raise NotImplementedError("sector intersections need origin balls")
        out = SectorCell(min(a.radius, b.outer_radius), b.sigma, b.offset)
        return None if out.is_empty() or out.outer_radius <= 0 else out
    if isinstance(a, SectorCell) and isinstance(b, SectorCell):
        if a.sigma != b.sigma:
            # distinct orthants meet in a coordinate hyperplane
            return None
        out = SectorCell(min(a.outer_radius, b.outer_radius), a.sigma,
                         max(a.offset, b.offset))
        if out.is_empty():
            return None
        return out
    raise NotImplementedError(f"intersection of {type(a).__name__} and {type(b).__name__}")


# ---------------------------------------------------------------------------
# domains


class Domain:
    """Open set in R^d. Subclasses implement the vectorized primitives."""

    shape: str = "domain"
    dim: int

    # -- pointwise
    def contains(self, x) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance(self, x) -> np.ndarray:
        raise NotImplementedError

    # -- boxes
    def box_complement_distance(self, lo, hi) -> np.ndarray:
        """dist(P, X^c) for closed boxes P; zero when P is not inside X."""
        raise NotImplementedError

    def box_intersects(self, lo, hi) -> np.ndarray:
        """True when the interior of the box meets X (may be conservative)."""
        raise NotImplementedError

    def box_inside_volume(self, lo, hi) -> np.ndarray | None:
        """Exact Lebesgue measure of box ∩ X, or None if not available."""
        return None

    # -- global
    def bbox(self):
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError

    @property
    def bounded(self) -> bool:
        lo, hi = self.bbox()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def center_point(self) -> np.ndarray | None:
        return None

    def params(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> dict:
        return {"shape": self.shape, "dimension": self.dim, "params": self.params()}


class Box(Domain):
    shape = "box"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).reshape(-1)
        self.hi = np.asarray(hi, dtype=float).reshape(-1)
        if self.lo.shape != self.hi.shape:
            raise ConfigError("box lo/hi dimension mismatch")
        if np.any(self.hi <= self.lo):
            raise EmptyDomain("box has empty interior")
        self.dim = self.lo.shape[0]

    def contains(self, x):
        x = _as_points(x, self.dim)
        return np.all((x > self.lo) & (x < self.hi), axis=1)

    def boundary_distance(self, x):
        x = _as_points(x, self.dim)
        inner = np.minimum(x - self.lo, self.hi - x).min(axis=1)
        outer = np.linalg.norm(np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0), axis=1)
        return np.where(inner >= 0, inner, outer)

    def box_complement_distance(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        d = np.minimum(lo - self.lo, self.hi - hi).min(axis=1)
        return np.maximum(d, 0.0)

    def box_intersects(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        return np.all((np.minimum(hi, self.hi) - np.maximum(lo, self.lo)) > 0, axis=1)

    def box_inside_volume(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        ext = np.maximum(np.minimum(hi, self.hi) - np.maximum(lo, self.lo), 0.0)
        return ext.prod(axis=1)

    def bbox(self):
        return self.lo.copy(), self.hi.copy()

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def center_point(self):
        return 0.5 * (self.lo + self.hi)

    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Ball(Domain):
    shape = "ball"

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.radius = float(radius)
        if self.radius <= 0:
            raise EmptyDomain("ball radius must be positive")
        self.dim = self.center.shape[0]

    def contains(self, x):
        x = _as_points(x, self.dim)
        return np.linalg.norm(x - self.center, axis=1) < self.radius

    def boundary_distance(self, x):
        x = _as_points(x, self.dim)
        return np.abs(self.radius - np.linalg.norm(x - self.center, axis=1))

    def _far_near(self, lo, hi):
        lo = np.atleast_2d(lo) - self.center
        hi = np.atleast_2d(hi) - self.center
        far = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)), axis=1)
        near = np.linalg.norm(np.maximum(np.maximum(lo, -hi), 0.0), axis=1)
        return far, near

    def box_complement_distance(self, lo, hi):
        far, _ = self._far_near(lo, hi)
        return np.maximum(self.radius - far, 0.0)

    def box_intersects(self, lo, hi):
        _, near = self._far_near(lo, hi)
        return near < self.radius

    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def volume(self):
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d

    def center_point(self):
        return self.center.copy()

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class PuncturedBall(Ball):
    """B(center, R) with its center removed."""

    shape = "punctured_ball"

    def contains(self, x):
        x = _as_points(x, self.dim)
        r = np.linalg.norm(x - self.center, axis=1)
        return (r < self.radius) & (r > 0)

    def boundary_distance(self, x):
        x = _as_points(x, self.dim)
        r = np.linalg.norm(x - self.center, axis=1)
        return np.minimum(np.abs(self.radius - r), r)

    def box_complement_distance(self, lo, hi):
        far, near = self._far_near(lo, hi)
        return np.maximum(np.minimum(self.radius - far, near), 0.0)

    def center_point(self):
        return None

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class HalfspaceIntersection(Domain):
    """{x : <n_i, x> < b_i for all i}; must be bounded."""

    shape = "halfspaces"

    def __init__(self, normals, offsets):
        self.normals = np.atleast_2d(np.asarray(normals, dtype=float))
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        if self.normals.shape[0] != self.offsets.shape[0]:
            raise ConfigError("one offset per normal required")
        norms = np.linalg.norm(self.normals, axis=1)
        if np.any(norms == 0):
            raise ConfigError("zero normal")
        self._unit = self.normals / norms[:, None]
        self._b = self.offsets / norms
        self.dim = self.normals.shape[1]
        self._vertices = self._compute_vertices()

    def _compute_vertices(self):
        from scipy.optimize import linprog
        from scipy.spatial import HalfspaceIntersection as _HSI

        # Chebyshev center: maximize t subject to n.x + t <= b
        m = self._unit.shape[0]
        A = np.hstack([self._unit, np.ones((m, 1))])
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=A, b_ub=self._b, bounds=[(None, None)] * self.dim + [(0, None)])
        if res.status == 3:
            raise UnboundedDomain("halfspace intersection is unbounded")
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise EmptyDomain("halfspace intersection has empty interior")
        inner = res.x[:-1]
        self._inradius = res.x[-1]
        if self.dim == 1:
            lo = max((self._b[i] / self._unit[i, 0] for i in range(m) if self._unit[i, 0] < 0),
                     default=-np.inf)
            hi = min((self._b[i] / self._unit[i, 0] for i in range(m) if self._unit[i, 0] > 0),
                     default=np.inf)
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise UnboundedDomain("halfspace intersection is unbounded")
            return np.array([[lo], [hi]])
        hs = _HSI(np.hstack([self._unit, -self._b[:, None]]), inner)
        v = hs.intersections
        if not np.all(np.isfinite(v)):
            raise UnboundedDomain("halfspace intersection is unbounded")
        return v

    def contains(self, x):
        x = _as_points(x, self.dim)
        return np.all(x @ self._unit.T < self._b, axis=1)

    def boundary_distance(self, x):
        x = _as_points(x, self.dim)
        slack = self._b[None, :] - x @ self._unit.T
        inside = np.all(slack > 0, axis=1)
        out = np.empty(len(x))
        out[inside] = slack[inside].min(axis=1)
        if np.any(~inside):
            out[~inside] = self._outside_distance(x[~inside])
        return out

    def _outside_distance(self, x):
        from scipy.optimize import minimize

        res = []
        cons = {"type": "ineq", "fun": lambda z: self._b - self._unit @ z}
        for p in x:
            r = minimize(lambda z: 0.5 * np.sum((z - p) ** 2), self._vertices.mean(axis=0),
                         constraints=[cons], method="SLSQP", options={"ftol": 1e-15})
            res.append(np.linalg.norm(r.x - p))
        return np.array(res)

    def _box_max_dot(self, lo, hi):
        # max over box of <n_i, x>
        return (np.maximum(lo[:, None, :] * self._unit[None], hi[:, None, :] * self._unit[None])
                .sum(axis=2))

    def box_complement_distance(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        slack = self._b[None, :] - self._box_max_dot(lo, hi)
        return np.maximum(slack.min(axis=1), 0.0)

    def box_intersects(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        min_dot = (np.minimum(lo[:, None, :] * self._unit[None], hi[:, None, :] * self._unit[None])
                   .sum(axis=2))
        return np.all(min_dot < self._b[None, :], axis=1)

    def bbox(self):
        return self._vertices.min(axis=0), self._vertices.max(axis=0)

    @property
    def diameter(self):
        v = self._vertices
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2)))

    @property
    def volume(self):
        if self.dim == 1:
            return float(self._vertices.max() - self._vertices.min())
        from scipy.spatial import ConvexHull
        return float(ConvexHull(self._vertices).volume)

    def center_point(self):
        return self._vertices.mean(axis=0)

    def params(self):
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}


class BoxUnion(Domain):
    """Interior of a finite union of closed axis-aligned boxes."""

    shape = "box_union"

    def __init__(self, boxes: Sequence[tuple]):
        if not boxes:
            raise EmptyDomain("no boxes")
        los = np.array([np.asarray(b[0], float).reshape(-1) for b in boxes])
        his = np.array([np.asarray(b[1], float).reshape(-1) for b in boxes])
        if np.any(his <= los):
            raise ConfigError("degenerate box in union")
        self.box_lo, self.box_hi = los, his
        self.dim = los.shape[1]
        self._build_cells()

    def _build_cells(self):
        d = self.dim
        cuts = [np.unique(np.concatenate([self.box_lo[:, j], self.box_hi[:, j]])) for j in range(d)]
        self._cuts = cuts
        edges = [np.concatenate([[-np.inf], c, [np.inf]]) for c in cuts]
        shape = tuple(len(e) - 1 for e in edges)
        idx = np.indices(shape).reshape(d, -1).T
        lo = np.stack([edges[j][idx[:, j]] for j in range(d)], axis=1)
        hi = np.stack([edges[j][idx[:, j] + 1] for j in range(d)], axis=1)
        finite = np.all(np.isfinite(lo) & np.isfinite(hi), axis=1)
        mid = np.where(finite[:, None], 0.5 * (lo + hi), 0.0)
        inside = np.zeros(len(lo), dtype=bool)
        for blo, bhi in zip(self.box_lo, self.box_hi):
            inside |= finite & np.all((mid > blo) & (mid < bhi), axis=1)
        self.in_lo, self.in_hi = lo[inside], hi[inside]
        self.out_lo, self.out_hi = lo[~inside], hi[~inside]
        self._index_shape = shape
        self._inside_flag = inside.reshape(shape)

    def _min_box_dist(self, alo, ahi, blo, bhi):
        out = np.empty(len(alo))
        for s in range(0, len(alo), _CHUNK):
            g = _box_gap(alo[s:s + _CHUNK], ahi[s:s + _CHUNK], blo, bhi)
            out[s:s + _CHUNK] = np.sqrt((g * g).sum(axis=2)).min(axis=1)
        return out

    def contains(self, x):
        x = _as_points(x, self.dim)
        return self._min_box_dist(x, x, self.out_lo, self.out_hi) > 0

    def boundary_distance(self, x):
        x = _as_points(x, self.dim)
        d_out = self._min_box_dist(x, x, self.out_lo, self.out_hi)
        inside = d_out > 0
        res = d_out.copy()
        if np.any(~inside):
            xo = x[~inside]
            res[~inside] = self._min_box_dist(xo, xo, self.in_lo, self.in_hi)
        return res

    def box_complement_distance(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        return self._min_box_dist(lo, hi, self.out_lo, self.out_hi)

    def box_intersects(self, lo, hi):
        return self.box_inside_volume(lo, hi) > 0

    def box_inside_volume(self, lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        out = np.empty(len(lo))
        for s in range(0, len(lo), _CHUNK):
            a, b = lo[s:s + _CHUNK], hi[s:s + _CHUNK]
            ext = (np.minimum(b[:, None, :], self.in_hi[None]) -
                   np.maximum(a[:, None, :], self.in_lo[None]))
            out[s:s + _CHUNK] = np.maximum(ext, 0.0).prod(axis=2).sum(axis=1)
        return out

    def box_inside_moments(self, lo, hi):
        """Volume and first moment of box ∩ X for a single box."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        a = np.maximum(lo[None], self.in_lo)
        b = np.minimum(hi[None], self.in_hi)
        ext = np.maximum(b - a, 0.0)
        vol = ext.prod(axis=1)
        total = vol.sum()
        if total <= 0:
            return 0.0, 0.5 * (lo + hi)
        first = (vol[:, None] * 0.5 * (a + b)).sum(axis=0)
        return float(total), first / total

    def bbox(self):
        return self.box_lo.min(axis=0), self.box_hi.max(axis=0)

    @property
    def diameter(self):
        pts = np.concatenate([_box_vertices(a, b) for a, b in zip(self.in_lo, self.in_hi)])
        if len(pts) > 4000:
            from scipy.spatial import ConvexHull
            pts = pts[ConvexHull(pts).vertices] if self.dim > 1 else pts
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(axis=2)).max())

    @property
    def volume(self):
        return float((self.in_hi - self.in_lo).prod(axis=1).sum())

    def params(self):
        return {"boxes": [[a.tolist(), b.tolist()] for a, b in zip(self.box_lo, self.box_hi)]}


class LShape(BoxUnion):
    """[0, s]^2 with the corner square [c s, s]^2 removed."""

    shape = "lshape"

    def __init__(self, side: float = 1.0, cut: float = 0.5):
        if not 0 < cut < 1:
            raise ConfigError("LShape cut must lie in (0, 1)")
        self.side, self.cut = float(side), float(cut)
        s, c = self.side, self.cut * self.side
        super().__init__([((0.0, 0.0), (s, c)), ((0.0, 0.0), (c, s))])

    def center_point(self):
        return np.full(2, 0.5 * self.cut * self.side)

    def params(self):
        return {"side": self.side, "cut": self.cut}


class Dumbbell(BoxUnion):
    """Two cubes of half-width ``radius`` joined by a tube of half-width ``eps``.

    The tube is [-L/2, L/2] x [-eps, eps]^(d-1); the cubes sit on either end.
    """

    shape = "dumbbell"

    def __init__(self, radius: float = 1.0, length: float = 1.0, eps: float = 0.1, dim: int = 2):
        if not 0 < eps < radius:
            raise ConfigError("dumbbell requires 0 < eps < radius")
        if dim < 2:
            raise ConfigError("dumbbell needs dim >= 2")
        self.radius, self.length, self.eps = float(radius), float(length), float(eps)
        r, h = self.radius, 0.5 * self.length
        t = [-1.0] * (dim - 1)
        one = [1.0] * (dim - 1)
        left = ([-h - 2 * r] + [-r] * (dim - 1), [-h] + [r] * (dim - 1))
        right = ([h] + [-r] * (dim - 1), [h + 2 * r] + [r] * (dim - 1))
        tube = ([-h] + [eps * v for v in t], [h] + [eps * v for v in one])
        super().__init__([left, tube, right])

    def center_point(self):
        p = np.zeros(self.dim)
        p[0] = -0.5 * self.length - self.radius
        return p

    def params(self):
        return {"radius": self.radius, "length": self.length, "eps": self.eps}


def room_and_passage_layout(n_rooms: int, side=None, length=None, height=None, x_start=None):
    """Room/passage rectangles in the plane.

    Defaults: rooms are squares of side 4^(1-n) centered on the x1-axis,
    passage n has length 4^-n and height exp(-2^n). Returns a dict with the
    rectangles and the abscissae t_n (passage start) and t'_n (passage end).
    """
    side = side or (lambda n: 4.0 ** (1 - n))
    length = length or (lambda n: 4.0 ** (-n))
    height = height or (lambda n: math.exp(-(2.0 ** n)))
    total = sum(side(n) for n in range(1, n_rooms + 1)) + sum(length(n) for n in range(1, n_rooms))
    x = -0.5 * total if x_start is None else float(x_start)
    rooms, passages, t, tp = [], [], [], []
    for n in range(1, n_rooms + 1):
        a = side(n)
        rooms.append(((x, -0.5 * a), (x + a, 0.5 * a)))
        x += a
        if n < n_rooms:
            ell, h = length(n), height(n)
            passages.append(((x, -0.5 * h), (x + ell, 0.5 * h)))
            t.append(x)
            tp.append(x + ell)
            x += ell
    return {"rooms": rooms, "passages": passages, "t": t, "t_prime": tp,
            "heights": [height(n) for n in range(1, n_rooms)]}


class RoomAndPassage(BoxUnion):
    shape = "room_and_passage"

    def __init__(self, n_rooms: int = 8, x_start=None):
        if n_rooms < 2:
            raise ConfigError("need at least two rooms")
        self.n_rooms = int(n_rooms)
        self.layout = room_and_passage_layout(self.n_rooms, x_start=x_start)
        lay = self.layout
        boxes = [b for pair in itertools.zip_longest(lay["rooms"], lay["passages"])
                 for b in pair if b is not None]
        super().__init__(boxes)

    def center_point(self):
        (a, b) = self.layout["rooms"][0]
        return 0.5 * (np.array(a) + np.array(b))

    def params(self):
        return {"n_rooms": self.n_rooms}


_SHAPES = {
    "box": lambda d, p: Box(p["lo"], p["hi"]),
    "ball": lambda d, p: Ball(p.get("center", [0.0] * d), p["radius"]),
    "punctured_ball": lambda d, p: PuncturedBall(p.get("center", [0.0] * d), p["radius"]),
    "halfspaces": lambda d, p: HalfspaceIntersection(p["normals"], p["offsets"]),
    "box_union": lambda d, p: BoxUnion([tuple(b) for b in p["boxes"]]),
    "lshape": lambda d, p: LShape(p.get("side", 1.0), p.get("cut", 0.5)),
    "dumbbell": lambda d, p: Dumbbell(p.get("radius", 1.0), p.get("length", 1.0),
                                      p.get("eps", 0.1), d),
    "room_and_passage": lambda d, p: RoomAndPassage(p.get("n_rooms", 8), p.get("x_start")),
}


def domain_from_json(doc: dict) -> Domain:
    try:
        shape = doc["shape"]
        d = int(doc.get("dimension", 0)) or None
        params = doc.get("params", {})
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"domain: missing field {exc}") from exc
    if shape not in _SHAPES:
        raise ConfigError(f"domain.shape: unknown shape {shape!r}")
    try:
        dom = _SHAPES[shape](d or 2, params)
    except KeyError as exc:
        raise ConfigError(f"domain.params: missing field {exc}") from exc
    if d is not None and dom.dim != d:
        raise ConfigError(f"domain.dimension: {d} does not match shape dimension {dom.dim}")
    return dom


def boundary_distance(dom: Domain, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and x.shape[0] == dom.dim
    out = dom.boundary_distance(x)
    return float(out[0]) if single else out
