"""Whitney decompositions, Boman cube families and chain audits.

Cubes are processed one dyadic level at a time as integer index arrays.
A cube is accepted when its distance to the complement is at least
sqrt(d) times its side; since its parent was rejected the matching upper
bound 4 sqrt(d) side follows. Rejected cubes that still meet the domain
are subdivided until ``max_level``.

Lookups of cubes by (level, index) go through per-level sorted integer
keys, so neighbor searches and overlap counts stay vectorized.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import geometry as geo
from .errors import ConfigError, DisconnectedCover, EmptyDomain, NonConvergent, QuadratureFailure, \
    UnboundedDomain

_BITS = 21
_OFF = 1 << (_BITS - 1)
_CHUNK = 1 << 16


def _encode(idx: np.ndarray) -> np.ndarray:
    """Pack integer index vectors (n, d), d <= 3, into int64 keys."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < -_OFF or idx.max() >= _OFF):
        raise ConfigError("dyadic index out of range; lower max_level or rescale the domain")
    key = np.zeros(idx.shape[0], dtype=np.int64)
    for j in range(idx.shape[1]):
        key = (key << _BITS) | (idx[:, j] + _OFF)
    return key


def _offsets(d: int, include_zero: bool = False) -> np.ndarray:
    off = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    if not include_zero:
        off = off[np.any(off != 0, axis=1)]
    return off


class _CubeIndex:
    """Sorted per-level keys for (level, index) -> cube position lookups."""

    def __init__(self, levels: np.ndarray, index: np.ndarray):
        self.tables = {}
        for lv in np.unique(levels):
            pos = np.nonzero(levels == lv)[0]
            keys = _encode(index[pos])
            order = np.argsort(keys)
            self.tables[int(lv)] = (keys[order], pos[order])

    def find(self, level: int, idx: np.ndarray) -> np.ndarray:
        """Positions of cubes at ``level`` with the given indices, -1 if absent."""
        out = np.full(len(idx), -1, dtype=np.int64)
        tab = self.tables.get(int(level))
        if tab is None or len(idx) == 0:
            return out
        keys, pos = tab
        q = _encode(idx)
        k = np.searchsorted(keys, q)
        k = np.minimum(k, len(keys) - 1)
        hit = keys[k] == q
        out[hit] = pos[k[hit]]
        return out


@dataclass
class WhitneyDecomposition:
    domain: geo.Domain
    levels: np.ndarray  # (n,)
    index: np.ndarray  # (n, d) int64
    adjacency: np.ndarray  # (k, 2) pairs i < j of touching cubes
    max_level: int
    uncovered_volume: float
    min_level: int
    _lookup: _CubeIndex = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.index.shape[1]

    @property
    def sides(self) -> np.ndarray:
        return np.ldexp(1.0, -self.levels)

    def boundary_distances(self) -> np.ndarray:
        """dist(P, complement of the domain) for every cube."""
        lo, hi = self.lo, self.hi
        return np.concatenate([self.domain.box_complement_distance(lo[s:s + _CHUNK], hi[s:s + _CHUNK])
                               for s in range(0, len(self), _CHUNK)] or [np.zeros(0)])

    @property
    def lo(self) -> np.ndarray:
        return self.index * self.sides[:, None]

    @property
    def hi(self) -> np.ndarray:
        return (self.index + 1) * self.sides[:, None]

    def cube(self, i: int) -> geo.DyadicCube:
        return geo.DyadicCube(int(self.levels[i]), tuple(self.index[i]))

    def cubes(self) -> list[geo.DyadicCube]:
        return [self.cube(i) for i in range(len(self))]

    def neighbor_counts(self) -> np.ndarray:
        return np.bincount(self.adjacency.ravel(), minlength=len(self))

    def covered_volume(self) -> float:
        return math.fsum(self.sides ** self.dim)

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Smallest-position cube containing each point, -1 if uncovered."""
        x = np.atleast_2d(x)
        out = np.full(len(x), -1, dtype=np.int64)
        for lv in sorted(self._lookup.tables):
            idx = np.floor(np.ldexp(x, lv)).astype(np.int64)
            hit = self._lookup.find(lv, idx)
            new = (out < 0) & (hit >= 0)
            out[new] = hit[new]
        return out


def whitney_decompose(dom: geo.Domain, max_level: int) -> WhitneyDecomposition:
    if not dom.bounded:
        raise UnboundedDomain("Whitney decomposition needs a bounded domain")
    d = dom.dim
    if d > 3:
        raise ConfigError("Whitney decomposition implemented for d <= 3")
    lo, hi = dom.bbox()
    diam = float(np.linalg.norm(hi - lo))
    # start at a level whose cubes are too large to be admissible
    L0 = -int(math.ceil(math.log2(diam))) - 1
    if max_level < L0:
        raise ConfigError(f"max_level must be >= {L0}")
    rd = math.sqrt(d)
    axes = [np.arange(math.floor(math.ldexp(lo[j], L0)), math.floor(math.ldexp(hi[j], L0)) + 1)
            for j in range(d)]
    idx = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, d)
    corners = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    acc_lv, acc_idx = [], []
    for lv in range(L0, max_level + 1):
        if len(idx) == 0:
            break
        side = math.ldexp(1.0, -lv)
        keep_idx, keep_acc = [], []
        for s in range(0, len(idx), _CHUNK):
            part = idx[s:s + _CHUNK]
            clo = part * side
            chi = clo + side
            meet = dom.box_intersects(clo, chi)
            part, clo, chi = part[meet], clo[meet], chi[meet]
            dist = dom.box_complement_distance(clo, chi)
            keep_idx.append(part)
            keep_acc.append(dist >= rd * side)
        idx = np.concatenate(keep_idx) if keep_idx else idx[:0]
        acc = np.concatenate(keep_acc) if keep_acc else np.zeros(0, bool)
        acc_idx.append(idx[acc])
        acc_lv.append(np.full(int(acc.sum()), lv, dtype=np.int64))
        rest = idx[~acc]
        if lv == max_level:
            break
        idx = (2 * rest[:, None, :] + corners[None]).reshape(-1, d)
    levels = np.concatenate(acc_lv) if acc_lv else np.zeros(0, np.int64)
    index = np.concatenate(acc_idx) if acc_idx else np.zeros((0, d), np.int64)
    if len(levels) == 0:
        raise EmptyDomain("no Whitney cube up to max_level; increase max_level")
    look = _CubeIndex(levels, index)
    adj = _touching_pairs(levels, index, look)
    covered = math.fsum(np.ldexp(1.0, -levels) ** d)
    unc = max(dom.volume - covered, 0.0)
    return WhitneyDecomposition(dom, levels, index, adj, int(max_level), unc, L0, look)


def _touching_pairs(levels, index, look: _CubeIndex) -> np.ndarray:
    # a coarser-or-equal cube touching Q contains one of the 3^d - 1 cells
    # around Q at Q's level; touching cubes differ by at most two levels
    d = index.shape[1]
    off = _offsets(d)
    pairs = []
    for lv in np.unique(levels):
        pos = np.nonzero(levels == lv)[0]
        for o in off:
            nb = index[pos] + o
            for dl in (0, 1, 2):
                hit = look.find(int(lv) - dl, nb >> dl)
                ok = hit >= 0
                if ok.any():
                    pairs.append(np.column_stack([pos[ok], hit[ok]]))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    p = np.concatenate(pairs)
    a = np.minimum(p[:, 0], p[:, 1])
    b = np.maximum(p[:, 0], p[:, 1])
    n = np.int64(len(levels))
    key = np.unique((a * n + b)[a != b])
    return np.column_stack([key // n, key % n])


def verify_whitney(w: WhitneyDecomposition) -> dict:
    """Re-check the Whitney invariants on every emitted cube."""
    d = w.dim
    rd = math.sqrt(d)
    side = w.sides
    dist = w.boundary_distances()
    lower = bool(np.all(dist >= rd * side))
    upper = bool(np.all(dist <= 4 * rd * side))
    i, j = w.adjacency[:, 0], w.adjacency[:, 1]
    ratio = side[i] / side[j] if len(i) else np.ones(1)
    cnt = w.neighbor_counts()
    return {"n_cubes": len(w), "eq31_lower": lower, "eq31_upper": upper,
            "eq32": bool(np.all((ratio >= 0.25) & (ratio <= 4.0))),
            "max_neighbors": int(cnt.max(initial=0)), "neighbor_bound": 12 ** d,
            "min_ratio_dist": float((dist / (rd * side)).min()),
            "max_ratio_dist": float((dist / (rd * side)).max())}


def overlap_counts(w: WhitneyDecomposition, x: np.ndarray, sigma: float) -> np.ndarray:
    """Number of dilated cubes sigma * P containing each point."""
    x = np.atleast_2d(np.asarray(x, float))
    if sigma >= 2:
        raise ConfigError("overlap counting assumes sigma < 2")
    d = w.dim
    off = _offsets(d, include_zero=True)
    cnt = np.zeros(len(x), dtype=np.int64)
    centers = (w.index + 0.5) * w.sides[:, None]
    halfs = 0.5 * sigma * w.sides
    for lv in sorted(w._lookup.tables):
        base = np.floor(np.ldexp(x, lv)).astype(np.int64)
        for o in off:
            hit = w._lookup.find(lv, base + o)
            ok = hit >= 0
            if ok.any():
                h = hit[ok]
                inside = np.all(np.abs(x[ok] - centers[h]) <= halfs[h][:, None], axis=1)
                cnt[np.nonzero(ok)[0][inside]] += 1
    return cnt


# ---------------------------------------------------------------------------
# Boman family


def default_sigma(d: int) -> float:
    return min(10.0 / 9.0, (d + 1.0) / d)


@dataclass
class BomanFamily:
    whitney: WhitneyDecomposition
    sigma: float
    central_index: int
    parent: np.ndarray  # BFS tree parent, -1 at the central cell
    depth: np.ndarray  # chain length minus one

    def __len__(self) -> int:
        return len(self.whitney)

    @property
    def dim(self) -> int:
        return self.whitney.dim

    @property
    def centers(self) -> np.ndarray:
        w = self.whitney
        return (w.index + 0.5) * w.sides[:, None]

    @property
    def sides(self) -> np.ndarray:
        return self.sigma * self.whitney.sides

    @property
    def lo(self) -> np.ndarray:
        return self.centers - 0.5 * self.sides[:, None]

    @property
    def hi(self) -> np.ndarray:
        return self.centers + 0.5 * self.sides[:, None]

    def cell(self, i: int) -> geo.ScaledCube:
        return geo.ScaledCube(self.whitney.cube(i), self.sigma)

    def chain(self, i: int) -> list[int]:
        """Cells Q_0 (central), ..., Q_N = Q_i."""
        out = [int(i)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def edges(self) -> np.ndarray:
        return self.whitney.adjacency

    def overlap_counts(self, x) -> np.ndarray:
        return overlap_counts(self.whitney, x, self.sigma)

    def membership(self, x) -> list[np.ndarray]:
        """For each point, the cells whose closed dilation contains it (as CSR)."""
        x = np.atleast_2d(x)
        w = self.whitney
        d = w.dim
        off = _offsets(d, include_zero=True)
        rows, cols = [], []
        c = self.centers
        half = 0.5 * self.sides
        for lv in sorted(w._lookup.tables):
            base = np.floor(np.ldexp(x, lv)).astype(np.int64)
            for o in off:
                hit = w._lookup.find(lv, base + o)
                ok = np.nonzero(hit >= 0)[0]
                if len(ok):
                    h = hit[ok]
                    inside = np.all(np.abs(x[ok] - c[h]) <= half[h][:, None], axis=1)
                    rows.append(ok[inside])
                    cols.append(h[inside])
        r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        k = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        return sparse.csr_matrix((np.ones(len(r)), (r, k)), shape=(len(x), len(w)))


def _central_cell(w: WhitneyDecomposition) -> int:
    side = w.sides
    p = w.domain.center_point()
    cand = np.arange(len(w))
    if p is not None:
        inside = np.all((w.lo <= p) & (p <= w.hi), axis=1)
        if inside.any():
            cand = np.nonzero(inside)[0]
    best = cand[side[cand] == side[cand].max()]
    # lexicographic tie-break on the integer index
    order = np.lexsort(w.index[best].T[::-1])
    return int(best[order[0]])


def boman_family(w: WhitneyDecomposition, sigma: float | None = None) -> BomanFamily:
    d = w.dim
    s = default_sigma(d) if sigma is None else float(sigma)
    if not 1.0 < s <= 10.0 / 9.0:
        # overlap of dilations coincides with touching only for s <= 10/9
        raise ConfigError("sigma must lie in (1, 10/9]")
    n = len(w)
    c0 = _central_cell(w)
    i, j = w.adjacency[:, 0], w.adjacency[:, 1]
    G = sparse.csr_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(n, n))
    dist = csgraph.shortest_path(G, unweighted=True, indices=c0)
    if not np.all(np.isfinite(dist)):
        raise DisconnectedCover(f"{int((~np.isfinite(dist)).sum())} cells unreachable from the central cell")
    dist = dist.astype(np.int64)
    # parent = smallest-index neighbor one step closer to the center
    parent = np.full(n, -1, dtype=np.int64)
    src = np.r_[i, j]
    dst = np.r_[j, i]
    closer = dist[src] == dist[dst] - 1
    src, dst = src[closer], dst[closer]
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    first = np.r_[True, dst[1:] != dst[:-1]]
    parent[dst[first]] = src[first]
    return BomanFamily(w, s, c0, parent, dist)


# ---------------------------------------------------------------------------
# chain audit


@dataclass
class ChainAudit:
    A: int
    B: float
    C: float
    D: float
    E: float
    passed: bool
    n_cells: int
    max_chain_length: int
    sample_points: int
    C_components: dict = field(default_factory=dict)
    cell_masses: np.ndarray | None = field(default=None, repr=False)
    D_rel_tol: float = 1e-3

    def to_json(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "D": self.D, "E": self.E,
                "passed": self.passed, "n_cells": self.n_cells,
                "max_chain_length": self.max_chain_length, "sample_points": self.sample_points,
                "C_components": self.C_components, "D_rel_tol": self.D_rel_tol}


def _sample_domain(dom: geo.Domain, n: int, rng) -> np.ndarray:
    lo, hi = dom.bbox()
    out = []
    got = 0
    while got < n:
        x = lo + (hi - lo) * rng.random((2 * n, dom.dim))
        x = x[dom.contains(x)]
        out.append(x)
        got += len(x)
    return np.concatenate(out)[:n]


def chain_dilation(f: BomanFamily) -> float:
    """Smallest b with Q contained in b Q_j for every chain link Q_j of Q."""
    c = f.centers
    s = f.sides
    n = len(f)
    cur = f.parent.copy()
    best = np.ones(n)
    this = np.arange(n)
    while np.any(cur >= 0):
        act = np.nonzero(cur >= 0)[0]
        j = cur[act]
        q = this[act]
        b = (2 * np.abs(c[q] - c[j]).max(axis=1) + s[q]) / s[j]
        best[act] = np.maximum(best[act], b)
        cur[act] = f.parent[j]
    return float(best.max())


def audit_chain_condition(f: BomanFamily, rho, rel_tol: float = 1e-6, n_samples: int = 100_000,
                          seed: int = 0, doubling_rel_tol: float = 1e-3) -> ChainAudit:
    """Measure A, B, C, D, E on a Boman family.

    Cell and link masses use ``rel_tol``. The 5 B sqrt(d) dilations behind D
    cover most of the domain and cross every kink of a non-smooth density, so
    they use the looser ``doubling_rel_tol``; D is a ratio constant and the
    tolerance is reported with it.
    """
    from .density import cell_density_ratio  # local import keeps the modules decoupled

    d = f.dim
    rng = np.random.default_rng(seed)
    x = _sample_domain(f.whitney.domain, n_samples, rng)
    A = int(f.overlap_counts(x).max())
    B = chain_dilation(f)
    lo, hi = f.lo, f.hi
    try:
        m = rho.box_masses(lo, hi, rel_tol=rel_tol)
    except NonConvergent as exc:
        raise QuadratureFailure(str(exc)) from exc
    if np.any(m <= 0):
        raise QuadratureFailure("cell with zero mass")
    # consecutive links are tree edges (cell, parent)
    q = np.nonzero(f.parent >= 0)[0]
    p = f.parent[q]
    ilo = np.maximum(lo[q], lo[p])
    ihi = np.minimum(hi[q], hi[p])
    try:
        mi = rho.box_masses(ilo, ihi, rel_tol=rel_tol) if len(q) else np.zeros(0)
    except NonConvergent as exc:
        raise QuadratureFailure(str(exc)) from exc
    if len(q):
        r1 = np.maximum(m[q] / m[p], m[p] / m[q])
        r2 = np.maximum(m[q], m[p]) / mi
        C = float(max(r1.max(), r2.max()))
        comps = {"size_ratio": float(r1.max()), "intersection_ratio": float(r2.max())}
    else:
        C, comps = 1.0, {"size_ratio": 1.0, "intersection_ratio": 1.0}
    k = 5 * B * math.sqrt(d)
    c = f.centers
    slo, shi = rho.support_bbox()
    dlo = np.maximum(c - 0.5 * k * f.sides[:, None], slo)
    dhi = np.minimum(c + 0.5 * k * f.sides[:, None], shi)
    # large cells clip to the same box; integrate each distinct box once
    ub, inv = np.unique(np.concatenate([dlo, dhi], axis=1), axis=0, return_inverse=True)
    try:
        md = rho.box_masses(ub[:, :d], ub[:, d:], rel_tol=doubling_rel_tol)[inv.reshape(-1)]
    except NonConvergent as exc:
        raise QuadratureFailure(str(exc)) from exc
    D = float((md / m).max())
    E = float(max(cell_density_ratio(rho, geo.AxisBox(a, b)) for a, b in zip(lo, hi)))
    vals = [A, B, C, D, E]
    ok = all(np.isfinite(v) and v >= 1.0 - 1e-9 for v in vals)
    return ChainAudit(A, B, C, D, E, bool(ok), len(f), int(f.depth.max()) + 1, len(x), comps, m,
                      doubling_rel_tol)
