"""Weighted overlap graphs, spectral gaps and isoperimetric constants.

Vertex i carries delta_i = rho(Q_i), edge ij carries w_ij = rho(Q_i and Q_j).
The Laplacian (Lu)(i) = (1/delta_i) sum_j w_ij (u_i - u_j) is self-adjoint for
the delta-weighted inner product; its spectrum is computed from the
symmetric matrix D^(-1/2) (Deg - W) D^(-1/2).

The isoperimetric constant uses h = min |dU| / min(vol U, vol U^c).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import csgraph, csr_matrix, diags
from scipy.sparse.linalg import ArpackError, eigsh

from . import density as dens
from . import geometry as geo
from .errors import ConfigError, EigenFailure, IsolatedVertex, TooLargeForExact

EXACT_MAX = 22


@dataclass
class WeightedGraph:
    delta: np.ndarray  # (n,) vertex weights
    edges: np.ndarray  # (k, 2) with i < j
    weights: np.ndarray  # (k,)
    labels: list | None = None
    threshold: float = 0.0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, float)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, float).reshape(-1)
        if np.any(self.delta <= 0):
            raise ConfigError("vertex weights must be positive")
        if np.any(self.weights <= 0):
            raise ConfigError("edge weights must be positive")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ConfigError("self-loops are not allowed")

    @classmethod
    def from_dense(cls, delta, W, labels=None) -> "WeightedGraph":
        W = np.asarray(W, float)
        if not np.allclose(W, W.T, rtol=0, atol=0):
            raise ConfigError("weight matrix must be symmetric")
        i, j = np.nonzero(np.triu(W, 1))
        return cls(delta, np.column_stack([i, j]), W[i, j], labels)

    @property
    def n(self) -> int:
        return len(self.delta)

    def dense(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        i, j = self.edges[:, 0], self.edges[:, 1]
        W[i, j] = self.weights
        W[j, i] = self.weights
        return W

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), weights=np.repeat(self.weights, 2), minlength=self.n)

    @property
    def c_deg(self) -> float:
        return float((self.degrees() / self.delta).max())

    def combinatorial_degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def components(self) -> np.ndarray:
        i, j = self.edges[:, 0], self.edges[:, 1]
        A = csr_matrix((np.ones(len(i)), (i, j)), shape=(self.n, self.n))
        return csgraph.connected_components(A, directed=False)[1]

    def is_connected(self) -> bool:
        return self.n <= 1 or len(np.unique(self.components())) == 1

    def laplacian_apply(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        i, j = self.edges[:, 0], self.edges[:, 1]
        diff = self.weights * (u[i] - u[j])
        out = np.bincount(i, weights=diff, minlength=self.n) - np.bincount(j, weights=diff, minlength=self.n)
        return out / self.delta

    def quadratic_form(self, u) -> float:
        u = np.asarray(u, float)
        i, j = self.edges[:, 0], self.edges[:, 1]
        return float(np.sum(self.weights * (u[i] - u[j]) ** 2))

    def to_csv(self, path) -> None:
        from .measures import fmt
        with open(path, "w") as fh:
            fh.write("i,j,weight\n")
            for (i, j), w in zip(self.edges, self.weights):
                fh.write(f"{i},{j},{fmt(w)}\n")


@dataclass
class SpectralReport:
    lambda2: float
    fiedler_vector: np.ndarray
    connected: bool
    rayleigh: float
    cheeger_lower: float  # lambda2 / 2 <= h
    cheeger_upper_from_lambda2: float  # h <= sqrt(2 C lambda2)
    cheeger_exact_or_upper: float | None = None
    method: str | None = None
    components: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"lambda2": self.lambda2, "connected": self.connected, "rayleigh": self.rayleigh,
                "cheeger_lower": self.cheeger_lower,
                "cheeger_upper_from_lambda2": self.cheeger_upper_from_lambda2,
                "cheeger": self.cheeger_exact_or_upper, "cheeger_method": self.method}


DENSE_MAX = 2000


def _sparse_pair(g: WeightedGraph):
    i, j = g.edges[:, 0], g.edges[:, 1]
    n = g.n
    s = 1.0 / np.sqrt(g.delta)
    W = csr_matrix((np.r_[g.weights, g.weights], (np.r_[i, j], np.r_[j, i])), shape=(n, n))
    M = diags(g.degrees()) - W
    M = diags(s) @ M @ diags(s)
    # shift-invert just below zero; M - shift is positive definite
    shift = -1e-9 * float(M.diagonal().max())
    vals, vecs = eigsh(M.tocsc(), k=2, sigma=shift, which="LM")
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def lambda2(g: WeightedGraph) -> SpectralReport:
    """Second eigenvalue; dense for up to DENSE_MAX vertices, sparse shift-invert beyond."""
    n = g.n
    if n < 2:
        raise ConfigError("need at least two vertices")
    s = 1.0 / np.sqrt(g.delta)
    try:
        if n <= DENSE_MAX:
            W = g.dense()
            M = s[:, None] * (np.diag(W.sum(axis=1)) - W) * s[None, :]
            vals, vecs = linalg.eigh(M)
        else:
            vals, vecs = _sparse_pair(g)
    except (linalg.LinAlgError, ArpackError) as exc:
        raise EigenFailure(str(exc)) from exc
    comp = g.components()
    connected = len(np.unique(comp)) == 1
    lam = max(float(vals[1]), 0.0) if connected else 0.0
    u = s * vecs[:, 1]
    u = u - (g.delta @ u) / g.delta.sum()
    u = u / math.sqrt(g.delta @ (u * u))
    ray = g.quadratic_form(u) / float(g.delta @ (u * u))
    return SpectralReport(lam, u, connected, ray, 0.5 * lam, math.sqrt(2 * g.c_deg * lam),
                          components=comp)


def _cut_values(bits: np.ndarray, W: np.ndarray, delta: np.ndarray, vol: float):
    vu = bits @ delta
    cut = ((bits @ W) * (1.0 - bits)).sum(axis=1)
    return cut / np.minimum(vu, vol - vu)


def cheeger_constant(g: WeightedGraph, mode: str = "exact", fiedler=None) -> float:
    """h = min over cuts of |dU| / min(vol U, vol U^c)."""
    n = g.n
    W = g.dense()
    vol = float(g.delta.sum())
    if mode == "exact":
        if n > EXACT_MAX:
            raise TooLargeForExact(f"exact enumeration limited to {EXACT_MAX} vertices (got {n})")
        # the ratio is symmetric under complement, so keep the last vertex outside U
        m = n - 1
        total = 1 << m
        best = np.inf
        powers = 1 << np.arange(m, dtype=np.int64)
        step = 1 << 16
        for s in range(1, total, step):
            codes = np.arange(s, min(s + step, total), dtype=np.int64)
            bits = ((codes[:, None] & powers[None]) != 0).astype(float)
            bits = np.hstack([bits, np.zeros((len(codes), 1))])
            best = min(best, float(_cut_values(bits, W, g.delta, vol).min()))
        return best
    if mode == "sweep":
        u = lambda2(g).fiedler_vector if fiedler is None else np.asarray(fiedler)
        order = np.argsort(u, kind="stable")
        bits = np.zeros((n - 1, n))
        for k in range(1, n):
            bits[k - 1, order[:k]] = 1.0
        return float(_cut_values(bits, W, g.delta, vol).min())
    raise ConfigError(f"unknown mode {mode!r}")


def cheeger_audit(g: WeightedGraph) -> tuple[float, float, bool]:
    rep = lambda2(g)
    h = cheeger_constant(g, "exact")
    rhs = h * h / (2 * g.c_deg)
    return rep.lambda2, rhs, bool(rep.lambda2 >= rhs - 1e-12)


# ---------------------------------------------------------------------------
# graphs from covers


def _region_mass(rho, cell, rel_tol):
    return dens.mass(rho, cell, rel_tol)


def build_graph(cells: list, rho, rel_tol: float = 1e-8, labels=None) -> WeightedGraph:
    n = len(cells)
    delta = np.array([_region_mass(rho, c, rel_tol) for c in cells])
    if np.any(delta <= 0):
        raise ConfigError("every cell needs positive mass")
    edges, weights = [], []
    for i, j in itertools.combinations(range(n), 2):
        inter = geo.intersect_cells(cells[i], cells[j])
        if inter is None:
            continue
        w = _region_mass(rho, inter, rel_tol)
        if w > 10 * rel_tol * min(delta[i], delta[j]):
            edges.append((i, j))
            weights.append(w)
    g = WeightedGraph(delta, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(weights), labels,
                      threshold=10 * rel_tol)
    deg = g.combinatorial_degree()
    if n > 1 and np.any(deg == 0):
        k = int(np.nonzero(deg == 0)[0][0])
        raise IsolatedVertex(f"cell {labels[k] if labels else k} has no neighbor")
    return g


def cauchy_cells(d: int, n: int):
    """Ball B(0, 2) merged from the J = 0 cells, then the sector cells for J = 1..n-1."""
    cells = [geo.BallCell(2.0, tuple([0.0] * d))]
    labels = [(0, None)]
    for J in range(1, n):
        for sig in itertools.product((1, -1), repeat=d):
            cells.append(geo.SectorCell.annulus(J, sig))
            labels.append((J, sig))
    return cells, labels


def cauchy_family_graph(d: int, beta: float, n: int, rel_tol: float = 1e-8, rho=None) -> WeightedGraph:
    if d not in (1, 2, 3):
        raise ConfigError("d must be 1, 2 or 3")
    if n < 2:
        raise ConfigError("n must be >= 2")
    rho = rho or dens.GeneralizedCauchy(d, beta)
    cells, labels = cauchy_cells(d, n)
    g = build_graph(cells, rho, rel_tol, labels)
    g.cells = cells
    return g


def boman_graph(fam, rho, rel_tol: float = 1e-8) -> WeightedGraph:
    """Overlap graph of a Boman family; dilated cells of touching cubes overlap in boxes."""
    lo, hi = fam.lo, fam.hi
    delta = rho.box_masses(lo, hi, rel_tol=rel_tol)
    e = fam.edges()
    i, j = e[:, 0], e[:, 1]
    ilo = np.maximum(lo[i], lo[j])
    ihi = np.minimum(hi[i], hi[j])
    w = rho.box_masses(ilo, ihi, rel_tol=rel_tol)
    keep = w > 10 * rel_tol * np.minimum(delta[i], delta[j])
    return WeightedGraph(delta, np.sort(e[keep], axis=1), w[keep], threshold=10 * rel_tol)
