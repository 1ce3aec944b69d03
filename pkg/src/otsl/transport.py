"""Exact discrete optimal transport.

The solver is a primal network simplex on the complete bipartite graph
(sources -> targets) with an artificial root. It starts from the strongly
feasible star where every source ships to the root and the root ships to
every target along big-M arcs, prices arcs by block search and selects the
leaving arc with the strongly feasible rule, which excludes cycling. The
basis tree is stored as parent pointers with child lists; flows live on the
arc joining a node to its parent.

Quadratic problems are solved with the internal cost |x - y|^2 / 2 so that
the source dual f gives the convex potential phi(x) = |x|^2/2 - f(x).
Reported costs and potentials use the |x - y|^2 convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DegenerateBasis, NumericalError, SizeExceeded, UnbalancedMasses, \
    UndefinedAtAtom
from .measures import DiscreteMeasure

MAX_ENTRIES = 4 * 10 ** 7
_CHUNK = 4096


# ---------------------------------------------------------------------------
# network simplex kernel


@njit(cache=True, nogil=True)
def _arc_ends(e, n, m, A, root):
    if e < A:
        return e // m, n + e % m
    w = e - A
    if w < n:
        return w, root
    return root, w


@njit(cache=True, nogil=True)
def _arc_cost(e, C, n, m, A, art):
    if e < A:
        return C[e // m, e % m]
    return art


@njit(cache=True, nogil=True)
def _unlink(w, parent, first_child, next_sib, prev_sib):
    p = parent[w]
    a = prev_sib[w]
    b = next_sib[w]
    if a != -1:
        next_sib[a] = b
    else:
        first_child[p] = b
    if b != -1:
        prev_sib[b] = a
    prev_sib[w] = -1
    next_sib[w] = -1


@njit(cache=True, nogil=True)
def _link(w, p, parent, first_child, next_sib, prev_sib):
    parent[w] = p
    h = first_child[p]
    next_sib[w] = h
    prev_sib[w] = -1
    if h != -1:
        prev_sib[h] = w
    first_child[p] = w


@njit(cache=True, nogil=True)
def _simplex(C, a, b, max_iter, eps):
    n, m = C.shape
    A = n * m
    N = n + m + 1
    root = n + m
    cmax = 0.0
    for i in range(n):
        for j in range(m):
            v = abs(C[i, j])
            if v > cmax:
                cmax = v
    art = (cmax + 1.0) * N
    tol = eps * art

    parent = np.full(N, -1, np.int64)
    pred = np.full(N, -1, np.int64)
    up = np.zeros(N, np.bool_)
    flow = np.zeros(N)
    depth = np.zeros(N, np.int64)
    first_child = np.full(N, -1, np.int64)
    next_sib = np.full(N, -1, np.int64)
    prev_sib = np.full(N, -1, np.int64)
    pi = np.zeros(N)
    for w in range(n):
        _link(w, root, parent, first_child, next_sib, prev_sib)
        pred[w] = A + w
        up[w] = True
        flow[w] = a[w]
        depth[w] = 1
        pi[w] = -art
    for j in range(m):
        w = n + j
        _link(w, root, parent, first_child, next_sib, prev_sib)
        pred[w] = A + w
        up[w] = False
        flow[w] = b[j]
        depth[w] = 1
        pi[w] = art

    path = np.empty(N, np.int64)
    opred = np.empty(N, np.int64)
    oup = np.empty(N, np.bool_)
    oflow = np.empty(N)
    stack = np.empty(N, np.int64)

    bsize = max(int(math.sqrt(A)), 16)
    if bsize > A:
        bsize = A
    nxt = 0
    it = 0
    while True:
        # block search pricing
        best = -1
        best_rc = -tol
        cnt = 0
        k = nxt
        for _t in range(A):
            i = k // m
            j = k - i * m
            rc = C[i, j] + pi[i] - pi[n + j]
            if rc < best_rc:
                best_rc = rc
                best = k
            cnt += 1
            k += 1
            if k == A:
                k = 0
            if cnt == bsize:
                if best >= 0:
                    break
                cnt = 0
        if best < 0:
            break
        nxt = k
        it += 1
        if it > max_iter:
            return parent, pred, up, flow, pi, art, -1
        e = best
        u, v = _arc_ends(e, n, m, A, root)
        # join node
        x = u
        y = v
        while depth[x] > depth[y]:
            x = parent[x]
        while depth[y] > depth[x]:
            y = parent[y]
        while x != y:
            x = parent[x]
            y = parent[y]
        join = x
        # leaving arc
        delta = np.inf
        u_out = -1
        result = 0
        w = u
        while w != join:
            if up[w]:
                d = flow[w]
                if d < delta:
                    delta = d
                    u_out = w
                    result = 1
            w = parent[w]
        w = v
        while w != join:
            if not up[w]:
                d = flow[w]
                if d <= delta:
                    delta = d
                    u_out = w
                    result = 2
            w = parent[w]
        if result == 0:
            return parent, pred, up, flow, pi, art, -2
        if delta > 0:
            w = u
            while w != join:
                if up[w]:
                    flow[w] -= delta
                else:
                    flow[w] += delta
                w = parent[w]
            w = v
            while w != join:
                if up[w]:
                    flow[w] += delta
                else:
                    flow[w] -= delta
                w = parent[w]
        if result == 1:
            u_in = u
            v_in = v
        else:
            u_in = v
            v_in = u
        # reverse the path u_in -> u_out and hang it below v_in
        L = 0
        w = u_in
        while True:
            path[L] = w
            opred[L] = pred[w]
            oup[L] = up[w]
            oflow[L] = flow[w]
            L += 1
            if w == u_out:
                break
            w = parent[w]
        for t in range(L):
            _unlink(path[t], parent, first_child, next_sib, prev_sib)
        _link(path[0], v_in, parent, first_child, next_sib, prev_sib)
        pred[path[0]] = e
        up[path[0]] = u_in == u
        flow[path[0]] = delta
        for t in range(1, L):
            _link(path[t], path[t - 1], parent, first_child, next_sib, prev_sib)
            pred[path[t]] = opred[t - 1]
            up[path[t]] = not oup[t - 1]
            flow[path[t]] = oflow[t - 1]
        rc = C[u, v - n] + pi[u] - pi[v]
        shift = -rc if u_in == u else rc
        # potentials and depths on the moved subtree
        top = 0
        stack[top] = u_in
        top += 1
        while top > 0:
            top -= 1
            w = stack[top]
            pi[w] += shift
            depth[w] = depth[parent[w]] + 1
            c = first_child[w]
            while c != -1:
                stack[top] = c
                top += 1
                c = next_sib[c]
    # exact potentials from the final tree
    top = 0
    pi[root] = 0.0
    c = first_child[root]
    while c != -1:
        stack[top] = c
        top += 1
        c = next_sib[c]
    while top > 0:
        top -= 1
        w = stack[top]
        p = parent[w]
        cost = _arc_cost(pred[w], C, n, m, A, art)
        if up[w]:
            pi[w] = pi[p] - cost
        else:
            pi[w] = pi[p] + cost
        c = first_child[w]
        while c != -1:
            stack[top] = c
            top += 1
            c = next_sib[c]
    return parent, pred, up, flow, pi, art, it


@njit(cache=True, nogil=True)
def _min_reduced_cost(C, f, g):
    n, m = C.shape
    best = np.inf
    for i in range(n):
        for j in range(m):
            r = C[i, j] - f[i] - g[j]
            if r < best:
                best = r
    return best


# ---------------------------------------------------------------------------
# public API


@dataclass
class TransportSolution:
    plan: np.ndarray  # (k, 3) rows (i, j, mass)
    primal_cost: float
    source_potential: np.ndarray  # f_i, cost convention of ``cost``
    target_potential: np.ndarray  # g_j
    duality_gap: float
    cost: str = "quadratic"
    iterations: int = 0
    dual_infeasibility: float = 0.0
    internal_f: np.ndarray | None = field(default=None, repr=False)
    internal_g: np.ndarray | None = field(default=None, repr=False)

    def plan_matrix(self, n, m) -> np.ndarray:
        P = np.zeros((n, m))
        np.add.at(P, (self.plan[:, 0].astype(int), self.plan[:, 1].astype(int)), self.plan[:, 2])
        return P


def cost_matrix(x, y, cost: str = "quadratic", p: float = 2.0) -> np.ndarray:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if cost == "quadratic":
        # direct differences avoid cancellation in |x|^2 - 2xy + |y|^2
        out = np.empty((len(x), len(y)))
        for s in range(0, len(x), _CHUNK):
            diff = x[s:s + _CHUNK, None, :] - y[None, :, :]
            out[s:s + _CHUNK] = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
        return out
    out = np.empty((len(x), len(y)))
    for s in range(0, len(x), _CHUNK):
        diff = x[s:s + _CHUNK, None, :] - y[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out[s:s + _CHUNK] = dist if cost == "euclidean" else dist ** p
    return out


def _check_pair(source: DiscreteMeasure, target: DiscreteMeasure):
    if source.dim != target.dim:
        raise ConfigError("source and target dimensions differ")
    if len(source) * len(target) > MAX_ENTRIES:
        raise SizeExceeded(f"{len(source)} x {len(target)} cost entries exceeds {MAX_ENTRIES}")
    if abs(source.total - target.total) > 1e-10:
        raise UnbalancedMasses(f"source mass {source.total!r} != target mass {target.total!r}")


def solve_ot(source: DiscreteMeasure, target: DiscreteMeasure, cost: str = "quadratic",
             p: float = 2.0, max_iter: int | None = None, seed: int = 0) -> TransportSolution:
    """Exact optimal plan with dual potentials.

    ``cost`` is "quadratic" (|x-y|^2), "euclidean" (|x-y|) or "power" (|x-y|^p).
    """
    if cost not in ("quadratic", "euclidean", "power"):
        raise ConfigError(f"cost: unknown cost {cost!r}")
    _check_pair(source, target)
    C = cost_matrix(source.points, target.points, cost, p)
    a = np.array(source.masses)
    b = np.array(target.masses) * (math.fsum(a) / target.total)
    n, m = C.shape
    if max_iter is None:
        max_iter = 50 * (n + m) * max(1, int(math.log2(n + m + 1))) + 10_000
    parent, pred, up, flow, pi, art, it = _simplex(C, a, b, max_iter, 1e-13)
    if it < 0:
        # perturb the masses slightly and retry once
        rng = np.random.default_rng(seed)
        a2 = a * (1 + 1e-13 * rng.random(n))
        b2 = b * (1 + 1e-13 * rng.random(m))
        b2 *= a2.sum() / b2.sum()
        parent, pred, up, flow, pi, art, it = _simplex(C, a2, b2, 4 * max_iter, 1e-13)
        if it < 0:
            raise DegenerateBasis("network simplex did not terminate after perturbation")
    A = n * m
    nodes = np.arange(n + m)
    arcs = pred[nodes]
    real = arcs < A
    art_flow = flow[nodes][~real]
    if art_flow.size and art_flow.max() > 1e-9:
        raise NumericalError("artificial arcs carry flow at optimum")
    e = arcs[real]
    fl = np.maximum(flow[nodes][real], 0.0)
    # degenerate basic arcs keep rounding residue of order eps * mass
    keep = fl > 1e-14 * max(a.max(), b.max())
    e, fl = e[keep], fl[keep]
    ii, jj = e // m, e % m
    plan = np.column_stack([ii, jj, fl]).astype(float)
    order = np.lexsort((plan[:, 1], plan[:, 0]))
    plan = plan[order]
    f = -pi[:n]
    g = pi[n:n + m]
    # move the common offset so that the source dual has zero a-mean
    s = math.fsum(a * f)
    f = f - s
    g = g + s
    primal = math.fsum(fl * C[ii, jj])
    dual = math.fsum(a * f) + math.fsum(b * g)
    infeas = float(_min_reduced_cost(C, f, g))
    scale = 2.0 if cost == "quadratic" else 1.0
    return TransportSolution(plan=plan, primal_cost=scale * primal,
                             source_potential=scale * f, target_potential=scale * g,
                             duality_gap=scale * abs(primal - dual), cost=cost, iterations=int(it),
                             dual_infeasibility=max(0.0, -scale * infeas), internal_f=f,
                             internal_g=g)


@dataclass
class PotentialField:
    points: np.ndarray  # source atoms
    weights: np.ndarray  # source masses
    values: np.ndarray  # phi at source atoms, zero weighted mean
    map: np.ndarray  # barycentric image of each atom
    split_fraction: float  # mass of atoms whose plan row has more than one target
    target_points: np.ndarray | None = None
    target_values: np.ndarray | None = None  # psi = phi^* on the target atoms


def brenier_potential(sol: TransportSolution, source: DiscreteMeasure,
                      target: DiscreteMeasure | None = None) -> PotentialField:
    if sol.cost != "quadratic":
        raise ConfigError("Brenier potentials need the quadratic cost")
    x = source.points
    w = source.masses
    phi = 0.5 * (x * x).sum(axis=1) - sol.internal_f
    shift = math.fsum(w * phi)
    phi = phi - shift
    n = len(source)
    ii = sol.plan[:, 0].astype(int)
    jj = sol.plan[:, 1].astype(int)
    mass = sol.plan[:, 2]
    T = np.zeros_like(x)
    rows = np.bincount(ii, weights=mass, minlength=n)
    tpts = target.points if target is not None else None
    if tpts is not None:
        np.add.at(T, ii, mass[:, None] * tpts[jj])
        T = T / np.where(rows > 0, rows, 1.0)[:, None]
    count = np.bincount(ii, minlength=n)
    split = math.fsum(w[count > 1])
    psi = None
    if target is not None:
        psi = 0.5 * (tpts * tpts).sum(axis=1) - sol.internal_g + shift
    return PotentialField(points=x, weights=w, values=phi, map=T, split_fraction=split,
                          target_points=tpts, target_values=psi)


def legendre(support, values, query, return_argmax: bool = False):
    """psi^*(x) = max_j <x, y_j> - psi_j; ties resolve to the smallest j."""
    S = np.atleast_2d(np.asarray(support, float))
    if S.shape[0] == 1 and S.shape[1] != np.atleast_2d(query).shape[1]:
        S = S.reshape(-1, 1)
    v = np.asarray(values, float).reshape(-1)
    Xq = np.asarray(query, float)
    if Xq.ndim == 1:
        Xq = Xq.reshape(-1, S.shape[1])
    if S.shape[0] == 0:
        raise ConfigError("empty support")
    out = np.empty(len(Xq))
    arg = np.empty(len(Xq), dtype=np.int64)
    for s in range(0, len(Xq), _CHUNK):
        vals = Xq[s:s + _CHUNK] @ S.T - v[None, :]
        k = vals.argmax(axis=1)  # first maximal index
        arg[s:s + _CHUNK] = k
        out[s:s + _CHUNK] = vals[np.arange(len(k)), k]
    return (out, arg) if return_argmax else out


def quantile_coupling(a: DiscreteMeasure, b: DiscreteMeasure):
    """Monotone coupling of two measures on the line: rows (i, j, mass)."""
    if a.dim != 1 or b.dim != 1:
        raise ConfigError("quantile coupling needs d = 1")
    ia = np.argsort(a.points[:, 0], kind="stable")
    ib = np.argsort(b.points[:, 0], kind="stable")
    ma = np.array(a.masses)[ia]
    mb = np.array(b.masses)[ib] * (a.total / b.total)
    # breakpoints of both cumulative distribution functions
    ca, cb = np.cumsum(ma), np.cumsum(mb)
    ca[-1] = cb[-1] = max(ca[-1], cb[-1])
    t = np.unique(np.concatenate([[0.0], ca, cb]))
    mid = 0.5 * (t[1:] + t[:-1])
    ka = np.minimum(np.searchsorted(ca, mid), len(ca) - 1)
    kb = np.minimum(np.searchsorted(cb, mid), len(cb) - 1)
    rows = np.column_stack([ia[ka], ib[kb], np.diff(t)])
    return np.array(rows, dtype=float).reshape(-1, 3)


def _quantile_cost(a: DiscreteMeasure, b: DiscreteMeasure, p: float) -> float:
    xa = a.points[:, 0]
    xb = b.points[:, 0]
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    ca = np.cumsum(np.array(a.masses)[ia])
    cb = np.cumsum(np.array(b.masses)[ib])
    ca[-1] = cb[-1] = max(ca[-1], cb[-1])
    t = np.unique(np.concatenate([[0.0], ca, cb]))
    mid = 0.5 * (t[1:] + t[:-1])
    qa = xa[ia][np.minimum(np.searchsorted(ca, mid), len(ca) - 1)]
    qb = xb[ib][np.minimum(np.searchsorted(cb, mid), len(cb) - 1)]
    return math.fsum(np.diff(t) * np.abs(qa - qb) ** p)


def wasserstein(p: float, a: DiscreteMeasure, b: DiscreteMeasure, method: str = "auto") -> float:
    if p < 1:
        raise ConfigError("p must be >= 1")
    if a.dim != b.dim:
        raise ConfigError("dimension mismatch")
    if method == "quantile" or (method == "auto" and a.dim == 1):
        return _quantile_cost(a, b, p) ** (1.0 / p)
    if p == 2:
        return math.sqrt(max(solve_ot(a, b, "quadratic").primal_cost, 0.0))
    if p == 1:
        return solve_ot(a, b, "euclidean").primal_cost
    return solve_ot(a, b, "power", p=p).primal_cost ** (1.0 / p)


def pushforward(mapping, source: DiscreteMeasure, tol: float = 1e-12) -> DiscreteMeasure:
    """Image measure; coincident images (to ``tol``) are merged."""
    if isinstance(mapping, PotentialField):
        img = mapping.map
    elif callable(mapping):
        img = mapping(source.points)
    else:
        img = mapping
    img = np.asarray(img, float)
    if img.ndim == 1:
        img = img.reshape(len(source), -1)
    if img.shape[0] != len(source) or not np.all(np.isfinite(img)):
        raise UndefinedAtAtom("map undefined at some source atom")
    key = np.round(img / tol).astype(np.int64) if np.abs(img).max(initial=0) / tol < 2 ** 62 else img
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    mass = np.bincount(inv, weights=source.masses)
    return DiscreteMeasure(img[first], mass)
