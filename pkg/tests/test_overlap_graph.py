import itertools
import math

import numpy as np
import pytest

from otsl import decomposition as dec
from otsl import density as dens
from otsl import geometry as geo
from otsl import overlap_graph as og
from otsl.errors import ConfigError, IsolatedVertex, TooLargeForExact


def random_connected_graph(rng, n):
    """Random spanning tree plus random extra edges, random positive weights."""
    edges = {(int(rng.integers(0, k)), k) for k in range(1, n)}
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.3:
            edges.add((i, j))
    e = np.array(sorted(edges))
    return og.WeightedGraph(rng.random(n) + 0.05, e, rng.random(len(e)) + 0.01)


def brute_cheeger(g):
    W = g.dense()
    vol = g.delta.sum()
    best = math.inf
    for k in range(1, g.n):
        for U in itertools.combinations(range(g.n), k):
            mask = np.zeros(g.n, bool)
            mask[list(U)] = True
            vu = g.delta[mask].sum()
            cut = W[np.ix_(mask, ~mask)].sum()
            best = min(best, cut / min(vu, vol - vu))
    return best


def test_two_vertices():
    g = og.WeightedGraph([1.0, 1.0], [[0, 1]], [0.3])
    rep = og.lambda2(g)
    assert rep.lambda2 == pytest.approx(0.6, abs=1e-14)
    assert og.cheeger_constant(g) == pytest.approx(0.3)
    lam, rhs, ok = og.cheeger_audit(g)
    assert g.c_deg == pytest.approx(0.3)
    assert rhs == pytest.approx(0.15) and ok


def test_path_of_three():
    g = og.WeightedGraph(np.ones(3), [[0, 1], [1, 2]], [1.0, 1.0])
    assert og.lambda2(g).lambda2 == pytest.approx(1.0, abs=1e-13)
    # char. polynomial of [[1,-1,0],[-1,2,-1],[0,-1,1]] is -t (t - 1) (t - 3)
    M = np.diag(g.degrees()) - g.dense()
    assert np.allclose(np.sort(np.linalg.eigvalsh(M)), [0, 1, 3])


def test_disconnected_graph():
    g = og.WeightedGraph(np.ones(4), [[0, 1], [2, 3]], [1.0, 2.0])
    rep = og.lambda2(g)
    assert rep.lambda2 == 0.0 and not rep.connected
    assert len(np.unique(rep.components)) == 2


def test_complete_graph_k4():
    g = og.WeightedGraph.from_dense(np.ones(4), np.ones((4, 4)) - np.eye(4))
    assert og.cheeger_constant(g, "exact") == pytest.approx(2.0)


def test_quadratic_form_identity():
    rng = np.random.default_rng(1)
    g = random_connected_graph(rng, 15)
    W = g.dense()
    for _ in range(20):
        u = rng.normal(size=15)
        lhs = float(g.delta @ (u * g.laplacian_apply(u)))
        rhs = 0.5 * float((W * (u[:, None] - u[None, :]) ** 2).sum())
        assert abs(lhs - rhs) < 1e-10
        assert abs(g.quadratic_form(u) - rhs) < 1e-10


def test_lambda2_below_sampled_rayleigh():
    rng = np.random.default_rng(2)
    g = random_connected_graph(rng, 10)
    lam = og.lambda2(g).lambda2
    u = rng.normal(size=(1000, 10))
    u -= ((u @ g.delta) / g.delta.sum())[:, None]
    ray = np.array([g.quadratic_form(v) / float(g.delta @ (v * v)) for v in u])
    assert lam <= ray.min() + 1e-12
    rep = og.lambda2(g)
    assert rep.rayleigh == pytest.approx(lam, rel=1e-10)


def test_random_graphs_cheeger():
    rng = np.random.default_rng(3)
    for _ in range(100):
        g = random_connected_graph(rng, int(rng.integers(2, 13)))
        h = og.cheeger_constant(g, "exact")
        assert h == pytest.approx(brute_cheeger(g), rel=1e-12)
        lam, rhs, ok = og.cheeger_audit(g)
        assert ok and lam >= rhs - 1e-12
        assert og.cheeger_constant(g, "sweep") >= h - 1e-12
        rep = og.lambda2(g)
        assert rep.cheeger_lower <= h + 1e-12


def test_exact_size_limit():
    g = og.WeightedGraph(np.ones(23), np.column_stack([np.arange(22), np.arange(1, 23)]), np.ones(22))
    with pytest.raises(TooLargeForExact):
        og.cheeger_constant(g, "exact")


def test_sparse_path_matches_dense():
    rng = np.random.default_rng(4)
    g = random_connected_graph(rng, 60)
    dense = og.lambda2(g).lambda2
    vals, _ = og._sparse_pair(g)
    assert vals[1] == pytest.approx(dense, rel=1e-8)


def test_graph_validation():
    with pytest.raises(ConfigError):
        og.WeightedGraph([1.0, 0.0], [[0, 1]], [1.0])
    with pytest.raises(ConfigError):
        og.WeightedGraph([1.0, 1.0], [[0, 0]], [1.0])
    with pytest.raises(ConfigError):
        og.WeightedGraph.from_dense([1, 1], [[0, 1], [2, 0]])


def test_build_graph_two_boxes():
    # uniform mass on [0, 1] x [0, 1]; boxes of mass 0.6 overlap in mass 0.2
    rho = dens.UniformOnDomain(geo.Box([0, 0], [1, 1]))
    a = geo.AxisBox(np.array([0.0, 0.0]), np.array([0.6, 1.0]))
    b = geo.AxisBox(np.array([0.4, 0.0]), np.array([1.0, 1.0]))
    g = og.build_graph([a, b], rho)
    assert np.allclose(g.delta, [0.6, 0.6])
    assert g.edges.tolist() == [[0, 1]] and g.weights[0] == pytest.approx(0.2)


def test_build_graph_isolated():
    rho = dens.UniformOnDomain(geo.Box([0, 0], [1, 1]))
    a = geo.AxisBox(np.array([0.0, 0.0]), np.array([0.3, 1.0]))
    b = geo.AxisBox(np.array([0.5, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(IsolatedVertex):
        og.build_graph([a, b], rho)


def test_cauchy_family_1d_structure():
    g = og.cauchy_family_graph(1, 5.0, 3)
    assert g.n == 5
    assert g.labels[0] == (0, None)
    # two branches J = 1, 2 on each side of the merged ball
    adj = {tuple(sorted((g.labels[i], g.labels[j]), key=str)) for i, j in g.edges}
    for s in ((1,), (-1,)):
        assert tuple(sorted(((0, None), (1, s)), key=str)) in adj
        assert tuple(sorted(((1, s), (2, s)), key=str)) in adj
    assert not any(((1, (1,)) in e and (1, (-1,)) in e) for e in adj)
    assert g.is_connected()


def test_cauchy_family_2d_degree():
    g = og.cauchy_family_graph(2, 6.0, 3)
    assert g.combinatorial_degree().max() <= 2 ** 2 * (5 + 1)
    assert g.is_connected()


def test_cauchy_cell_density_ratio():
    rho = dens.GeneralizedCauchy(2, 6.0)
    cells, _ = og.cauchy_cells(2, 4)
    bound = (4 * math.sqrt(2)) ** 6
    assert all(dens.cell_density_ratio(rho, c) <= bound for c in cells)


def test_dumbbell_gap_shrinks_with_tube():
    lam = []
    for eps in (0.2, 0.1, 0.05):
        dom = geo.Dumbbell(eps=eps)
        fam = dec.boman_family(dec.whitney_decompose(dom, 6))
        g = og.boman_graph(fam, dens.UniformOnDomain(dom))
        lam.append(og.lambda2(g).lambda2)
    assert lam[0] > lam[1] > lam[2] > 0


def test_graph_csv(tmp_path):
    g = og.WeightedGraph([1.0, 1.0], [[0, 1]], [0.25])
    g.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == ["i,j,weight", "0,1,0.25"]
