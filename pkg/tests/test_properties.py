"""Randomized invariants checked with hypothesis."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otsl import density as dens
from otsl import geometry as geo
from otsl import overlap_graph as og
from otsl import stability_lab as sl
from otsl import transport as tr
from otsl.measures import DiscreteMeasure

FAST = settings(max_examples=60, deadline=None)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
positive = st.floats(0.05, 5.0, allow_nan=False)


@st.composite
def measures(draw, n_max=8, dim=None):
    d = dim or draw(st.integers(1, 3))
    n = draw(st.integers(1, n_max))
    x = draw(arrays(float, (n, d), elements=finite))
    m = draw(arrays(float, n, elements=positive))
    return DiscreteMeasure(x, m / m.sum())


@st.composite
def graphs(draw, n_max=8):
    n = draw(st.integers(2, n_max))
    delta = draw(arrays(float, n, elements=positive))
    # path backbone keeps the graph connected, extra edges are optional
    edges = {(i, i + 1) for i in range(n - 1)}
    for i in range(n):
        for j in range(i + 2, n):
            if draw(st.booleans()):
                edges.add((i, j))
    e = np.array(sorted(edges))
    w = draw(arrays(float, len(e), elements=positive))
    return og.WeightedGraph(delta, e, w)


@FAST
@given(measures(), st.data())
def test_variance_shift_invariant_and_nonnegative(m, data):
    f = data.draw(arrays(float, len(m), elements=finite))
    c = data.draw(finite)
    v = sl.variance(m, f)
    assert v >= 0.0
    assert abs(sl.variance(m, f + c) - v) <= 1e-9 * (1 + v + c * c)


@FAST
@given(measures(dim=2), arrays(float, (5, 2), elements=finite))
def test_fenchel_young(m, y):
    psi = np.linspace(-1.0, 1.0, len(m))
    phi = tr.legendre(m.points, psi, y)
    # phi(y) + psi(x) >= <x, y> for every pair
    gap = phi[:, None] + psi[None, :] - y @ m.points.T
    assert gap.min() >= -1e-9
    # and equality is reached at the argmax
    assert np.allclose(gap.min(axis=1), 0.0, atol=1e-9)


@FAST
@given(graphs(), st.data())
def test_graph_quadratic_form_and_cheeger(g, data):
    u = data.draw(arrays(float, g.n, elements=finite))
    W = g.dense()
    direct = 0.5 * float((W * (u[:, None] - u[None, :]) ** 2).sum())
    assert math.isclose(g.quadratic_form(u), direct, rel_tol=1e-9, abs_tol=1e-9)
    lam, rhs, ok = og.cheeger_audit(g)
    assert ok and lam >= rhs - 1e-10
    assert lam > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 24), st.floats(0.0, 0.8), st.floats(0.1, 1.0))
def test_discretize_is_probability(n, a, w):
    dom = geo.Box([0.0, 0.0], [1.0, 1.0])
    lo, hi = np.array([a, 0.0]), np.array([min(a + w, 1.0), 1.0])
    m = dens.discretize(dens.BoundaryPower(dom, 0.5), (lo, hi), n)
    assert abs(math.fsum(m.masses) - 1.0) < 1e-12
    assert np.all(m.masses >= 0)
    assert np.all((m.points >= lo) & (m.points <= hi))


@FAST
@given(st.integers(1, 12), st.lists(st.integers(-500, 500), min_size=1, max_size=3), st.data())
def test_dyadic_parent_contains_child(level, idx, data):
    c = geo.DyadicCube(level, tuple(idx))
    p = c.parent()
    assert np.all(p.lo <= c.lo) and np.all(c.hi <= p.hi)
    assert c in p.children()
    t = data.draw(arrays(float, len(idx), elements=st.floats(0, 1)))
    assert p.contains(c.lo + t * c.side)[0]


@FAST
@given(st.integers(1, 3), st.integers(0, 4), st.data())
def test_sector_cells_are_convex(d, J, data):
    sigma = data.draw(st.lists(st.sampled_from([-1, 1]), min_size=d, max_size=d))
    cell = geo.SectorCell.annulus(J, sigma)
    s = np.array(sigma, float)

    def point():
        u = np.abs(data.draw(arrays(float, d, elements=st.floats(0.01, 1.0))))
        r = data.draw(st.floats(cell.offset, cell.outer_radius))
        return s * u / np.linalg.norm(u) * r

    x, y = point(), point()
    assert cell.contains(np.stack([x, y])).all()
    t = data.draw(st.floats(0, 1))
    assert cell.contains(t * x + (1 - t) * y)[0]


@settings(max_examples=40, deadline=None)
@given(measures(), st.data(), st.sampled_from(["quadratic", "euclidean"]))
def test_ot_marginals_and_gap(a, data, cost):
    b = data.draw(measures(dim=a.dim))
    sol = tr.solve_ot(a, b, cost)
    P = sol.plan_matrix(len(a), len(b))
    assert np.allclose(P.sum(axis=1), a.masses, atol=1e-10)
    assert np.allclose(P.sum(axis=0), b.masses, atol=1e-10)
    assert sol.duality_gap <= 1e-8 * (1 + abs(sol.primal_cost))
    assert sol.primal_cost >= -1e-12
