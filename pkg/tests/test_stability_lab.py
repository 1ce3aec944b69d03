import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from otsl import decomposition as dec
from otsl import density as dens
from otsl import geometry as geo
from otsl import overlap_graph as og
from otsl import stability_lab as sl
from otsl.errors import ConfigError, InsufficientScales, ZeroSpectralGap
from otsl.measures import DiscreteMeasure

UNIT = geo.Box([0.0], [1.0])


# ---------------------------------------------------------------------------
# variance


def test_variance_examples():
    two = DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
    assert sl.variance(two, [3.0, 3.0]) == 0.0
    assert sl.variance(two, [0.0, 1.0]) == 0.25
    rng = np.random.default_rng(0)
    m = DiscreteMeasure(rng.normal(size=(50, 1)), np.full(50, 0.02))
    f = rng.normal(size=50)
    assert abs(sl.variance(m, f + 123.0) - sl.variance(m, f)) < 1e-12
    with pytest.raises(ConfigError):
        sl.variance(two, [1.0])
    with pytest.raises(ConfigError):
        sl.variance(two, [1.0, np.inf])


# ---------------------------------------------------------------------------
# gluing audits


@pytest.fixture(scope="module")
def square_family():
    dom = geo.Box([0, 0], [1, 1])
    rho = dens.UniformOnDomain(dom)
    fam = dec.boman_family(dec.whitney_decompose(dom, 6))
    audit = dec.audit_chain_condition(fam, rho)
    atoms = dens.discretize(rho, dom, 64)
    return fam, audit, atoms


def test_boman_gluing_constant(square_family):
    fam, audit, atoms = square_family
    rep = sl.audit_gluing_boman(fam, audit, atoms, np.full(len(atoms), 2.5))
    # cell means of a constant carry rounding residue only
    assert rep.lhs == 0.0 and abs(rep.rhs) < 1e-12 and rep.passed


def test_boman_gluing_linear(square_family):
    fam, audit, atoms = square_family
    rep = sl.audit_gluing_boman(fam, audit, atoms, atoms.points[:, 0])
    assert rep.passed and rep.slack > 0
    # the covered part of the square has variance close to 1/12
    assert abs(rep.lhs - 1 / 12) < 0.02
    assert rep.constants["factor"] == pytest.approx(200 * audit.A ** 2 * audit.C * audit.D ** 3)
    js = rep.to_json(with_cells=True)
    assert js["pass"] and len(js["cells"]) == len(fam)


def _two_cells(h):
    return [geo.AxisBox(np.array([0.0]), np.array([0.5 + h])), geo.AxisBox(np.array([0.5 - h]), np.array([1.0]))]


def test_graph_gluing_constant():
    rho = dens.UniformOnDomain(UNIT)
    atoms = dens.discretize(rho, UNIT, 256)
    cells = _two_cells(0.1)
    g = og.build_graph(cells, rho)
    rep = sl.audit_gluing_graph(cells, g, og.lambda2(g), atoms, np.ones(len(atoms)))
    assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.passed


def test_graph_gluing_ramp_slack_shrinks():
    rho = dens.UniformOnDomain(UNIT)
    atoms = dens.discretize(rho, UNIT, 4096)
    slack = []
    for h in (0.2, 0.1, 0.05, 0.02):
        cells = _two_cells(h)
        g = og.build_graph(cells, rho)
        f = np.clip((atoms.points[:, 0] - 0.5) / h, -1, 1)
        rep = sl.audit_gluing_graph(cells, g, og.lambda2(g), atoms, f)
        assert rep.passed
        # the atomic gap agrees with the continuum gap of the two-cell graph
        assert rep.constants["lambda2"] == pytest.approx(rep.constants["lambda2_continuum"], rel=0.01)
        slack.append(rep.slack)
    assert all(b < a for a, b in zip(slack, slack[1:])) and slack[-1] > 0


def test_graph_gluing_cauchy():
    g = og.cauchy_family_graph(1, 5.0, 4)
    rho = dens.GeneralizedCauchy(1, 5.0)
    atoms = dens.discretize(rho, geo.Box([-16.0], [16.0]), 1024)
    f = np.minimum(np.abs(atoms.points[:, 0]), 4.0)
    rep = sl.audit_gluing_graph(g.cells, g, og.lambda2(g), atoms, f)
    assert rep.passed and rep.slack > 0
    assert rep.constants["A"] >= 2


def test_graph_gluing_needs_gap():
    g = og.WeightedGraph(np.ones(4), [[0, 1], [2, 3]], [1.0, 1.0])
    atoms = dens.discretize(dens.UniformOnDomain(UNIT), UNIT, 16)
    with pytest.raises(ZeroSpectralGap):
        sl.audit_gluing_graph(_two_cells(0.1), g, og.lambda2(g), atoms, np.zeros(16))


# ---------------------------------------------------------------------------
# variance inequality on a convex box


RHO_UNIT = dens.UniformOnDomain(UNIT)
Y2 = np.array([[-1.0], [1.0]])


def test_convex_equal_and_shifted_potentials():
    psi = np.array([0.3, -0.1])
    lhs, rhs, ok = sl.audit_variance_inequality_convex(UNIT, RHO_UNIT, (Y2, psi, psi), 64)
    assert lhs == 0.0 and rhs == 0.0 and ok
    lhs, rhs, ok = sl.audit_variance_inequality_convex(UNIT, RHO_UNIT, (Y2, psi, psi + 0.7), 64)
    assert lhs == 0.0 and abs(rhs) < 1e-14 and ok


def test_convex_three_piece_example():
    # psi0 = (0, 0): psi0*(x) = x on [0, 1] with gradient y = 1
    # psi1 = (0.2, -0.2): psi1*(x) = x + 0.2, same gradient, so both sides vanish
    lhs, rhs, ok = sl.audit_variance_inequality_convex(UNIT, RHO_UNIT, (Y2, [0, 0], [0.2, -0.2]), 128)
    assert lhs == 0.0 and abs(rhs) < 1e-14 and ok
    # psi1 = (-0.3, 0.3): psi1*(x) = max(0.3 - x, x - 0.3); the gradient is -1 on [0, 0.3)
    # pairing = 0.3 * 0.3 + 0.3 * 0.3 = 0.18, Var(psi1* - psi0*) = 0.072 - 0.21^2 = 0.0279
    a = sl.audit_variance_inequality_convex(UNIT, RHO_UNIT, (Y2, [0, 0], [-0.3, 0.3]), 128)
    assert a.passed
    assert abs(a.lhs - 0.18) <= a.tolerance
    assert abs(a.variance - 0.0279) < 1e-3
    assert a.constant == pytest.approx(math.exp(-1.0))
    assert a.fine.grid == 256 and a.rel_change() < 0.05


def test_convex_single_target():
    lhs, rhs, ok = sl.audit_variance_inequality_convex(UNIT, RHO_UNIT, ([[0.5]], [0.0], [1.0]), 32)
    assert (lhs, rhs, ok) == (0.0, 0.0, True)


def test_convex_common_shift_invariance():
    rng = np.random.default_rng(5)
    sq = geo.Box([0, 0], [1, 1])
    rho = dens.UniformOnDomain(sq)
    Y = rng.uniform(-1, 1, size=(5, 2))
    p0, p1 = rng.normal(size=5), rng.normal(size=5)
    a = sl.audit_variance_inequality_convex(sq, rho, (Y, p0, p1), 32, two_resolution=False)
    b = sl.audit_variance_inequality_convex(sq, rho, (Y, p0 + 3.0, p1 + 3.0), 32, two_resolution=False)
    assert abs(a.variance - b.variance) < 1e-12
    assert abs(a.lhs - b.lhs) < 1e-12


def test_convex_shape_errors():
    with pytest.raises(ConfigError):
        sl.audit_variance_inequality_convex(UNIT, RHO_UNIT, (Y2, [0.0], [0.0, 1.0]), 16)


# ---------------------------------------------------------------------------
# exponents


def test_exponent_formulas():
    assert sl.cauchy_theta(1, 5) == 0.25
    assert sl.boundary_delta_prime(1.0) == pytest.approx(1 / 24)
    assert sl.boundary_map_exponent(1.0) == pytest.approx(1 / 8)
    assert sl.boundary_delta_prime(0.0) == 0.0
    assert sl.boundary_map_exponent(0.0) == pytest.approx(1 / 6)
    assert sl.spherical_map_exponent(2) == pytest.approx(1 / 12)
    assert sl.cauchy_theta_map(1, 5) == pytest.approx(2 / 34)
    with pytest.raises(ConfigError):
        sl.cauchy_theta(1, 3)
    t = sl.theoretical_exponents("cauchy", dim=1, beta=5)
    assert t["potential"] == 0.25
    assert sl.theoretical_exponents("gaussian")["log_power"] == 0.5
    with pytest.raises(ConfigError):
        sl.theoretical_exponents("snowflake")


def test_fit_needs_three_scales():
    with pytest.raises(InsufficientScales):
        sl.fit_exponent("uniform-box", [0.1, 0.05], 2)


def test_trial_streams_are_independent_and_reproducible():
    a = sl.trial_rng(7, 1, 2).random(4)
    assert np.array_equal(a, sl.trial_rng(7, 1, 2).random(4))
    assert not np.array_equal(a, sl.trial_rng(7, 2, 1).random(4))
    assert not np.array_equal(a, sl.trial_rng(8, 1, 2).random(4))


def test_perturbed_pairs():
    rng = sl.trial_rng(0, 0, 0)
    mu, nu = sl.perturbed_pair(rng, 10, 2, 0.01)
    assert len(mu) == len(nu) == 10
    assert np.all(np.linalg.norm(mu.points, axis=1) <= 1)
    assert np.all(np.linalg.norm(mu.points - nu.points, axis=1) <= 0.01)
    mu, nu = sl.perturbed_pair(rng, 10, 2, 0.01, "split")
    assert len(nu) == 20 and nu.total == pytest.approx(1.0)


def test_small_fit_deterministic_across_threads():
    kw = dict(scales=[0.1, 0.05, 0.02], trials=2, seed=3, k=6, grid=64)
    a = sl.fit_exponent({"family": "uniform-box", "dim": 1}, threads=1, **kw)
    b = sl.fit_exponent({"family": "uniform-box", "dim": 1}, threads=3, **kw)
    assert [p.row() for p in a.pairs] == [p.row() for p in b.pairs]
    w = [p.w1 for p in a.pairs]
    assert w == sorted(w) and min(w) > 0
    js = a.to_json()
    assert js["n_pairs"] == 6 and js["theory"]["potential"] == 0.5


def test_family_sources():
    for tag in sl.FAMILIES:
        rho, (lo, hi), t, p = sl.family_source({"family": tag})
        assert t == tag and len(lo) == p["dim"] == rho.dim
    with pytest.raises(ConfigError):
        sl.family_source({"family": "torus"})


# ---------------------------------------------------------------------------
# sharpness


def test_radial_gap_against_line_quadrature():
    rho = dens.GeneralizedCauchy(1, 5.0)
    pdf = lambda x: rho.evaluate(np.array([[x]]))[0]
    r, r2 = 3.0, 6.0
    phi = lambda x, s: max(abs(x) - s, 0.0)
    kw = dict(epsabs=1e-14, epsrel=1e-12, limit=400)

    def line(fn):
        # integrate over the half line and double by symmetry
        return 2 * (integrate.quad(lambda x: fn(x) * pdf(x), 0, r2, points=[r], **kw)[0]
                    + integrate.quad(lambda x: fn(x) * pdf(x), r2, np.inf, **kw)[0])

    c_r = line(lambda x: phi(x, r))
    g = lambda x: phi(x, r2) - phi(x, r)
    var = line(lambda x: g(x) ** 2) - line(g) ** 2
    c, gap = sl.radial_test_gap(rho, r, r2)
    assert c == pytest.approx(c_r, rel=1e-9)
    assert gap == pytest.approx(math.sqrt(var), rel=1e-8)


def test_sharpness_small_table():
    tab = sl.sharpness_family("cauchy", dens.GeneralizedCauchy(1, 5.0), [2, 4, 8])
    assert tab.theta == 0.25 and len(tab.rows()) == 3
    # W_1 = rho(B_2r) - rho(B_r)
    rho = dens.GeneralizedCauchy(1, 5.0)
    assert tab.w1[0] == pytest.approx(rho.radial_cdf(4) - rho.radial_cdf(2), rel=1e-12)
    with pytest.warns(sl.RadiiTooSmall):
        sl.sharpness_family("gaussian", dens.LogConcave(1, 1.0), [0.3, 2.0])
    with pytest.raises(ConfigError):
        sl.sharpness_family("cauchy", dens.LogConcave(1, 1.0), [2.0])


def test_solver_w1_on_pushforwards():
    rho = dens.GeneralizedCauchy(1, 5.0)
    w = rho.radial_tail(2.0) - rho.radial_tail(4.0)
    sw = sl.solver_w1_check(rho, 2.0, 4.0, half_width=64.0, grid=512)
    assert abs(sw - w) / w < 0.02


# ---------------------------------------------------------------------------
# counterexample


@pytest.fixture(scope="module")
def small_counterexample():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sl.ScheduleWarning)
        return sl.counterexample_run(n_max=3, extra_rooms=6, dps=30)


def test_counterexample_identities(small_counterexample):
    tab = small_counterexample
    assert max(tab.eq_sum_error) < 1e-20
    for v, cf, lb in zip(tab.variance, tab.variance_closed_form, tab.lower_bound):
        assert abs(v - cf) <= 1e-20 * abs(cf)
        assert v >= lb


def test_counterexample_transport_distance(small_counterexample):
    tab = small_counterexample
    for i, pn in enumerate(tab.passage_mass):
        r = tab.ratios[(2, 1)][i]
        assert r == pytest.approx(2 * math.sqrt(pn) / float(tab.variance[i]), rel=1e-12)


def test_counterexample_schedule_warning():
    with pytest.warns(sl.ScheduleWarning):
        sl.counterexample_run(n_max=2, extra_rooms=2, dps=20)

