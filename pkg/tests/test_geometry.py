import math

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from otsl import geometry as geo
from otsl.errors import ConfigError, EmptyDomain


# ---------------------------------------------------------------------------
# cubes


def test_cube_geometry_unit_interval():
    c, s, diam, v = geo.cube_geometry(geo.DyadicCube(0, (0,)))
    assert c.tolist() == [0.5]
    assert s == 1.0 and diam == 1.0
    assert len(v) == 2


def test_cube_geometry_level_one_square():
    c, s, diam, v = geo.cube_geometry(geo.DyadicCube(1, (0, 0)))
    assert c.tolist() == [0.25, 0.25]
    assert s == 0.5
    assert diam == pytest.approx(0.5 * math.sqrt(2), abs=1e-15)
    assert len(v) == 4


def test_cube_vertices_negative_index():
    _, _, _, v = geo.cube_geometry(geo.DyadicCube(0, (3, -1)))
    assert {tuple(p) for p in v.tolist()} == {(3, -1), (4, -1), (3, 0), (4, 0)}


def test_scaled_cube_keeps_center():
    base = geo.DyadicCube(2, (1, 3))
    q = geo.ScaledCube(base, 10 / 9)
    assert np.allclose(q.center, base.center)
    assert q.side == pytest.approx(10 / 9 * base.side)
    assert q.diameter == pytest.approx(q.side * math.sqrt(2))
    assert len(q.vertices()) == 4


@pytest.mark.parametrize("level,index", [(0, (0,)), (3, (5, -2)), (-1, (1, 1, -3)), (5, (17, 4, 9))])
def test_parent_contains_child(level, index):
    c = geo.DyadicCube(level, index)
    p = c.parent()
    assert p.level == level - 1
    assert np.all(p.contains(c.vertices()))
    assert all(np.all(c.contains(k.vertices())) for k in c.children())


# ---------------------------------------------------------------------------
# boundary distances


def test_ball_center_distance():
    assert geo.boundary_distance(geo.Ball([0.0, 0.0], 1.0), [0.0, 0.0]) == 1.0


def test_box_nearest_face():
    assert geo.boundary_distance(geo.Box([0, 0], [1, 1]), [0.5, 0.1]) == pytest.approx(0.1, abs=1e-15)


def test_dumbbell_tube_midpoint_against_sampled_boundary():
    dom = geo.Dumbbell(radius=1.0, length=1.0, eps=0.1)
    x = np.array([0.0, 0.0])
    got = geo.boundary_distance(dom, x)
    # oracle: dense samples of the boundary segments of the three boxes
    t = np.linspace(0.0, 1.0, 20001)
    segs = []
    h = 0.5
    for (a, b) in [((-h, 0.1), (h, 0.1)), ((-h, -0.1), (h, -0.1)), ((-h, 0.1), (-h, 1.0)),
                   ((h, 0.1), (h, 1.0)), ((-h, -1.0), (-h, -0.1)), ((h, -1.0), (h, -0.1)),
                   ((-h - 2, 1.0), (-h, 1.0)), ((h, 1.0), (h + 2, 1.0))]:
        a, b = np.array(a), np.array(b)
        segs.append(a + t[:, None] * (b - a))
    pts = np.concatenate(segs)
    oracle = np.linalg.norm(pts - x, axis=1).min()
    assert got == pytest.approx(0.1, abs=1e-15)
    assert abs(got - oracle) < 1e-6


def test_boundary_points_have_zero_distance():
    rng = np.random.default_rng(1)
    u = rng.normal(size=(1000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    ball = geo.Ball(np.zeros(3), 2.0)
    # the radial deviation of 2u from the sphere is below a few ulps
    assert np.all(ball.boundary_distance(2.0 * u) < 1e-15)
    box = geo.Box([0, 0, 0], [1, 2, 3])
    p = box.lo + rng.random((1000, 3)) * (box.hi - box.lo)
    face = rng.integers(0, 3, size=1000)
    side = rng.integers(0, 2, size=1000)
    p[np.arange(1000), face] = np.where(side == 1, box.hi[face], box.lo[face])
    assert np.all(box.boundary_distance(p) == 0.0)


def test_boundary_distance_rejects_nan():
    with pytest.raises(ValueError):
        geo.boundary_distance(geo.Box([0, 0], [1, 1]), [np.nan, 0.5])


def test_halfspace_triangle_distance():
    # the triangle x > 0, y > 0, x + y < 1
    tri = geo.HalfspaceIntersection([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert tri.boundary_distance(np.array([[0.25, 0.25]]))[0] == pytest.approx(0.25)
    assert tri.boundary_distance(np.array([[0.4, 0.4]]))[0] == pytest.approx(0.2 / math.sqrt(2))
    assert tri.contains(np.array([[0.2, 0.2], [0.8, 0.8]])).tolist() == [True, False]


def test_punctured_ball_excludes_center():
    pb = geo.PuncturedBall(np.zeros(2), 1.0)
    assert not pb.contains(np.zeros((1, 2)))[0]
    assert pb.boundary_distance(np.array([[0.3, 0.0]]))[0] == pytest.approx(0.3)


def test_lshape_membership_and_reentrant_corner():
    L = geo.LShape()
    assert L.contains(np.array([[0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])).tolist() == [True, True, False]
    # distance to the reentrant corner (0.5, 0.5)
    assert L.boundary_distance(np.array([[0.4, 0.4]]))[0] == pytest.approx(0.1 * math.sqrt(2))


def test_domain_json_roundtrip():
    for dom in [geo.Box([0, 0], [1, 2]), geo.Ball([0, 0, 0], 1.5), geo.LShape(), geo.Dumbbell(eps=0.2)]:
        back = geo.domain_from_json(dom.to_json())
        x = np.random.default_rng(0).normal(size=(50, dom.dim))
        assert np.array_equal(back.contains(x), dom.contains(x))
        assert np.allclose(back.boundary_distance(x), dom.boundary_distance(x))


def test_domain_json_errors():
    with pytest.raises(ConfigError):
        geo.domain_from_json({"shape": "torus"})
    with pytest.raises(ConfigError):
        geo.domain_from_json({"shape": "box", "dimension": 3, "params": {"lo": [0, 0], "hi": [1, 1]}})
    with pytest.raises(EmptyDomain):
        geo.Ball([0, 0], 0.0)


def test_room_and_passage_layout():
    lay = geo.room_and_passage_layout(5)
    for n, (t, tp) in enumerate(zip(lay["t"], lay["t_prime"]), start=1):
        assert tp - t == pytest.approx(4.0 ** (-n))
        assert lay["heights"][n - 1] == pytest.approx(math.exp(-(2.0 ** n)))
    (a, b) = lay["rooms"][1]
    assert b[0] - a[0] == pytest.approx(0.25)
    # the layout is centered on the origin
    assert lay["rooms"][0][0][0] == pytest.approx(-lay["rooms"][-1][1][0])


# ---------------------------------------------------------------------------
# sector cells


def test_sector_examples():
    s = geo.SectorCell.annulus(1, (1, 1))
    assert s.contains(np.array([[2.0, 2.0]]))[0]
    assert not s.contains(np.array([[0.4, 0.4]]))[0]
    assert geo.BallCell(2.0, (0.0, 0.0)).contains(np.zeros((1, 2)))[0]


def _sample_sector(rng, J, sig, n):
    """Uniform points of the annulus sector 2^(J-1) <= |x| <= 2^(J+1) in one orthant."""
    d = len(sig)
    out = []
    while sum(len(o) for o in out) < n:
        x = rng.uniform(0, 2.0 ** (J + 1), size=(4 * n, d))
        r = np.linalg.norm(x, axis=1)
        out.append(x[(r >= 2.0 ** (J - 1)) & (r <= 2.0 ** (J + 1))])
    return np.concatenate(out)[:n] * np.array(sig, float)


def _add_extremes(J, sig):
    # include the points on the axes and the diagonal of both spheres
    d = len(sig)
    pts = []
    for R in (2.0 ** (J - 1), 2.0 ** (J + 1)):
        pts.extend(R * np.eye(d))
        pts.append(R * np.ones(d) / math.sqrt(d))
    return np.array(pts) * np.array(sig, float)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("J", [1, 2, 3])
def test_sector_matches_sampled_hull(d, J):
    rng = np.random.default_rng(100 * d + J)
    sig = tuple(rng.choice([-1, 1], size=d))
    cell = geo.SectorCell.annulus(J, sig)
    pts = np.concatenate([_sample_sector(rng, J, sig, 10_000), _add_extremes(J, sig)])
    lo, hi = cell.bbox()
    q = lo + (hi - lo) * rng.uniform(-0.1, 1.1, size=(1000, d))
    mine = cell.contains(q)
    if d == 1:
        inside_hull = (q[:, 0] >= pts[:, 0].min()) & (q[:, 0] <= pts[:, 0].max())
        assert np.array_equal(mine, inside_hull)
        return
    hull = ConvexHull(pts)
    A, b = hull.equations[:, :-1], hull.equations[:, -1]
    slack = (q @ A.T + b).max(axis=1)
    # every point of the sampled hull is in the cell
    assert np.all(mine[slack <= -1e-9])
    # cell points away from the cell boundary lie in the sampled hull
    R = 2.0 ** (J + 1)
    s = np.array(sig, float)
    margin = np.minimum.reduce([R - np.linalg.norm(q, axis=1), (q * s).min(axis=1),
                                ((q * s).sum(axis=1) - 2.0 ** (J - 1)) / math.sqrt(d)])
    deep = mine & (margin > 0.05 * R)
    assert deep.sum() > 50
    assert np.all(slack[deep] <= 1e-9)


def test_sector_matches_lp_hull_oracle():
    rng = np.random.default_rng(7)
    J, sig = 1, (1, -1)
    cell = geo.SectorCell.annulus(J, sig)
    pts = np.concatenate([_sample_sector(rng, J, sig, 2000), _add_extremes(J, sig)])
    n = len(pts)
    # x is in the hull iff some lambda >= 0 with sum 1 gives pts^T lambda = x
    A_eq = np.vstack([pts.T, np.ones((1, n))])
    lo, hi = cell.bbox()
    checked = 0
    for x in lo + (hi - lo) * rng.uniform(-0.1, 1.1, size=(60, 2)):
        r = np.linalg.norm(x)
        margin = min(4.0 - r, x[0], -x[1], (x[0] - x[1] - 1.0) / math.sqrt(2))
        if abs(margin) < 0.05:
            continue
        res = linprog(np.zeros(n), A_eq=A_eq, b_eq=np.r_[x, 1.0], bounds=(0, None), method="highs")
        assert (res.status == 0) == bool(cell.contains(x[None])[0])
        checked += 1
    assert checked > 30


@pytest.mark.parametrize("d", [2, 3])
def test_sector_midpoint_convexity(d):
    rng = np.random.default_rng(d)
    cell = geo.SectorCell.annulus(2, tuple([1] * (d - 1) + [-1]))
    lo, hi = cell.bbox()
    x = lo + (hi - lo) * rng.random((200_000, d))
    x = x[cell.contains(x)][:20_000]
    a, b = x[:10_000], x[10_000:20_000]
    assert len(b) == 10_000
    assert np.all(cell.contains(0.5 * (a + b)))


def test_sector_bbox_is_tight():
    cell = geo.SectorCell.annulus(2, (1, -1, 1))
    lo, hi = cell.bbox()
    rng = np.random.default_rng(0)
    x = lo + (hi - lo) * rng.random((100_000, 3))
    x = x[cell.contains(x)]
    ext = x.max(axis=0) - x.min(axis=0)
    assert np.all(hi - lo <= 2 * ext)


def test_intersect_cells():
    a = geo.AxisBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    b = geo.AxisBox(np.array([0.5, 0.5]), np.array([2.0, 2.0]))
    c = geo.intersect_cells(a, b)
    assert c.lo.tolist() == [0.5, 0.5] and c.hi.tolist() == [1.0, 1.0]
    assert geo.intersect_cells(a, geo.AxisBox(np.array([1.0, 0.0]), np.array([2.0, 1.0]))) is None
    s1 = geo.SectorCell.annulus(1, (1,))
    s2 = geo.SectorCell.annulus(2, (1,))
    s12 = geo.intersect_cells(s1, s2)
    assert s12.outer_radius == 4.0 and s12.offset == 2.0
    assert geo.intersect_cells(s1, geo.SectorCell.annulus(1, (-1,))) is None
