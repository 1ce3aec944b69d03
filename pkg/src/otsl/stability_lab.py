"""Variance audits, stability-exponent experiments and sharpness families.

Conventions: ``psi^*(x) = max_j <x, y_j> - psi_j`` with ties broken by the
smallest target index, potentials are normalized to zero rho-mean, and every
random stream is derived from one seed and an index tuple (scale, trial).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate

from . import density as dens
from . import geometry as geo
from . import transport as tr
from .decomposition import BomanFamily, ChainAudit
from .errors import CellWithoutAtoms, ConfigError, InsufficientScales, ZeroSpectralGap
from .measures import DiscreteMeasure, normalize_masses
from .overlap_graph import SpectralReport, WeightedGraph, lambda2


class RadiiTooSmall(UserWarning):
    """Some radius has rho(B_r) < 1/2, outside the asymptotic regime."""


class ScheduleWarning(UserWarning):
    """The room/passage heights do not make h^delta / (dt^2 |R_{n+1}|) decrease."""


# ---------------------------------------------------------------------------
# variances


def _wvar(m, f) -> float:
    m = np.asarray(m, float)
    f = np.asarray(f, float)
    tot = math.fsum(m)
    mu = math.fsum(m * f) / tot
    return max(math.fsum(m * (f - mu) ** 2) / tot, 0.0)


def variance(rho_atoms: DiscreteMeasure, f) -> float:
    """sum rho_i f_i^2 - (sum rho_i f_i)^2, evaluated in centered form."""
    f = np.asarray(f, float).reshape(-1)
    if len(f) != len(rho_atoms):
        raise ConfigError("one value per atom required")
    if not np.all(np.isfinite(f)):
        raise ConfigError("f must be finite at every atom")
    return _wvar(rho_atoms.masses, f)


def _cell_variances(rows, cols, m, f, n_cells):
    """Mass and variance of f under each normalized restriction, from (atom, cell) pairs."""
    cm = np.bincount(cols, weights=m[rows], minlength=n_cells)
    s1 = np.bincount(cols, weights=m[rows] * f[rows], minlength=n_cells)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / cm
    dev = f[rows] - mean[cols]
    s2 = np.bincount(cols, weights=m[rows] * dev * dev, minlength=n_cells)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.maximum(s2 / cm, 0.0)
    return cm, var


@dataclass
class VarianceReport:
    global_variance: float
    cell_ids: np.ndarray
    cell_masses: np.ndarray
    cell_variances: np.ndarray
    constants: dict
    lhs: float
    rhs: float
    slack: float
    passed: bool
    covered_mass: float = 1.0
    notes: dict = field(default_factory=dict)

    @property
    def cells(self) -> list:
        return list(zip(self.cell_ids.tolist(), self.cell_masses.tolist(),
                        self.cell_variances.tolist()))

    def to_json(self, with_cells: bool = False) -> dict:
        out = {"global_variance": self.global_variance, "constants": self.constants,
               "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack, "pass": self.passed,
               "covered_mass": self.covered_mass, "n_cells": int(len(self.cell_ids))}
        out.update(self.notes)
        if with_cells:
            out["cells"] = [{"id": i, "mass": m, "variance": v} for i, m, v in self.cells]
        return out


def _covered(rows, n_atoms, masses):
    hit = np.zeros(n_atoms, bool)
    hit[rows] = True
    return hit, math.fsum(masses[hit])


def audit_gluing_boman(fam: BomanFamily, audit: ChainAudit, rho_atoms: DiscreteMeasure, f) -> VarianceReport:
    """Var(f) <= 200 A^2 C D^3 sum_Q rho(Q) Var_Q(f) with the measured chain constants.

    Cell masses are those of the atomic measure; atoms outside every cell (the
    uncovered boundary layer of a truncated decomposition) are dropped and the
    remaining masses renormalized.
    """
    f = np.asarray(f, float).reshape(-1)
    if len(f) != len(rho_atoms):
        raise ConfigError("one value per atom required")
    M = fam.membership(rho_atoms.points).tocoo()
    rows, cols = M.row.astype(np.int64), M.col.astype(np.int64)
    hit, cov = _covered(rows, len(rho_atoms), rho_atoms.masses)
    if not hit.any():
        raise CellWithoutAtoms("no atom lies in any cell")
    m = np.zeros(len(rho_atoms))
    m[hit] = normalize_masses(rho_atoms.masses[hit])
    cm, var = _cell_variances(rows, cols, m, f, len(fam))
    empty = np.nonzero(cm <= 0)[0]
    if len(empty):
        raise CellWithoutAtoms(f"{len(empty)} cells contain no atom (first: {int(empty[0])}); refine the grid")
    lhs = _wvar(m[hit], f[hit])
    A, C, D = audit.A, audit.C, audit.D
    factor = 200.0 * A * A * C * D ** 3
    total = math.fsum(cm * var)
    rhs = factor * total
    return VarianceReport(lhs, np.arange(len(fam)), cm, var,
                          {"A": A, "B": audit.B, "C": C, "D": D, "E": audit.E, "factor": factor},
                          lhs, rhs, rhs - lhs, bool(lhs <= rhs), cov,
                          {"audit_passed": bool(audit.passed)})


def _cell_membership(cells, points):
    rows, cols = [], []
    for k, c in enumerate(cells):
        idx = np.nonzero(c.contains(points))[0]
        rows.append(idx)
        cols.append(np.full(len(idx), k, dtype=np.int64))
    return np.concatenate(rows), np.concatenate(cols)


def atomic_graph(cells, rho_atoms: DiscreteMeasure, masses=None) -> WeightedGraph:
    """Overlap graph whose vertex and edge weights are atomic masses."""
    m = rho_atoms.masses if masses is None else masses
    inside = np.array([c.contains(rho_atoms.points) for c in cells])
    delta = inside.astype(float) @ m
    if np.any(delta <= 0):
        raise CellWithoutAtoms("some cell contains no atom")
    W = (inside * m[None]).astype(float) @ inside.T.astype(float)
    np.fill_diagonal(W, 0.0)
    W = 0.5 * (W + W.T)
    return WeightedGraph.from_dense(delta, W)


def audit_gluing_graph(cells, graph: WeightedGraph, spectral: SpectralReport, rho_atoms: DiscreteMeasure,
                       f) -> VarianceReport:
    """Var(f) <= A (1 + 2A / lambda2) sum_i delta_i Var_i(f).

    The right side is instantiated for the atomic measure: delta_i and the
    spectral gap come from the overlap graph of the atoms. The gap of the
    continuum graph is reported alongside.
    """
    if not spectral.lambda2 > 0:
        raise ZeroSpectralGap("the overlap graph has no spectral gap")
    f = np.asarray(f, float).reshape(-1)
    if len(f) != len(rho_atoms):
        raise ConfigError("one value per atom required")
    rows, cols = _cell_membership(cells, rho_atoms.points)
    hit, cov = _covered(rows, len(rho_atoms), rho_atoms.masses)
    m = np.zeros(len(rho_atoms))
    m[hit] = normalize_masses(rho_atoms.masses[hit])
    cm, var = _cell_variances(rows, cols, m, f, len(cells))
    if np.any(cm <= 0):
        raise CellWithoutAtoms("some cell contains no atom; refine the grid")
    counts = np.bincount(rows, minlength=len(rho_atoms))[hit]
    A = int(max(counts.max(), graph.combinatorial_degree().max()))
    ag = atomic_graph(cells, rho_atoms, m)
    lam_atoms = lambda2(ag).lambda2
    if not lam_atoms > 0:
        raise ZeroSpectralGap("the atomic overlap graph is disconnected; refine the grid")
    lhs = _wvar(m[hit], f[hit])
    factor = A * (1.0 + 2.0 * A / lam_atoms)
    rhs = factor * math.fsum(cm * var)
    return VarianceReport(lhs, np.arange(len(cells)), cm, var,
                          {"A": A, "lambda2": lam_atoms, "lambda2_continuum": spectral.lambda2,
                           "factor": factor},
                          lhs, rhs, rhs - lhs, bool(lhs <= rhs), cov)


# ---------------------------------------------------------------------------
# variance inequality on a convex box


@dataclass
class ConvexAudit:
    lhs: float  # pairing <psi1 - psi0, grad psi0*_# rho - grad psi1*_# rho>
    rhs: float  # c Var(psi1* - psi0*)
    passed: bool
    constant: float
    variance: float
    tolerance: float
    grid: int
    cut_mass: float
    fine: "ConvexAudit | None" = None

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.passed))

    def rel_change(self) -> float | None:
        if self.fine is None:
            return None
        a, b = self.lhs, self.fine.lhs
        return abs(a - b) / max(abs(b), 1e-300)

    def to_json(self) -> dict:
        out = {"lhs": self.lhs, "rhs": self.rhs, "pass": self.passed, "constant": self.constant,
               "variance": self.variance, "tolerance": self.tolerance, "grid": self.grid,
               "cut_mass": self.cut_mass}
        if self.fine is not None:
            out["fine"] = self.fine.to_json()
            out["rel_change"] = self.rel_change()
        return out


def _convex_once(lo, hi, rho, Y, psi0, psi1, grid):
    d = len(lo)
    clo, chi = dens.grid_cells((lo, hi), grid)
    raw, mom = rho.box_masses(clo, chi, rel_tol=1e-10, moments=True, strict=False, abs_tol=1e-16)
    keep = raw > 0
    clo, chi, raw, mom = clo[keep], chi[keep], raw[keep], mom[keep]
    x = np.clip(mom / raw[:, None], clo, chi)
    m = normalize_masses(raw)
    v0, a0 = tr.legendre(Y, psi0, x, return_argmax=True)
    v1, a1 = tr.legendre(Y, psi1, x, return_argmax=True)
    g = v1 - v0
    var = _wvar(m, g)
    k = len(Y)
    nu0 = np.bincount(a0, weights=m, minlength=k)
    nu1 = np.bincount(a1, weights=m, minlength=k)
    dv = psi1 - psi0
    pairing = math.fsum(dv * (nu0 - nu1))
    # cells whose corners disagree with the atom on the maximizing index
    cut = np.zeros(len(m), bool)
    corners = geo._box_vertices(np.zeros(d), np.ones(d))
    for c in corners:
        p = clo + c * (chi - clo)
        _, b0 = tr.legendre(Y, psi0, p, return_argmax=True)
        _, b1 = tr.legendre(Y, psi1, p, return_argmax=True)
        cut |= (b0 != a0) | (b1 != a1)
    cut_mass = math.fsum(m[cut])
    diamY = float(np.max(np.linalg.norm(Y[:, None] - Y[None], axis=2)))
    eps1 = diamY * float(np.linalg.norm(chi[0] - clo[0]))
    err_v = eps1 * (2 * math.sqrt(var) + eps1)
    err_p = float(dv.max() - dv.min()) * 2 * cut_mass
    return pairing, var, err_p, err_v, cut_mass


def audit_variance_inequality_convex(Q, rho: dens.DensityModel, targets, grid: int,
                                     two_resolution: bool = True) -> ConvexAudit:
    """Audit of the pairing lower bound for finitely supported targets.

    ``targets`` is (Y, psi0, psi1). The tolerance is a rigorous discretization
    bound: the pairing is exact on cells where the maximizing index is
    constant, and the variance moves by at most eps (2 sd + eps) with
    eps = diam(Y) * cell diameter.
    """
    lo, hi = geo.box_of(Q) if geo.box_of(Q) is not None else Q
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    Y, psi0, psi1 = targets
    Y = np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    psi0 = np.asarray(psi0, float).reshape(-1)
    psi1 = np.asarray(psi1, float).reshape(-1)
    if not (len(Y) == len(psi0) == len(psi1)) or Y.shape[1] != len(lo):
        raise ConfigError("targets: Y, psi0 and psi1 must have matching shapes")
    lo_r, hi_r = rho.density_bounds(geo.AxisBox(lo, hi))
    R = float(np.linalg.norm(Y, axis=1).max())
    diamQ = float(np.linalg.norm(hi - lo))
    if len(Y) == 1 or R == 0.0:
        # a single target: both sides vanish
        return ConvexAudit(0.0, 0.0, True, math.inf, 0.0, 0.0, grid, 0.0)
    c = math.exp(-1.0) * (lo_r / hi_r) / (R * diamQ)
    pairing, var, err_p, err_v, cut = _convex_once(lo, hi, rho, Y, psi0, psi1, grid)
    tol = err_p + c * err_v
    out = ConvexAudit(pairing, c * var, bool(pairing >= c * var - tol), c, var, tol, grid, cut)
    if two_resolution:
        out.fine = audit_variance_inequality_convex((lo, hi), rho, (Y, psi0, psi1), 2 * grid, False)
        out.passed = out.passed and out.fine.passed
    return out


# ---------------------------------------------------------------------------
# exponents


def cauchy_theta(d: int, beta: float) -> float:
    if not beta > d + 2:
        raise ConfigError("need beta > d + 2")
    return 0.5 * (1.0 - 2.0 / (beta - d))


def cauchy_theta_map(d: int, beta: float) -> float:
    if not beta > d + 2:
        raise ConfigError("need beta > d + 2")
    return (beta - d - 2.0) / (8.0 * beta - 2.0 * d - 4.0)


def boundary_delta_prime(delta: float) -> float:
    if not delta > -1:
        raise ConfigError("need delta > -1")
    return abs(delta) / 6.0 if delta <= 0 else delta / (12.0 * (1.0 + delta))


def boundary_map_exponent(delta: float) -> float:
    return 1.0 / 6.0 - boundary_delta_prime(delta)


def spherical_map_exponent(d: int) -> float:
    return 1.0 / (6.0 * d)


LOG_CONCAVE_MAP_EXPONENT = 1.0 / 9.0
JOHN_MAP_EXPONENT = 1.0 / 6.0


def theoretical_exponents(tag: str, **p) -> dict:
    """Reference exponents of W_1 for the potential gap and the map gap."""
    if tag in ("uniform-box", "L-shape", "dumbbell"):
        return {"potential": 0.5, "map": JOHN_MAP_EXPONENT, "log_power": 0.0}
    if tag == "boundary-power":
        return {"potential": 0.5, "map": boundary_map_exponent(p.get("delta", 0.0)), "log_power": 0.0}
    if tag == "spherical-uniform":
        return {"potential": 0.5, "map": spherical_map_exponent(p.get("dim", 2)), "log_power": 0.0}
    if tag == "gaussian":
        return {"potential": 0.5, "map": LOG_CONCAVE_MAP_EXPONENT, "log_power": 0.5}
    if tag == "cauchy":
        d, b = p.get("dim", 1), p["beta"]
        return {"potential": cauchy_theta(d, b), "map": cauchy_theta_map(d, b), "log_power": 0.0}
    raise ConfigError(f"family: unknown tag {tag!r}")


FAMILIES = ("uniform-box", "L-shape", "dumbbell", "boundary-power", "spherical-uniform", "gaussian",
            "cauchy")


def family_source(cfg: dict):
    """(rho, discretization box, tag, params) for a family description."""
    if isinstance(cfg, str):
        cfg = {"family": cfg}
    tag = cfg.get("family")
    d = int(cfg.get("dim", 1))
    if tag == "uniform-box":
        dom = geo.Box([0.0] * d, [1.0] * d)
        rho = dens.UniformOnDomain(dom)
    elif tag == "L-shape":
        dom = geo.LShape()
        d = 2
        rho = dens.UniformOnDomain(dom)
    elif tag == "dumbbell":
        d = int(cfg.get("dim", 2))
        dom = geo.Dumbbell(eps=float(cfg.get("eps", 0.1)), dim=d)
        rho = dens.UniformOnDomain(dom)
    elif tag == "boundary-power":
        dom = geo.Box([0.0] * d, [1.0] * d)
        rho = dens.BoundaryPower(dom, float(cfg.get("delta", 1.0)))
    elif tag == "spherical-uniform":
        d = int(cfg.get("dim", 2))
        rho = dens.SphericalUniform(d)
        dom = None
    elif tag == "gaussian":
        rho = dens.LogConcave(d, float(cfg.get("kappa", 1.0)))
        dom = None
    elif tag == "cauchy":
        rho = dens.GeneralizedCauchy(d, float(cfg.get("beta", 5.0)))
        dom = None
    else:
        raise ConfigError(f"family: unknown tag {tag!r}; expected one of {', '.join(FAMILIES)}")
    if dom is not None:
        lo, hi = dom.bbox()
    else:
        r = float(cfg.get("radius", {"spherical-uniform": 1.0, "gaussian": 6.0, "cauchy": 64.0}[tag]))
        lo, hi = np.full(d, -r), np.full(d, r)
    params = {k: v for k, v in cfg.items() if k != "family"}
    params["dim"] = d
    return rho, (np.asarray(lo, float), np.asarray(hi, float)), tag, params


def trial_rng(seed: int, scale: int, trial: int) -> np.random.Generator:
    """Counter-based stream for one (scale, trial) cell."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(scale), int(trial)))
    return np.random.Generator(np.random.Philox(ss))


def unit_ball(rng, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((n, 1)) ** (1.0 / d)


def perturbed_pair(rng, k: int, d: int, s: float, variant: str = "shift"):
    """mu: k uniform atoms in B(0, 1); nu: mu displaced by radius-s steps."""
    x = unit_ball(rng, k, d)
    mu = DiscreteMeasure.uniform(x)
    if variant == "shift":
        nu = DiscreteMeasure.uniform(x + s * unit_ball(rng, k, d))
    elif variant == "split":
        y = np.concatenate([x + s * unit_ball(rng, k, d), x + s * unit_ball(rng, k, d)])
        nu = DiscreteMeasure.uniform(y)
    else:
        raise ConfigError(f"variant: unknown {variant!r}")
    return mu, nu


@dataclass
class PairRecord:
    scale: float
    trial: int
    w1: float
    w2: float
    potential_gap: float
    map_gap: float
    grid: int
    rel_change: float
    resolved: bool
    cell_diameter: float

    def row(self) -> list:
        return [self.scale, self.trial, self.w1, self.w2, self.potential_gap, self.map_gap, self.grid,
                self.rel_change, int(self.resolved), self.cell_diameter]


PAIR_COLUMNS = ["scale", "trial", "w1", "w2", "potential_gap", "map_gap", "grid", "rel_change", "resolved",
                "cell_diameter"]


@dataclass
class ExponentFit:
    family: str
    pairs: list
    potential_slope: float
    potential_intercept: float
    map_slope: float
    map_intercept: float
    theory: dict
    residual_std: dict
    resolutions: list
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"family": self.family, "params": self.params, "n_pairs": len(self.pairs),
                "fit": {"potential_slope": self.potential_slope,
                        "potential_intercept": self.potential_intercept,
                        "map_slope": self.map_slope, "map_intercept": self.map_intercept,
                        "residual_std": self.residual_std},
                "theory": self.theory, "resolutions": self.resolutions,
                "unresolved_pairs": sum(not p.resolved for p in self.pairs)}


def _gaps(src: DiscreteMeasure, mu: DiscreteMeasure, nu: DiscreteMeasure):
    a = tr.brenier_potential(tr.solve_ot(src, mu), src, mu)
    b = tr.brenier_potential(tr.solve_ot(src, nu), src, nu)
    w = src.masses
    pg = math.sqrt(max(math.fsum(w * (a.values - b.values) ** 2), 0.0))
    mg = math.sqrt(max(math.fsum(w * ((a.map - b.map) ** 2).sum(axis=1)), 0.0))
    return pg, mg


def _loglog(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan, math.nan, math.nan
    lx, ly = np.log(x[ok]), np.log(y[ok])
    slope, icpt = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + icpt)
    return float(slope), float(icpt), float(res.std())


def fit_exponent(family, scales, trials: int, seed: int = 0, k: int = 30, grid: int = 1024,
                 variant: str = "shift", max_refine: int = 1, threads: int = 1) -> ExponentFit:
    """Log-log fits of potential and map gaps against W_1 for perturbed targets.

    Each gap is computed at grid n and 2n; the pair counts as resolved when
    the potential gap changes by less than 5%, otherwise the grid is doubled
    up to ``max_refine`` more times. The finest value is recorded.
    """
    scales = [float(s) for s in scales]
    if len(scales) < 3:
        raise InsufficientScales(f"need at least 3 scales (got {len(scales)})")
    if any(s <= 0 for s in scales):
        raise ConfigError("scales must be positive")
    rho, box, tag, params = family_source(family)
    d = params["dim"]
    grids = [int(grid) * 2 ** j for j in range(max_refine + 2)]
    grids = [g for g in grids if g ** d <= dens.MAX_ATOMS] or [int(grid)]
    cache = {}

    def source(g):
        if g not in cache:
            cache[g] = dens.discretize(rho, box, g, rel_tol=1e-9)
        return cache[g]

    for g in grids[:2]:
        source(g)

    def one(job):
        si, t = job
        s = scales[si]
        rng = trial_rng(seed, si, t)
        mu, nu = perturbed_pair(rng, k, d, s, variant)
        w1 = tr.wasserstein(1, mu, nu)
        w2 = tr.wasserstein(2, mu, nu)
        prev = None
        rel, ok, used, pg, mg = math.inf, False, grids[0], math.nan, math.nan
        for g in grids:
            pg, mg = _gaps(source(g), mu, nu)
            used = g
            if prev is not None:
                rel = abs(pg - prev) / max(pg, 1e-300)
                if rel < 0.05:
                    ok = True
                    break
            prev = pg
        h = float(np.linalg.norm((box[1] - box[0]) / used))
        return PairRecord(s, t, w1, w2, pg, mg, used, rel, ok, h)

    jobs = [(si, t) for si in range(len(scales)) for t in range(int(trials))]
    if threads > 1:
        for g in grids:
            source(g)
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            pairs = list(ex.map(one, jobs))
    else:
        pairs = [one(j) for j in jobs]
    pairs.sort(key=lambda p: (p.w1, p.scale, p.trial))
    w1 = [p.w1 for p in pairs]
    ps, pi, pr = _loglog(w1, [p.potential_gap for p in pairs])
    ms, mi, mr = _loglog(w1, [p.map_gap for p in pairs])
    return ExponentFit(tag, pairs, ps, pi, ms, mi, theoretical_exponents(tag, **params),
                       {"potential": pr, "map": mr}, sorted({p.grid for p in pairs}), params)


# ---------------------------------------------------------------------------
# sharpness families


def _radial_marginal(rho, s):
    d = rho.dim
    return dens._sphere_area(d) * s ** (d - 1) * float(rho.radial_pdf(s))


def _survival(rho, r):
    if isinstance(rho, dens.GeneralizedCauchy):
        return rho.radial_tail(r)
    return dens.tail_moment(rho, 0, r)


def radial_test_gap(rho, r: float, r2: float):
    """(c_r, ||phi_r2 - phi_r||_{L^2(rho)}) for phi_r = max(|x| - r, 0) - c_r."""
    S2 = _survival(rho, r2)
    kw = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    j1, _ = integrate.quad(lambda s: (s - r) * _radial_marginal(rho, s), r, r2, **kw)
    j2, _ = integrate.quad(lambda s: (s - r) ** 2 * _radial_marginal(rho, s), r, r2, **kw)
    eh = -(j1 + (r2 - r) * S2)
    eh2 = j2 + (r2 - r) ** 2 * S2
    cr = dens.tail_moment(rho, 1, r) - r * _survival(rho, r)
    return cr, math.sqrt(max(eh2 - eh * eh, 0.0))


def solver_w1_check(rho, r: float, r2: float, half_width: float = 256.0, grid: int = 2048) -> float:
    """W_1 between the discretized pushforwards under grad phi_r and grad phi_r2."""
    d = rho.dim
    box = (np.full(d, -half_width), np.full(d, half_width))
    src = dens.discretize(rho, box, grid, rel_tol=1e-10)

    def grad(rr):
        def f(x):
            n = np.linalg.norm(x, axis=1, keepdims=True)
            return np.where(n > rr, x / np.where(n > 0, n, 1.0), 0.0)
        return f

    a = tr.pushforward(grad(r), src)
    b = tr.pushforward(grad(r2), src)
    return tr.solve_ot(a, b, "euclidean").primal_cost


@dataclass
class SharpnessTable:
    kind: str
    radii: list
    r_prime: list
    c_r: list
    gaps: list
    w1: list
    rates: list
    ratios: list
    slope: float
    band: float
    theta: float | None
    ball_mass: list
    solver_w1: list = field(default_factory=list)
    solver_rel_err: list = field(default_factory=list)

    COLUMNS = ["r", "r_prime", "c_r", "gap", "w1", "rate", "ratio", "ball_mass", "solver_w1", "solver_rel_err"]

    def rows(self) -> list:
        n = len(self.radii)
        sw = self.solver_w1 or [math.nan] * n
        se = self.solver_rel_err or [math.nan] * n
        return [list(t) for t in zip(self.radii, self.r_prime, self.c_r, self.gaps, self.w1, self.rates,
                                     self.ratios, self.ball_mass, sw, se)]

    def to_json(self) -> dict:
        return {"kind": self.kind, "theta": self.theta, "slope": self.slope, "band": self.band,
                "ratios": self.ratios, "solver_rel_err": self.solver_rel_err}


def sharpness_family(kind: str, rho, radii, check_grid: int | None = None,
                     check_half_width: float = 256.0) -> SharpnessTable:
    radii = [float(r) for r in radii]
    if not getattr(rho, "radial", False):
        raise ConfigError("sharpness families need a radial density")
    if kind == "cauchy":
        if not isinstance(rho, dens.GeneralizedCauchy):
            raise ConfigError("kind cauchy needs a generalized Cauchy density")
        theta = cauchy_theta(rho.dim, rho.beta)
        rp = [2.0 * r for r in radii]
        rate = lambda w: w ** theta
    elif kind == "gaussian":
        if not isinstance(rho, dens.LogConcave):
            raise ConfigError("kind gaussian needs a Gaussian density")
        theta = None
        rp = [r + 1.0 / r for r in radii]
        rate = lambda w: math.sqrt(w) / abs(math.log(w))
    else:
        raise ConfigError(f"kind: unknown {kind!r}")
    ball = [rho.radial_cdf(r) for r in radii]
    if min(ball) < 0.5:
        warnings.warn(f"rho(B_r) = {min(ball):.3g} < 1/2 at r = {radii[int(np.argmin(ball))]}", RadiiTooSmall)
    cs, gaps, w1s, rates, ratios = [], [], [], [], []
    for r, r2 in zip(radii, rp):
        c, gap = radial_test_gap(rho, r, r2)
        w = _survival(rho, r) - _survival(rho, r2)
        cs.append(c)
        gaps.append(gap)
        w1s.append(w)
        rates.append(rate(w))
        ratios.append(gap / rate(w))
    slope, _, _ = _loglog(w1s, gaps)
    tab = SharpnessTable(kind, radii, rp, cs, gaps, w1s, rates, ratios, slope, max(ratios) / min(ratios),
                         theta, ball)
    if check_grid:
        for r, r2, w in zip(radii, rp, w1s):
            sw = solver_w1_check(rho, r, r2, check_half_width, check_grid)
            tab.solver_w1.append(sw)
            tab.solver_rel_err.append(abs(sw - w) / w)
    return tab


# ---------------------------------------------------------------------------
# room-and-passage counterexample


DEFAULT_SCHEDULE = {"side_ratio": 4.0, "length_ratio": 4.0, "height_base": 2.0}


def _schedule(params):
    p = dict(DEFAULT_SCHEDULE)
    p.update(params or {})
    a, b, c = (mpmath.mpf(p[k]) for k in ("side_ratio", "length_ratio", "height_base"))
    side = lambda n: a ** (1 - n)
    length = lambda n: b ** (-n)
    height = lambda n: mpmath.exp(-(c ** n))
    return side, length, height, p


@dataclass
class CounterexampleTable:
    n: list
    t: list
    t_prime: list
    v: list
    w: list
    passage_mass: list
    variance: list
    variance_closed_form: list
    lower_bound: list
    ratios: dict  # (p, q) -> list
    eq_sum_error: list
    decreasing: dict
    schedule_ok: dict
    params: dict

    def rows(self) -> list:
        keys = sorted(self.ratios)
        out = []
        for i, n in enumerate(self.n):
            out.append([n, self.t[i], self.t_prime[i], self.v[i], self.w[i], self.passage_mass[i],
                        self.variance[i], self.variance_closed_form[i], self.lower_bound[i],
                        self.eq_sum_error[i]] + [self.ratios[k][i] for k in keys])
        return out

    def columns(self) -> list:
        return (["n", "t", "t_prime", "v", "w", "passage_mass", "variance", "variance_closed_form",
                 "lower_bound", "sum_error"] + [f"ratio_p{p:g}_q{q:g}" for p, q in sorted(self.ratios)])

    def to_json(self) -> dict:
        return {"params": self.params,
                "decreasing": {f"p={p:g},q={q:g}": v for (p, q), v in sorted(self.decreasing.items())},
                "schedule_decreasing": {f"{k:g}": v for k, v in self.schedule_ok.items()},
                "max_sum_error": max(self.eq_sum_error),
                "lower_bound_holds": all(a >= b for a, b in zip(self.variance, self.lower_bound))}


def counterexample_run(params=None, n_max: int = 6, pq_list=((1, 1), (2, 1), (1, 2)), extra_rooms: int = 20,
                       dps: int = 60, n_min: int = 2) -> CounterexampleTable:
    """Potential differences |x1 - t'_n| - |x1 - t_n| on the room/passage domain.

    rho is the normalized area measure. The variance is integrated piece by
    piece with mpmath quadrature and compared with the closed form in v_n, w_n
    and rho(P_n).
    """
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    side, length, height, p = _schedule(params)
    N = int(n_max) + int(extra_rooms) + 1
    with mpmath.workdps(dps):
        total = mpmath.fsum(side(n) for n in range(1, N + 1)) + mpmath.fsum(length(n) for n in range(1, N))
        rects, t, tp, x = [], [], [], -total / 2
        for n in range(1, N + 1):
            a = side(n)
            rects.append((x, x + a, a, "room", n))
            x += a
            if n < N:
                ell, h = length(n), height(n)
                t.append(x)
                tp.append(x + ell)
                rects.append((x, x + ell, h, "passage", n))
                x += ell
        vol = mpmath.fsum(r[2] * (r[1] - r[0]) for r in rects)

        def integral(fn, lo_cut=None, hi_cut=None, pts=()):
            total = mpmath.mpf(0)
            for a, b, hgt, _, _ in rects:
                lo = a if lo_cut is None else max(a, lo_cut)
                hi = b if hi_cut is None else min(b, hi_cut)
                if hi <= lo:
                    continue
                br = [lo] + [q for q in pts if lo < q < hi] + [hi]
                total += hgt * mpmath.quad(fn, br)
            return total / vol

        rows = {k: [] for k in ("n", "t", "tp", "v", "w", "p", "var", "var_cf", "lb", "err")}
        ratios = {tuple(pq): [] for pq in pq_list}
        one = lambda s: mpmath.mpf(1)
        for n in range(1, int(n_max) + 1):
            tn, tpn = t[n - 1], tp[n - 1]
            D = tpn - tn
            f = lambda s, tn=tn, tpn=tpn: abs(s - tpn) - abs(s - tn)
            m1 = integral(f, pts=(tn, tpn))
            m2 = integral(lambda s: f(s) ** 2, pts=(tn, tpn))
            var = m2 - m1 * m1
            v = integral(one, hi_cut=tn)
            w = integral(one, lo_cut=tpn)
            pn = height(n) * D / vol
            var_cf = D * D * (4 * w - 4 * w * w + 4 * pn / 3 - 4 * w * pn - pn * pn)
            room_next = side(n + 1) ** 2 / vol
            rows["n"].append(n)
            rows["t"].append(float(tn))
            rows["tp"].append(float(tpn))
            rows["v"].append(float(v))
            rows["w"].append(float(w))
            rows["p"].append(float(pn))
            rows["var"].append(var)
            rows["var_cf"].append(var_cf)
            rows["lb"].append(D * D * (room_next - pn))
            rows["err"].append(float(abs(v + w + pn - 1)))
            for pp, q in ratios:
                wp = 2 * pn ** (mpmath.mpf(1) / pp)
                ratios[(pp, q)].append(wp ** q / var)
        # heights against the room areas, for a few exponents
        sched = {}
        for delta in (1.0, 0.1, 0.01):
            vals = [height(n) ** delta / (length(n) ** 2 * side(n + 1) ** 2) for n in range(1, int(n_max) + 1)]
            sched[delta] = all(b < a for a, b in zip(vals, vals[1:]))
        dec = {}
        for k, vals in ratios.items():
            seq = [vals[i] for i, n in enumerate(rows["n"]) if n >= n_min]
            dec[k] = all(b < a for a, b in zip(seq, seq[1:]))
        if not all(sched.values()):
            bad = [k for k, ok in sched.items() if not ok]
            warnings.warn(f"height schedule ratio not decreasing over n <= {n_max} for delta in {bad}",
                          ScheduleWarning)
        tofl = lambda xs: [float(x) for x in xs]
        return CounterexampleTable(rows["n"], rows["t"], rows["tp"], rows["v"], rows["w"], rows["p"],
                                   tofl(rows["var"]), tofl(rows["var_cf"]), tofl(rows["lb"]),
                                   {k: tofl(v) for k, v in ratios.items()}, rows["err"], dec, sched,
                                   {**p, "n_max": int(n_max), "rooms": N})
