"""Source densities, mass quadrature, tail moments and discretization.

Box integrals use a global adaptive cubature: tensor Gauss-Legendre on each
leaf box, error estimated by comparing a leaf against its 2^d children, and
the leaves with the largest error share are bisected until the summed error
estimate meets the tolerance. Densities with integrable singularities supply
closed forms on the leaves touching the singular set, which grades the
refinement toward it without ever sampling the singularity.

Radially symmetric densities integrate balls and orthant sectors through
their radial distribution function rho(B_r).
"""

from __future__ import annotations

import itertools
import math
import warnings
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special

from . import geometry as geo
from .errors import ConfigError, InfiniteMoment, NonConvergent, TooManyAtoms, ZeroMassRegion
from .measures import DiscreteMeasure, normalize_masses

MAX_ATOMS = 10 ** 5


# ---------------------------------------------------------------------------
# adaptive cubature


@lru_cache(maxsize=None)
def _tensor_rule(d: int, q: int):
    t, w = np.polynomial.legendre.leggauss(q)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    nodes = np.array(list(itertools.product(t, repeat=d)))
    weights = np.array([np.prod(c) for c in itertools.product(w, repeat=d)])
    return nodes, weights


@lru_cache(maxsize=None)
def _corners(d: int):
    return np.array(list(itertools.product((0.0, 1.0), repeat=d)))


def _split(lo, hi):
    """Bisect each box into 2^d children; returns arrays (n * 2^d, d)."""
    d = lo.shape[1]
    half = 0.5 * (hi - lo)
    c = _corners(d)
    clo = lo[:, None, :] + c[None] * half[:, None, :]
    return clo.reshape(-1, d), (clo + half[:, None, :]).reshape(-1, d)


class _Rule:
    def __init__(self, func, d, q, moments):
        self.func, self.d, self.moments = func, d, moments
        self.nodes, self.weights = _tensor_rule(d, q)

    def __call__(self, lo, hi):
        n, d = lo.shape
        ext = hi - lo
        vol = ext.prod(axis=1)
        pts = lo[:, None, :] + self.nodes[None] * ext[:, None, :]
        vals = np.asarray(self.func(pts.reshape(-1, d)), dtype=float).reshape(n, -1)
        wv = vals * self.weights[None]
        mass = vol * wv.sum(axis=1)
        if not self.moments:
            return mass, None
        mom = vol[:, None] * np.einsum("nk,nkd->nd", wv, pts)
        return mass, mom


def integrate_boxes(func: Callable, lo, hi, rel_tol: float = 1e-6, abs_tol: float = 0.0,
                    order: int = 4, max_depth: int = 22, exact=None, moments: bool = False,
                    max_leaves: int = 400_000, strict: bool = True):
    """Integrate ``func`` over a batch of boxes.

    ``exact(lo, hi)`` may return ``(mask, mass, moment)`` giving closed-form
    values on some leaves (``moment`` may be None when ``moments`` is off).
    Returns ``(mass, first_moment or None, error_estimate, converged)``.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    B, d = lo.shape
    rule = _Rule(func, d, order, moments)
    nc = 2 ** d

    def evaluate(blo, bhi):
        # coarse estimate of each box and the sum over its children
        coarse, cmom = rule(blo, bhi)
        klo, khi = _split(blo, bhi)
        kmass, kmom = rule(klo, khi)
        kmass = kmass.reshape(-1, nc)
        fine = kmass.sum(axis=1)
        fmom = kmom.reshape(-1, nc, d).sum(axis=1) if moments else None
        err = np.abs(fine - coarse)
        ex_mask = np.zeros(len(blo), dtype=bool)
        if exact is not None:
            ex_mask, ex_mass, ex_mom = exact(blo, bhi)
            ex_mask = np.asarray(ex_mask, dtype=bool)
            if moments and ex_mom is None:
                ex_mask[:] = False
            if ex_mask.any():
                fine = np.where(ex_mask, ex_mass, fine)
                if moments:
                    fmom = np.where(ex_mask[:, None], ex_mom, fmom)
                err = np.where(ex_mask, 0.0, err)
        return fine, fmom, err, ex_mask

    root = np.arange(B)
    fine, fmom, err, frozen = evaluate(lo, hi)
    depth = np.zeros(B, dtype=int)
    vol_root = (hi - lo).prod(axis=1)
    cur_lo, cur_hi = lo, hi
    converged = np.ones(B, dtype=bool)
    while True:
        tot = np.bincount(root, weights=fine, minlength=B)
        etot = np.bincount(root, weights=err, minlength=B)
        tol = np.maximum(rel_tol * np.abs(tot), abs_tol)
        bad = etot > tol
        if not bad.any():
            break
        cand = bad[root] & (err > 0) & ~frozen
        cand_deep = cand & (depth >= max_depth)
        if cand_deep.any():
            converged[np.unique(root[cand_deep])] = False
        cand &= depth < max_depth
        if not cand.any():
            converged[bad] = False
            break
        vol = (cur_hi - cur_lo).prod(axis=1)
        share = tol[root] * vol / np.where(vol_root[root] > 0, vol_root[root], 1.0)
        emax = np.zeros(B)
        np.maximum.at(emax, root[cand], err[cand])
        split = cand & ((err > share) | (err >= 0.5 * emax[root]))
        if len(fine) + split.sum() * (nc - 1) > max_leaves:
            converged[np.unique(root[split])] = False
            break
        keep = ~split
        slo, shi = _split(cur_lo[split], cur_hi[split])
        nfine, nmom, nerr, nfrozen = evaluate(slo, shi)
        nroot = np.repeat(root[split], nc)
        ndepth = np.repeat(depth[split] + 1, nc)
        cur_lo = np.concatenate([cur_lo[keep], slo])
        cur_hi = np.concatenate([cur_hi[keep], shi])
        fine = np.concatenate([fine[keep], nfine])
        err = np.concatenate([err[keep], nerr])
        frozen = np.concatenate([frozen[keep], nfrozen])
        root = np.concatenate([root[keep], nroot])
        depth = np.concatenate([depth[keep], ndepth])
        if moments:
            fmom = np.concatenate([fmom[keep], nmom])
    total = np.bincount(root, weights=fine, minlength=B)
    etot = np.bincount(root, weights=err, minlength=B)
    mom = None
    if moments:
        mom = np.stack([np.bincount(root, weights=fmom[:, j], minlength=B) for j in range(d)], axis=1)
    if strict and not converged.all():
        raise NonConvergent(
            f"adaptive quadrature did not reach rel_tol={rel_tol:g} on {int((~converged).sum())} box(es)")
    return total, mom, etot, converged


# ---------------------------------------------------------------------------
# density families


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


class DensityModel:
    family = "density"
    dim: int
    radial = False  # rotation invariant about the origin

    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def support_bbox(self):
        """Bounding box of the support (may be infinite)."""
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    # hooks for quadrature
    def _exact(self):
        return None

    def box_masses(self, lo, hi, rel_tol=1e-6, moments=False, strict=True, abs_tol=0.0):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        slo, shi = self.support_bbox()
        clo = np.maximum(lo, slo)
        chi = np.minimum(hi, shi)
        empty = np.any(chi <= clo, axis=1)
        mass = np.zeros(len(lo))
        mom = np.zeros((len(lo), self.dim)) if moments else None
        if (~empty).any():
            m, mo, _, _ = integrate_boxes(self.evaluate, clo[~empty], chi[~empty], rel_tol=rel_tol,
                                          abs_tol=abs_tol, exact=self._exact(), moments=moments,
                                          strict=strict)
            mass[~empty] = m
            if moments:
                mom[~empty] = mo
        return (mass, mom) if moments else mass

    # radial interface
    def radial_pdf(self, s):
        raise NotImplementedError

    def radial_cdf(self, r) -> float:
        """rho(B(0, r))."""
        raise NotImplementedError

    def density_bounds(self, region) -> tuple[float, float]:
        """(inf, sup) of the density over ``region``."""
        if not self.radial:
            raise NotImplementedError
        # radial profiles here are non-increasing
        rmin, rmax = radial_extent(region)
        return float(self.radial_pdf(rmax)), float(self.radial_pdf(rmin))

    def params(self) -> dict:
        return {}

    def to_json(self) -> dict:
        return {"family": self.family, "params": self.params()}


class UniformOnDomain(DensityModel):
    family = "uniform"

    def __init__(self, dom: geo.Domain):
        self.domain = dom
        self.dim = dom.dim
        self.volume = dom.volume
        if not self.volume > 0:
            raise ConfigError("uniform density needs a domain of positive volume")
        self.value = 1.0 / self.volume
        self.radial = isinstance(dom, geo.Ball) and not np.any(dom.center) and type(dom) is geo.Ball

    def evaluate(self, x):
        return np.where(self.domain.contains(x), self.value, 0.0)

    def support_bbox(self):
        return self.domain.bbox()

    def _exact(self):
        dom = self.domain

        def rule(lo, hi):
            inside = dom.box_complement_distance(lo, hi) > 0
            outside = ~dom.box_intersects(lo, hi)
            mask = inside | outside
            vol = (hi - lo).prod(axis=1)
            mass = np.where(inside, vol * self.value, 0.0)
            mom = mass[:, None] * 0.5 * (lo + hi)
            return mask, mass, mom
        return rule

    def box_masses(self, lo, hi, rel_tol=1e-6, moments=False, strict=True, abs_tol=0.0):
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        vol = self.domain.box_inside_volume(lo, hi)
        if vol is None:
            return super().box_masses(lo, hi, rel_tol, moments, strict, abs_tol)
        mass = vol * self.value
        if not moments:
            return mass
        if isinstance(self.domain, geo.BoxUnion):
            mom = np.array([self.domain.box_inside_moments(a, b)[1] for a, b in zip(lo, hi)])
        else:
            dlo, dhi = self.domain.bbox()
            mom = 0.5 * (np.clip(lo, dlo, dhi) + np.clip(hi, dlo, dhi))
        return mass, mass[:, None] * mom

    def radial_cdf(self, r):
        R = self.domain.radius
        return min(float(r) / R, 1.0) ** self.dim

    def radial_pdf(self, s):
        return np.where(np.asarray(s) < self.domain.radius, self.value, 0.0)

    def density_bounds(self, region=None):
        return self.value, self.value

    def params(self):
        return {"domain": self.domain.to_json()}


class LogConcave(DensityModel):
    """rho proportional to exp(-U - F) with U = sum_i kappa_i x_i^2 / 2."""

    family = "gaussian"

    def __init__(self, dim: int, kappa=1.0, F: Callable | None = None, F_sup: float = 0.0):
        self.dim = int(dim)
        k = np.broadcast_to(np.asarray(kappa, dtype=float), (self.dim,)).copy()
        if np.any(k <= 0):
            raise ConfigError("kappa must be positive")
        self.kappa = k
        self.F, self.F_sup = F, float(F_sup)
        self.radial = F is None and np.all(k == k[0])
        self._z = math.prod(math.sqrt(2 * math.pi / v) for v in k)
        if F is not None:
            L = 12.0 / math.sqrt(k.min())
            raw, _, _, _ = integrate_boxes(lambda x: np.exp(-0.5 * (x * x) @ k - F(x)) / self._z,
                                           -np.full((1, self.dim), L), np.full((1, self.dim), L),
                                           rel_tol=1e-9)
            self._z *= raw[0]

    def evaluate(self, x):
        x = np.atleast_2d(x)
        e = -0.5 * (x * x) @ self.kappa
        if self.F is not None:
            e = e - self.F(x)
        return np.exp(e) / self._z

    def box_masses(self, lo, hi, rel_tol=1e-6, moments=False, strict=True, abs_tol=0.0):
        if self.F is not None:
            return super().box_masses(lo, hi, rel_tol, moments, strict, abs_tol)
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        s = np.sqrt(self.kappa)
        a, b = lo * s, hi * s
        # per-axis mass with cancellation-free tails
        p = np.where(a >= 0, 0.5 * (special.erfc(a / math.sqrt(2)) - special.erfc(b / math.sqrt(2))),
                     0.5 * (special.erfc(-b / math.sqrt(2)) - special.erfc(-a / math.sqrt(2))))
        mass = p.prod(axis=1)
        if not moments:
            return mass
        phi = lambda t: np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
        m1 = (phi(a) - phi(b)) / s  # per-axis first moment
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(p > 0, m1 / p, 0.5 * (lo + hi))
        return mass, mass[:, None] * cond

    def radial_cdf(self, r):
        return float(special.gammainc(self.dim / 2, 0.5 * self.kappa[0] * float(r) ** 2))

    def radial_pdf(self, s):
        s = np.asarray(s, float)
        return np.exp(-0.5 * self.kappa[0] * s * s) / self._z

    def density_bounds(self, region):
        lo, hi = geo.box_of(region) if geo.box_of(region) is not None else region.bbox()
        near = np.maximum(np.maximum(lo, -hi), 0.0)
        far = np.maximum(np.abs(lo), np.abs(hi))
        return (float(np.exp(-0.5 * (far ** 2) @ self.kappa - self.F_sup) / self._z),
                float(np.exp(-0.5 * (near ** 2) @ self.kappa + self.F_sup) / self._z))

    def params(self):
        return {"dim": self.dim, "kappa": self.kappa.tolist()}


def _power_integral(coef, delta, ta, tb):
    """Integral over [ta, tb] of t^delta * sum_i coef[i] t^i."""
    e = delta + 1.0 + np.arange(len(coef))
    return float(np.sum(coef * (tb ** e - ta ** e) / e))


def _box_power_moments(dlo, dhi, delta, lo, hi, moments=False):
    """Exact mass and first moment of dist(x, boundary)^delta over sub-boxes of a box domain.

    In the box, dist(x) = min_j u_j with u_j = min(x_j - dlo_j, dhi_j - x_j).
    Splitting each axis at the domain midpoint makes every u_j affine, and
    G(t) = volume{min_j u_j > t} is then a piecewise polynomial, so that the
    integral of h(min u) is the Stieltjes integral of h against -dG.
    """
    P = np.polynomial.polynomial
    n, d = lo.shape
    mid = 0.5 * (dlo + dhi)
    mass = np.zeros(n)
    mom = np.zeros((n, d))
    for r in range(n):
        a = np.maximum(lo[r], dlo)
        b = np.minimum(hi[r], dhi)
        if np.any(b <= a):
            continue
        pieces = []
        for j in range(d):
            pj = []
            if a[j] < mid[j]:
                pj.append((a[j] - dlo[j], min(b[j], mid[j]) - dlo[j], dlo[j], 1.0))
            if b[j] > mid[j]:
                pj.append((dhi[j] - b[j], dhi[j] - max(a[j], mid[j]), dhi[j], -1.0))
            pieces.append(pj)
        for combo in itertools.product(*pieces):
            p = np.array([c[0] for c in combo])
            q = np.array([c[1] for c in combo])
            if np.any(q <= p):
                continue
            top = q.min()
            br = np.unique(np.concatenate([[p.min()], p[p < top], [top]]))
            br = br[(br >= p.min()) & (br <= top)]
            m_r = 0.0
            fm = np.zeros(d)
            for ta, tb in zip(br[:-1], br[1:]):
                tm = 0.5 * (ta + tb)
                # Lambda_j(t) = q_j - max(p_j, t) and M_j(t) = (q_j^2 - max(p_j, t)^2) / 2
                lam = [np.array([q[j] - p[j]]) if tm < p[j] else np.array([q[j], -1.0])
                       for j in range(d)]
                G = np.array([1.0])
                for L in lam:
                    G = P.polymul(G, L)
                m_r += _power_integral(-P.polyder(G) if len(G) > 1 else np.zeros(1), delta, ta, tb)
                if moments:
                    for k in range(d):
                        Mk = (np.array([0.5 * (q[k] ** 2 - p[k] ** 2)]) if tm < p[k]
                              else np.array([0.5 * q[k] ** 2, 0.0, -0.5]))
                        Gk = Mk
                        for j in range(d):
                            if j != k:
                                Gk = P.polymul(Gk, lam[j])
                        dG = -P.polyder(Gk) if len(Gk) > 1 else np.zeros(1)
                        fm[k] += _power_integral(dG, delta, ta, tb)
            # the lowest breakpoint carries the atom G(t0-) - G(t0+) = 0, so
            # the Stieltjes sum is complete; map u back to x
            mass[r] += m_r
            if moments:
                base = np.array([c[2] for c in combo])
                sign = np.array([c[3] for c in combo])
                mom[r] += base * m_r + sign * fm
    return mass, mom


class BoundaryPower(DensityModel):
    """c * dist(x, boundary)^delta on a bounded domain, normalized."""

    family = "boundary_power"

    def __init__(self, dom: geo.Domain, delta: float):
        if not delta > -1:
            raise ConfigError("boundary-power exponent must satisfy delta > -1")
        self.domain, self.delta, self.dim = dom, float(delta), dom.dim
        self.c = 1.0
        lo, hi = dom.bbox()
        if isinstance(dom, geo.Box):
            raw, ok = _box_power_moments(dom.lo, dom.hi, self.delta, lo[None], hi[None])[0], True
        else:
            raw, _, _, conv = integrate_boxes(self._raw, lo[None], hi[None], rel_tol=1e-7,
                                              exact=self._outside_rule(), strict=False)
            ok = bool(conv[0])
        self.c = 1.0 / raw[0]
        self.normalization_converged = ok

    def _raw(self, x):
        d = self.domain.boundary_distance(x)
        inside = self.domain.contains(x)
        with np.errstate(divide="ignore"):
            return np.where(inside & (d > 0), np.power(np.where(d > 0, d, 1.0), self.delta), 0.0)

    def evaluate(self, x):
        return self.c * self._raw(x)

    def support_bbox(self):
        return self.domain.bbox()

    def _outside_rule(self):
        dom = self.domain

        def rule(lo, hi):
            outside = ~dom.box_intersects(lo, hi)
            return outside, np.zeros(len(lo)), np.zeros_like(lo)
        return rule

    def _exact(self):
        return self._outside_rule()

    def box_masses(self, lo, hi, rel_tol=1e-6, moments=False, strict=True, abs_tol=0.0):
        if not isinstance(self.domain, geo.Box):
            return super().box_masses(lo, hi, rel_tol, moments, strict, abs_tol)
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        m, mom = _box_power_moments(self.domain.lo, self.domain.hi, self.delta, lo, hi, moments)
        m = self.c * m
        return (m, self.c * mom) if moments else m

    def envelope(self):
        return self.c, self.c

    def density_bounds(self, region):
        lo, hi = geo.box_of(region)
        dmin = float(self.domain.box_complement_distance(lo[None], hi[None])[0])
        pts = geo._box_vertices(lo, hi)
        dmax = float(self.domain.boundary_distance(0.5 * (lo + hi)[None])[0]) + 0.5 * np.linalg.norm(hi - lo)
        dmax = max(dmax, float(self.domain.boundary_distance(pts).max()))
        vals = [self.c * dmin ** self.delta if dmin > 0 else (0.0 if self.delta > 0 else np.inf),
                self.c * dmax ** self.delta]
        return min(vals), max(vals)

    def params(self):
        return {"domain": self.domain.to_json(), "delta": self.delta}


def _inv_abs_2d(x, y):
    """H(x, y) = signed double antiderivative of 1/|z| vanishing on the axes."""
    ax, ay = np.abs(x), np.abs(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ax * np.arcsinh(np.where(ax > 0, ay / np.where(ax > 0, ax, 1), 0.0)) + \
            ay * np.arcsinh(np.where(ay > 0, ax / np.where(ay > 0, ay, 1), 0.0))
    return np.sign(x) * np.sign(y) * f


def _x_over_abs_2d(x, y):
    """Double antiderivative of x/|z| vanishing on the axes."""
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ax > 0, x * x * np.arcsinh(y / np.where(ax > 0, ax, 1.0)), 0.0)
    return 0.5 * (y * np.hypot(x, y) + t - y * np.abs(y))


def _y_over_abs_2d(x, y):
    return _x_over_abs_2d(y, x)


@lru_cache(maxsize=None)
def _smoothed_rule(q: int):
    """Nodes/weights on [0, 1] for x = t^3 (10 - 15 t + 6 t^2) composed with Gauss-Legendre."""
    t, w = np.polynomial.legendre.leggauss(q)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    x = t ** 3 * (10 - 15 * t + 6 * t * t)
    dx = 30 * t * t * (1 - t) ** 2
    return x, w * dx


class SphericalUniform(DensityModel):
    """c_d |x|^(1-d) on the unit ball, so that rho(B_r) = r."""

    family = "spherical_uniform"
    radial = True

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.c = 1.0 / _sphere_area(self.dim)
        self.domain = geo.PuncturedBall(np.zeros(self.dim), 1.0)

    def evaluate(self, x):
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)
        with np.errstate(divide="ignore"):
            v = self.c * np.power(np.where(r > 0, r, 1.0), 1 - self.dim)
        return np.where((r > 0) & (r < 1.0), v, 0.0)

    def support_bbox(self):
        return -np.ones(self.dim), np.ones(self.dim)

    def _exact(self):
        d = self.dim

        def rule(lo, hi):
            far = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)), axis=1)
            near = np.linalg.norm(np.maximum(np.maximum(lo, -hi), 0.0), axis=1)
            outside = near >= 1.0
            mass = np.zeros(len(lo))
            mask = outside.copy()
            if d == 2:
                inside = far <= 1.0
                v = (_inv_abs_2d(hi[:, 0], hi[:, 1]) - _inv_abs_2d(lo[:, 0], hi[:, 1]) -
                     _inv_abs_2d(hi[:, 0], lo[:, 1]) + _inv_abs_2d(lo[:, 0], lo[:, 1]))
                mass = np.where(inside, self.c * v, mass)
                mask |= inside
                return mask, mass, None
            return mask, mass, np.zeros_like(lo)
        return rule

    def box_masses(self, lo, hi, rel_tol=1e-6, moments=False, strict=True, abs_tol=0.0):
        if self.dim != 2:
            return super().box_masses(lo, hi, rel_tol, moments, strict, abs_tol)
        lo = np.clip(np.atleast_2d(np.asarray(lo, float)), -1.0, 1.0)
        hi = np.clip(np.atleast_2d(np.asarray(hi, float)), -1.0, 1.0)
        out = np.zeros((len(lo), 3))
        far = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)), axis=1)
        near = np.linalg.norm(np.maximum(np.maximum(lo, -hi), 0.0), axis=1)
        inside = far <= 1.0
        if inside.any():
            # boxes inside the disk: inclusion-exclusion of double antiderivatives
            a, b = lo[inside], hi[inside]
            for fn, col in ((_inv_abs_2d, 0), (_x_over_abs_2d, 1), (_y_over_abs_2d, 2)):
                out[inside, col] = self.c * (fn(b[:, 0], b[:, 1]) - fn(a[:, 0], b[:, 1]) -
                                             fn(b[:, 0], a[:, 1]) + fn(a[:, 0], a[:, 1]))
        cross = ~inside & (near < 1.0)
        for r in np.nonzero(cross)[0]:
            out[r] = self._box2(lo[r], hi[r], rel_tol)
        return (out[:, 0], out[:, 1:]) if moments else out[:, 0]

    def _box2(self, lo, hi, rel_tol):
        # inner integrals in y are closed form; the outer one runs over
        # segments between the singular abscissae with a smoothing change of
        # variables followed by Gauss-Legendre
        (a, c), (b, d) = lo, hi
        if b <= a or d <= c:
            return np.zeros(3)
        pts = [0.0] + [sg * math.sqrt(1 - v * v) for v in (c, d) if abs(v) < 1 for sg in (-1, 1)]
        edges = np.array([a] + sorted(p for p in pts if a < p < b) + [b])
        t, w = _smoothed_rule(96)
        u, v = edges[:-1, None], edges[1:, None]
        x = (u + (v - u) * t[None]).ravel()
        wx = ((v - u) * w[None]).ravel()
        s = np.sqrt(np.maximum(1.0 - x * x, 0.0))
        y1 = np.maximum(c, -s)
        y2 = np.minimum(d, s)
        ok = (y2 > y1) & (x != 0)
        ax = np.where(ok, np.abs(x), 1.0)
        m = np.where(ok, np.arcsinh(y2 / ax) - np.arcsinh(y1 / ax), 0.0)
        my = np.where(ok, np.hypot(x, y2) - np.hypot(x, y1), 0.0)
        return self.c * np.array([wx @ m, wx @ (x * m), wx @ my])

    def radial_pdf(self, s):
        s = np.asarray(s, float)
        with np.errstate(divide="ignore"):
            return np.where((s > 0) & (s < 1), self.c * np.power(np.where(s > 0, s, 1.0), 1 - self.dim), 0.0)

    def radial_cdf(self, r):
        return float(min(max(r, 0.0), 1.0))

    def density_bounds(self, region):
        rmin, rmax = radial_extent(region)
        rmax = min(rmax, 1.0 - 1e-300)
        rmin = min(rmin, rmax)
        with np.errstate(divide="ignore"):
            hi = self.c * rmin ** (1 - self.dim) if rmin > 0 else np.inf
        return float(self.c * rmax ** (1 - self.dim)), float(hi)

    def params(self):
        return {"dim": self.dim}


class GeneralizedCauchy(DensityModel):
    """c(x) (1 + |x|^2)^(-beta/2) with m <= c <= M, beta > d + 2."""

    family = "cauchy"

    def __init__(self, dim: int, beta: float, c: Callable | None = None, c_bounds=(1.0, 1.0)):
        self.dim, self.beta = int(dim), float(beta)
        if not self.beta > self.dim + 2:
            raise ConfigError(f"generalized Cauchy needs beta > d + 2 (got beta={beta}, d={dim})")
        self.c_fn = c
        self.c_bounds = tuple(float(v) for v in c_bounds)
        d, b = self.dim, self.beta
        self._z = math.pi ** (d / 2) * math.gamma((b - d) / 2) / math.gamma(b / 2)
        self.radial = c is None
        if c is not None:
            # normalization: quadrature on a large box plus an analytic tail bound
            L = 2.0 ** 12
            raw, _, _, _ = integrate_boxes(lambda x: c(x) * self._profile(x), -np.full((1, d), L),
                                           np.full((1, d), L), rel_tol=1e-8, strict=False)
            self._z = raw[0]

    def _profile(self, x):
        x = np.atleast_2d(x)
        return np.power(1.0 + (x * x).sum(axis=1), -0.5 * self.beta)

    def evaluate(self, x):
        x = np.atleast_2d(x)
        c = 1.0 if self.c_fn is None else self.c_fn(x)
        return c * self._profile(x) / self._z

    def radial_pdf(self, s):
        s = np.asarray(s, float)
        return np.power(1.0 + s * s, -0.5 * self.beta) / self._z

    def radial_cdf(self, r):
        r = float(r)
        if r <= 0:
            return 0.0
        a, b = self.dim / 2, (self.beta - self.dim) / 2
        u = r * r / (1 + r * r)
        if u < 0.5:
            return float(special.betainc(a, b, u))
        return float(1.0 - special.betainc(b, a, 1.0 / (1 + r * r)))

    def radial_tail(self, r):
        """1 - rho(B_r) without cancellation."""
        a, b = self.dim / 2, (self.beta - self.dim) / 2
        return float(special.betainc(b, a, 1.0 / (1 + float(r) ** 2)))

    def density_bounds(self, region):
        m, M = self.c_bounds
        rmin, rmax = radial_extent(region)
        return (m * (1 + rmax ** 2) ** (-self.beta / 2) / self._z,
                M * (1 + rmin ** 2) ** (-self.beta / 2) / self._z)

    def params(self):
        return {"dim": self.dim, "beta": self.beta}


def radial_extent(region) -> tuple[float, float]:
    """(min |x|, max |x|) over a region."""
    if isinstance(region, geo.SectorCell):
        return region.offset / math.sqrt(region.dim), region.outer_radius
    if isinstance(region, geo.BallCell):
        c = np.linalg.norm(region.center)
        return max(c - region.radius, 0.0), c + region.radius
    lo, hi = geo.box_of(region)
    near = np.linalg.norm(np.maximum(np.maximum(lo, -hi), 0.0))
    far = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))
    return float(near), float(far)


def cell_density_ratio(rho: DensityModel, cell) -> float:
    """sup/inf of rho over a cell (an upper bound where only envelopes are known)."""
    lo, hi = rho.density_bounds(cell)
    return hi / lo if lo > 0 else np.inf


# ---------------------------------------------------------------------------
# operations


def _sector_mass(rho: DensityModel, cell: geo.SectorCell, rel_tol: float) -> float:
    R, c, d = cell.outer_radius, cell.offset, cell.dim
    if cell.is_empty():
        return 0.0
    F = rho.radial_cdf
    FR = F(R)
    if d == 1:
        return 0.5 * max(FR - F(max(c, 0.0)), 0.0)
    area = _sphere_area(d)
    eps = dict(epsabs=0.0, epsrel=min(rel_tol, 1e-8) * 1e-2, limit=400)
    if d == 2:
        def g(th):
            s = math.cos(th) + math.sin(th)
            rmin = c / s if c > 0 else 0.0
            return max(FR - F(rmin), 0.0) if rmin < R else 0.0
        pts = []
        if c > 0 and c / R < math.sqrt(2):
            # angles where c / (cos + sin) = R
            a = math.asin(min(c / (R * math.sqrt(2)), 1.0))
            pts = [a - math.pi / 4, 3 * math.pi / 4 - a]
            pts = [p for p in pts if 0 < p < math.pi / 2]
        val, _ = integrate.quad(g, 0.0, math.pi / 2, points=pts or None, **eps)
        return val / area
    if d == 3:
        def g(ph, th):
            u = (math.sin(ph) * math.cos(th), math.sin(ph) * math.sin(th), math.cos(ph))
            s = u[0] + u[1] + u[2]
            rmin = c / s if c > 0 else 0.0
            return (max(FR - F(rmin), 0.0) if rmin < R else 0.0) * math.sin(ph)
        val, _ = integrate.dblquad(g, 0.0, math.pi / 2, 0.0, math.pi / 2, epsabs=0.0,
                                   epsrel=min(rel_tol, 1e-8))
        return val / area
    raise NotImplementedError("sector masses implemented for d <= 3")


def _indicator_mass(rho: DensityModel, region, rel_tol: float, strict: bool) -> float:
    lo, hi = region.bbox()
    f = lambda x: rho.evaluate(x) * region.contains(x)
    val, _, _, _ = integrate_boxes(f, np.asarray(lo)[None], np.asarray(hi)[None], rel_tol=rel_tol,
                                   strict=strict, max_depth=12)
    return float(val[0])


def mass(rho: DensityModel, region, rel_tol: float = 1e-6) -> float:
    """rho(region) for a box, ball cell or sector cell."""
    if not 1e-12 <= rel_tol <= 1e-2:
        raise ConfigError("rel_tol must lie in [1e-12, 1e-2]")
    box = geo.box_of(region)
    if box is not None:
        return float(rho.box_masses(box[0][None], box[1][None], rel_tol=rel_tol)[0])
    centered = isinstance(region, (geo.BallCell, geo.Ball)) and not np.any(np.asarray(region.center))
    if centered and rho.radial:
        R = region.radius
        return rho.radial_cdf(R)
    if isinstance(region, geo.SectorCell) and rho.radial:
        return _sector_mass(rho, region, rel_tol)
    if isinstance(region, geo.Ball):
        region = geo.BallCell(region.radius, tuple(region.center))
    return _indicator_mass(rho, region, rel_tol, strict=True)


def tail_moment(rho: DensityModel, ell: int, r: float, method: str = "auto") -> float:
    """m_ell(r) = integral over |x| > r of |x|^ell d rho.

    ``method="quadrature"`` skips the closed forms and integrates the radial
    profile even where a closed form exists (used as a cross-check).
    """
    if ell not in (0, 1, 2):
        raise ConfigError("ell must be 0, 1 or 2")
    if method not in ("auto", "quadrature"):
        raise ConfigError(f"method: unknown {method!r}")
    if isinstance(rho, GeneralizedCauchy) and not ell < rho.beta - rho.dim:
        raise InfiniteMoment(f"moment of order {ell} is infinite for beta={rho.beta}")
    r = float(r)
    if not rho.radial:
        lo, hi = rho.support_bbox()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise NotImplementedError("tail moments of non-radial unbounded densities")

        def f(x):
            n = np.linalg.norm(x, axis=1)
            return rho.evaluate(x) * n ** ell * (n > r)
        val, _, _, _ = integrate_boxes(f, lo[None], hi[None], rel_tol=1e-6, strict=False, max_depth=14)
        return float(val[0])
    d = rho.dim
    area = _sphere_area(d)
    if isinstance(rho, GeneralizedCauchy) and ell == 0 and method == "auto":
        return rho.radial_tail(r)
    g = lambda s: area * s ** (ell + d - 1) * float(rho.radial_pdf(s))
    if isinstance(rho, SphericalUniform):
        if r >= 1:
            return 0.0
        return float(area * rho.c * (1 - r ** (ell + 1)) / (ell + 1))
    if isinstance(rho, UniformOnDomain):
        R = rho.domain.radius
        if r >= R:
            return 0.0
        return float(area * rho.value * (R ** (ell + d) - r ** (ell + d)) / (ell + d))
    # split [r, inf) at a few scales for the adaptive quadrature
    total, a = 0.0, r
    scale = 1.0 / math.sqrt(rho.kappa[0]) if isinstance(rho, LogConcave) else max(1.0, r)
    b = max(a, 0.0) + scale
    for _ in range(200):
        v, _e = integrate.quad(g, a, b, epsabs=0.0, epsrel=1e-12, limit=200)
        total += v
        if v <= 1e-16 * total and b > 4 * max(r, 1.0):
            break
        a, b = b, b + (b - a) * 2
    with warnings.catch_warnings():
        # the remaining tail is negligible; quad may still complain about it
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v, _e = integrate.quad(g, a, np.inf, epsabs=1e-16 * total, epsrel=1e-10, limit=200)
    return total + v


def gaussian_tail_bound(rho: LogConcave, ell: int, r: float) -> float:
    """Explicit bound C r^(d+ell-2) exp(-kappa r^2/2) on m_ell(r)."""
    k = rho.kappa[0]
    d = rho.dim
    p = ell + d - 1
    lead = _sphere_area(d) / rho._z * r ** (p - 1) * math.exp(-0.5 * k * r * r) / k
    if p <= 1:
        return lead
    q = (p - 1) / (k * r * r)
    return lead / (1 - q) if q < 1 else np.inf


def grid_cells(region, grid_per_axis: int):
    lo, hi = geo.box_of(region) if geo.box_of(region) is not None else region
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = lo.shape[0]
    n = int(grid_per_axis)
    h = (hi - lo) / n
    idx = np.indices((n,) * d).reshape(d, -1).T
    clo = lo + idx * h
    chi = lo + (idx + 1) * h
    # make the upper faces exact
    chi = np.where(idx + 1 == n, hi, chi)
    return clo, chi


def discretize(rho: DensityModel, region, grid_per_axis: int, rel_tol: float = 1e-6) -> DiscreteMeasure:
    """One atom per grid cell at its rho-barycenter carrying the cell mass."""
    if grid_per_axis < 2:
        raise ConfigError("grid_per_axis must be >= 2")
    b = geo.box_of(region) if geo.box_of(region) is not None else region
    d = len(b[0])
    if grid_per_axis ** d > MAX_ATOMS:
        raise TooManyAtoms(f"{grid_per_axis}^{d} atoms exceeds the cap")
    clo, chi = grid_cells(b, grid_per_axis)
    m, mom = rho.box_masses(clo, chi, rel_tol=rel_tol, moments=True, strict=False,
                            abs_tol=1e-15)
    mid = 0.5 * (clo + chi)
    with np.errstate(invalid="ignore", divide="ignore"):
        bary = np.where((m > 1e-14)[:, None], mom / np.where(m > 0, m, 1.0)[:, None], mid)
    bary = np.clip(bary, clo, chi)
    keep = m > 0
    if not keep.any():
        raise ZeroMassRegion("region carries no mass")
    return DiscreteMeasure(bary[keep], normalize_masses(m[keep]))


# ---------------------------------------------------------------------------
# config


def density_from_json(doc: dict, domain: geo.Domain | None = None) -> DensityModel:
    try:
        fam = doc["family"]
    except (TypeError, KeyError) as exc:
        raise ConfigError("density: missing field 'family'") from exc
    p = doc.get("params", {})
    try:
        if fam == "uniform":
            dom = domain or (geo.domain_from_json(p["domain"]) if "domain" in p else None)
            if dom is None:
                raise ConfigError("density.params.domain: required for uniform density")
            return UniformOnDomain(dom)
        if fam in ("gaussian", "log_concave"):
            return LogConcave(p.get("dim", 1), p.get("kappa", 1.0))
        if fam == "boundary_power":
            dom = domain or geo.domain_from_json(p["domain"])
            return BoundaryPower(dom, p["delta"])
        if fam == "spherical_uniform":
            return SphericalUniform(p.get("dim", 2))
        if fam == "cauchy":
            return GeneralizedCauchy(p.get("dim", 1), p["beta"])
    except KeyError as exc:
        raise ConfigError(f"density.params: missing field {exc}") from exc
    raise ConfigError(f"density.family: unknown family {fam!r}")
