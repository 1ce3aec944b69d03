"""Command line harness: ``otsl <subcommand> [--config PATH] [--out DIR] ...``.

Every run writes ``report.json`` plus CSV tables into the output directory.
Exit codes: 0 pass, 1 audit failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import decomposition as dec
from . import density as dens
from . import geometry as geo
from . import overlap_graph as og
from . import stability_lab as sl
from . import transport as tr
from .errors import ConfigError, OTSLError
from .measures import DiscreteMeasure, fmt

SUBCOMMANDS = ("decompose", "graph-audit", "ot-solve", "glue-audit", "stability-exponent", "sharpness",
               "counterexample")
TOP_KEYS = {"domain", "density", "decomposition", "graph", "ot", "experiment", "seed", "output"}

# what each subcommand checks, by the name of the statement it instantiates
CHECKS = {
    "decompose": "Whitney cube invariants and the Boman chain condition",
    "graph-audit": "Cheeger inequality lambda2 >= h^2 / (2 C_deg) for a weighted overlap graph",
    "ot-solve": "exact discrete optimal transport with zero duality gap",
    "glue-audit": "variance gluing inequality over a cover (Boman chains or overlap graph spectral gap)",
    "stability-exponent": "Holder stability of Brenier potentials and maps in W_1",
    "sharpness": "sharpness of the potential stability exponent on radial test functions",
    "counterexample": "room-and-passage counterexample to Holder potential stability",
}


class AuditFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# config helpers


def _get(doc, path, default=None, kind=None):
    cur = doc
    for k in path.split("."):
        if not isinstance(cur, dict) or k not in cur:
            return default
        cur = cur[k]
    if kind is not None and cur is not None:
        try:
            if kind is list:
                if not isinstance(cur, list):
                    raise TypeError
            elif kind is int:
                if isinstance(cur, bool) or not float(cur).is_integer():
                    raise TypeError
                cur = int(cur)
            else:
                cur = kind(cur)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: expected {kind.__name__}, got {cur!r}") from exc
    return cur


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"--config: file {path} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--config: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    bad = sorted(set(doc) - TOP_KEYS)
    if bad:
        raise ConfigError(f"config: unknown field {bad[0]!r}")
    for k in TOP_KEYS - {"seed"}:
        if k in doc and not isinstance(doc[k], dict):
            raise ConfigError(f"{k}: expected an object")
    return doc


def _domain(cfg, default=None):
    if "domain" in cfg:
        return geo.domain_from_json(cfg["domain"])
    if default is None:
        raise ConfigError("domain: required")
    return default


def _density(cfg, dom=None):
    if "density" in cfg:
        return dens.density_from_json(cfg["density"], dom)
    if dom is None:
        raise ConfigError("density: required")
    return dens.UniformOnDomain(dom)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else
                        (int(v) if isinstance(v, (bool, np.bool_)) else v) for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    return x


# ---------------------------------------------------------------------------
# subcommands; each returns (report dict, pass flag)


def cmd_decompose(cfg, args, out: Path):
    dom = _domain(cfg, geo.Box([0.0, 0.0], [1.0, 1.0]))
    rho = _density(cfg, dom)
    level = _get(cfg, "decomposition.max_level", 6, int)
    sigma = _get(cfg, "decomposition.sigma", None, float)
    w = dec.whitney_decompose(dom, level)
    inv = dec.verify_whitney(w)
    fam = dec.boman_family(w, sigma)
    audit = dec.audit_chain_condition(fam, rho, n_samples=_get(cfg, "decomposition.samples", 100_000, int),
                                      seed=args.seed)
    d = w.dim
    side, dist = w.sides, w.boundary_distances()
    rows = []
    for i in range(len(w)):
        rows.append([i, int(w.levels[i])] + [int(v) for v in w.index[i]] + [side[i], dist[i]]
                    + list(w.lo[i]) + list(w.hi[i]) + [int(fam.parent[i]), int(fam.depth[i])])
    head = (["id", "level"] + [f"k{j + 1}" for j in range(d)] + ["side", "dist"]
            + [f"lo{j + 1}" for j in range(d)] + [f"hi{j + 1}" for j in range(d)] + ["parent", "depth"])
    write_csv(out / "cubes.csv", head, rows)
    ok_w = bool(inv["eq31_lower"] and inv["eq31_upper"] and inv["eq32"]
                and inv["max_neighbors"] <= inv["neighbor_bound"])
    rep = {"n_cubes": len(w), "central_cell": fam.central_index, "sigma": fam.sigma,
           "uncovered_volume": w.uncovered_volume, "whitney": inv, "chain_audit": audit.to_json(),
           "checks": {"whitney_invariants": ok_w, "chain_condition": bool(audit.passed)}}
    return rep, ok_w and audit.passed


def _cell_from_json(doc, d):
    kind = doc.get("type")
    if kind == "ball":
        return geo.BallCell(float(doc["radius"]), tuple(doc.get("center", [0.0] * d)))
    if kind == "box":
        return geo.AxisBox(np.asarray(doc["lo"], float), np.asarray(doc["hi"], float))
    if kind == "sector":
        return geo.SectorCell.annulus(int(doc["J"]), tuple(doc["sigma"]))
    raise ConfigError(f"graph.cells: unknown cell type {kind!r}")


def _graph(cfg):
    g = cfg.get("graph", {})
    rel = _get(cfg, "graph.rel_tol", 1e-8, float)
    if "cells" in g:
        rho = dens.density_from_json(cfg["density"]) if "density" in cfg else None
        if rho is None:
            raise ConfigError("density: required with graph.cells")
        try:
            cells = [_cell_from_json(c, rho.dim) for c in g["cells"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"graph.cells: missing field {exc}") from exc
        return og.build_graph(cells, rho, rel), cells, rho
    if "delta" in g:
        delta = np.asarray(g["delta"], float)
        e = np.asarray(g.get("edges", []), float).reshape(-1, 3)
        return og.WeightedGraph(delta, e[:, :2].astype(np.int64), e[:, 2]), None, None
    d = _get(cfg, "graph.dim", 1, int)
    beta = _get(cfg, "graph.beta", 5.0, float)
    n = _get(cfg, "graph.n", 4, int)
    rho = dens.GeneralizedCauchy(d, beta)
    G = og.cauchy_family_graph(d, beta, n, rel, rho)
    return G, G.cells, rho


def cmd_graph_audit(cfg, args, out: Path):
    g, _, _ = _graph(cfg)
    rep = og.lambda2(g)
    if g.n <= og.EXACT_MAX:
        h, method = og.cheeger_constant(g, "exact"), "exact"
    else:
        h, method = og.cheeger_constant(g, "sweep", rep.fiedler_vector), "sweep"
    rep.cheeger_exact_or_upper, rep.method = h, method
    bound = h * h / (2 * g.c_deg)
    ok = bool(rep.lambda2 >= bound - 1e-12) if method == "exact" else True
    g.to_csv(out / "edges.csv")
    write_csv(out / "vertices.csv", ["i", "delta", "fiedler"],
              [[i, float(g.delta[i]), float(rep.fiedler_vector[i])] for i in range(g.n)])
    res = {"n_vertices": g.n, "n_edges": len(g.weights), "c_deg": g.c_deg,
           "max_combinatorial_degree": int(g.combinatorial_degree().max()), "spectral": rep.to_json(),
           "cheeger_bound": bound, "checks": {"cheeger_inequality": ok, "connected": rep.connected}}
    return res, ok and rep.connected


def cmd_ot_solve(cfg, args, out: Path):
    src_p = _get(cfg, "ot.source")
    tgt_p = _get(cfg, "ot.target")
    if src_p is None or tgt_p is None:
        raise ConfigError("ot.source and ot.target: CSV paths required")
    for p in (src_p, tgt_p):
        if not Path(p).exists():
            raise ConfigError(f"ot: file {p} does not exist")
    a = DiscreteMeasure.from_csv(src_p)
    b = DiscreteMeasure.from_csv(tgt_p)
    cost = _get(cfg, "ot.cost", "quadratic", str)
    sol = tr.solve_ot(a, b, cost, p=_get(cfg, "ot.p", 2.0, float), seed=args.seed)
    write_csv(out / "plan.csv", ["i", "j", "mass"], [[int(i), int(j), m] for i, j, m in sol.plan])
    write_csv(out / "source_potential.csv", ["i", "f"], list(enumerate(sol.source_potential.tolist())))
    write_csv(out / "target_potential.csv", ["j", "g"], list(enumerate(sol.target_potential.tolist())))
    ok = sol.duality_gap < 1e-8
    rep = {"cost": cost, "primal_cost": sol.primal_cost, "duality_gap": sol.duality_gap,
           "dual_infeasibility": sol.dual_infeasibility, "iterations": sol.iterations,
           "n_source": len(a), "n_target": len(b), "checks": {"duality_gap": ok}}
    return rep, ok


def random_piecewise_affine(rng, d: int, pieces: int = 3):
    """f = max of affine pieces minus another such max."""
    A = rng.normal(size=(pieces, d))
    a = rng.normal(size=pieces)
    B = rng.normal(size=(pieces, d))
    b = rng.normal(size=pieces)
    return lambda x: (x @ A.T + a).max(axis=1) - (x @ B.T + b).max(axis=1)


def cmd_glue_audit(cfg, args, out: Path):
    mode = _get(cfg, "experiment.mode", "boman", str)
    trials = _get(cfg, "experiment.trials", 200, int)
    rows, reps = [], []
    if mode == "boman":
        dom = _domain(cfg, geo.Box([0.0, 0.0], [1.0, 1.0]))
        rho = _density(cfg, dom)
        w = dec.whitney_decompose(dom, _get(cfg, "decomposition.max_level", 6, int))
        fam = dec.boman_family(w, _get(cfg, "decomposition.sigma", None, float))
        audit = dec.audit_chain_condition(fam, rho, seed=args.seed)
        atoms = dens.discretize(rho, dom.bbox(), _get(cfg, "experiment.grid", 64, int))
        run = lambda f: sl.audit_gluing_boman(fam, audit, atoms, f)
        consts = audit.to_json()
    elif mode == "graph":
        g, cells, rho = _graph(cfg)
        if cells is None:
            raise ConfigError("experiment.mode graph: needs a cover (graph.cells or the Cauchy family)")
        gap = og.lambda2(g)
        r = _get(cfg, "experiment.radius", None, float)
        if r is None:
            r = max(geo.box_of(c)[1].max() if geo.box_of(c) is not None else c.bbox()[1].max() for c in cells)
        atoms = dens.discretize(rho, (np.full(rho.dim, -r), np.full(rho.dim, r)),
                                _get(cfg, "experiment.grid", 1024, int))
        run = lambda f: sl.audit_gluing_graph(cells, g, gap, atoms, f)
        consts = {"lambda2": gap.lambda2}
    else:
        raise ConfigError(f"experiment.mode: unknown {mode!r}")
    for t in range(trials):
        f = random_piecewise_affine(sl.trial_rng(args.seed, 0, t), atoms.dim)(atoms.points)
        rp = run(f)
        reps.append(rp)
        rows.append([t, rp.lhs, rp.rhs, rp.slack, rp.passed])
    write_csv(out / "trials.csv", ["trial", "lhs", "rhs", "slack", "pass"], rows)
    viol = sum(not r.passed for r in reps)
    res = {"mode": mode, "trials": trials, "violations": viol, "constants": consts,
           "last": reps[-1].to_json() if reps else None, "min_slack": min(r.slack for r in reps),
           "checks": {"no_violations": viol == 0}}
    return res, viol == 0


def cmd_stability_exponent(cfg, args, out: Path):
    fam = _get(cfg, "experiment.family", {"family": "uniform-box", "dim": 1})
    if isinstance(fam, str):
        fam = {"family": fam}
    scales = _get(cfg, "experiment.scales", [0.004, 0.01, 0.025, 0.06, 0.15], list)
    fit = sl.fit_exponent(fam, sorted(scales, reverse=True), _get(cfg, "experiment.trials", 20, int),
                          args.seed, k=_get(cfg, "experiment.k", 30, int),
                          grid=_get(cfg, "experiment.grid", 1024, int),
                          variant=_get(cfg, "experiment.variant", "shift", str), threads=args.threads)
    write_csv(out / "pairs.csv", sl.PAIR_COLUMNS, [p.row() for p in fit.pairs])
    rev = all(p.w2 <= p.map_gap + 2 * p.cell_diameter for p in fit.pairs)
    slope_ok = bool(fit.potential_slope >= fit.theory["potential"] - 0.05)
    rep = fit.to_json()
    rep["checks"] = {"potential_slope": slope_ok, "reverse_lipschitz": rev}
    return rep, slope_ok and rev


def cmd_sharpness(cfg, args, out: Path):
    kind = _get(cfg, "experiment.kind", "cauchy", str)
    d = _get(cfg, "experiment.dim", 1, int)
    if kind == "cauchy":
        rho = dens.GeneralizedCauchy(d, _get(cfg, "experiment.beta", 5.0, float))
        radii = _get(cfg, "experiment.radii", [2, 4, 8, 16, 32, 64], list)
        check = _get(cfg, "experiment.check_grid", 2048 if d == 1 else None, int)
    else:
        rho = dens.LogConcave(d, _get(cfg, "experiment.kappa", 1.0, float))
        radii = _get(cfg, "experiment.radii", [2.0, 2.5, 3.0, 3.5, 4.0], list)
        check = _get(cfg, "experiment.check_grid", None, int)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tab = sl.sharpness_family(kind, rho, radii, check_grid=check,
                                  check_half_width=_get(cfg, "experiment.check_half_width", 256.0, float))
    write_csv(out / "sharpness.csv", tab.COLUMNS, tab.rows())
    checks = {"band_below_3": bool(tab.band < 3.0)}
    if tab.theta is not None:
        checks["slope_near_theta"] = bool(abs(tab.slope - tab.theta) <= 0.05)
    if tab.solver_rel_err:
        checks["solver_w1_within_2pct"] = bool(max(tab.solver_rel_err) < 0.02)
    rep = tab.to_json()
    rep["warnings"] = [str(w.message) for w in caught]
    rep["checks"] = checks
    return rep, all(checks.values())


def cmd_counterexample(cfg, args, out: Path):
    n_max = args.n_max if args.n_max is not None else _get(cfg, "experiment.n_max", 6, int)
    pq = [tuple(v) for v in _get(cfg, "experiment.pq", [[1, 1], [2, 1], [1, 2]], list)]
    params = _get(cfg, "domain.params", None)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tab = sl.counterexample_run(params, n_max, pq)
    write_csv(out / "counterexample.csv", tab.columns(), tab.rows())
    js = tab.to_json()
    checks = {"ratios_decreasing": all(tab.decreasing.values()), "mass_identity": js["max_sum_error"] < 1e-8,
              "lower_bound": js["lower_bound_holds"]}
    js["warnings"] = [str(w.message) for w in caught]
    js["checks"] = checks
    return js, all(checks.values())


COMMANDS = {
    "decompose": cmd_decompose,
    "graph-audit": cmd_graph_audit,
    "ot-solve": cmd_ot_solve,
    "glue-audit": cmd_glue_audit,
    "stability-exponent": cmd_stability_exponent,
    "sharpness": cmd_sharpness,
    "counterexample": cmd_counterexample,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otsl", description="Transport stability experiments.")
    ap.add_argument("--version", action="version", version=f"otsl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=CHECKS[name])
        p.add_argument("--config", default=None, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default otsl-<subcommand>)")
        p.add_argument("--seed", type=int, default=None, help="64-bit seed (default: config seed or 0)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (env OTSL_THREADS)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name == "counterexample":
            p.add_argument("--n-max", type=int, default=None, dest="n_max")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    t0 = time.perf_counter()
    out = None
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = _get(cfg, "seed", 0, int)
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed: must be a 64-bit unsigned integer")
        if args.threads is None:
            env = os.environ.get("OTSL_THREADS")
            try:
                args.threads = int(env) if env else 1
            except ValueError as exc:
                raise ConfigError(f"OTSL_THREADS: not an integer ({env!r})") from exc
        if args.threads < 1:
            raise ConfigError("threads: must be >= 1")
        out = Path(args.out or _get(cfg, "output.dir", f"otsl-{args.command}"))
        if (out / "report.json").exists() and not args.force:
            raise ConfigError(f"--out: {out} already holds a report (use --force)")
        out.mkdir(parents=True, exist_ok=True)
        rep, ok = COMMANDS[args.command](cfg, args, out)
        code = 0 if ok else 1
        status = "pass" if ok else "fail"
        err = None
    except OTSLError as exc:
        code, status, rep = exc.exit_code, "error", {}
        err = {"type": type(exc).__name__, "message": str(exc)}
        print(f"otsl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if out is None or code == 2:
            return code
    report = {"subcommand": args.command, "version": __version__, "checks_statement": CHECKS[args.command],
              "inputs": {"config": cfg, "seed": args.seed, "threads": args.threads}, "status": status,
              "pass": code == 0, "result": _jsonable(rep), "error": err,
              "wall_clock_s": time.perf_counter() - t0}
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    print(f"otsl {args.command}: {status} (report in {out / 'report.json'})")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
