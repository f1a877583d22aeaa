"""
Command-line front end.

Subcommands: ``generate``, ``solve``, ``sweep`` and ``validate``. Files are
the machine contract and are byte-identical for identical flags; stdout is
a human summary. Wall-clock timings only reach files with ``--timing``.

Exit codes
----------
0  success
2  invalid input (bad flags, unreadable or invalid instance, unknown kind)
3  solver hit the iteration budget without converging (files still written)
4  solver diverged
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .baselines import (centralized_solve, desira_solve, greedy_fcfs, model_inputs,
                        no_side_info_solve, pooled_model)
from .coordinator import DivergenceError
from .domain import AdmmConfig, ProblemInstance, total_cost, validate
from .graph import load_graph
from .scenario import (ConstellationConfig, ScenarioConfig, ScenarioError, default_graph,
                       generate_constellation, generate_urban)

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_DIVERGED = 0, 2, 3, 4
METHOD_CHOICES = ("desira", "centralized", "no_side_info", "greedy")
SWEEP_KINDS = ("methods", "radius", "scaling", "noise")

log = logging.getLogger("desira")


class InputError(Exception):
    """Raised for anything that should exit with code 2."""


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("DESIRA_OUT") or "desira_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _scenario_config(args) -> ScenarioConfig:
    """Config file first, then any flag given explicitly on the command line."""
    base = {}
    if getattr(args, "config", None):
        base = _load_json(args.config)
        base = base.get("scenario", base)
    flag_map = {"agents": "n_agents", "stations": "n_stations", "seed": "seed",
                "epsilon": "epsilon", "lam": "lam", "alpha": "alpha", "scenarios": "n_scenarios_m"}
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            base[key] = val
    try:
        return ScenarioConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid scenario config: {exc}") from exc


def _admm_config(args, **override) -> AdmmConfig:
    base = {}
    if getattr(args, "config", None):
        base = dict(_load_json(args.config).get("admm", {}))
    flag_map = {"rho": "rho", "max_iters": "max_iters_t", "tol": None, "mode": "mode",
                "gossip_rounds": "gossip_rounds", "dropout": "dropout_prob"}
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if flag == "tol":
            base["tol_primal"] = base["tol_dual"] = val
        else:
            base[key] = val
    base.update(override)
    try:
        return AdmmConfig(**base)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid ADMM config: {exc}") from exc


# -- generate ----------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.constellation:
        kw = {"seed": args.seed if args.seed is not None else 0}
        if args.config:
            cfg = _load_json(args.config)
            kw.update(cfg.get("scenario", cfg))
            if args.seed is not None:
                kw["seed"] = args.seed
        try:
            inst, graph, _ = generate_constellation(ConstellationConfig(), **kw)
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid constellation config: {exc}") from exc
        name = "constellation"
    else:
        try:
            inst, graph = generate_urban(_scenario_config(args))
        except ValueError as exc:
            raise InputError(f"invalid urban settings: {exc}") from exc
        name = "urban"
    report = validate(inst)
    if not report.ok:
        raise InputError("generated instance failed validation: " + "; ".join(map(str, report.issues)))
    path = Path(args.output) if args.output else _out_dir(args) / f"{name}_seed{inst.seed}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    inst.save(path)
    graph.save(path.with_suffix(".graph.json"))
    print(f"wrote {path}: N={inst.n_agents} S={inst.n_stations} "
          f"mean degree={graph.mean_degree():.2f}")
    return EXIT_OK


# -- solve -------------------------------------------------------------------

def _load_instance(path) -> ProblemInstance:
    try:
        inst = ProblemInstance.load(path)
    except (OSError, ValueError, KeyError, TypeError, IndexError) as exc:
        raise InputError(f"cannot load instance {path}: {exc}") from exc
    report = validate(inst)
    if not report.ok:
        raise InputError("invalid instance: " + "; ".join(map(str, report.issues)))
    return inst


def cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    if args.seed is not None:
        inst = replace(inst, seed=args.seed)
    out = _out_dir(args)
    graph, schedule = default_graph(inst)
    if args.graph:
        try:
            graph = load_graph(args.graph)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot load graph {args.graph}: {exc}") from exc
        schedule = None
    method = args.method
    converged = True
    report = None
    if method == "centralized":
        if inst.true_model is None:
            raise InputError("centralized method needs the instance's ground-truth model")
        tol = args.tol if args.tol is not None else 1e-6
        res = centralized_solve(inst, tol=tol, rho=args.rho or 1.0,
                                max_iters=args.max_iters or 5000)
        a, report, lower = res.allocation, res.report, None
        converged = res.certified
    elif method == "greedy":
        lower = model_inputs(inst, pooled_model(inst)).lower
        a = greedy_fcfs(inst, lower)
    else:
        cfg = _admm_config(args)
        sched = schedule if cfg.mode == "gossip" else None
        if method == "desira":
            state, report, risk = desira_solve(inst, graph, cfg, schedule=sched)
        else:
            state, report, risk = no_side_info_solve(inst, graph, cfg, sched)
        a, lower = state.a, risk.lower
        converged = report.converged

    stem = f"{method}_seed{inst.seed}"
    alloc = {"method": method, "seed": inst.seed, "allocation": a.tolist(),
             "cost": total_cost(inst, a), "converged": bool(converged)}
    if lower is not None:
        alloc["lower_bounds"] = np.asarray(lower).tolist()
    _write(out / f"{stem}_allocation.json", _dump(alloc))
    if report is not None:
        _write(out / f"{stem}_report.json", _dump(report.to_dict(include_timing=args.timing)))
        _write(out / f"{stem}_residuals.csv", report.series_csv())
        print(f"{method}: iterations={report.iterations} primal={report.primal_residual:.3g} "
              f"dual={report.dual_residual:.3g} converged={converged}")
    print(f"{method}: cost={alloc['cost']:.6g} total allocation={a.sum():.6g} -> {out}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


# -- sweep -------------------------------------------------------------------

def cmd_sweep(args) -> int:
    if args.kind not in SWEEP_KINDS:
        raise InputError(f"unknown sweep kind {args.kind!r}; choose from {', '.join(SWEEP_KINDS)}")
    scfg = _scenario_config(args)
    admm = _admm_config(args)
    base = args.seed if args.seed is not None else 0
    seeds = range(base, base + args.seeds)
    kw = {"admm": admm, "jobs": args.jobs}
    if args.draws is not None:
        kw["n_draws"] = args.draws
    by = ("method",)
    if args.kind == "methods":
        rows = harness.sweep_methods(scfg, seeds, **kw)
    elif args.kind == "radius":
        rows = harness.sweep_radius(scfg, _floats(args.radii), seeds, **kw)
        by = ("method", "radius")
    elif args.kind == "scaling":
        sizes = [int(x) for x in _floats(args.sizes)]
        rows = harness.sweep_scaling(scfg, sizes, seeds, **kw)
        by = ("method", "n_agents")
    else:
        try:
            rows = harness.sweep_noise(scfg, _floats(args.factors), seeds,
                                       calibrate=not args.no_calibration, **kw)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        by = ("method", "param")
    out = _out_dir(args)
    _write(out / f"sweep_{args.kind}.csv", harness.to_csv(rows, args.timing))
    summary = harness.summarize(rows, by, args.timing)
    _write(out / f"sweep_{args.kind}_summary.json", _dump(summary))
    for key, entry in summary.items():
        fail = entry["failure"]
        cost = entry["cost_ratio"]
        line = (f"{key:<28} failure {100 * fail['mean']:.3f} +/- {100 * fail['std']:.3f} %  "
                f"cost {cost['mean']:.3f} +/- {cost['std']:.3f}")
        if "sec_per_iter" in entry:
            line += f"  s/iter {entry['sec_per_iter']['mean']:.4g}"
        print(line)
    bad = [(r.method, r.seed, msg) for r in rows for msg in r.check()]
    for method, seed, msg in bad:
        log.warning("%s seed %s: %s", method, seed, msg)
    print(f"wrote {len(rows)} rows -> {out}")
    return EXIT_OK


# -- validate ----------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        inst = ProblemInstance.load(args.instance)
    except (OSError, ValueError, KeyError, TypeError, IndexError) as exc:
        print(f"invalid: {exc}")
        return EXIT_INVALID
    report = validate(inst)
    if report.ok:
        print(f"ok: N={inst.n_agents} S={inst.n_stations}")
        return EXIT_OK
    for issue in report.issues:
        print(f"invalid: {issue}")
    return EXIT_INVALID


# -- parser ------------------------------------------------------------------

def _add_admm_flags(p):
    p.add_argument("--rho", type=float)
    p.add_argument("--tol", type=float, help="primal and dual tolerance")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--mode", choices=("exact", "gossip"))
    p.add_argument("--gossip-rounds", type=int)
    p.add_argument("--dropout", type=float, help="per-iteration link dropout probability")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="desira", description=__doc__.split("\n\n")[0].strip(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=__doc__[__doc__.index("Exit codes"):])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic instance")
    kind = g.add_mutually_exclusive_group()
    kind.add_argument("--urban", action="store_true", help="urban EV fleet (default)")
    kind.add_argument("--constellation", action="store_true", help="6x10 LEO constellation")
    g.add_argument("--agents", type=int)
    g.add_argument("--stations", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="JSON file of generator keys")
    g.add_argument("--output", help="instance path (default <out>/<kind>_seed<seed>.json)")
    g.add_argument("--out", help="output directory (default $DESIRA_OUT or ./desira_out)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve an instance with one method")
    s.add_argument("instance")
    s.add_argument("--method", choices=METHOD_CHOICES, default="desira")
    s.add_argument("--graph", help="edge-list JSON overriding the instance's own graph")
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON file with an 'admm' section")
    s.add_argument("--out")
    s.add_argument("--timing", action="store_true", help="include wall-clock timings")
    _add_admm_flags(s)
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="run an experiment sweep")
    w.add_argument("kind", help="one of: " + ", ".join(SWEEP_KINDS))
    w.add_argument("--seeds", type=int, default=10, help="number of seeds")
    w.add_argument("--seed", type=int, help="first seed (default 0)")
    w.add_argument("--radii", default="0.1,0.15,0.2,0.3")
    w.add_argument("--sizes", default="50,100,200,400")
    w.add_argument("--factors", default="0,0.1,0.3,0.5")
    w.add_argument("--no-calibration", action="store_true")
    w.add_argument("--draws", type=int, help="Monte-Carlo draws per agent")
    w.add_argument("--agents", type=int)
    w.add_argument("--stations", type=int)
    w.add_argument("--epsilon", type=float)
    w.add_argument("--lam", type=float)
    w.add_argument("--alpha", type=float)
    w.add_argument("--scenarios", type=int)
    w.add_argument("--config", help="JSON file with 'scenario' and 'admm' sections")
    w.add_argument("--jobs", type=int, default=1, help="worker processes")
    w.add_argument("--out")
    w.add_argument("--timing", action="store_true", help="fill the sec_per_iter column")
    _add_admm_flags(w)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check an instance file")
    v.add_argument("instance")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
