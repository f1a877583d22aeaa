"""
Monte-Carlo evaluation and experiment sweeps.

Failure rates are always scored against the instance's ground-truth
generative model, never against a method's own fitted model. Each agent gets
``n_draws`` independent consumption draws (default 10^4). With ``N`` agents
the 95% half-width of the fleet failure rate is at most
``1.96 * sqrt(f (1 - f) / (N n_draws))``, i.e. about 0.03 pp at f = 1% and
N = 200.

Normalized cost is the resource cost ``sum_i J_i(a_i)`` divided by the
centralized oracle's. The oracle minimizes cost *plus* tail risk, so a method
that takes on more risk can spend less; ``objective_ratio`` (cost + risk,
scored on the oracle's exact quantile grid of the true law) is the quantity
the oracle actually dominates.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .baselines import (centralized_solve, desira_solve, fitted_model, gaussian_risk_inputs,
                        greedy_fcfs, model_inputs, no_side_info_solve, objective, oracle_inputs)
from .coordinator import RiskInputs, relative_overflow, run
from .domain import AdmmConfig, ProblemInstance, total_cost
from .graph import build_geometric
from .risk import CalibrationState, ConsumptionModel, inflate_if_violated
from .scenario import ScenarioConfig, generate_urban
from .stats import RngStream, gini

EVAL_STREAM = 201
NOISE_LOOP_STREAM = 202
DEFAULT_DRAWS = 10_000
METHODS = ("centralized", "desira", "no_side_info", "greedy")
CSV_HEADER = ("method", "seed", "N", "S", "R", "cost_ratio", "failure", "overflow", "gini",
              "iters", "sec_per_iter")
_CHUNK = 1_000_000  # draws held in memory at once


@dataclass(frozen=True)
class Metrics:
    failure: float
    overflow: float
    gini: float
    cost: float


@dataclass(frozen=True)
class EvalReport:
    method: str
    seed: int
    n_agents: int
    n_stations: int
    radius: float | None
    cost_ratio: float
    objective_ratio: float
    failure: float
    overflow: float
    gini: float
    iterations: int
    sec_per_iter: float | None = None
    param: float | None = None  # sweep knob (noise factor, size, ...)

    def check(self) -> list[str]:
        """Violated row invariants (empty when the row is sound)."""
        bad = []
        if not 0.0 <= self.failure <= 1.0:
            bad.append(f"failure {self.failure} outside [0, 1]")
        if not 0.0 <= self.overflow <= 1.0:
            bad.append(f"overflow {self.overflow} outside [0, 1]")
        if self.method != "centralized" and self.objective_ratio < 1.0 - 1e-6:
            bad.append(f"objective ratio {self.objective_ratio} below the oracle")
        return bad

    def csv_row(self, timing: bool = False) -> list[str]:
        spi = "" if not timing or self.sec_per_iter is None else f"{self.sec_per_iter:.6g}"
        r = "" if self.radius is None else repr(float(self.radius))
        return [self.method, str(self.seed), str(self.n_agents), str(self.n_stations), r,
                repr(self.cost_ratio), repr(self.failure), repr(self.overflow), repr(self.gini),
                str(self.iterations), spi]


def evaluate(instance: ProblemInstance, allocation, n_draws: int = DEFAULT_DRAWS,
             rng=None) -> Metrics:
    """Failure rate, overflow, Gini and resource cost of ``allocation``.

    Failure is the fraction of (agent, draw) pairs with consumption above
    ``E0 + sum_s a_s``, drawing from the ground-truth model.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    gm = instance.true_model
    if gm is None:
        raise ValueError("instance has no ground-truth model")
    a = np.asarray(allocation, dtype=float)
    if rng is None:
        rng = RngStream(int(instance.seed or 0), EVAL_STREAM)
    gen = rng.generator() if isinstance(rng, RngStream) else rng

    phi = instance.side_info()
    mu, sd = gm.mean(phi), gm.std(phi)
    supply = instance.endowments() + a.sum(axis=1)
    n = len(mu)
    rows = max(1, _CHUNK // n_draws)
    hits = 0
    for lo in range(0, n, rows):
        hi = min(n, lo + rows)
        x = mu[lo:hi, None] + sd[lo:hi, None] * gen.standard_normal((hi - lo, n_draws))
        hits += int(np.count_nonzero(x > supply[lo:hi, None]))
    failure = hits / (n * n_draws) if n else 0.0
    return Metrics(failure, relative_overflow(a, instance.capacities()), gini(a.sum(axis=1)),
                   total_cost(instance, a))


def _report(method, instance, a, ref_cost, ref_obj, oracle_risk, iters, spi, n_draws,
            radius=None, param=None) -> EvalReport:
    m = evaluate(instance, a, n_draws)
    obj = objective(instance, a, oracle_risk)
    return EvalReport(method, int(instance.seed or 0), instance.n_agents, instance.n_stations,
                      radius, _ratio(m.cost, ref_cost), _ratio(obj, ref_obj), m.failure,
                      m.overflow, m.gini, iters, spi, param)


def _ratio(x: float, ref: float) -> float:
    if ref == 0.0:
        return 1.0 if x == 0.0 else math.inf
    return x / ref


@dataclass(frozen=True)
class _Reference:
    cost: float
    objective: float
    risk: RiskInputs
    allocation: np.ndarray
    iterations: int
    seconds: float


def _reference(instance: ProblemInstance) -> _Reference:
    t0 = time.perf_counter()
    orc = centralized_solve(instance)
    secs = time.perf_counter() - t0
    risk = oracle_inputs(instance)
    return _Reference(total_cost(instance, orc.allocation), objective(instance, orc.allocation, risk),
                      risk, orc.allocation, orc.report.iterations, secs)


# -- method comparison -----------------------------------------------------

def _methods_cell(args) -> list[EvalReport]:
    scfg, seed, admm, n_draws = args
    inst, graph = generate_urban(scfg, seed=seed)
    ref = _reference(inst)
    radius = inst.meta.get("radius")
    out = [_report("centralized", inst, ref.allocation, ref.cost, ref.objective, ref.risk,
                   ref.iterations, ref.seconds / max(ref.iterations, 1), n_draws, radius)]
    state, rep, _ = desira_solve(inst, graph, admm)
    out.append(_report("desira", inst, state.a, ref.cost, ref.objective, ref.risk,
                       rep.iterations, rep.seconds_per_iter, n_draws, radius))
    state, rep, nsi_risk = no_side_info_solve(inst, graph, admm)
    out.append(_report("no_side_info", inst, state.a, ref.cost, ref.objective, ref.risk,
                       rep.iterations, rep.seconds_per_iter, n_draws, radius))
    a = greedy_fcfs(inst, nsi_risk.lower)
    out.append(_report("greedy", inst, a, ref.cost, ref.objective, ref.risk, 0, 0.0, n_draws,
                       radius))
    return out


def _map(fn, cells, jobs: int):
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _flatten(parts) -> list[EvalReport]:
    return [r for part in parts for r in part]


def sweep_methods(config: ScenarioConfig | None = None, seeds=range(10),
                  admm: AdmmConfig | None = None, n_draws: int = DEFAULT_DRAWS,
                  jobs: int = 1) -> list[EvalReport]:
    """One row per (method, seed) on urban instances."""
    config = config or ScenarioConfig()
    admm = admm or AdmmConfig()
    cells = [(config, int(s), admm, n_draws) for s in seeds]
    rows = _flatten(_map(_methods_cell, cells, jobs))
    order = {m: k for k, m in enumerate(METHODS)}
    return sorted(rows, key=lambda r: (r.seed, order.get(r.method, 99)))


# -- communication radius --------------------------------------------------

def _radius_cell(args) -> list[EvalReport]:
    scfg, seed, radii, admm, n_draws = args
    inst, _ = generate_urban(scfg, seed=seed)
    ref = _reference(inst)
    cfg = replace(admm, mode="gossip")
    out = []
    for radius in radii:
        graph = build_geometric(inst.agent_positions(), radius)
        state, rep, _ = desira_solve(inst, graph, cfg)
        out.append(_report("desira", inst, state.a, ref.cost, ref.objective, ref.risk,
                           rep.iterations, rep.seconds_per_iter, n_draws, float(radius)))
    return out


def sweep_radius(config: ScenarioConfig | None = None, radii=(0.1, 0.15, 0.2, 0.3), seeds=range(10),
                 admm: AdmmConfig | None = None, n_draws: int = DEFAULT_DRAWS,
                 jobs: int = 1) -> list[EvalReport]:
    """Gossip-mode DESIRA on the same instances over several graph radii."""
    config = config or ScenarioConfig()
    admm = admm or AdmmConfig()
    cells = [(config, int(s), tuple(radii), admm, n_draws) for s in seeds]
    rows = _flatten(_map(_radius_cell, cells, jobs))
    return sorted(rows, key=lambda r: (r.radius, r.seed))


# -- scaling ---------------------------------------------------------------

def _scaling_cell(args) -> list[EvalReport]:
    scfg, seed, size, admm, n_draws = args
    inst, graph = generate_urban(scfg, seed=seed, n_agents=int(size))
    ref = _reference(inst)
    radius = inst.meta.get("radius")
    state, rep, _ = desira_solve(inst, graph, admm)
    return [
        _report("centralized", inst, ref.allocation, ref.cost, ref.objective, ref.risk,
                ref.iterations, ref.seconds / max(ref.iterations, 1), n_draws, radius, ref.seconds),
        _report("desira", inst, state.a, ref.cost, ref.objective, ref.risk, rep.iterations,
                rep.seconds_per_iter, n_draws, radius, rep.wall_seconds),
    ]


def sweep_scaling(config: ScenarioConfig | None = None, sizes=(50, 100, 200, 400), seeds=range(3),
                  admm: AdmmConfig | None = None, n_draws: int = 1_000,
                  jobs: int = 1) -> list[EvalReport]:
    """Per-iteration wall time of DESIRA and the centralized reference by fleet
    size. ``param`` holds each solve's total wall time in seconds.

    Timings are only comparable when run with ``jobs=1``.
    """
    config = config or ScenarioConfig()
    admm = admm or AdmmConfig()
    cells = [(config, int(s), int(n), admm, n_draws) for n in sizes for s in seeds]
    rows = _flatten(_map(_scaling_cell, cells, jobs))
    return sorted(rows, key=lambda r: (r.n_agents, r.seed, r.method))


def linear_fit_r2(x, y) -> float:
    """Coefficient of determination of the least-squares line through ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


# -- forecast noise and calibration -----------------------------------------

def calibrate_inflation(instance: ProblemInstance, mu, sigma, n_updates: int = 20,
                        tolerance_delta: float = 0.02, step: float = 1.1,
                        window: int = 500) -> tuple[float, list[float]]:
    """Closed-loop sigma inflation from realized consumption.

    Each update draws one realized consumption per agent from the true model,
    pushes it into a fleet-wide rolling window, and inflates sigma when the
    window's requirement-violation rate exceeds ``eps + tolerance_delta``.
    Returns the final factor and the violation rate after each update.
    """
    gm = instance.true_model
    eps = instance.risk.epsilon
    phi = instance.side_info()
    true_mu, true_sd = gm.mean(phi), gm.std(phi)
    gen = RngStream(int(instance.seed or 0), NOISE_LOOP_STREAM).generator()
    # The window stores standardized residuals (x - mu) / sigma and scores them
    # against a unit model, so the requirement it checks is q * inflation.
    unit = ConsumptionModel.constant(0.0, 1.0, 1)
    cal = CalibrationState(window)
    rates = []
    for _ in range(n_updates):
        x = true_mu + true_sd * gen.standard_normal(true_mu.size)
        cal.extend((x - mu) / sigma, np.zeros((mu.size, 1)))
        inflate_if_violated(cal, unit, eps, tolerance_delta, step)
        rates.append(cal.violation_rate(unit, eps))
    return cal.inflation, rates


def _noise_cell(args) -> list[EvalReport]:
    scfg, seed, factors, admm, n_draws, calibrate = args
    inst, graph = generate_urban(scfg, seed=seed)
    ref = _reference(inst)
    radius = inst.meta.get("radius")
    model = fitted_model(inst)
    out = []
    for f in factors:
        risk = model_inputs(inst, model, 1.0, f)
        state, rep = run(inst, graph, admm, risk, None, int(inst.seed or 0))
        out.append(_report("desira", inst, state.a, ref.cost, ref.objective, ref.risk,
                           rep.iterations, rep.seconds_per_iter, n_draws, radius, float(f)))
        if calibrate:
            k, _ = calibrate_inflation(inst, risk.mu, risk.sigma)
            r = inst.risk
            risk_k = gaussian_risk_inputs(risk.mu, risk.sigma, inst.endowments(), r.epsilon,
                                          r.n_scenarios_m, int(inst.seed or 0), k)
            state, rep = run(inst, graph, admm, risk_k, None, int(inst.seed or 0))
            out.append(_report("desira_calibrated", inst, state.a, ref.cost, ref.objective,
                               ref.risk, rep.iterations, rep.seconds_per_iter, n_draws, radius,
                               float(f)))
    state, rep, _ = no_side_info_solve(inst, graph, admm)
    out.append(_report("no_side_info", inst, state.a, ref.cost, ref.objective, ref.risk,
                       rep.iterations, rep.seconds_per_iter, n_draws, radius, None))
    return out


def sweep_noise(config: ScenarioConfig | None = None, noise_factors=(0.0, 0.1, 0.3, 0.5),
                seeds=range(10), admm: AdmmConfig | None = None, n_draws: int = DEFAULT_DRAWS,
                calibrate: bool = True, jobs: int = 1) -> list[EvalReport]:
    """DESIRA with Gaussian noise of ``factor * sigma_i`` on each forecast mean,
    with and without closed-loop calibration, plus the no-side-info row."""
    allowed = {0.0, 0.1, 0.3, 0.5}
    if not set(float(f) for f in noise_factors) <= allowed:
        raise ValueError(f"noise factors must be drawn from {sorted(allowed)}")
    config = config or ScenarioConfig()
    admm = admm or AdmmConfig()
    cells = [(config, int(s), tuple(float(f) for f in noise_factors), admm, n_draws, calibrate)
             for s in seeds]
    rows = _flatten(_map(_noise_cell, cells, jobs))
    return sorted(rows, key=lambda r: (r.method, -1.0 if r.param is None else r.param, r.seed))


# -- output ------------------------------------------------------------------

def to_csv(rows, timing: bool = False) -> str:
    """Fixed-header CSV. ``sec_per_iter`` is left blank unless ``timing`` is
    set, so that files stay byte-identical across runs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_row(timing))
    return buf.getvalue()


def summarize(rows, by=("method",), timing: bool = False) -> dict:
    """Mean and sample std of every numeric column per group."""
    groups: dict[str, list[EvalReport]] = {}
    for r in rows:
        key = "|".join(f"{k}={getattr(r, k)!r}" if k != "method" else r.method for k in by)
        groups.setdefault(key, []).append(r)
    cols = ["cost_ratio", "objective_ratio", "failure", "overflow", "gini", "iterations"]
    if timing:
        cols.append("sec_per_iter")
    out = {}
    for key in sorted(groups):
        g = groups[key]
        entry = {"n": len(g)}
        for c in cols:
            vals = np.array([getattr(r, c) for r in g if getattr(r, c) is not None], dtype=float)
            if vals.size == 0:
                continue
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            entry[c] = {"mean": float(vals.mean()), "std": std}
        out[key] = entry
    return out


def summary_json(rows, by=("method",), timing: bool = False) -> str:
    return json.dumps(summarize(rows, by, timing), indent=2, sort_keys=True) + "\n"


def rows_to_dicts(rows) -> list[dict]:
    return [asdict(r) for r in rows]
