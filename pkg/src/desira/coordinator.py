"""
Consensus-ADMM driver.

Each iteration runs every agent's local a-update against its anchor
``z_i - u_i``, forms ``a_i + u_i``, enforces station capacities on the
stacked loads (exact Euclidean projection, or a gossip estimate of the
station loads followed by proportional scaling), and takes a dual step
``u += a - z``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .domain import AdmmConfig, AllocationState, ProblemInstance
from .graph import CommGraph, DropoutSchedule, gossip_average, is_connected
from .local_solver import BatchSubproblem, project_capped_columns

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RiskInputs:
    """Per-agent lower bounds ``L_i`` and consumption scenarios (``N x M``)."""

    lower: np.ndarray
    scenarios: np.ndarray
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "scenarios", np.atleast_2d(np.asarray(self.scenarios, dtype=float)))


@dataclass
class SolveReport:
    iterations: int = 0
    primal_residual: float = math.inf
    dual_residual: float = math.inf
    converged: bool = False
    overflow: float = 0.0
    relative_overflow: float = 0.0
    phase_seconds: dict[str, float] = field(default_factory=lambda: {
        "a_update": 0.0, "z_update": 0.0, "dual_update": 0.0})
    wall_seconds: float = 0.0
    series: list[tuple[int, float, float, float]] = field(default_factory=list)
    mode: str = "exact"

    @property
    def seconds_per_iter(self) -> float:
        return self.wall_seconds / max(self.iterations, 1)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "converged": self.converged,
            "overflow": self.overflow,
            "relative_overflow": self.relative_overflow,
            "mode": self.mode,
            "series": [list(r) for r in self.series],
        }
        if include_timing:
            d["phase_seconds"] = dict(self.phase_seconds)
            d["wall_seconds"] = self.wall_seconds
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True)

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "primal", "dual", "overflow"])
        for row in self.series:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        return buf.getvalue()


def build_batch(instance: ProblemInstance, risk: RiskInputs) -> BatchSubproblem:
    c = instance.cost
    return BatchSubproblem.from_arrays(
        c.desired, c.price, c.quad_weight, risk.lower, risk.scenarios,
        instance.endowments(), instance.risk.lam, instance.risk.alpha)


def residuals(state: AllocationState, z_prev: np.ndarray, rho: float) -> tuple[float, float]:
    """RMS primal ``||a - z||`` and dual ``rho ||z - z_prev||`` residuals."""
    scale = math.sqrt(state.a.size) if state.a.size else 1.0
    primal = float(np.linalg.norm(state.a - state.z) / scale)
    dual = float(rho * np.linalg.norm(state.z - z_prev) / scale)
    return primal, dual


def station_overflow(a: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    """Per-station excess ``max(0, sum_i a_is - c_s)``."""
    return np.maximum(np.asarray(a).sum(axis=0) - capacities, 0.0)


def relative_overflow(a: np.ndarray, capacities: np.ndarray) -> float:
    """Total excess load as a fraction of total capacity (clipped to [0, 1])."""
    total = float(np.sum(capacities))
    if total <= 0:
        return 0.0 if not np.any(a > 0) else 1.0
    return float(min(1.0, station_overflow(a, capacities).sum() / total))


@dataclass(frozen=True)
class Snapshot:
    allocation: np.ndarray
    station_overflow: np.ndarray
    max_overflow: float
    primal_residual: float
    lower_bound_slack: float  # min_i (sum_s a_is - L_i)

    @property
    def lower_bounds_hold(self) -> bool:
        return self.lower_bound_slack >= -1e-9

    def certificate(self) -> dict:
        return {
            "max_overflow": self.max_overflow,
            "total_overflow": float(self.station_overflow.sum()),
            "primal_residual": self.primal_residual,
            "lower_bound_slack": self.lower_bound_slack,
            "lower_bounds_hold": self.lower_bounds_hold,
        }


def anytime_snapshot(state: AllocationState, instance: ProblemInstance, lower) -> Snapshot:
    """Current primal allocation plus measured capacity violation.

    The a-iterate always satisfies ``a >= 0`` and the per-agent bounds, so it
    is usable at any iteration; what it may violate is station capacity.
    """
    a = state.a.copy()
    over = station_overflow(a, instance.capacities())
    primal = state.primal_residual_history[-1] if state.primal_residual_history else math.inf
    slack = float(np.min(a.sum(axis=1) - np.asarray(lower))) if a.size else 0.0
    return Snapshot(a, over, float(over.max(initial=0.0)), primal, slack)


def _gossip_capacity_step(x: np.ndarray, caps: np.ndarray, graph: CommGraph, rounds: int,
                          mask: np.ndarray | None, mixing=None) -> np.ndarray:
    """Capacity enforcement from gossiped station loads.

    Every agent estimates the mean load per station by ``rounds`` of neighbor
    averaging of the clipped loads and scales its own entries by
    ``min(1, c_s / (N * estimate))``.
    """
    n = x.shape[0]
    pos = np.maximum(x, 0.0)
    est = gossip_average(graph, pos, rounds, mask, mixing)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(est > 0, caps[None, :] / (n * est), 1.0)
    return pos * np.minimum(scale, 1.0)


def run(instance: ProblemInstance, graph: CommGraph | None, cfg: AdmmConfig, risk: RiskInputs,
        schedule: DropoutSchedule | None = None, seed: int = 0,
        state: AllocationState | None = None, snapshot_hook=None
        ) -> tuple[AllocationState, SolveReport]:
    """Run consensus ADMM until both residuals fall below tolerance or the
    iteration budget is spent.

    ``snapshot_hook(iteration, state)`` is called after every iteration.
    """
    n, s = instance.n_agents, instance.n_stations
    caps = instance.capacities()
    batch = build_batch(instance, risk)
    if state is None:
        state = AllocationState.zeros(n, s)
    report = SolveReport(mode=cfg.mode)

    mixing = None
    if cfg.mode == "gossip":
        if graph is None:
            raise ValueError("gossip mode needs a communication graph")
        if graph.n != n:
            raise ValueError(f"graph has {graph.n} nodes, instance has {n} agents")
        if not is_connected(graph):
            log.warning("communication graph is disconnected; gossip estimates stay local")
        if schedule is None and cfg.dropout_prob > 0:
            schedule = DropoutSchedule(graph, 1.0, seed)
        if schedule is None:
            mixing = graph.mixing_matrix()

    scale = math.sqrt(n * s)
    t_start = time.perf_counter()
    for it in range(cfg.max_iters_t):
        t0 = time.perf_counter()
        a = batch.solve(cfg.rho, state.z - state.u)
        t1 = time.perf_counter()
        x = a + state.u
        if cfg.mode == "exact":
            z = project_capped_columns(x, caps)
        else:
            mask = None
            mix = mixing
            if schedule is not None:
                mask = schedule.mask(it, cfg.dropout_prob)
                mix = graph.mixing_matrix(mask)
            z = _gossip_capacity_step(x, caps, graph, cfg.gossip_rounds, mask, mix)
        t2 = time.perf_counter()
        u = state.u + a - z
        t3 = time.perf_counter()

        primal = float(np.linalg.norm(a - z) / scale)
        dual = float(cfg.rho * np.linalg.norm(z - state.z) / scale)
        state.a, state.z, state.u = a, z, u
        state.iter = it + 1
        state.primal_residual_history.append(primal)
        state.dual_residual_history.append(dual)
        over = float(station_overflow(a, caps).max(initial=0.0))
        report.series.append((it + 1, primal, dual, over))
        ph = report.phase_seconds
        ph["a_update"] += t1 - t0
        ph["z_update"] += t2 - t1
        ph["dual_update"] += t3 - t2

        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(u))):
            bad = int(np.argwhere(~np.isfinite(a + u))[0, 0])
            raise DivergenceError(f"non-finite iterate at iteration {it + 1}, agent {bad}")
        if max(primal, dual) > DIVERGENCE_LIMIT:
            bad = int(np.argmax(np.abs(a - z).sum(axis=1)))
            raise DivergenceError(
                f"residual {max(primal, dual):.3g} at iteration {it + 1}, agent {bad}")
        if snapshot_hook is not None:
            snapshot_hook(it + 1, state)
        if primal <= cfg.tol_primal and dual <= cfg.tol_dual:
            report.converged = True
            break

    report.wall_seconds = time.perf_counter() - t_start
    report.iterations = state.iter
    if state.primal_residual_history:
        report.primal_residual = state.primal_residual_history[-1]
        report.dual_residual = state.dual_residual_history[-1]
    report.overflow = float(station_overflow(state.a, caps).max(initial=0.0))
    report.relative_overflow = relative_overflow(state.a, caps)
    return state, report
