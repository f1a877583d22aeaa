"""
Comparison methods and the risk inputs each one sees.

* centralized oracle: exact-projection ADMM at tight tolerance, fed the
  ground-truth conditional model ("full side information").
* DESIRA: the coordinator fed a ridge-fitted side-information model.
* no side info: the same coordinator fed the fleet-pooled mean and std.
* greedy FCFS: agents in random order take what they need from the
  cheapest stations until capacity runs out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coordinator import RiskInputs, SolveReport, build_batch, run
from .domain import AdmmConfig, AllocationState, ProblemInstance
from .graph import CommGraph, DropoutSchedule
from .risk import ConsumptionModel, allocation_lower_bound, fit_model, predict_many
from .stats import RngStream, inv_norm_cdf

# Stream ids (per instance seed) for the method-level randomness.
SCENARIO_STREAM = 101
GREEDY_STREAM = 102
FORECAST_NOISE_STREAM = 103

DEFAULT_RIDGE = 1e-6
ORACLE_GRID = 1000


def gaussian_risk_inputs(mu, sigma, endowment, epsilon: float, m: int, seed: int,
                         inflation: float = 1.0, quantile: float | None = None) -> RiskInputs:
    """Lower bounds from the Gaussian (or supplied) quantile and ``m`` scenarios
    per agent. The standard-normal draws come from a fixed stream, so every
    method sees the same underlying noise."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = inv_norm_cdf(1.0 - epsilon) if quantile is None else quantile
    lower = allocation_lower_bound(mu + q * inflation * sigma, endowment)
    zs = RngStream(seed, SCENARIO_STREAM).generator().standard_normal((mu.size, m))
    scen = mu[:, None] + inflation * sigma[:, None] * zs
    return RiskInputs(np.atleast_1d(lower), scen, mu, sigma)


def quantile_grid(m: int) -> np.ndarray:
    """Standard-normal quantiles at the midpoints ``(k - 1/2) / m``."""
    return np.array([inv_norm_cdf((k + 0.5) / m) for k in range(m)])


def oracle_inputs(instance: ProblemInstance, m: int = ORACLE_GRID) -> RiskInputs:
    """Ground-truth requirements; the risk term uses a deterministic quantile
    grid of the true conditional law instead of random samples."""
    gm = instance.true_model
    if gm is None:
        raise ValueError("instance has no ground-truth model")
    phi = instance.side_info()
    mu, sigma = gm.mean(phi), gm.std(phi)
    q = inv_norm_cdf(1.0 - instance.risk.epsilon)
    lower = allocation_lower_bound(mu + q * sigma, instance.endowments())
    scen = mu[:, None] + sigma[:, None] * quantile_grid(m)[None, :]
    return RiskInputs(np.atleast_1d(lower), scen, mu, sigma)


def fitted_model(instance: ProblemInstance, ridge_penalty: float = DEFAULT_RIDGE) -> ConsumptionModel:
    return fit_model(instance.history, ridge_penalty)


def pooled_model(instance: ProblemInstance) -> ConsumptionModel:
    """Side-information-free model: fleet-wide mean and std of past consumption."""
    x = instance.history_consumption()
    return ConsumptionModel.constant(float(x.mean()), float(x.std(ddof=1)), instance.feature_dim_d)


def model_inputs(instance: ProblemInstance, model: ConsumptionModel, inflation: float = 1.0,
                 forecast_noise: float = 0.0) -> RiskInputs:
    """Risk inputs for a learned model, optionally with Gaussian forecast noise
    of standard deviation ``forecast_noise * sigma_i`` added to each mean."""
    mu, sigma = predict_many(model, instance.side_info())
    if forecast_noise > 0:
        gen = RngStream(_seed(instance), FORECAST_NOISE_STREAM).generator()
        mu = mu + forecast_noise * sigma * gen.standard_normal(mu.size)
    r = instance.risk
    q = model.conformal_quantile if model.quantile_mode == "conformal" else None
    return gaussian_risk_inputs(mu, sigma, instance.endowments(), r.epsilon, r.n_scenarios_m,
                                _seed(instance), inflation, q)


def _seed(instance: ProblemInstance) -> int:
    return int(instance.seed or 0)


def objective(instance: ProblemInstance, a: np.ndarray, risk: RiskInputs) -> float:
    """Total ``sum_i J_i + lam * CVaR`` at ``a`` under the scenarios in ``risk``."""
    return float(build_batch(instance, risk).objective(np.asarray(a, dtype=float)).sum())


@dataclass
class CentralizedResult:
    allocation: np.ndarray
    objective: float
    state: AllocationState
    report: SolveReport
    kkt_max_change: float
    certified: bool


def centralized_solve(instance: ProblemInstance, tol: float = 1e-6, risk: RiskInputs | None = None,
                      rho: float = 1.0, max_iters: int = 5000, kkt_tol: float = 1e-4
                      ) -> CentralizedResult:
    """Reference solve: exact-projection ADMM to ``tol`` with full information.

    Optimality is certified by re-running every agent's a-update at the
    returned ``(z, u)``: at a fixed point none of them moves by more than
    ``kkt_tol``.
    """
    risk = oracle_inputs(instance) if risk is None else risk
    cfg = AdmmConfig(rho=rho, max_iters_t=max_iters, tol_primal=tol, tol_dual=tol, mode="exact")
    state, report = run(instance, None, cfg, risk)
    again = build_batch(instance, risk).solve(rho, state.z - state.u)
    change = float(np.max(np.abs(again - state.a))) if again.size else 0.0
    return CentralizedResult(state.a.copy(), objective(instance, state.a, risk), state, report,
                             change, bool(report.converged and change <= kkt_tol))


def greedy_fcfs(instance: ProblemInstance, lower, rng=None) -> np.ndarray:
    """First-come-first-served allocation.

    Agents are served in a seeded random order; each visits stations by
    increasing price and takes ``min(remaining need, remaining capacity)``.
    Capacities are never exceeded.
    """
    lower = np.asarray(lower, dtype=float)
    n, s = instance.n_agents, instance.n_stations
    if rng is None:
        rng = RngStream(_seed(instance), GREEDY_STREAM)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    order = gen.permutation(n)
    # A relative margin of a few ulps per agent keeps every column sum under
    # its capacity whatever order the sum is later taken in.
    remaining = instance.capacities() * (1.0 - 4.0 * n * np.finfo(float).eps)
    price = instance.cost.price
    a = np.zeros((n, s))
    for i in order:
        need = lower[i]
        for j in np.argsort(price[i], kind="stable"):
            if need <= 0:
                break
            take = min(need, remaining[j])
            if take > 0:
                a[i, j] = take
                remaining[j] -= take
                need -= take
    return a


def desira_solve(instance: ProblemInstance, graph: CommGraph | None, cfg: AdmmConfig,
                 model: ConsumptionModel | None = None, schedule: DropoutSchedule | None = None,
                 inflation: float = 1.0, forecast_noise: float = 0.0):
    model = fitted_model(instance) if model is None else model
    risk = model_inputs(instance, model, inflation, forecast_noise)
    state, report = run(instance, graph, cfg, risk, schedule, _seed(instance))
    return state, report, risk


def no_side_info_solve(instance: ProblemInstance, graph: CommGraph | None, cfg: AdmmConfig,
                       schedule: DropoutSchedule | None = None):
    """Coordinator run with every agent's model replaced by the pooled one."""
    risk = model_inputs(instance, pooled_model(instance))
    state, report = run(instance, graph, cfg, risk, schedule, _seed(instance))
    return state, report, risk
