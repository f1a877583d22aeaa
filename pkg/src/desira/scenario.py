"""
Synthetic fleet instances.

Urban instances place agents and stations uniformly on the unit square,
draw station capacities ``~ U(0.05 N, 0.15 N)`` and endowments
``~ U(50, 100)`` kWh, and generate consumption from a heteroscedastic
linear-Gaussian model in (distance, congestion, temperature). The
constellation instance puts 60 satellites on a 6-plane ring topology with
intermittent inter-plane links.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .domain import (Agent, CostModel, GenerativeModel, ProblemInstance, RiskConfig, Station)
from .graph import CommGraph, DropoutSchedule, build_constellation, build_geometric, radius_for_degree
from .risk import allocation_lower_bound
from .stats import RngStream, inv_norm_cdf

URBAN_FEATURES = ("distance_km", "congestion", "temperature_c")
SATELLITE_FEATURES = ("orbit_phase", "eclipse_fraction", "payload_duty")

# Stream ids for independent draws inside one seed.
_S_POS, _S_STATION, _S_ENDOW, _S_FEAT, _S_HIST, _S_CAP = range(1, 7)
MAX_CAPACITY_RETRIES = 100


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Every knob of the urban generator; serializes to a flat JSON object."""

    n_agents: int = 200
    n_stations: int = 20
    seed: int = 0
    # consumption model: intercept + (distance, congestion, temperature)
    mean_coeffs: tuple[float, ...] = (5.0, 0.18, 8.0, 0.15)
    std_coeffs: tuple[float, ...] = (1.0, 0.04, 0.0, 0.0)
    feature_ranges: tuple[tuple[float, float], ...] = ((20.0, 260.0), (0.0, 1.0), (-10.0, 35.0))
    endowment_range: tuple[float, float] = (50.0, 100.0)
    capacity_frac: tuple[float, float] = (0.05, 0.15)
    history_size: int = 500
    target_degree: float = 8.0
    price_per_distance: float = 0.1
    quad_weight: float = 0.1
    desired: str = "nearest_deficit"  # or "zero"
    epsilon: float = 0.05
    lam: float = 1.0
    alpha: float = 0.1
    n_scenarios_m: int = 50
    forecast_noise_factor: float = 0.0

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_ranges"] = [list(r) for r in self.feature_ranges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("mean_coeffs", "std_coeffs", "endowment_range", "capacity_frac"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        if "feature_ranges" in kw:
            kw["feature_ranges"] = tuple(tuple(float(x) for x in r) for r in kw["feature_ranges"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def generative_model(self) -> GenerativeModel:
        return GenerativeModel(self.mean_coeffs, self.std_coeffs, self.feature_ranges,
                               URBAN_FEATURES, self.forecast_noise_factor)


def sample_true_consumption(gm: GenerativeModel, side_info, rng) -> np.ndarray | float:
    """Draw consumption from the ground-truth model (one draw per row)."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    phi = np.asarray(side_info, dtype=float)
    mu, sd = gm.mean(phi), gm.std(phi)
    draw = mu + sd * gen.standard_normal(np.shape(mu))
    return float(draw) if np.ndim(draw) == 0 else draw


def true_requirement(gm: GenerativeModel, side_info, epsilon: float) -> np.ndarray:
    return gm.mean(side_info) + inv_norm_cdf(1.0 - epsilon) * gm.std(side_info)


def _history(gm: GenerativeModel, size: int, seed: int) -> np.ndarray:
    gen = RngStream(seed, _S_HIST).generator()
    feats = gm.sample_features(size, gen)
    x = sample_true_consumption(gm, feats, gen)
    return np.hstack([feats, np.asarray(x).reshape(-1, 1)])


def _cost_model(agent_pos, station_pos, deficits, cfg_price, quad_weight, desired_mode):
    dist = np.linalg.norm(agent_pos[:, None, :] - station_pos[None, :, :], axis=2)
    price = cfg_price * dist
    desired = np.zeros_like(dist)
    if desired_mode == "nearest_deficit":
        nearest = np.argmin(dist, axis=1)
        desired[np.arange(len(agent_pos)), nearest] = deficits
    elif desired_mode != "zero":
        raise ValueError(f"unknown desired mode {desired_mode!r}")
    return CostModel(desired, price, quad_weight)


def generate_urban(cfg: ScenarioConfig | None = None, **overrides
                   ) -> tuple[ProblemInstance, CommGraph]:
    """Urban EV fleet instance and its random geometric communication graph."""
    cfg = (cfg or ScenarioConfig()).with_overrides(**overrides)
    n, s, seed = cfg.n_agents, cfg.n_stations, cfg.seed
    if n < 1 or s < 1:
        raise ValueError("need at least one agent and one station")
    gm = cfg.generative_model()

    agent_pos = RngStream(seed, _S_POS).generator().random((n, 2))
    station_pos = RngStream(seed, _S_STATION).generator().random((s, 2))
    lo, hi = cfg.endowment_range
    e0 = lo + (hi - lo) * RngStream(seed, _S_ENDOW).generator().random(n)
    phi = gm.sample_features(n, RngStream(seed, _S_FEAT).generator())

    need = allocation_lower_bound(true_requirement(gm, phi, cfg.epsilon), e0)
    cap_gen = RngStream(seed, _S_CAP).generator()
    c_lo, c_hi = cfg.capacity_frac[0] * n, cfg.capacity_frac[1] * n
    for _ in range(MAX_CAPACITY_RETRIES):
        caps = c_lo + (c_hi - c_lo) * cap_gen.random(s)
        if caps.sum() >= need.sum():
            break
    else:
        raise ScenarioError("could not draw capacities covering the aggregate requirement")

    cost = _cost_model(agent_pos, station_pos, need, cfg.price_per_distance, cfg.quad_weight,
                       cfg.desired)
    agents = [Agent(i, float(e0[i]), phi[i], (float(agent_pos[i, 0]), float(agent_pos[i, 1])))
              for i in range(n)]
    stations = [Station(j, float(caps[j]), (float(station_pos[j, 0]), float(station_pos[j, 1])))
                for j in range(s)]
    risk = RiskConfig(cfg.epsilon, cfg.lam, cfg.alpha, cfg.n_scenarios_m)
    radius = radius_for_degree(n, cfg.target_degree)
    inst = ProblemInstance(agents, stations, cost, risk, gm, gm.dim,
                           _history(gm, cfg.history_size, seed), seed,
                           {"kind": "urban", "scenario": cfg.to_dict(), "radius": radius})
    return inst, build_geometric(agent_pos, radius)


# -- constellation ---------------------------------------------------------

@dataclass(frozen=True)
class ConstellationConfig:
    planes: int = 6
    per_plane: int = 10
    n_pools: int = 4
    seed: int = 0
    interplane_up_prob: float = 0.7
    # power draw (Wh per orbit) vs (phase, eclipse fraction, payload duty)
    mean_coeffs: tuple[float, ...] = (30.0, 2.0, 30.0, 25.0)
    std_coeffs: tuple[float, ...] = (1.0, 0.0, 4.0, 8.0)
    feature_ranges: tuple[tuple[float, float], ...] = ((0.0, 1.0), (0.0, 0.4), (0.1, 0.9))
    endowment_range: tuple[float, float] = (50.0, 100.0)
    pool_capacity_frac: tuple[float, float] = (0.5, 1.5)
    history_size: int = 500
    quad_weight: float = 1.0
    price_per_distance: float = 0.1
    epsilon: float = 0.05
    lam: float = 1.0
    alpha: float = 0.1
    n_scenarios_m: int = 50

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_ranges"] = [list(r) for r in self.feature_ranges]
        return d


def generate_constellation(cfg: ConstellationConfig | None = None, **overrides
                           ) -> tuple[ProblemInstance, CommGraph, DropoutSchedule]:
    """LEO constellation: ``planes x per_plane`` satellites sharing power pools.

    Side information is (orbit phase in [0, 1), eclipse fraction, payload
    duty cycle). Stations stand for ground/relay power-budget pools; a
    satellite's price for a pool grows with its angular distance to it.
    """
    cfg = replace(cfg or ConstellationConfig(), **overrides)
    n = cfg.planes * cfg.per_plane
    seed = cfg.seed
    gm = GenerativeModel(cfg.mean_coeffs, cfg.std_coeffs, cfg.feature_ranges,
                         SATELLITE_FEATURES, 0.0)
    graph, schedule = build_constellation(cfg.planes, cfg.per_plane, cfg.interplane_up_prob, seed)

    slot = np.arange(n) % cfg.per_plane
    plane = np.arange(n) // cfg.per_plane
    phase = (slot + 0.5 * (plane % 2)) / cfg.per_plane
    feat_gen = RngStream(seed, _S_FEAT).generator()
    eclipse = cfg.feature_ranges[1][0] + (cfg.feature_ranges[1][1] - cfg.feature_ranges[1][0]) * (
        0.5 + 0.5 * np.cos(2 * np.pi * phase)) * feat_gen.uniform(0.6, 1.0, n)
    duty_lo, duty_hi = cfg.feature_ranges[2]
    duty = duty_lo + (duty_hi - duty_lo) * feat_gen.random(n)
    phi = np.column_stack([phase, eclipse, duty])

    # satellites placed on a torus (phase, plane angle) for pricing only
    ang = np.column_stack([phase, plane / cfg.planes])
    pos = 0.5 + 0.45 * np.column_stack([np.cos(2 * np.pi * ang[:, 0]), np.sin(2 * np.pi * ang[:, 0])])
    pool_ang = (np.arange(cfg.n_pools) + 0.5) / cfg.n_pools
    pool_pos = 0.5 + 0.45 * np.column_stack([np.cos(2 * np.pi * pool_ang), np.sin(2 * np.pi * pool_ang)])

    lo, hi = cfg.endowment_range
    e0 = lo + (hi - lo) * RngStream(seed, _S_ENDOW).generator().random(n)
    need = allocation_lower_bound(true_requirement(gm, phi, cfg.epsilon), e0)
    cap_gen = RngStream(seed, _S_CAP).generator()
    c_lo, c_hi = cfg.pool_capacity_frac[0] * n, cfg.pool_capacity_frac[1] * n
    for _ in range(MAX_CAPACITY_RETRIES):
        caps = c_lo + (c_hi - c_lo) * cap_gen.random(cfg.n_pools)
        if caps.sum() >= need.sum():
            break
    else:
        raise ScenarioError("could not draw pool capacities covering the aggregate requirement")

    cost = _cost_model(pos, pool_pos, need, cfg.price_per_distance, cfg.quad_weight, "zero")
    agents = [Agent(i, float(e0[i]), phi[i], (float(pos[i, 0]), float(pos[i, 1])))
              for i in range(n)]
    stations = [Station(j, float(caps[j]), (float(pool_pos[j, 0]), float(pool_pos[j, 1])))
                for j in range(cfg.n_pools)]
    risk = RiskConfig(cfg.epsilon, cfg.lam, cfg.alpha, cfg.n_scenarios_m)
    inst = ProblemInstance(agents, stations, cost, risk, gm, gm.dim,
                           _history(gm, cfg.history_size, seed), seed,
                           {"kind": "constellation", "scenario": cfg.to_dict()})
    return inst, graph, schedule


def default_graph(instance: ProblemInstance) -> tuple[CommGraph, DropoutSchedule | None]:
    """Rebuild the communication graph an instance was generated with."""
    meta = instance.meta or {}
    if meta.get("kind") == "constellation":
        sc = meta.get("scenario", {})
        return build_constellation(int(sc.get("planes", 6)), int(sc.get("per_plane", 10)),
                                   float(sc.get("interplane_up_prob", 1.0)),
                                   int(instance.seed or 0))
    radius = meta.get("radius")
    if radius is None:
        radius = radius_for_degree(instance.n_agents, ScenarioConfig.target_degree)
    return build_geometric(instance.agent_positions(), float(radius)), None
