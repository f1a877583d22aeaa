"""
Problem data model shared by every solver.

An instance holds N agents (endowment, side information, position), S
stations (capacity, position), a separable convex cost

    J_i(a_i) = (w / 2) * ||a_i - d_i||^2 + p_i . a_i,

the risk configuration, and the ground-truth generative consumption model
used only by the evaluation harness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Agent:
    id: int
    endowment_e0: float
    side_info: np.ndarray
    position: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "side_info", np.asarray(self.side_info, dtype=float))


@dataclass(frozen=True)
class Station:
    id: int
    capacity_c: float
    position: tuple[float, float]


@dataclass(frozen=True)
class CostModel:
    desired: np.ndarray  # N x S target allocations d_i
    price: np.ndarray  # N x S linear per-unit prices p_i
    quad_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "desired", np.asarray(self.desired, dtype=float))
        object.__setattr__(self, "price", np.asarray(self.price, dtype=float))


@dataclass(frozen=True)
class RiskConfig:
    epsilon: float = 0.05
    lam: float = 1.0  # CVaR weight (serialized as "lambda")
    alpha: float = 0.1  # CVaR tail mass
    n_scenarios_m: int = 50


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    max_iters_t: int = 100
    tol_primal: float = 1e-3
    tol_dual: float = 1e-3
    mode: str = "exact"  # "exact" or "gossip"
    gossip_rounds: int = 5
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.tol_primal < 0 or self.tol_dual < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.mode not in ("exact", "gossip"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "gossip" and self.gossip_rounds < 1:
            raise ValueError("gossip mode needs at least one round")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must lie in [0, 1)")


@dataclass
class AllocationState:
    a: np.ndarray
    z: np.ndarray
    u: np.ndarray
    iter: int = 0
    primal_residual_history: list[float] = field(default_factory=list)
    dual_residual_history: list[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, n: int, s: int) -> "AllocationState":
        return cls(np.zeros((n, s)), np.zeros((n, s)), np.zeros((n, s)))


@dataclass(frozen=True)
class GenerativeModel:
    """Ground-truth heteroscedastic linear-Gaussian consumption model.

    ``X | phi ~ N(m0 + m . phi, (s0 + s . phi)^2)``. Only the evaluation
    harness and the scenario generator draw from it; learners fit their own
    :class:`desira.risk.ConsumptionModel` on generated history.
    """

    mean_coeffs: np.ndarray  # intercept first, then one weight per feature
    std_coeffs: np.ndarray
    feature_ranges: tuple[tuple[float, float], ...]
    feature_names: tuple[str, ...] = ()
    forecast_noise_factor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean_coeffs", np.asarray(self.mean_coeffs, dtype=float))
        object.__setattr__(self, "std_coeffs", np.asarray(self.std_coeffs, dtype=float))
        object.__setattr__(self, "feature_ranges",
                           tuple((float(lo), float(hi)) for lo, hi in self.feature_ranges))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def dim(self) -> int:
        return self.mean_coeffs.size - 1

    def mean(self, phi) -> np.ndarray | float:
        phi = np.asarray(phi, dtype=float)
        return self.mean_coeffs[0] + phi @ self.mean_coeffs[1:]

    def std(self, phi) -> np.ndarray | float:
        phi = np.asarray(phi, dtype=float)
        return self.std_coeffs[0] + phi @ self.std_coeffs[1:]

    def sample_features(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([r[0] for r in self.feature_ranges])
        hi = np.array([r[1] for r in self.feature_ranges])
        return lo + (hi - lo) * rng.random((n, self.dim))

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_coeffs": self.mean_coeffs.tolist(),
            "std_coeffs": self.std_coeffs.tolist(),
            "feature_ranges": [list(r) for r in self.feature_ranges],
            "feature_names": list(self.feature_names),
            "forecast_noise_factor": self.forecast_noise_factor,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GenerativeModel":
        return cls(
            mean_coeffs=d["mean_coeffs"],
            std_coeffs=d["std_coeffs"],
            feature_ranges=tuple(tuple(r) for r in d["feature_ranges"]),
            feature_names=tuple(d.get("feature_names", ())),
            forecast_noise_factor=d.get("forecast_noise_factor", 0.0),
        )


@dataclass(frozen=True)
class ProblemInstance:
    agents: list[Agent]
    stations: list[Station]
    cost: CostModel
    risk: RiskConfig
    true_model: GenerativeModel | None = None
    feature_dim_d: int = 3
    history: np.ndarray | None = None  # K x (d + 1): side info columns, then consumption
    seed: int | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def endowments(self) -> np.ndarray:
        return np.array([a.endowment_e0 for a in self.agents], dtype=float)

    def side_info(self) -> np.ndarray:
        return np.array([a.side_info for a in self.agents], dtype=float).reshape(
            self.n_agents, -1)

    def capacities(self) -> np.ndarray:
        return np.array([s.capacity_c for s in self.stations], dtype=float)

    def agent_positions(self) -> np.ndarray:
        return np.array([a.position for a in self.agents], dtype=float).reshape(-1, 2)

    def station_positions(self) -> np.ndarray:
        return np.array([s.position for s in self.stations], dtype=float).reshape(-1, 2)

    def history_features(self) -> np.ndarray:
        if self.history is None:
            raise ValueError("instance carries no consumption history")
        return self.history[:, :-1]

    def history_consumption(self) -> np.ndarray:
        if self.history is None:
            raise ValueError("instance carries no consumption history")
        return self.history[:, -1]

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        meta = dict(self.meta)
        meta["seed"] = self.seed
        meta["schema_version"] = SCHEMA_VERSION
        meta["feature_dim_d"] = self.feature_dim_d
        return {
            "agents": [
                {"id": a.id, "endowment_e0": a.endowment_e0,
                 "side_info": a.side_info.tolist(), "position": list(a.position)}
                for a in self.agents
            ],
            "stations": [
                {"id": s.id, "capacity_c": s.capacity_c, "position": list(s.position)}
                for s in self.stations
            ],
            "cost": {
                "desired": self.cost.desired.tolist(),
                "price": self.cost.price.tolist(),
                "quad_weight": self.cost.quad_weight,
            },
            "risk": {
                "epsilon": self.risk.epsilon,
                "lambda": self.risk.lam,
                "alpha": self.risk.alpha,
                "n_scenarios_m": self.risk.n_scenarios_m,
            },
            "true_model": None if self.true_model is None else self.true_model.to_dict(),
            "history": None if self.history is None else self.history.tolist(),
            "meta": meta,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProblemInstance":
        meta = dict(d.get("meta", {}))
        seed = meta.pop("seed", None)
        meta.pop("schema_version", None)
        feature_dim = meta.pop("feature_dim_d", None)
        agents = [
            Agent(int(a["id"]), float(a["endowment_e0"]), np.asarray(a["side_info"], dtype=float),
                  tuple(float(x) for x in a["position"]))
            for a in d["agents"]
        ]
        stations = [
            Station(int(s["id"]), float(s["capacity_c"]), tuple(float(x) for x in s["position"]))
            for s in d["stations"]
        ]
        n, s = len(agents), len(stations)
        c = d["cost"]
        cost = CostModel(np.asarray(c["desired"], dtype=float).reshape(n, s),
                         np.asarray(c["price"], dtype=float).reshape(n, s),
                         float(c["quad_weight"]))
        r = d["risk"]
        risk = RiskConfig(float(r["epsilon"]), float(r["lambda"]), float(r["alpha"]),
                          int(r["n_scenarios_m"]))
        tm = d.get("true_model")
        hist = d.get("history")
        if feature_dim is None:
            feature_dim = agents[0].side_info.size if agents else 0
        return cls(
            agents=agents, stations=stations, cost=cost, risk=risk,
            true_model=None if tm is None else GenerativeModel.from_dict(tm),
            feature_dim_d=int(feature_dim),
            history=None if hist is None else np.asarray(hist, dtype=float),
            seed=seed, meta=meta,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProblemInstance":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProblemInstance":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Issue:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return bool(self.issues)

    def __len__(self) -> int:
        return len(self.issues)

    def __str__(self) -> str:
        return "\n".join(str(i) for i in self.issues) or "ok"


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(np.asarray(x, dtype=float))))


def validate(instance: ProblemInstance) -> ValidationReport:
    """List every violated invariant of ``instance``; empty iff well formed."""
    issues: list[Issue] = []
    add = lambda loc, msg: issues.append(Issue(loc, msg))  # noqa: E731

    n, s, d = instance.n_agents, instance.n_stations, instance.feature_dim_d
    if n < 1:
        add("agents", "need at least one agent")
    if s < 1:
        add("stations", "need at least one station")

    seen = set()
    for k, a in enumerate(instance.agents):
        loc = f"agents[{k}]"
        if a.id in seen:
            add(f"{loc}.id", f"duplicate agent id {a.id}")
        seen.add(a.id)
        if not np.isfinite(a.endowment_e0) or a.endowment_e0 < 0:
            add(f"{loc}.endowment_e0", f"must be finite and >= 0, got {a.endowment_e0}")
        if a.side_info.ndim != 1 or a.side_info.size != d:
            add(f"{loc}.side_info", f"expected dimension {d}, got {a.side_info.size}")
        elif not _finite(a.side_info):
            add(f"{loc}.side_info", "non-finite entry")
        if len(a.position) != 2 or not _finite(a.position):
            add(f"{loc}.position", "must be two finite coordinates")

    seen = set()
    for k, st in enumerate(instance.stations):
        loc = f"stations[{k}]"
        if st.id in seen:
            add(f"{loc}.id", f"duplicate station id {st.id}")
        seen.add(st.id)
        if not np.isfinite(st.capacity_c) or st.capacity_c < 0:
            add(f"{loc}.capacity_c", f"must be finite and >= 0, got {st.capacity_c}")
        if len(st.position) != 2 or not _finite(st.position):
            add(f"{loc}.position", "must be two finite coordinates")

    cost = instance.cost
    for name in ("desired", "price"):
        m = getattr(cost, name)
        if m.shape != (n, s):
            add(f"cost.{name}", f"shape {m.shape} != ({n}, {s})")
        elif not _finite(m):
            add(f"cost.{name}", "non-finite entry")
        elif np.any(m < 0):
            i, j = np.argwhere(m < 0)[0]
            add(f"cost.{name}[{i}][{j}]", "must be >= 0")
    if not np.isfinite(cost.quad_weight) or cost.quad_weight <= 0:
        add("cost.quad_weight", f"must be > 0, got {cost.quad_weight}")

    r = instance.risk
    if not 0.0 < r.epsilon <= 0.5:
        add("risk.epsilon", f"must lie in (0, 0.5], got {r.epsilon}")
    if not r.lam >= 0:
        add("risk.lambda", f"must be >= 0, got {r.lam}")
    if not 0.0 < r.alpha < 1.0:
        add("risk.alpha", f"must lie in (0, 1), got {r.alpha}")
    if int(r.n_scenarios_m) != r.n_scenarios_m or r.n_scenarios_m < 1:
        add("risk.n_scenarios_m", f"must be an integer >= 1, got {r.n_scenarios_m}")

    tm = instance.true_model
    if tm is not None:
        if tm.dim != d or tm.std_coeffs.size != d + 1:
            add("true_model", f"coefficient vectors must have length {d + 1}")
        if len(tm.feature_ranges) != tm.dim:
            add("true_model.feature_ranges", "one range per feature required")
    if instance.history is not None:
        h = instance.history
        if h.ndim != 2 or h.shape[1] != d + 1:
            add("history", f"expected K x {d + 1} array, got shape {h.shape}")
        elif not _finite(h):
            add("history", "non-finite entry")
    return ValidationReport(tuple(issues))


def agent_cost(desired_i, price_i, quad_weight: float, a_i) -> float:
    a_i = np.asarray(a_i, dtype=float)
    diff = a_i - desired_i
    return float(0.5 * quad_weight * (diff @ diff) + price_i @ a_i)


def total_cost(instance: ProblemInstance, a) -> float:
    """Sum of the per-agent costs ``J_i`` at allocation ``a`` (N x S)."""
    a = np.asarray(a, dtype=float)
    shape = (instance.n_agents, instance.n_stations)
    if a.shape != shape:
        raise ValueError(f"allocation shape {a.shape} != {shape}")
    c = instance.cost
    diff = a - c.desired
    return float(0.5 * c.quad_weight * np.sum(diff * diff) + np.sum(c.price * a))
