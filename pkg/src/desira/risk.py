"""
Side-information consumption models and chance-constraint reformulation.

A fleet learner fits a heteroscedastic linear-Gaussian model
``X | phi ~ N(mu(phi), sigma(phi)^2)`` by ridge regression. The per-agent
requirement ``r = mu + q * inflation * sigma`` turns the shortfall chance
constraint into the linear bound ``sum_s a_s >= max(0, r - E0)``, where ``q``
is either the Gaussian quantile ``Phi^-1(1 - eps)`` or a split-conformal
quantile of standardized residuals.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .stats import RngStream, inv_norm_cdf

SIGMA_FLOOR = 1e-3
# E|Z| = sqrt(2/pi) for Z ~ N(0, 1), so sqrt(pi/2)|resid| is unbiased for sigma.
_HALF_NORMAL = math.sqrt(math.pi / 2.0)


class RankDeficientError(ValueError):
    """Ridge system is singular; the caller must raise the penalty."""


@dataclass(frozen=True)
class ConsumptionModel:
    mean_coeffs: np.ndarray  # intercept, then one weight per feature
    std_coeffs: np.ndarray
    sigma_floor: float = SIGMA_FLOOR
    quantile_mode: str = "gaussian"  # or "conformal"
    conformal_quantile: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean_coeffs", np.asarray(self.mean_coeffs, dtype=float))
        object.__setattr__(self, "std_coeffs", np.asarray(self.std_coeffs, dtype=float))
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if self.quantile_mode not in ("gaussian", "conformal"):
            raise ValueError(f"unknown quantile mode {self.quantile_mode!r}")

    @property
    def dim(self) -> int:
        return self.mean_coeffs.size - 1

    @classmethod
    def constant(cls, mu: float, sigma: float, dim: int, **kw) -> "ConsumptionModel":
        """Model that ignores side information (zero feature weights)."""
        m = np.zeros(dim + 1)
        s = np.zeros(dim + 1)
        m[0], s[0] = mu, sigma
        return cls(m, s, **kw)

    def to_dict(self) -> dict:
        return {
            "mean_coeffs": self.mean_coeffs.tolist(),
            "std_coeffs": self.std_coeffs.tolist(),
            "sigma_floor": self.sigma_floor,
            "mode": self.quantile_mode,
            "conformal_quantile": self.conformal_quantile,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConsumptionModel":
        return cls(d["mean_coeffs"], d["std_coeffs"], d.get("sigma_floor", SIGMA_FLOOR),
                   d.get("mode", "gaussian"), d.get("conformal_quantile"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConsumptionModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _ridge(design: np.ndarray, y: np.ndarray, penalty: float) -> np.ndarray:
    reg = np.full(design.shape[1], float(penalty))
    reg[0] = 0.0  # intercept is not shrunk
    gram = design.T @ design + np.diag(reg)
    if penalty == 0.0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise RankDeficientError("rank-deficient design with zero ridge penalty")
    return np.linalg.solve(gram, design.T @ y)


def fit_model(history, ridge_penalty: float = 0.0, sigma_floor: float = SIGMA_FLOOR
              ) -> ConsumptionModel:
    """Fit mean and standard-deviation regressions on ``(side_info, consumption)`` pairs.

    ``history`` is either a sequence of pairs or a ``K x (d + 1)`` array whose
    last column is consumption. The mean is ridge least squares; the standard
    deviation is ridge regression of ``sqrt(pi/2) * |residual|`` on the same
    features.
    """
    if ridge_penalty < 0:
        raise ValueError("ridge_penalty must be nonnegative")
    if isinstance(history, np.ndarray):
        feats, y = history[:, :-1], history[:, -1]
    else:
        feats = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in history])
        y = np.array([float(x) for _, x in history])
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    k, d = feats.shape
    if k < d + 2:
        raise ValueError(f"need at least {d + 2} samples, got {k}")
    design = np.hstack([np.ones((k, 1)), feats])
    mean_coeffs = _ridge(design, y, ridge_penalty)
    resid = y - design @ mean_coeffs
    std_coeffs = _ridge(design, _HALF_NORMAL * np.abs(resid), ridge_penalty)
    return ConsumptionModel(mean_coeffs, std_coeffs, sigma_floor)


def predict_many(model: ConsumptionModel, side_info) -> tuple[np.ndarray, np.ndarray]:
    phi = np.atleast_2d(np.asarray(side_info, dtype=float))
    if phi.shape[1] != model.dim:
        raise ValueError(f"side_info dimension {phi.shape[1]} != model dimension {model.dim}")
    mu = model.mean_coeffs[0] + phi @ model.mean_coeffs[1:]
    sigma = np.maximum(model.std_coeffs[0] + phi @ model.std_coeffs[1:], model.sigma_floor)
    return mu, sigma


def predict(model: ConsumptionModel, side_info) -> tuple[float, float]:
    phi = np.asarray(side_info, dtype=float)
    if phi.ndim != 1:
        raise ValueError("predict takes one side-information vector")
    mu, sigma = predict_many(model, phi[None, :])
    return float(mu[0]), float(sigma[0])


def quantile_multiplier(model: ConsumptionModel, epsilon: float) -> float:
    if not 0.0 < epsilon <= 0.5:
        raise ValueError(f"epsilon must lie in (0, 0.5], got {epsilon!r}")
    if model.quantile_mode == "conformal":
        if model.conformal_quantile is None:
            raise ValueError("conformal mode needs a calibrated quantile")
        return model.conformal_quantile
    return inv_norm_cdf(1.0 - epsilon)


def risk_requirement(model: ConsumptionModel, side_info, epsilon: float,
                     inflation: float = 1.0) -> float | np.ndarray:
    """``mu + q * inflation * sigma``; vectorized when ``side_info`` is 2-D."""
    if inflation < 1.0:
        raise ValueError("inflation must be >= 1")
    q = quantile_multiplier(model, epsilon)
    phi = np.asarray(side_info, dtype=float)
    if phi.ndim == 1:
        mu, sigma = predict(model, phi)
    else:
        mu, sigma = predict_many(model, phi)
    return mu + q * inflation * sigma


def allocation_lower_bound(r, endowment_e0):
    """Minimum total allocation ``max(0, r - E0)`` implied by the requirement."""
    out = np.maximum(0.0, np.asarray(r, dtype=float) - np.asarray(endowment_e0, dtype=float))
    return float(out) if out.ndim == 0 else out


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def sample_scenarios(model: ConsumptionModel, side_info, m: int, rng) -> np.ndarray:
    """``m`` i.i.d. draws from the predicted Gaussian at ``side_info``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    mu, sigma = predict(model, side_info)
    return mu + sigma * _generator(rng).standard_normal(m)


@dataclass
class CalibrationState:
    """Rolling window of ``(consumption, side_info)`` observations for one agent."""

    capacity_k: int = 500
    quantile_mode: str = "gaussian"
    inflation: float = 1.0
    conservative_empty: bool = False
    window: deque = field(default=None)

    def __post_init__(self):
        if self.capacity_k < 1:
            raise ValueError("window capacity must be >= 1")
        if self.inflation < 1.0:
            raise ValueError("inflation must be >= 1")
        if self.window is None:
            self.window = deque(maxlen=self.capacity_k)

    def push(self, consumption: float, side_info) -> None:
        self.window.append((float(consumption), np.asarray(side_info, dtype=float)))

    def extend(self, consumption, side_info) -> None:
        for x, phi in zip(np.asarray(consumption, dtype=float), np.atleast_2d(side_info)):
            self.push(x, phi)

    def violation_rate(self, model: ConsumptionModel, epsilon: float) -> float:
        """Fraction of window entries exceeding their current requirement."""
        if not self.window:
            return 1.0 if self.conservative_empty else 0.0
        xs = np.array([x for x, _ in self.window])
        phis = np.array([p for _, p in self.window])
        r = risk_requirement(model, phis, epsilon, self.inflation)
        return float(np.mean(xs > r))


def update_and_violation_rate(cal: CalibrationState, observation, model: ConsumptionModel,
                              epsilon: float) -> float:
    """Push ``observation = (consumption, side_info)`` (if given) and return the
    window's empirical violation rate. An empty window reports 0 unless the
    state was built with ``conservative_empty=True``."""
    if observation is not None:
        cal.push(*observation)
    return cal.violation_rate(model, epsilon)


def inflate_if_violated(cal: CalibrationState, model: ConsumptionModel, epsilon: float,
                        tolerance_delta: float = 0.02, step: float = 1.1) -> float:
    """Multiply the sigma inflation by ``step`` when the violation rate exceeds
    ``epsilon + tolerance_delta``; returns the (possibly unchanged) factor."""
    if step <= 1.0:
        raise ValueError("step must exceed 1")
    if cal.violation_rate(model, epsilon) > epsilon + tolerance_delta:
        cal.inflation *= step
    cal.inflation = max(cal.inflation, 1.0)
    return cal.inflation


def standardized_scores(model: ConsumptionModel, side_info, consumption) -> np.ndarray:
    mu, sigma = predict_many(model, side_info)
    return (np.asarray(consumption, dtype=float) - mu) / sigma


def calibrate_conformal(residual_scores, epsilon: float) -> float:
    """Split-conformal multiplier: the ``ceil((K+1)(1-eps))``-th smallest score.

    With too few scores (``K < 1/eps - 1``) the rank exceeds ``K`` and the
    method returns ``inf``, i.e. an unbounded requirement.
    """
    s = np.sort(np.asarray(residual_scores, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("calibrate_conformal needs at least one score")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    k = s.size
    rank = math.ceil((k + 1) * (1.0 - epsilon) - 1e-9)
    if rank > k:
        return math.inf
    return float(s[max(rank, 1) - 1])


def conformalize(model: ConsumptionModel, side_info, consumption, epsilon: float
                 ) -> ConsumptionModel:
    """Copy of ``model`` whose quantile comes from held-out residual scores."""
    q = calibrate_conformal(standardized_scores(model, side_info, consumption), epsilon)
    return replace(model, quantile_mode="conformal", conformal_quantile=q)
