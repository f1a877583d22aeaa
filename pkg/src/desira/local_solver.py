"""
Per-agent ADMM a-update and the capacity projection primitive.

The local problem for agent i is

    min_a  (w/2)||a - d||^2 + p.a + lam * CVaR_alpha[max(0, xi - E0 - 1.a)]
           + (rho/2)||a - v||^2
    s.t.   a >= 0,  1.a >= L

The risk term and the lower bound only see the total ``t = 1.a``. For a
fixed total, the quadratic part is minimized by projecting the combined
anchor ``c = (w d + rho v - p) / (w + rho)`` onto the scaled simplex
``{a >= 0, 1.a = t}``, so the problem collapses to a convex 1-D search over
``t in [L, t_max]``. All routines are vectorized over agents (rows).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stats import cvar_weights

GOLDEN_TOL = 1e-8
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _simplex_threshold(c_desc: np.ndarray, csum: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Threshold tau with sum(max(c - tau, 0)) == t, rows independent.

    ``c_desc`` holds each row sorted in decreasing order and ``csum`` its
    cumulative sum. For ``t == 0`` every row maps to zero.
    """
    j = np.arange(1, c_desc.shape[1] + 1)
    cond = c_desc - (csum - t[:, None]) / j > 0
    # cond is true on a prefix; k is the prefix length (at least 1).
    k = np.maximum(cond.sum(axis=1), 1)
    rows = np.arange(c_desc.shape[0])
    return (csum[rows, k - 1] - t) / k


def project_simplex_rows(c: np.ndarray, t) -> np.ndarray:
    """Project each row of ``c`` onto ``{a >= 0, sum(a) = t_row}``."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (c.shape[0],)).copy()
    if np.any(t < 0):
        raise ValueError("simplex size must be nonnegative")
    c_desc = -np.sort(-c, axis=1)
    tau = _simplex_threshold(c_desc, np.cumsum(c_desc, axis=1), t)
    return np.maximum(c - tau[:, None], 0.0)


def project_capped_simplex(v, cap: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{y >= 0, sum(y) <= cap}``."""
    v = np.asarray(v, dtype=float)
    if cap < 0:
        raise ValueError("cap must be nonnegative")
    pos = np.maximum(v, 0.0)
    if pos.sum() <= cap:
        return pos
    return project_simplex_rows(v[None, :], cap)[0]


def project_capped_columns(x: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Column-wise :func:`project_capped_simplex` (one column per station)."""
    x = np.asarray(x, dtype=float)
    caps = np.asarray(caps, dtype=float)
    pos = np.maximum(x, 0.0)
    over = pos.sum(axis=0) > caps
    if not np.any(over):
        return pos
    out = pos.copy()
    out[:, over] = project_simplex_rows(x[:, over].T, caps[over]).T
    return out


@dataclass(frozen=True)
class LocalSubproblem:
    """Data of one agent's a-update.

    ``anchor`` is ``z_i - u_i``; ``scenarios`` are consumption draws xi_m.
    """

    agent: int
    desired: np.ndarray
    price: np.ndarray
    quad_weight: float
    rho: float
    anchor: np.ndarray
    lower_bound: float
    scenarios: np.ndarray
    lam: float
    alpha: float
    endowment_e0: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.lower_bound < 0:
            raise ValueError("lower bound must be nonnegative")


@dataclass
class BatchSubproblem:
    """All agents' a-update data, stacked by row.

    The scenario matrix is stored sorted in decreasing order per row; the
    risk term is a fixed weight vector applied to the shortfalls, so it is
    evaluated for every row in one matrix-vector product.
    """

    desired: np.ndarray  # N x S
    price: np.ndarray  # N x S
    quad_weight: float
    lower: np.ndarray  # N
    scenarios_desc: np.ndarray  # N x M, rows sorted decreasing
    endowment: np.ndarray  # N
    lam: float
    alpha: float

    def __post_init__(self):
        self.desired = np.asarray(self.desired, dtype=float)
        self.price = np.asarray(self.price, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.endowment = np.asarray(self.endowment, dtype=float)
        self.scenarios_desc = np.atleast_2d(np.asarray(self.scenarios_desc, dtype=float))
        if np.any(self.lower < 0):
            raise ValueError("lower bounds must be nonnegative")
        self._cw = cvar_weights(self.scenarios_desc.shape[1], self.alpha)
        # Only the weighted head of the sorted scenarios can matter.
        nz = int(np.count_nonzero(self._cw))
        self._cw = self._cw[:nz]
        self._base = self.scenarios_desc[:, :nz] - self.endowment[:, None]

    @classmethod
    def from_arrays(cls, desired, price, quad_weight, lower, scenarios, endowment, lam, alpha):
        sc = np.atleast_2d(np.asarray(scenarios, dtype=float))
        return cls(desired, price, quad_weight, lower, -np.sort(-sc, axis=1), endowment,
                   lam, alpha)

    @property
    def n(self) -> int:
        return self.desired.shape[0]

    def risk_term(self, t: np.ndarray) -> np.ndarray:
        """``lam * CVaR_alpha`` of the shortfall at totals ``t`` (one per row)."""
        if self.lam == 0.0:
            return np.zeros_like(t)
        return self.lam * (np.maximum(self._base - t[:, None], 0.0) @ self._cw)

    def cost(self, a: np.ndarray) -> np.ndarray:
        diff = a - self.desired
        return 0.5 * self.quad_weight * np.sum(diff * diff, axis=1) + np.sum(self.price * a, axis=1)

    def objective(self, a: np.ndarray) -> np.ndarray:
        """Per-row ``f_i(a_i) = J_i + lam * CVaR``."""
        return self.cost(a) + self.risk_term(a.sum(axis=1))

    def solve(self, rho: float, anchor: np.ndarray, tol: float = GOLDEN_TOL) -> np.ndarray:
        """Exact a-update for every row at proximal anchor ``v = z - u``."""
        if rho <= 0:
            raise ValueError("rho must be positive")
        w = self.quad_weight
        k = w + rho
        c = (w * self.desired + rho * anchor - self.price) / k
        c_desc = -np.sort(-c, axis=1)
        csum = np.cumsum(c_desc, axis=1)

        def value(t):
            tau = _simplex_threshold(c_desc, csum, t)
            q = np.minimum(c, tau[:, None])
            return 0.5 * k * np.sum(q * q, axis=1) + self.risk_term(t)

        lo = self.lower.copy()
        free_opt = np.maximum(c, 0.0).sum(axis=1)
        risk_top = self._base[:, 0] if self._base.shape[1] else np.zeros(self.n)
        if self.lam == 0.0:
            risk_top = np.zeros(self.n)
        hi = np.maximum.reduce([lo, free_opt, risk_top])

        width = float(np.max(hi - lo)) if self.n else 0.0
        if width > tol:
            steps = int(math.ceil(math.log(tol / width) / math.log(_INVPHI)))
            x1 = hi - _INVPHI * (hi - lo)
            x2 = lo + _INVPHI * (hi - lo)
            f1, f2 = value(x1), value(x2)
            for _ in range(steps):
                left = f1 <= f2
                # minimum in [lo, x2] where left, else in [x1, hi]
                hi = np.where(left, x2, hi)
                lo = np.where(left, lo, x1)
                new_x1 = np.where(left, hi - _INVPHI * (hi - lo), x2)
                new_x2 = np.where(left, x1, lo + _INVPHI * (hi - lo))
                probe = np.where(left, new_x1, new_x2)
                fp = value(probe)
                f1, f2 = np.where(left, fp, f2), np.where(left, f1, fp)
                x1, x2 = new_x1, new_x2
            t = 0.5 * (lo + hi)
            # The bracket end points are admissible too; keep the best of the three.
            cand = np.stack([t, lo, hi])
            vals = np.stack([value(t), value(lo), value(hi)])
            t = cand[np.argmin(vals, axis=0), np.arange(self.n)]
        else:
            t = lo
        t = np.maximum(t, self.lower)
        tau = _simplex_threshold(c_desc, csum, t)
        return np.maximum(c - tau[:, None], 0.0)


def _batch_of(sub: LocalSubproblem) -> BatchSubproblem:
    return BatchSubproblem.from_arrays(
        np.asarray(sub.desired, dtype=float)[None, :],
        np.asarray(sub.price, dtype=float)[None, :],
        sub.quad_weight,
        np.array([sub.lower_bound]),
        np.asarray(sub.scenarios, dtype=float)[None, :],
        np.array([sub.endowment_e0]),
        sub.lam,
        sub.alpha,
    )


def solve_a_update(sub: LocalSubproblem, tol: float = GOLDEN_TOL) -> np.ndarray:
    """Solve one agent's a-update to accuracy ``tol`` on the total allocation."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    anchor = np.asarray(sub.anchor, dtype=float)[None, :]
    return _batch_of(sub).solve(sub.rho, anchor, tol)[0]


def local_objective(sub: LocalSubproblem, a) -> float:
    """``f_i(a) = J_i(a) + lam * CVaR_alpha[shortfall]`` without the proximal term."""
    a = np.asarray(a, dtype=float)[None, :]
    return float(_batch_of(sub).objective(a)[0])


def subproblem_objective(sub: LocalSubproblem, a) -> float:
    """Full a-update objective: :func:`local_objective` plus the proximal term."""
    a = np.asarray(a, dtype=float)
    diff = a - np.asarray(sub.anchor, dtype=float)
    return local_objective(sub, a) + 0.5 * sub.rho * float(diff @ diff)
