import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from desira.local_solver import (BatchSubproblem, LocalSubproblem, local_objective,
                                 project_capped_columns, project_capped_simplex,
                                 project_simplex_rows, solve_a_update, subproblem_objective)
from desira.domain import agent_cost
from desira.stats import cvar_empirical

from _oracles import a_update_qp, capped_simplex_kkt, naive_local_objective, random_subproblem


def _sub(p, agent=0):
    return LocalSubproblem(agent, p["desired"], p["price"], p["w"], p["rho"], p["anchor"],
                           p["lower"], p["scenarios"], p["lam"], p["alpha"], p["e0"])


def test_projection_examples():
    assert np.allclose(project_capped_simplex([0.1, 0.2], 1.0), [0.1, 0.2])
    assert np.allclose(project_capped_simplex([2.0, 2.0], 1.0), [0.5, 0.5])
    assert np.allclose(project_capped_simplex([-1.0, 3.0], 1.0), [0.0, 1.0])
    assert np.allclose(project_capped_simplex([3.0, 4.0], 0.0), [0.0, 0.0])
    with pytest.raises(ValueError):
        project_capped_simplex([1.0], -1.0)


def test_projection_grid_oracle_example():
    # brute force over a fine grid of the feasible triangle
    g = np.linspace(0, 1, 1001)
    y1, y2 = np.meshgrid(g, g)
    ok = y1 + y2 <= 1 + 1e-12
    d = (y1 + 1) ** 2 + (y2 - 3) ** 2
    k = np.argmin(np.where(ok, d, np.inf))
    assert np.allclose(project_capped_simplex([-1.0, 3.0], 1.0),
                       [y1.ravel()[k], y2.ravel()[k]], atol=1e-3)


def test_projection_matches_kkt_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        s = int(rng.integers(1, 5))
        v = rng.normal(0, 2, s)
        cap = float(rng.uniform(0, 3))
        assert np.allclose(project_capped_simplex(v, cap), capped_simplex_kkt(v, cap), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0, 10), st.integers(0, 2**31))
def test_projection_is_closest_feasible_point(v, cap, seed):
    v = np.array(v)
    y = project_capped_simplex(v, cap)
    assert np.all(y >= 0) and y.sum() <= cap + 1e-10
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(len(v) + 1), 1000)[:, :-1] * cap
    assert np.all(np.linalg.norm(x - v, axis=1) >= np.linalg.norm(y - v) - 1e-10)


def test_simplex_rows_hit_the_total():
    rng = np.random.default_rng(2)
    c = rng.normal(size=(50, 4))
    t = rng.uniform(0, 5, 50)
    y = project_simplex_rows(c, t)
    assert np.allclose(y.sum(axis=1), t, atol=1e-12)
    assert y.min() >= 0
    with pytest.raises(ValueError):
        project_simplex_rows(c[:1], -1.0)


def test_capped_columns_are_per_station():
    rng = np.random.default_rng(3)
    x = rng.normal(1, 1, (8, 3))
    caps = np.array([1.0, 100.0, 3.0])
    out = project_capped_columns(x, caps)
    for j in range(3):
        assert np.allclose(out[:, j], project_capped_simplex(x[:, j], caps[j]), atol=1e-14)


def test_a_update_returns_desired_point():
    d = np.array([1.0, 2.0, 0.5])
    p = dict(desired=d, price=np.zeros(3), w=1.0, rho=1.0, anchor=d, lower=0.0,
             scenarios=np.zeros(4), lam=0.0, alpha=0.1, e0=0.0)
    assert np.allclose(solve_a_update(_sub(p)), d, atol=1e-7)


def test_a_update_symmetric_equality():
    p = dict(desired=np.zeros(2), price=np.zeros(2), w=1.0, rho=1.0, anchor=np.zeros(2),
             lower=2.0, scenarios=np.zeros(3), lam=0.0, alpha=0.1, e0=0.0)
    assert np.allclose(solve_a_update(_sub(p)), [1.0, 1.0], atol=1e-8)


def test_a_update_rejects_bad_input():
    p = dict(desired=np.zeros(2), price=np.zeros(2), w=1.0, rho=1.0, anchor=np.zeros(2),
             lower=0.0, scenarios=np.zeros(3), lam=0.0, alpha=0.1, e0=0.0)
    with pytest.raises(ValueError):
        solve_a_update(_sub(p), tol=0)
    with pytest.raises(ValueError):
        _sub({**p, "rho": 0.0})
    with pytest.raises(ValueError):
        _sub({**p, "lower": -1.0})


@pytest.mark.parametrize("seed", range(40))
def test_a_update_matches_conic_oracle(seed):
    p = random_subproblem(np.random.default_rng(seed))
    sub = _sub(p)
    a = solve_a_update(sub)
    _, ref = a_update_qp(**p)
    assert a.min() >= -1e-12
    assert a.sum() >= p["lower"] - 1e-8
    assert subproblem_objective(sub, a) <= ref + 1e-5
    assert subproblem_objective(sub, a) >= ref - 1e-5


def test_batch_rows_match_single_solves():
    rng = np.random.default_rng(5)
    n, s, m = 12, 3, 8
    d, pr = rng.uniform(0, 4, (n, s)), rng.uniform(0, 1, (n, s))
    lower, e0 = rng.uniform(0, 5, n), rng.uniform(5, 10, n)
    sc = rng.normal(12, 3, (n, m))
    anchor = rng.normal(1, 1, (n, s))
    batch = BatchSubproblem.from_arrays(d, pr, 0.3, lower, sc, e0, 1.5, 0.2)
    out = batch.solve(0.8, anchor)
    for i in range(n):
        sub = LocalSubproblem(i, d[i], pr[i], 0.3, 0.8, anchor[i], lower[i], sc[i], 1.5, 0.2, e0[i])
        assert np.allclose(out[i], solve_a_update(sub), atol=1e-12)


def test_local_objective_without_risk_is_cost():
    rng = np.random.default_rng(6)
    d, pr, a = rng.uniform(0, 3, 4), rng.uniform(0, 1, 4), rng.uniform(0, 3, 4)
    sub = LocalSubproblem(0, d, pr, 0.7, 1.0, np.zeros(4), 0.0, rng.normal(size=5), 0.0, 0.1, 1.0)
    assert local_objective(sub, a) == pytest.approx(agent_cost(d, pr, 0.7, a), abs=1e-12)


def test_covered_scenarios_have_zero_risk():
    sub = LocalSubproblem(0, np.zeros(2), np.zeros(2), 1.0, 1.0, np.zeros(2), 0.0,
                          np.array([1.0, 2.0, 3.0]), 2.0, 0.3, 2.0)
    a = np.array([0.5, 0.5])
    assert local_objective(sub, a) == pytest.approx(0.25 + 2.0 * cvar_empirical(np.zeros(3), 0.3))
    assert cvar_empirical(np.zeros(3), 0.3) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_local_objective_matches_naive_sum(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_subproblem(rng)
    a = rng.uniform(0, 3, len(p["desired"]))
    sub = _sub(p)
    ref = naive_local_objective(p["desired"], p["price"], p["w"], a, p["scenarios"], p["lam"],
                                p["alpha"], p["e0"])
    assert local_objective(sub, a) == pytest.approx(ref, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_value_function_of_total_is_convex(seed):
    p = random_subproblem(np.random.default_rng(200 + seed))
    w, rho = p["w"], p["rho"]
    c = (w * p["desired"] + rho * p["anchor"] - p["price"]) / (w + rho)
    sub = _sub(p)
    ts = np.linspace(p["lower"], p["lower"] + 20, 401)
    vals = np.array([subproblem_objective(sub, project_simplex_rows(c[None, :], t)[0]) for t in ts])
    assert np.min(vals[:-2] - 2 * vals[1:-1] + vals[2:]) >= -1e-8
