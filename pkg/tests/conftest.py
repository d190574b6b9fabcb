"""Shared oracles and generators for the test suite."""
import itertools

import numpy as np
import pytest

from safedrive import qp


def random_spd(rng, n, cond=10.0):
    """Random symmetric positive definite matrix with bounded conditioning."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.linspace(1.0, cond, n)
    return q @ np.diag(eigs) @ q.T


def random_qp(rng, n=4, m=8, feasible_bias=True):
    """Random strictly convex inequality-constrained QP.

    With ``feasible_bias`` the constraint offsets are shifted so that a
    random interior point satisfies them strictly; the problem may still be
    tightly constrained.
    """
    h = random_spd(rng, n)
    c = rng.standard_normal(n)
    g = rng.standard_normal((m, n))
    z0 = rng.standard_normal(n)
    if feasible_bias:
        b = g @ z0 + rng.uniform(0.1, 2.0, size=m)
    else:
        b = rng.standard_normal(m)
    return qp.QpProblem(h, c, g, b)


def random_infeasible_qp(rng, n=4, m=6):
    """Random QP with a built-in contradiction between two half-planes."""
    problem = random_qp(rng, n, m)
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    level = rng.standard_normal()
    gap = rng.uniform(0.1, 3.0)
    g = np.vstack([problem.g_ineq, direction, -direction])
    h = np.concatenate([problem.h_ineq, [level, -level - gap]])
    return qp.QpProblem(problem.hessian, problem.linear_cost, g, h)


def enumerate_qp_optimum(problem, tol=1e-8):
    """Exact optimum of a strictly convex QP by active-set enumeration.

    Tries every candidate active set up to size n, solves the corresponding
    equality-constrained KKT system and keeps the best primal/dual feasible
    candidate. Returns ``(z_star, objective)`` or ``None`` if no candidate
    is feasible (primal infeasible problem).
    """
    h = problem.hessian
    c = problem.linear_cost
    g = problem.g_ineq
    b = problem.h_ineq
    n = problem.n
    m = problem.m_ineq
    best = None
    for size in range(0, n + 1):
        for active in itertools.combinations(range(m), size):
            idx = list(active)
            g_a = g[idx]
            kkt = np.block([[h, g_a.T],
                            [g_a, np.zeros((size, size))]])
            rhs = np.concatenate([-c, b[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            lam = sol[n:]
            if np.any(lam < -tol):
                continue
            if np.any(g @ z - b > tol):
                continue
            obj = problem.objective(z)
            if best is None or obj < best[1]:
                best = (z, obj)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
