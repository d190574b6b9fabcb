"""Dense convex QP solver with a trustworthy three-way outcome.

The contract is that ``solve`` returns exactly one of: a feasible optimum
with small KKT residuals, an infeasibility certificate (a Farkas-type dual
vector), or an explicit non-convergence result. Operator splitting with
over-relaxation produces both iterates and certificates; an exact
active-set refinement step polishes feasible solutions.

Problems are ``min 0.5 z'Hz + c'z + c0  s.t.  G z <= h  (and A_eq z = b_eq)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog, nnls


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    tol_margin: float = 1e-8       # certificate strict-negativity margin
    max_iter: int = 20000
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    sigma: float = 1e-6
    alpha: float = 1.6
    check_interval: int = 25
    rescue_interval: int = 250


@dataclass
class QpProblem:
    hessian: np.ndarray       # n x n, symmetric PSD
    linear_cost: np.ndarray   # n
    g_ineq: np.ndarray        # m x n
    h_ineq: np.ndarray        # m
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    constant: float = 0.0     # additive objective constant

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        self.linear_cost = np.asarray(self.linear_cost, dtype=float).ravel()
        n = self.linear_cost.size
        self.g_ineq = np.asarray(self.g_ineq, dtype=float).reshape(-1, n)
        self.h_ineq = np.asarray(self.h_ineq, dtype=float).ravel()
        if self.hessian.shape != (n, n):
            raise ValueError("hessian shape inconsistent with linear cost")
        if not np.allclose(self.hessian, self.hessian.T, atol=1e-12):
            raise ValueError("hessian must be symmetric")
        if self.h_ineq.size != self.g_ineq.shape[0]:
            raise ValueError("inequality dimensions inconsistent")
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must be given together")
        if self.a_eq is not None:
            self.a_eq = np.asarray(self.a_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.b_eq.size != self.a_eq.shape[0]:
                raise ValueError("equality dimensions inconsistent")

    @property
    def n(self) -> int:
        return self.linear_cost.size

    @property
    def m_ineq(self) -> int:
        return self.g_ineq.shape[0]

    @property
    def m_eq(self) -> int:
        return 0 if self.a_eq is None else self.a_eq.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.hessian @ z + self.linear_cost @ z
                     + self.constant)


@dataclass(frozen=True)
class Feasible:
    z_star: np.ndarray
    objective: float
    kkt_residual: float
    dual_ineq: np.ndarray
    dual_eq: np.ndarray | None = None
    iterations: int = 0


@dataclass(frozen=True)
class Infeasible:
    farkas: np.ndarray                 # inequality multipliers, >= 0
    farkas_eq: np.ndarray | None = None  # equality multipliers, free sign
    iterations: int = 0


@dataclass(frozen=True)
class MaxIter:
    best_residuals: dict = field(default_factory=dict)
    iterations: int = 0


QpOutcome = Feasible | Infeasible | MaxIter


def _stack(problem: QpProblem):
    """Two-sided constraint form l <= Az <= u (equalities first)."""
    if problem.m_eq:
        a = np.vstack([problem.a_eq, problem.g_ineq])
        l = np.concatenate([problem.b_eq, np.full(problem.m_ineq, -np.inf)])
        u = np.concatenate([problem.b_eq, problem.h_ineq])
    else:
        a = problem.g_ineq
        l = np.full(problem.m_ineq, -np.inf)
        u = problem.h_ineq.copy()
    return a, l, u


def _regularized_hessian(h: np.ndarray) -> np.ndarray:
    if h.size and np.min(np.linalg.eigvalsh(0.5 * (h + h.T))) < 1e-9:
        return h + 1e-9 * np.eye(h.shape[0])
    return h


def _equilibrate(p, q, a, l, u, iters: int = 10):
    """Modified Ruiz equilibration of the stacked KKT data.

    Returns scaled (p, q, a, l, u) plus the diagonal scalings (d, e) and the
    cost scaling c, with x = d * x_hat and y = e * y_hat / c.
    """
    n = q.size
    m = a.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    ps, qs, as_ = p.copy(), q.copy(), a.copy()
    for _ in range(iters):
        col_p = np.max(np.abs(ps), axis=0, initial=0.0)
        col_a = np.max(np.abs(as_), axis=0, initial=0.0) if m else np.zeros(n)
        dx = np.sqrt(np.maximum(np.maximum(col_p, col_a), 1e-8))
        de = (np.sqrt(np.maximum(np.max(np.abs(as_), axis=1, initial=0.0),
                                 1e-8)) if m else np.ones(0))
        dx = 1.0 / dx
        de = 1.0 / de if m else de
        ps = ps * dx[:, None] * dx[None, :]
        qs = qs * dx
        if m:
            as_ = as_ * de[:, None] * dx[None, :]
        d *= dx
        e *= de
        # cost scaling
        col_norm = np.max(np.abs(ps), axis=0, initial=0.0)
        gamma = max(np.mean(col_norm), np.max(np.abs(qs), initial=0.0))
        gamma = 1.0 / max(gamma, 1e-8)
        ps *= gamma
        qs *= gamma
        c *= gamma
    ls = e * l if m else l
    us = e * u if m else u
    with np.errstate(invalid="ignore"):
        ls = np.where(np.isneginf(l), -np.inf, ls)
        us = np.where(np.isposinf(u), np.inf, us)
    return ps, qs, as_, ls, us, d, e, c


def solve(problem: QpProblem, settings: QpSettings = QpSettings(),
          warm=None) -> QpOutcome:
    """Solve a dense convex QP; deterministic for identical inputs.

    ``warm`` is an optional ``(z0, y0)`` primal/dual pair in problem scale
    (``y0`` stacked equalities-first); shapes must match the problem.
    """
    n = problem.n
    p0 = _regularized_hessian(problem.hessian)
    q0 = problem.linear_cost
    a0, l0, u0 = _stack(problem)
    m = a0.shape[0]

    if m == 0:
        try:
            z = np.linalg.solve(p0, -q0)
        except np.linalg.LinAlgError:
            z, *_ = np.linalg.lstsq(p0, -q0, rcond=None)
        return Feasible(z, problem.objective(z), _kkt_residual(problem, z,
                        np.zeros(0), None), np.zeros(0), None)

    p, q, a, l, u, d_scale, e_scale, c_scale = _equilibrate(p0, q0, a0, l0, u0)

    rho = np.full(m, settings.rho)
    rho[:problem.m_eq] *= settings.rho_eq_scale
    kkt = p + settings.sigma * np.eye(n) + (a.T * rho) @ a
    factor = cho_factor(kkt)

    x = np.zeros(n)
    w = np.clip(np.zeros(m), l, u)
    y = np.zeros(m)
    if warm is not None:
        z0, y0 = warm
        if np.shape(z0) == (n,) and np.shape(y0) == (m,):
            x = np.asarray(z0, dtype=float) / d_scale
            y = c_scale * np.asarray(y0, dtype=float) / e_scale
            w = np.clip(a @ x, l, u)
    y_prev = y.copy()
    best = {"primal": np.inf, "dual": np.inf}

    for it in range(1, settings.max_iter + 1):
        rhs = settings.sigma * x - q + a.T @ (rho * w - y)
        x_tilde = cho_solve(factor, rhs)
        z_tilde = a @ x_tilde
        x = settings.alpha * x_tilde + (1 - settings.alpha) * x
        w_old = w
        w_arg = settings.alpha * z_tilde + (1 - settings.alpha) * w_old + y / rho
        w = np.clip(w_arg, l, u)
        y = y + rho * (settings.alpha * z_tilde + (1 - settings.alpha) * w_old - w)

        if it % settings.check_interval:
            continue

        # unscaled iterates and residuals
        x_u = d_scale * x
        y_u = e_scale * y / c_scale
        ax = a0 @ x_u
        w_u = np.clip(ax, l0, u0)
        r_prim = float(np.max(np.abs(ax - w_u), initial=0.0))
        r_dual = float(np.max(np.abs(p0 @ x_u + q0 + a0.T @ y_u), initial=0.0))
        best["primal"] = min(best["primal"], r_prim)
        best["dual"] = min(best["dual"], r_dual)

        eps_prim = settings.eps_abs + settings.eps_rel * max(
            np.max(np.abs(ax), initial=0.0), np.max(np.abs(w_u), initial=0.0))
        eps_dual = settings.eps_abs + settings.eps_rel * max(
            np.max(np.abs(p0 @ x_u), initial=0.0),
            np.max(np.abs(q0), initial=0.0),
            np.max(np.abs(a0.T @ y_u), initial=0.0))
        # the exact active-set polish supplies the final accuracy, so it is
        # worth attempting as soon as the active set has roughly settled
        if r_prim <= max(eps_prim, 1e3 * settings.eps_abs) and \
                r_dual <= max(eps_dual, 1e3 * settings.eps_abs):
            outcome = _as_feasible(problem, x_u, y_u, settings, it)
            if outcome is not None:
                return outcome

        dy = (y - y_prev) * e_scale / c_scale
        y_prev = y.copy()
        cert = _extract_certificate(problem, dy, settings, it)
        if cert is not None:
            return cert

        # near-boundary problems: bounded-time exact decision
        if it % settings.rescue_interval == 0:
            cert = _polish_certificate(problem, np.ones(problem.m_ineq),
                                       np.zeros(problem.m_eq), it)
            if cert is not None:
                return cert
            outcome = _as_feasible(problem, x_u, y_u, settings, it)
            if outcome is not None:
                return outcome

    # last-resort exact attempts before giving up
    x_u = d_scale * x
    y_u = e_scale * y / c_scale
    outcome = _as_feasible(problem, x_u, y_u, settings, settings.max_iter)
    if outcome is not None:
        return outcome
    cert = _extract_certificate(problem, y_u, settings, settings.max_iter,
                                force=True)
    if cert is not None:
        return cert
    outcome = _exact_active_set(problem, settings, settings.max_iter)
    if outcome is not None:
        return outcome
    return MaxIter(best, settings.max_iter)


def _as_feasible(problem: QpProblem, x, y, settings: QpSettings, it: int = 0):
    """Polish via exact active-set refinement; fall back to the raw iterate."""
    tol = max(settings.eps_abs, 1e-9)
    m_eq = problem.m_eq
    y_ineq = np.maximum(y[m_eq:], 0.0)
    slack = problem.h_ineq - problem.g_ineq @ x
    active = (slack < 10 * tol) | (y_ineq > 10 * tol)

    for attempt in range(2):
        z, lam_eq, lam_act = _equality_solve(problem, active)
        if z is not None:
            y_pol = np.zeros(problem.m_ineq)
            y_pol[active] = np.maximum(lam_act, 0.0)
            res = _kkt_residual(problem, z, y_pol, lam_eq)
            if res <= tol:
                return Feasible(z, problem.objective(z), res, y_pol, lam_eq, it)
        # retry with only strongly active constraints
        active = y_ineq > 10 * tol

    res = _kkt_residual(problem, x, y_ineq, y[:m_eq] if m_eq else None)
    if res <= tol:
        return Feasible(x, problem.objective(x), res, y_ineq,
                        y[:m_eq] if m_eq else None, it)

    return None


def _exact_active_set(problem: QpProblem, settings: QpSettings, it: int,
                      max_pivots: int = 200):
    """Exact bounded-time solve: LP feasibility phase + primal active set.

    Returns a polished :class:`Feasible`, an :class:`Infeasible` built from
    the phase-1 dual (certified), or ``None`` when the pivot budget runs
    out. Deterministic for identical inputs.
    """
    n, m = problem.n, problem.m_ineq
    tol = max(settings.eps_abs, 1e-9)

    # phase 1: minimize the worst violation t with G z - t <= h
    c = np.zeros(n + 1)
    c[-1] = 1.0
    a_ub = np.hstack([problem.g_ineq, -np.ones((m, 1))]) if m else None
    a_eq = b_eq = None
    if problem.m_eq:
        a_eq = np.hstack([problem.a_eq, np.zeros((problem.m_eq, 1))])
        b_eq = problem.b_eq
    # t is bounded below: only its sign at the optimum matters
    lp = linprog(c, A_ub=a_ub, b_ub=problem.h_ineq if m else None,
                 A_eq=a_eq, b_eq=b_eq,
                 bounds=[(None, None)] * n + [(-1.0, None)], method="highs")
    if not lp.success:
        return None
    if lp.x[-1] > tol:
        # the phase-1 dual is a Farkas direction; polish it to exactness
        d_ineq = np.maximum(-np.asarray(lp.ineqlin.marginals), 0.0)
        d_eq = (-np.asarray(lp.eqlin.marginals) if problem.m_eq else None)
        return _polish_certificate(problem, d_ineq, d_eq, it)

    z = lp.x[:n]
    slack = problem.h_ineq - problem.g_ineq @ z
    active = slack <= tol

    for _ in range(max_pivots):
        g_act = problem.g_ineq[active]
        rows = [problem.a_eq] if problem.m_eq else []
        if g_act.size:
            rows.append(g_act)
        c_mat = np.vstack(rows) if rows else np.zeros((0, n))
        k = c_mat.shape[0]
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = problem.hessian + 1e-12 * np.eye(n)
        kkt[:n, n:] = c_mat.T
        kkt[n:, :n] = c_mat
        rhs = np.concatenate([-(problem.hessian @ z + problem.linear_cost),
                              np.zeros(k)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        p = sol[:n]
        lam = sol[n:]

        step_tol = 1e-9 * max(1.0, float(np.max(np.abs(z), initial=0.0)))
        if np.max(np.abs(p), initial=0.0) <= step_tol:
            # stationary on the working set: re-solve exactly for clean
            # complementarity before judging the multipliers
            z_ref, lam_eq, lam_act = _equality_solve(problem, active)
            if z_ref is None:
                return None
            z = z_ref
            act_idx = np.where(active)[0]
            neg = act_idx[lam_act < -tol]
            if neg.size == 0:
                y = np.zeros(m)
                y[act_idx] = np.maximum(lam_act, 0.0)
                res = _kkt_residual(problem, z, y, lam_eq)
                # relative test: complementarity roundoff grows with the
                # multiplier scale even when the point is exact
                scale = max(1.0, float(np.max(np.abs(y), initial=0.0)),
                            float(np.max(np.abs(z), initial=0.0)))
                if res <= tol * scale:
                    return Feasible(z, problem.objective(z), res, y, lam_eq,
                                    it)
                return None
            active[neg[0]] = False   # lowest index: anti-cycling
            continue

        # ratio test against the inactive constraints the step runs into
        gz = problem.g_ineq @ p
        slack = problem.h_ineq - problem.g_ineq @ z
        alpha = 1.0
        block = -1
        for j in np.where(~active & (gz > 1e-12))[0]:
            a_j = max(slack[j], 0.0) / gz[j]
            if a_j < alpha - 1e-15:
                alpha = a_j
                block = j
        z = z + alpha * p
        if block >= 0:
            active[block] = True
    return None


def _equality_solve(problem: QpProblem, active):
    """Solve the KKT system with the given active inequalities as equalities."""
    n = problem.n
    g_act = problem.g_ineq[active]
    h_act = problem.h_ineq[active]
    rows = []
    rhs_rows = []
    if problem.m_eq:
        rows.append(problem.a_eq)
        rhs_rows.append(problem.b_eq)
    if g_act.size:
        rows.append(g_act)
        rhs_rows.append(h_act)
    if rows:
        c_mat = np.vstack(rows)
        c_rhs = np.concatenate(rhs_rows)
    else:
        c_mat = np.zeros((0, n))
        c_rhs = np.zeros(0)
    k = c_mat.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = problem.hessian + 1e-12 * np.eye(n)
    kkt[:n, n:] = c_mat.T
    kkt[n:, :n] = c_mat
    rhs = np.concatenate([-problem.linear_cost, c_rhs])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    z = sol[:n]
    lam = sol[n:]
    m_eq = problem.m_eq
    lam_eq = lam[:m_eq] if m_eq else None
    lam_act = lam[m_eq:]
    return z, lam_eq, lam_act


def _kkt_residual(problem: QpProblem, z, y_ineq, y_eq) -> float:
    """Exact KKT residual from matrix-vector products only."""
    grad = problem.hessian @ z + problem.linear_cost + problem.g_ineq.T @ y_ineq
    if problem.m_eq:
        grad = grad + problem.a_eq.T @ np.asarray(y_eq)
    slack = problem.h_ineq - problem.g_ineq @ z
    parts = [np.max(np.abs(grad), initial=0.0),
             np.max(-slack, initial=0.0),               # primal feasibility
             np.max(-y_ineq, initial=0.0),              # dual feasibility
             np.max(np.abs(y_ineq * slack), initial=0.0)]  # complementarity
    if problem.m_eq:
        parts.append(np.max(np.abs(problem.a_eq @ z - problem.b_eq), initial=0.0))
    return float(max(parts))


def _extract_certificate(problem: QpProblem, dy, settings: QpSettings,
                         it: int = 0, force: bool = False):
    norm = np.max(np.abs(dy), initial=0.0)
    if norm <= 1e-12:
        return None
    d = dy / norm
    m_eq = problem.m_eq
    d_ineq = np.maximum(d[m_eq:], 0.0)
    d_eq = d[:m_eq] if m_eq else None
    support = problem.h_ineq @ d_ineq
    combo = problem.g_ineq.T @ d_ineq
    if m_eq:
        support += problem.b_eq @ d_eq
        combo = combo + problem.a_eq.T @ d_eq
    # loose pre-check before attempting the exact polish
    if not force:
        if support > -1e-8 or np.max(np.abs(combo), initial=0.0) > 1e-2 * abs(support):
            return None
    cand = _polish_certificate(problem, d_ineq, d_eq, it)
    if cand is not None:
        return cand
    cand = Infeasible(d_ineq, d_eq, it)
    if check_certificate(problem, cand, eps=settings.eps_abs,
                         tol_margin=settings.tol_margin):
        return cand
    return None


def _polish_certificate(problem: QpProblem, d_ineq, d_eq, it: int):
    """Exact Farkas vector by nonnegative least squares on the support rows."""
    n = problem.n
    thresh = 1e-6 * np.max(d_ineq, initial=0.0)
    sup_rows = np.where(d_ineq > thresh)[0]
    if sup_rows.size == 0:
        return None
    cols = [problem.g_ineq[sup_rows].T]
    rhs_row = [problem.h_ineq[sup_rows]]
    if problem.m_eq:
        cols.extend([problem.a_eq.T, -problem.a_eq.T])
        rhs_row.extend([problem.b_eq, -problem.b_eq])
    mat = np.vstack([np.hstack(cols), np.concatenate(rhs_row)])
    target = np.zeros(n + 1)
    target[-1] = -1.0
    # balance rows so no single scale dominates the fit
    row_norm = np.maximum(np.max(np.abs(mat), axis=1), 1e-12)
    try:
        sol, res = nnls(mat / row_norm[:, None], target / row_norm,
                        maxiter=10 * mat.shape[1])
    except RuntimeError:
        return None
    if res > 1e-9 or not np.any(sol > 0.0):
        return None
    farkas = np.zeros(problem.m_ineq)
    farkas[sup_rows] = sol[:sup_rows.size]
    farkas_eq = None
    if problem.m_eq:
        k = sup_rows.size
        farkas_eq = sol[k:k + problem.m_eq] - sol[k + problem.m_eq:]
    cand = Infeasible(farkas, farkas_eq, it)
    if check_certificate(problem, cand):
        return cand
    return None


def check_certificate(problem: QpProblem, outcome: QpOutcome,
                      eps: float = 1e-6, tol_margin: float = 1e-8) -> bool:
    """Independently re-verify an outcome using only matrix-vector products."""
    if isinstance(outcome, Feasible):
        return _kkt_residual(problem, outcome.z_star, outcome.dual_ineq,
                             outcome.dual_eq) <= max(eps, outcome.kkt_residual
                                                     + 1e-12)
    if isinstance(outcome, Infeasible):
        y = np.asarray(outcome.farkas, dtype=float)
        if y.size != problem.m_ineq or np.any(y < 0.0):
            return False
        combo = problem.g_ineq.T @ y
        support = problem.h_ineq @ y
        scale = np.max(np.abs(y), initial=0.0)
        if problem.m_eq:
            y_eq = np.asarray(outcome.farkas_eq, dtype=float)
            if y_eq.size != problem.m_eq:
                return False
            combo = combo + problem.a_eq.T @ y_eq
            support = support + problem.b_eq @ y_eq
            scale = max(scale, np.max(np.abs(y_eq), initial=0.0))
        if scale <= 0.0:
            return False
        return (np.max(np.abs(combo), initial=0.0) <= eps * scale
                and support <= -tol_margin)
    return False
