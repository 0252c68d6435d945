"""Ground-truth solutions of max f(lam) s.t. g(lam) <= 0 over the occupancy polytope.

The main solver is a fully corrective Frank-Wolfe (column generation): the
iterate is a convex combination of vertex occupancies, the linear oracle is
an optimal deterministic policy for the reward grad_lambda L, and the
restricted master problem over the combination weights is a small convex
program handed to cvxpy.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import cvxpy as cp
import numpy as np

from .mdp import OccupancyMeasure, Policy, flow_residual, occupancy_exact
from .objectives import f_eval_grad, g_eval_grad

SOLVER_OPTS = {"solver": cp.CLARABEL, "tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10}


class InfeasibleProblemError(ValueError):
    """No occupancy measure satisfies g <= 0 (or none strictly)."""


@dataclass
class OracleSolution:
    lambda_star: OccupancyMeasure
    F_star: float
    mu_star: float
    duality_gap: float
    iterations: int
    certified: bool
    error_bound: float | None = None

    def to_dict(self):
        return {
            "lambda_star": self.lambda_star.values.tolist(),
            "F_star": self.F_star,
            "mu_star": self.mu_star,
            "duality_gap": self.duality_gap,
            "certified": self.certified,
            "iterations": self.iterations,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


@dataclass
class DualityReport:
    F_star: float
    D_mu: float
    gap: float
    gap_ok: bool
    mu_bound: float | None
    bound_ok: bool | None


# --- linear oracle -------------------------------------------------------------

def _lowest_argmax(q, tol):
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tol * (1.0 + np.abs(best)), axis=1)


def greedy_policy(mdp, reward, max_iters=10_000):
    """Optimal deterministic policy for a state-action reward.

    Policy iteration from the myopic greedy policy; ties go to the lowest
    action index. Returns ``(actions, q)``.
    """
    S, A = mdp.n_states, mdp.n_actions
    r = np.asarray(reward, dtype=float).reshape(S, A)
    rows = np.arange(S)
    act = _lowest_argmax(r, 1e-12)
    for _ in range(max_iters):
        P_pi = mdp.transition[rows, act]
        v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r[rows, act])
        q = r + mdp.gamma * mdp.transition @ v
        cur = q[rows, act]
        better = q.max(axis=1) > cur + 1e-12 * (1.0 + np.abs(cur))
        if not better.any():
            break
        act = np.where(better, np.argmax(q, axis=1), act)
    return _lowest_argmax(q, 1e-12), q


def vertex_occupancy(mdp, reward):
    act, _ = greedy_policy(mdp, reward)
    return occupancy_exact(mdp, Policy.deterministic(act, mdp.n_actions)).values


# --- restricted master problems ------------------------------------------------

def _cp_f(obj, x):
    if obj.kind == "linear":
        return (obj.vector / (1.0 - obj.gamma)) @ x
    return -obj.scale * cp.sum_squares(x - obj.vector)


def _cp_g(con, x):
    if con.kind == "linear":
        return (con.vector / (1.0 - con.gamma)) @ x - con.budget
    return cp.sum_squares(x - con.vector) - con.radius ** 2


def _solve_master(atoms, build):
    """Maximize over convex weights; ``build(x)`` gives (objective, constraints)."""
    M = np.array(atoms)
    w = cp.Variable(len(atoms), nonneg=True)
    x = M.T @ w
    expr, cons = build(x)
    simplex = cp.sum(w) == 1
    prob = cp.Problem(cp.Maximize(expr), [simplex] + cons)
    prob.solve(**SOLVER_OPTS)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"master problem ended with status {prob.status}")
    wv = np.clip(w.value, 0.0, None)
    wv /= wv.sum()
    duals = [float(np.ravel(c.dual_value)[0]) for c in cons]
    return wv @ M, wv, duals


def _add_atom(atoms, v):
    if min(np.max(np.abs(a - v)) for a in atoms) > 1e-12:
        atoms.append(v)
        return True
    return False


def _prune(atoms, w):
    keep = [a for a, wi in zip(atoms, w) if wi > 1e-12]
    return keep if keep else atoms


def maximize_lagrangian(mdp, obj, con, mu, tol=1e-9, max_iters=500, atoms=None):
    """D(mu) = max over the polytope of f - mu g, by fully corrective Frank-Wolfe.

    Returns ``(lam, value, gap_bound, iterations)``; the true maximum lies in
    ``[value, value + gap_bound]``.
    """
    atoms = list(atoms) if atoms else [vertex_occupancy(mdp, np.zeros(mdp.n_pairs))]
    for it in range(1, max_iters + 1):
        lam, w, _ = _solve_master(atoms, lambda x: (_cp_f(obj, x) - mu * _cp_g(con, x), []))
        fv, fg = f_eval_grad(obj, lam)
        gv, gg = g_eval_grad(con, lam)
        grad = fg - mu * gg
        v = vertex_occupancy(mdp, grad)
        gap = max(0.0, float(grad @ (v - lam)))
        if gap <= tol:
            break
        atoms = _prune(atoms, w)
        if not _add_atom(atoms, v):
            break
    return lam, fv - mu * gv, gap, it


def minimize_constraint(mdp, con, tol=1e-9, max_iters=500):
    """Phase one: min over the polytope of g, returning (lam, value)."""
    atoms = [vertex_occupancy(mdp, np.zeros(mdp.n_pairs))]
    for _ in range(max_iters):
        lam, w, _ = _solve_master(atoms, lambda x: (-_cp_g(con, x), []))
        gv, gg = g_eval_grad(con, lam)
        v = vertex_occupancy(mdp, -gg)
        if float(-gg @ (v - lam)) <= tol:
            break
        atoms = _prune(atoms, w)
        if not _add_atom(atoms, v):
            break
    return lam, gv


def mu_cap(obj, con):
    """Dual bound (M_F - F_tilde)/xi, using the Slater witness."""
    w = con.slater
    if w is None or w.F_tilde is None:
        return None
    return (obj.M_F - w.F_tilde) / w.xi


def solve_saddle_fw(mdp, obj, con, tol=1e-7, max_iters=500) -> OracleSolution:
    """Solve the convex program and certify it with a Lagrangian duality gap.

    Each round solves the restricted master (max f subject to g <= 0 over
    the current atoms), reads mu from the master's multiplier (clipped to
    the Slater bound), and calls the linear oracle on grad_lambda L. The
    reported gap ``fw_gap + |mu g|`` bounds D(mu) - f(lam).
    """
    atoms = []
    if con.slater is not None:
        atoms.append(occupancy_exact(mdp, con.slater.policy).values)
    else:
        lam0, g0 = minimize_constraint(mdp, con)
        if g0 >= 0:
            raise InfeasibleProblemError(f"no strictly feasible occupancy: min g = {g0:.3g}")
        atoms.append(lam0)
    _add_atom(atoms, vertex_occupancy(mdp, f_eval_grad(obj, atoms[0])[1]))
    cap = mu_cap(obj, con)

    certified = False
    for it in range(1, max_iters + 1):
        lam, w, (mu,) = _solve_master(atoms, lambda x: (_cp_f(obj, x), [_cp_g(con, x) <= 0]))
        fv, fg = f_eval_grad(obj, lam)
        gv, gg = g_eval_grad(con, lam)
        # complementary slackness: an inactive constraint has a zero multiplier
        mu = 0.0 if gv < -1e-7 else max(0.0, mu)
        if cap is not None:
            mu = min(mu, cap)
        grad = fg - mu * gg
        v = vertex_occupancy(mdp, grad)
        fw_gap = max(0.0, float(grad @ (v - lam)))
        gap = fw_gap + abs(mu * gv)
        if gap <= tol:
            certified = True
            break
        atoms = _prune(atoms, w)
        if not _add_atom(atoms, v):
            break
    return OracleSolution(OccupancyMeasure(lam, mdp.n_actions), fv, mu, gap, it, certified)


def solve_polytope(mdp, obj, con) -> OracleSolution:
    """Direct solve over the flow polytope (one convex program in lambda).

    Independent of the Frank-Wolfe machinery; used as a cross-check.
    """
    S, A = mdp.n_states, mdp.n_actions
    lam = cp.Variable(S * A, nonneg=True)
    E = np.kron(np.eye(S), np.ones((1, A)))
    flow = E @ lam - mdp.gamma * mdp.transition.reshape(S * A, S).T @ lam == (1.0 - mdp.gamma) * mdp.rho
    gcon = _cp_g(con, lam) <= 0
    prob = cp.Problem(cp.Maximize(_cp_f(obj, lam)), [flow, gcon])
    prob.solve(**SOLVER_OPTS)
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        raise InfeasibleProblemError("constraint set does not meet the occupancy polytope")
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"polytope solve ended with status {prob.status}")
    lv = np.clip(lam.value, 0.0, None)
    return OracleSolution(OccupancyMeasure(lv, A), f_eval_grad(obj, lv)[0], float(np.ravel(gcon.dual_value)[0]),
                          abs(float(prob.value) - f_eval_grad(obj, lv)[0]), 1, prob.status == "optimal")


def duality_check(mdp, obj, con, solution: OracleSolution, tol=1e-4) -> DualityReport:
    """Compare F_star with D(mu_star) and check the Slater bound on mu_star."""
    lam, D, gap_bound, _ = maximize_lagrangian(mdp, obj, con, solution.mu_star,
                                               atoms=[solution.lambda_star.values])
    D_up = D + gap_bound
    gap = max(abs(solution.F_star - D), abs(solution.F_star - D_up))
    bound = bound_ok = None
    w = con.slater
    if w is not None and w.F_tilde is not None:
        bound = (solution.F_star - w.F_tilde) / w.xi
        bound_ok = solution.mu_star <= bound + tol
    return DualityReport(solution.F_star, D, gap, gap <= tol, bound, bound_ok)


# --- brute force ---------------------------------------------------------------

def _compositions(total, parts):
    """All nonnegative integer vectors of length ``parts`` summing to ``total`` (lexicographic)."""
    out = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, comp = -1, []
        for b in bars:
            comp.append(b - prev - 1)
            prev = b
        comp.append(total + parts - 2 - prev)
        out.append(comp)
    return np.array(out, dtype=np.int64)


def brute_force_policy_grid(mdp, obj, con, resolution=50, batch=4096) -> OracleSolution:
    """Best feasible policy on a per-state simplex grid with step 1/resolution.

    ``error_bound`` is the largest change of f between grid neighbours
    (one unit of probability moved between two actions of one state).
    """
    S, A = mdp.n_states, mdp.n_actions
    if S * (A - 1) > 4:
        raise ValueError(f"grid dimension S*(A-1) = {S * (A - 1)} exceeds the cap of 4")
    comps = _compositions(resolution, A)
    m = len(comps)
    lookup = {tuple(c): i for i, c in enumerate(comps)}
    nbrs = []
    for c in comps:
        row = []
        for a, b in itertools.permutations(range(A), 2):
            if c[a] > 0:
                d = c.copy()
                d[a] -= 1
                d[b] += 1
                row.append(lookup[tuple(d)])
        nbrs.append(row)
    probs = comps / resolution
    n_total = m ** S
    F = np.empty(n_total)
    Gv = np.empty(n_total)
    lams = np.empty((n_total, S * A))
    radix = m ** np.arange(S - 1, -1, -1)
    I = np.eye(S)
    for start in range(0, n_total, batch):
        idx = np.arange(start, min(start + batch, n_total))
        digits = (idx[:, None] // radix) % m
        pi = probs[digits]  # (b, S, A)
        P_pi = np.einsum("bsa,sat->bst", pi, mdp.transition)
        d = np.linalg.solve(I - mdp.gamma * np.transpose(P_pi, (0, 2, 1)),
                            np.broadcast_to((1.0 - mdp.gamma) * mdp.rho, (len(idx), S))[..., None])[..., 0]
        lam = (d[:, :, None] * pi).reshape(len(idx), S * A)
        lams[idx] = lam
        if obj.kind == "linear":
            F[idx] = lam @ (obj.vector / (1.0 - obj.gamma))
        else:
            F[idx] = -obj.scale * np.sum((lam - obj.vector) ** 2, axis=1)
        if con.kind == "linear":
            Gv[idx] = lam @ (con.vector / (1.0 - con.gamma)) - con.budget
        else:
            Gv[idx] = np.sum((lam - con.vector) ** 2, axis=1) - con.radius ** 2

    feasible = Gv <= 0
    if not feasible.any():
        raise InfeasibleProblemError(f"no grid policy satisfies the constraint (min g = {Gv.min():.3g})")
    best = int(np.flatnonzero(feasible)[np.argmax(F[feasible])])

    err = 0.0
    all_idx = np.arange(n_total)
    digits = (all_idx[:, None] // radix) % m
    for s in range(S):
        for k in range(max(len(r) for r in nbrs)):
            target = np.array([r[k] if k < len(r) else -1 for r in nbrs])[digits[:, s]]
            ok = target >= 0
            other = all_idx[ok] + (target[ok] - digits[ok, s]) * radix[s]
            err = max(err, float(np.max(np.abs(F[all_idx[ok]] - F[other]), initial=0.0)))
    return OracleSolution(OccupancyMeasure(lams[best], A), float(F[best]), 0.0, err, n_total, True, error_bound=err)


def flow_error(mdp, solution: OracleSolution) -> float:
    return float(np.max(np.abs(flow_residual(mdp, solution.lambda_star.values))))
