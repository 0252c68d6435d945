"""Evaluators for the Lagrangian gradient and the constraint value.

Three routes give grad_theta L(theta, mu):

* ``exact``: chain rule, using the occupancy-gradient of L as a pseudo-reward
  in the exact policy gradient;
* ``reinforce``: the same pseudo-reward estimated from rollouts, fed to a
  REINFORCE estimator over the same batch;
* ``variational``: a concave-convex saddle problem over (x, z) built from the
  concave conjugate of L.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .mdp import occupancy_estimate, policy_transition, rollouts, value_q_advantage
from .objectives import (
    f_eval_grad,
    g_eval_grad,
    lagrangian_conjugate,
    lagrangian_curvature,
    lagrangian_eval_grad,
)
from .policy import ThetaParams, policy_table, score_matrix

MODES = ("exact", "reinforce", "variational")


@dataclass(frozen=True)
class GradEstimatorConfig:
    mode: str = "exact"
    n: int = 10
    K: int = 25
    inner_iters: int = 2000
    step_x: float | None = None
    step_z: float | None = None
    z_box: float | None = None
    delta: float = 1e-4
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if self.n < 1 or self.K < 1 or self.inner_iters < 1:
            raise ValueError("n, K and inner_iters must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.z_box is not None and self.z_box <= 0:
            raise ValueError("z_box must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_json(self):
        return json.dumps(self.to_dict())


def _occupancy(mdp, pi):
    P_pi = policy_transition(mdp, pi)
    d = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi.T, (1.0 - mdp.gamma) * mdp.rho)
    return d, (d[:, None] * pi).ravel()


def _check(mdp, theta, mu):
    if (theta.n_states, theta.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValueError("theta dimensions do not match the MDP")
    if mu < 0:
        raise ValueError(f"multiplier must be nonnegative, got {mu}")


def scaled_value_gradient(mdp, theta: ThetaParams, reward, pi=None, d=None):
    """(1 - gamma) grad_theta V^{pi_theta}(reward), computed exactly.

    Soft-max kinds: sum_{s,a} lambda(s,a) A(s,a) grad psi(s,a).
    Direct kind: d(s) Q(s,a) per table entry.
    """
    if pi is None:
        pi = policy_table(theta)
    if d is None:
        d, _ = _occupancy(mdp, pi)
    _, q, adv = value_q_advantage(mdp, pi, reward)
    S, A = mdp.n_states, mdp.n_actions
    if theta.kind == "direct":
        return (d[:, None] * q.reshape(S, A)).ravel()
    lam = (d[:, None] * pi).ravel()
    return theta.feature_matrix().T @ (lam * adv)


def lagrangian_at(mdp, theta, mu, obj, con):
    """Exact F, G, L and grad_lambda L at theta, plus the policy and occupancies."""
    pi = policy_table(theta)
    d, lam = _occupancy(mdp, pi)
    F, f_grad = f_eval_grad(obj, lam)
    G, g_grad = g_eval_grad(con, lam)
    return {"pi": pi, "d": d, "lam": lam, "F": F, "G": G, "L": F - mu * G,
            "grad_lam": f_grad - mu * g_grad}


def exact_grad(mdp, theta, mu, obj, con, state=None):
    _check(mdp, theta, mu)
    if state is None:
        state = lagrangian_at(mdp, theta, mu, obj, con)
    return scaled_value_gradient(mdp, theta, state["grad_lam"], state["pi"], state["d"])


def reinforce_estimate(mdp, theta, mu, obj, con, cfg: GradEstimatorConfig, first_index=0):
    """REINFORCE estimate of grad_theta L; returns ``(gradient, lambda_hat)``.

    The pseudo-reward grad_lambda L(lambda_hat, mu) is computed once from the
    batch, and the same batch supplies the score sums.
    """
    _check(mdp, theta, mu)
    if theta.kind == "direct":
        raise ValueError("REINFORCE needs a soft-max parameterization")
    pi = policy_table(theta)
    trajs = rollouts(mdp, pi, cfg.n, cfg.K, cfg.seed, workers=cfg.workers, first_index=first_index)
    lam_hat = occupancy_estimate(trajs, mdp.gamma, mdp.n_states, mdp.n_actions)
    _, r_hat = lagrangian_eval_grad(obj, con, lam_hat, mu)
    idx = np.stack([t.states * mdp.n_actions + t.actions for t in trajs])  # (n, K)
    scores = score_matrix(theta, pi)[idx]  # (n, K, dim)
    cum_scores = np.cumsum(scores, axis=1)
    weights = mdp.gamma ** np.arange(cfg.K) * r_hat[idx]
    grad = (1.0 - mdp.gamma) / cfg.n * np.einsum("nk,nkd->d", weights, cum_scores)
    return grad, lam_hat


def reinforce_grad(mdp, theta, mu, obj, con, cfg: GradEstimatorConfig, first_index=0):
    return reinforce_estimate(mdp, theta, mu, obj, con, cfg, first_index)[0]


def occupancy_jacobian(mdp, theta: ThetaParams, pi=None, d=None):
    """Jacobian of lambda(theta), shape (S*A, dim), by differentiating the flow equations."""
    if pi is None:
        pi = policy_table(theta)
    if d is None:
        d, _ = _occupancy(mdp, pi)
    S, A = mdp.n_states, mdp.n_actions
    if theta.kind == "direct":
        dpi = np.eye(S * A)
    else:
        dpi = pi.ravel()[:, None] * score_matrix(theta, pi)
    P_flat = mdp.transition.reshape(S * A, S)
    rhs = mdp.gamma * P_flat.T @ (np.repeat(d, A)[:, None] * dpi)
    P_pi = policy_transition(mdp, pi)
    dd = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi.T, rhs)
    return np.repeat(dd, A, axis=0) * pi.ravel()[:, None] + np.repeat(d, A)[:, None] * dpi


def default_z_box(obj, con, mu):
    return 2.0 * (obj.ell_f1 + mu * con.ell_g1)


def variational_grad(mdp, theta, mu, obj, con, cfg: GradEstimatorConfig, return_z=False):
    """Gradient from the saddle problem

        max_x inf_z  <z, lam> + delta <J^T z, x> - L_*(z, mu) - delta/2 |x|^2

    with J the occupancy Jacobian (so J^T z = (1-gamma) grad V(z)), solved by
    simultaneous gradient ascent in x and projected descent in z over
    ``|z|_inf <= z_box``. ``delta`` is held fixed.
    """
    _check(mdp, theta, mu)
    pi = policy_table(theta)
    d, lam = _occupancy(mdp, pi)
    J = occupancy_jacobian(mdp, theta, pi, d)
    alpha = lagrangian_curvature(obj, con, mu)
    box = cfg.z_box if cfg.z_box is not None else default_z_box(obj, con, mu)

    if alpha <= 0:
        # L_*(., mu) is finite at a single point: the inf pins z there.
        a_f, b_f, _ = obj.quadratic
        a_g, b_g, _ = con.quadratic
        z = np.clip(b_f - mu * b_g, -box, box)
        x = J.T @ z
        return (x, z) if return_z else x

    delta = cfg.delta
    step_x = cfg.step_x if cfg.step_x is not None else 1.0 / delta
    step_z = cfg.step_z if cfg.step_z is not None else alpha
    x = np.zeros(J.shape[1])
    z = np.zeros(J.shape[0])
    for _ in range(cfg.inner_iters):
        w = lam + delta * (J @ x)
        _, lam_min = lagrangian_conjugate(obj, con, z, mu)
        z_next = np.clip(z - step_z * (w - lam_min), -box, box)
        x = x + step_x * delta * (J.T @ z - x)
        z = z_next
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("variational inner loop diverged; reduce step_x or step_z")
    return (x, z) if return_z else x


def estimate_grad(mdp, theta, mu, obj, con, cfg: GradEstimatorConfig, first_index=0):
    if cfg.mode == "exact":
        return exact_grad(mdp, theta, mu, obj, con)
    if cfg.mode == "reinforce":
        return reinforce_grad(mdp, theta, mu, obj, con, cfg, first_index)
    return variational_grad(mdp, theta, mu, obj, con, cfg)


def constraint_value(mdp, theta, con, mode="exact", z_iters=5000, z_step=1.0, z_box=None):
    """G(theta) either directly or as sup_z (1-gamma) V(z) - g*(z).

    The value oracle (1-gamma) V^{pi_theta}(z) = <z, lambda(theta)> is exact
    and linear in z, so the ascent uses it through the occupancy vector.
    The Fenchel route returns the best objective seen, a lower bound on G.
    """
    pi = policy_table(theta)
    _, lam = _occupancy(mdp, pi)
    if mode == "exact":
        return g_eval_grad(con, lam)[0]
    if mode != "fenchel":
        raise ValueError(f"unknown constraint mode {mode!r}")
    if con.kind == "linear":
        w = con.vector / (1.0 - con.gamma)
        return float(w @ lam) - con.budget
    box = z_box if z_box is not None else 2.0 * con.ell_g1
    z = np.zeros_like(lam)
    best = -np.inf
    shift = lam - con.vector
    for _ in range(z_iters):
        val = float(z @ shift) - float(z @ z) / 4.0 - con.radius ** 2
        best = max(best, val)
        z = np.clip(z + z_step * (shift - z / 2.0), -box, box)
    val = float(z @ shift) - float(z @ z) / 4.0 - con.radius ** 2
    return max(best, val)
