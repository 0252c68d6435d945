"""Primal-dual policy gradient and its pessimistic zero-violation variant."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .gradients import (
    GradEstimatorConfig,
    constraint_value,
    exact_grad,
    lagrangian_at,
    reinforce_estimate,
    variational_grad,
)
from .objectives import composed_smoothness, g_eval_grad
from .policy import SmoothnessConstants, ThetaParams, project_like

CONSTRAINT_MODES = ("exact", "fenchel", "sampled")
CSV_HEADER = ("t", "F", "G", "G_delta", "mu", "grad_norm")


@dataclass(frozen=True)
class PdpgConfig:
    """Settings for one primal-dual run.

    ``constraint_mode`` picks how the dual step sees G: ``exact`` evaluates it
    on the exact occupancy, ``fenchel`` through the conjugate ascent, and
    ``sampled`` as g(lambda_hat) from the REINFORCE batch.
    """

    T: int
    eta1: float
    eta2: float
    C0: float
    theta0: ThetaParams
    mu0: float = 0.0
    delta: float = 0.0
    estimator: GradEstimatorConfig = field(default_factory=GradEstimatorConfig)
    constraint_mode: str = "exact"
    seed: int = 0
    backtrack: bool = False
    fenchel_iters: int = 5000

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("step sizes must be positive")
        if not self.C0 > 0:
            raise ValueError("C0 must be positive")
        if not 0.0 <= self.mu0 <= self.C0:
            raise ValueError(f"mu0 = {self.mu0} is outside [0, C0 = {self.C0}]")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.constraint_mode!r}")
        if self.constraint_mode == "sampled" and self.estimator.mode != "reinforce":
            raise ValueError("sampled constraint values need the reinforce estimator")

    def to_dict(self):
        return {
            "T": self.T, "eta1": self.eta1, "eta2": self.eta2, "C0": self.C0,
            "mu0": self.mu0, "delta": self.delta, "estimator": self.estimator.to_dict(),
            "constraint_mode": self.constraint_mode, "seed": self.seed,
            "backtrack": self.backtrack, "theta0": self.theta0.to_dict(),
        }


@dataclass
class IterateLog:
    """Per-iteration record of a run; metrics are exact even for sampled estimators."""

    t: np.ndarray
    F: np.ndarray
    G: np.ndarray
    G_delta: np.ndarray
    mu: np.ndarray
    grad_norm: np.ndarray
    delta: float = 0.0
    theta_final: ThetaParams | None = None
    mu_final: float = 0.0

    def __len__(self):
        return len(self.t)

    @property
    def avg_F(self):
        return float(np.mean(self.F))

    @property
    def avg_violation(self):
        return max(0.0, float(np.sum(self.G))) / len(self)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(self.t, self.F, self.G, self.G_delta, self.mu, self.grad_norm):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != CSV_HEADER:
            raise ValueError(f"unexpected header {rows[0]}")
        data = np.array(rows[1:], dtype=float).reshape(-1, len(CSV_HEADER))
        delta = float(data[0, 3] - data[0, 2]) if len(data) else 0.0
        return cls(data[:, 0].astype(int), *data[:, 1:].T, delta=delta)


def run_metrics(log: IterateLog, F_star: float) -> dict:
    T = len(log)
    tail = max(1, T // 2)
    return {
        "avg_gap": F_star - float(np.mean(log.F)),
        "avg_violation": max(0.0, float(np.sum(log.G))) / T,
        "tail_gap": F_star - float(np.mean(log.F[-tail:])),
    }


def write_summary(path, config: dict, log: IterateLog, F_star: float, wall_time_s: float):
    out = {"config": config, **run_metrics(log, F_star), "F_star": F_star, "wall_time_s": wall_time_s}
    Path(path).write_text(json.dumps(out, indent=1, sort_keys=True))
    return out


def _gradient(mdp, theta, mu, obj, con, est, state, t):
    if est.mode == "exact":
        return exact_grad(mdp, theta, mu, obj, con, state=state), None
    if est.mode == "reinforce":
        return reinforce_estimate(mdp, theta, mu, obj, con, est, first_index=t * est.n)
    return variational_grad(mdp, theta, mu, obj, con, est), None


def _loop(mdp, obj, con, cfg: PdpgConfig) -> IterateLog:
    est = replace(cfg.estimator, seed=cfg.seed)
    T = cfg.T
    rec = {k: np.empty(T) for k in CSV_HEADER[1:]}
    theta, mu, eta1 = cfg.theta0, float(cfg.mu0), cfg.eta1
    for t in range(T):
        state = lagrangian_at(mdp, theta, mu, obj, con)
        grad, lam_hat = _gradient(mdp, theta, mu, obj, con, est, state, t)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient at iteration {t}")
        if cfg.constraint_mode == "exact":
            G_hat = state["G"]
        elif cfg.constraint_mode == "fenchel":
            G_hat = constraint_value(mdp, theta, con, "fenchel", z_iters=cfg.fenchel_iters)
        else:
            G_hat = g_eval_grad(con, lam_hat)[0]

        theta_next = project_like(theta, theta.values + eta1 * grad)
        if cfg.backtrack:
            for _ in range(20):
                if lagrangian_at(mdp, theta_next, mu, obj, con)["L"] >= state["L"] - 1e-10:
                    break
                eta1 /= 2.0
                theta_next = project_like(theta, theta.values + eta1 * grad)

        rec["F"][t] = state["F"]
        rec["G"][t] = state["G"]
        rec["G_delta"][t] = state["G"] + cfg.delta
        rec["mu"][t] = mu
        rec["grad_norm"][t] = float(np.linalg.norm(grad))

        theta = theta_next
        mu = min(max(mu + cfg.eta2 * (G_hat + cfg.delta), 0.0), cfg.C0)
    return IterateLog(np.arange(T), **rec, delta=cfg.delta, theta_final=theta, mu_final=mu)


def run_pdpg(mdp, obj, con, cfg: PdpgConfig) -> IterateLog:
    """Alternating projected ascent in theta and projected descent of L in mu."""
    if cfg.delta != 0:
        raise ValueError("run_pdpg expects delta = 0; use run_pdpg0 for the pessimistic variant")
    return _loop(mdp, obj, con, cfg)


def run_pdpg0(mdp, obj, con, cfg: PdpgConfig) -> IterateLog:
    """The same loop on the tightened constraint G(theta) + delta."""
    xi = con.slater.xi if con.slater is not None else None
    if cfg.delta > 0:
        if xi is None:
            raise ValueError("a positive delta needs a Slater witness to compare against")
        if cfg.delta >= xi:
            raise ValueError(f"delta = {cfg.delta} must be smaller than the Slater slack xi = {xi}")
    return _loop(mdp, obj, con, cfg)


# --- theory-driven hyperparameters -------------------------------------------

VARIANTS = ("concave", "strongly_concave")


def derive_hyperparams(variant, constants, T):
    """Step sizes and dual cap prescribed by the convergence theorems.

    Returns ``(eta1, eta2, C0)`` with C0 = 1 + (M_F - F_tilde)/xi, eta1 = 1/ell_L
    and eta2 = T^(-2/3) (concave) or T^(-1/2) (strongly concave).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    xi, ell_L = constants["xi"], constants["ell_L"]
    if not xi > 0:
        raise ValueError("xi must be positive")
    if not ell_L > 0:
        raise ValueError("ell_L must be positive")
    C0 = 1.0 + (constants["M_F"] - constants["F_tilde"]) / xi
    eta2 = T ** (-2.0 / 3.0) if variant == "concave" else T ** -0.5
    return 1.0 / ell_L, eta2, C0


def problem_constants(mdp, obj, con, theta: ThetaParams) -> dict:
    """Bounds feeding :func:`derive_hyperparams` and :func:`solve_delta`.

    Needs a Slater witness on ``con`` with its objective value F_tilde.
    ``ell_Theta`` and ``eps_tilde`` are proxies: the policy-from-occupancy
    Lipschitz bound sqrt(2(1+|A|))/d0 with d0 = (1-gamma) min rho, and
    sigma/(sigma + 2 ell_Theta^2 ell_L).
    """
    w = con.slater
    if w is None or w.F_tilde is None:
        raise ValueError("constraint needs a Slater witness with F_tilde attached")
    C0 = 1.0 + (obj.M_F - w.F_tilde) / w.xi
    smooth = "direct" if theta.kind == "direct" else SmoothnessConstants.for_theta(theta)
    ell_F, ell_G, ell_L, M_L = composed_smoothness(obj, con, smooth, C0, mdp.gamma, mdp.n_actions)
    c = {"M_F": obj.M_F, "M_G": con.M_G, "M_L": M_L, "F_tilde": w.F_tilde, "xi": w.xi,
         "ell_F": ell_F, "ell_G": ell_G, "ell_L": ell_L, "sigma": obj.sigma, "C0": C0}
    d0 = (1.0 - mdp.gamma) * float(mdp.rho.min())
    if d0 > 0:
        c["ell_Theta"] = math.sqrt(2.0 * (1 + mdp.n_actions)) / d0
        if obj.sigma > 0:
            c["eps_tilde"] = obj.sigma / (obj.sigma + 2.0 * c["ell_Theta"] ** 2 * ell_L)
    return c


def delta_rhs(variant, constants, T, delta):
    """Right-hand side of the pessimism equation, delta = RHS(delta)."""
    M_F, M_G, xi = constants["M_F"], constants["M_G"], constants["xi"]
    if delta >= xi:
        return math.inf
    C0 = 1.0 + (M_F - constants["F_tilde"]) / (xi - delta)
    s = (M_G + xi) ** 2
    if variant == "concave":
        return ((2.0 * M_F + s / 2.0) / T ** (2.0 / 3.0)
                + (2.0 * constants["ell_L"] * constants["ell_Theta"] ** 2 + 2.0 * s + C0 ** 2 / 2.0) / T ** (1.0 / 3.0))
    if variant == "strongly_concave":
        eps = constants["eps_tilde"]
        return ((constants["M_L"] + M_F + C0 * xi) / (eps * T)
                + (s / eps + (s + C0 ** 2) / 2.0) / math.sqrt(T))
    raise ValueError(f"unknown variant {variant!r}")


def solve_delta(variant, constants, T, tol=1e-12, max_iter=100):
    """Fixed point of delta = RHS(delta) from delta = 0.

    Raises ``ValueError`` when the iteration reaches xi (the tightened problem
    would lose strict feasibility) or fails to settle.
    """
    for key in ("ell_Theta",) + (("eps_tilde",) if variant == "strongly_concave" else ()):
        if key not in constants:
            raise ValueError(f"solve_delta needs the {key} proxy")
    xi = constants["xi"]
    delta = 0.0
    for _ in range(max_iter):
        nxt = delta_rhs(variant, constants, T, delta)
        if not nxt < xi:
            raise ValueError(
                f"pessimism term reaches the Slater slack (RHS = {nxt:.4g} >= xi = {xi:.4g}) at T = {T}; "
                "increase T")
        done = abs(nxt - delta) <= tol
        delta = nxt
        if done:
            break
    resid = abs(delta_rhs(variant, constants, T, delta) - delta)
    if resid > 1e-10:
        raise ValueError(f"fixed-point iteration did not settle (residual {resid:.3g}); increase T")
    return delta
