"""Concave objectives and convex constraints over occupancy measures.

Every catalog member is a quadratic in lambda, which we record as

    f(lam) = -a_f |lam|^2 + <b_f, lam> + c_f      (objectives, a_f >= 0)
    g(lam) =  a_g |lam|^2 + <b_g, lam> + c_g      (constraints, a_g >= 0)

That form gives closed-form conjugates for both f and the Lagrangian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import occupancy_exact
from .policy import SmoothnessConstants


def _vec(x):
    v = np.asarray(x, dtype=float).ravel().copy()
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class ObjectiveSpec:
    """``linear``: f = <r, lam>/(1-gamma).  ``neg_sq_distance``: f = -scale |lam - target|^2."""

    kind: str
    vector: np.ndarray
    gamma: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "neg_sq_distance"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        object.__setattr__(self, "vector", _vec(self.vector))
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def linear(cls, reward, gamma):
        return cls("linear", reward, gamma=gamma)

    @classmethod
    def neg_sq_distance(cls, target, scale=1.0):
        return cls("neg_sq_distance", target, scale=scale)

    @property
    def dim(self):
        return self.vector.size

    @property
    def quadratic(self):
        if self.kind == "linear":
            return 0.0, self.vector / (1.0 - self.gamma), 0.0
        e, s = self.vector, self.scale
        return s, 2.0 * s * e, -s * float(e @ e)

    @property
    def sigma(self):
        """Strong-concavity modulus in lambda."""
        return 0.0 if self.kind == "linear" else 2.0 * self.scale

    @property
    def M_F(self):
        if self.kind == "linear":
            return float(np.abs(self.vector).max()) / (1.0 - self.gamma)
        return 2.0 * self.scale

    @property
    def ell_f1(self):
        """Bound on the sup-norm of the gradient over the polytope."""
        if self.kind == "linear":
            return float(np.abs(self.vector).max()) / (1.0 - self.gamma)
        return 2.0 * self.scale

    @property
    def ell_f2(self):
        return 0.0 if self.kind == "linear" else 2.0 * self.scale

    def to_dict(self):
        if self.kind == "linear":
            params = {"reward": self.vector.tolist(), "gamma": self.gamma}
        else:
            params = {"target": self.vector.tolist(), "scale": self.scale}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, d):
        p = d["params"]
        if d["kind"] == "linear":
            return cls.linear(p["reward"], p["gamma"])
        if d["kind"] == "neg_sq_distance":
            return cls.neg_sq_distance(p["target"], p.get("scale", 1.0))
        raise ValueError(f"unknown objective kind {d['kind']!r}")


@dataclass(frozen=True)
class SlaterWitness:
    """A strictly feasible policy and its slack: g(lambda(policy)) <= -xi."""

    policy: np.ndarray
    xi: float
    F_tilde: float | None = None


@dataclass(frozen=True)
class ConstraintSpec:
    """``linear``: g = <c, lam>/(1-gamma) - budget.  ``sq_ball``: g = |lam - center|^2 - radius^2."""

    kind: str
    vector: np.ndarray
    gamma: float = 0.0
    budget: float = 0.0
    radius: float = 0.0
    slater: SlaterWitness | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("linear", "sq_ball"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        object.__setattr__(self, "vector", _vec(self.vector))

    @classmethod
    def linear(cls, cost, gamma, budget=0.0):
        return cls("linear", cost, gamma=gamma, budget=budget)

    @classmethod
    def sq_ball(cls, center, radius):
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        return cls("sq_ball", center, radius=radius)

    @property
    def dim(self):
        return self.vector.size

    @property
    def quadratic(self):
        if self.kind == "linear":
            return 0.0, self.vector / (1.0 - self.gamma), -self.budget
        c0 = self.vector
        return 1.0, -2.0 * c0, float(c0 @ c0) - self.radius ** 2

    @property
    def M_G(self):
        if self.kind == "linear":
            return float(np.abs(self.vector).max()) / (1.0 - self.gamma) + abs(self.budget)
        # |lam - center|^2 ranges over [0, 2] on the polytope
        return max(2.0 - self.radius ** 2, self.radius ** 2)

    @property
    def ell_g1(self):
        if self.kind == "linear":
            return float(np.abs(self.vector).max()) / (1.0 - self.gamma)
        return 2.0

    @property
    def ell_g2(self):
        return 0.0 if self.kind == "linear" else 2.0

    def with_slater(self, mdp, policy, xi=None, objective=None):
        """Attach a Slater witness after checking g(lambda(policy)) <= -xi < 0."""
        lam = occupancy_exact(mdp, policy).values
        g = g_eval_grad(self, lam)[0]
        if xi is None:
            xi = -g
        if xi <= 0 or g > -xi + 1e-12:
            raise ValueError(f"policy is not a Slater point with slack {xi}: g = {g}")
        F_tilde = None if objective is None else f_eval_grad(objective, lam)[0]
        w = SlaterWitness(np.asarray(policy, dtype=float).copy(), float(xi), F_tilde)
        return ConstraintSpec(self.kind, self.vector, self.gamma, self.budget, self.radius, w)

    def to_dict(self):
        if self.kind == "linear":
            params = {"cost": self.vector.tolist(), "gamma": self.gamma, "budget": self.budget}
        else:
            params = {"center": self.vector.tolist(), "radius": self.radius}
        d = {"kind": self.kind, "params": params}
        if self.slater is not None:
            d["slater"] = {"policy": self.slater.policy.tolist(), "xi": self.slater.xi}
        return d

    @classmethod
    def from_dict(cls, d, mdp=None, objective=None):
        p = d["params"]
        if d["kind"] == "linear":
            con = cls.linear(p["cost"], p["gamma"], p.get("budget", 0.0))
        elif d["kind"] == "sq_ball":
            con = cls.sq_ball(p["center"], p["radius"])
        else:
            raise ValueError(f"unknown constraint kind {d['kind']!r}")
        if "slater" in d:
            if mdp is None:
                raise ValueError("verifying a Slater witness needs the MDP")
            con = con.with_slater(mdp, np.asarray(d["slater"]["policy"]), d["slater"].get("xi"), objective)
        return con


def _check_len(spec, lam):
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size != spec.dim:
        raise ValueError(f"lambda has length {lam.size}, expected {spec.dim}")
    return lam


def f_eval_grad(obj: ObjectiveSpec, lam):
    lam = _check_len(obj, lam)
    if obj.kind == "linear":
        w = obj.vector / (1.0 - obj.gamma)
        return float(w @ lam), w.copy()
    diff = lam - obj.vector
    return -obj.scale * float(diff @ diff), -2.0 * obj.scale * diff


def g_eval_grad(con: ConstraintSpec, lam):
    lam = _check_len(con, lam)
    if con.kind == "linear":
        w = con.vector / (1.0 - con.gamma)
        return float(w @ lam) - con.budget, w.copy()
    diff = lam - con.vector
    return float(diff @ diff) - con.radius ** 2, 2.0 * diff


def lagrangian_eval_grad(obj, con, lam, mu):
    """L(lam, mu) = f(lam) - mu g(lam) and its lambda-gradient."""
    if mu < 0:
        raise ValueError(f"multiplier must be nonnegative, got {mu}")
    fv, fg = f_eval_grad(obj, lam)
    gv, gg = g_eval_grad(con, lam)
    return fv - mu * gv, fg - mu * gg


def g_conjugate(con: ConstraintSpec, z, atol=1e-12) -> float:
    """Convex conjugate g*(z) = sup_lam <z, lam> - g(lam) over the ambient space."""
    z = _check_len(con, z)
    if con.kind == "linear":
        w = con.vector / (1.0 - con.gamma)
        return con.budget if np.max(np.abs(z - w)) <= atol else math.inf
    return float(z @ con.vector) + float(z @ z) / 4.0 + con.radius ** 2


def lagrangian_conjugate(obj, con, z, mu, atol=1e-12):
    """Concave conjugate L_*(z, mu) = inf_lam <z, lam> - L(lam, mu).

    Returns ``(value, minimizer)``; the value is ``-inf`` (minimizer ``None``)
    off the support when the Lagrangian is linear in lambda.
    """
    z = _check_len(obj, z)
    a_f, b_f, c_f = obj.quadratic
    a_g, b_g, c_g = con.quadratic
    alpha = a_f + mu * a_g
    beta = z - b_f + mu * b_g
    const = -c_f + mu * c_g
    if alpha > 0:
        lam = -beta / (2.0 * alpha)
        return const - float(beta @ beta) / (4.0 * alpha), lam
    if np.max(np.abs(beta)) <= atol:
        return const, None
    return -math.inf, None


def lagrangian_curvature(obj, con, mu):
    """Coefficient alpha with L(lam, mu) = -alpha |lam|^2 + linear terms."""
    return obj.quadratic[0] + mu * con.quadratic[0]


# --- smoothness bookkeeping --------------------------------------------------

def softmax_smoothness(ell_1, ell_2, l_psi_1, l_psi_2, gamma):
    """Smoothness of h(lambda(theta)) under a soft-max parameterization.

    ``ell_1`` bounds |grad h|_inf and ``ell_2`` is the gradient-Lipschitz constant of h.
    """
    g = 1.0 - gamma
    return (4.0 * ell_2 * l_psi_1 ** 2 / g ** 4
            + 8.0 * l_psi_1 ** 2 * ell_1 / g ** 3
            + 2.0 * ell_1 * (l_psi_2 + l_psi_1 ** 2) / g ** 2)


def direct_smoothness(ell_1, ell_2, n_actions, gamma):
    """Smoothness of h(lambda^pi) in the policy table under direct parameterization."""
    return (4.0 * ell_1 * gamma * n_actions + ell_2 * n_actions ** 1.5) / (1.0 - gamma) ** 2


def composed_smoothness(obj, con, smooth, C0, gamma, n_actions=None):
    """Return ``(ell_F, ell_G, ell_L, M_L)``.

    ``smooth`` is a :class:`SmoothnessConstants` for soft-max kinds or the
    string ``"direct"`` (which needs ``n_actions``).
    """
    if isinstance(smooth, SmoothnessConstants):
        ell_F = softmax_smoothness(obj.ell_f1, obj.ell_f2, smooth.l_psi_1, smooth.l_psi_2, gamma)
        ell_G = softmax_smoothness(con.ell_g1, con.ell_g2, smooth.l_psi_1, smooth.l_psi_2, gamma)
    elif smooth == "direct":
        if n_actions is None:
            raise ValueError("direct smoothness needs n_actions")
        ell_F = direct_smoothness(obj.ell_f1, obj.ell_f2, n_actions, gamma)
        ell_G = direct_smoothness(con.ell_g1, con.ell_g2, n_actions, gamma)
    else:
        raise ValueError(f"unsupported parameterization {smooth!r}")
    return ell_F, ell_G, ell_F + C0 * ell_G, obj.M_F + C0 * con.M_G
