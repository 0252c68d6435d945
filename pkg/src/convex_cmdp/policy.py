"""Policy parameterizations: tabular soft-max, linear-feature soft-max and direct."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mdp import Policy

KINDS = ("tabular_softmax", "linear_softmax", "direct")
DEFAULT_BOX = 50.0


@dataclass(frozen=True)
class ThetaParams:
    """Parameter vector together with the parameterization it feeds.

    For ``direct`` the values are the flattened policy table and the feasible
    set is the product of per-state simplices; the soft-max kinds live in the
    box ``[-box_bound, box_bound]^dim``.
    """

    values: np.ndarray
    kind: str
    n_states: int
    n_actions: int
    box_bound: float = DEFAULT_BOX
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameterization {self.kind!r}")
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("theta has non-finite entries")
        if self.box_bound <= 0:
            raise ValueError("box_bound must be positive")
        n_pairs = self.n_states * self.n_actions
        if self.kind == "linear_softmax":
            if self.features is None:
                raise ValueError("linear_softmax needs a feature matrix")
            phi = np.asarray(self.features, dtype=float)
            if phi.shape[0] != n_pairs or phi.ndim != 2:
                raise ValueError(f"features must have shape ({n_pairs}, d), got {phi.shape}")
            if v.size != phi.shape[1]:
                raise ValueError(f"theta has length {v.size}, feature width is {phi.shape[1]}")
            phi.setflags(write=False)
            object.__setattr__(self, "features", phi)
        elif v.size != n_pairs:
            raise ValueError(f"{self.kind} theta must have length {n_pairs}, got {v.size}")
        if self.kind == "direct":
            Policy(v.reshape(self.n_states, self.n_actions))
        elif np.any(np.abs(v) > self.box_bound * (1 + 1e-12)):
            raise ValueError(f"theta leaves the box [-{self.box_bound}, {self.box_bound}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.size

    def feature_matrix(self):
        """Jacobian of the logits psi(theta; s, a) with respect to theta, rows over (s, a)."""
        if self.kind == "linear_softmax":
            return self.features
        return np.eye(self.n_states * self.n_actions)

    def with_values(self, values):
        return ThetaParams(values, self.kind, self.n_states, self.n_actions, self.box_bound, self.features)

    def to_dict(self):
        d = {
            "kind": self.kind,
            "values": self.values.tolist(),
            "box_bound": self.box_bound,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
        }
        if self.features is not None:
            d["features"] = self.features.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            values=d["values"],
            kind=d["kind"],
            n_states=int(d["n_states"]),
            n_actions=int(d["n_actions"]),
            box_bound=float(d.get("box_bound", DEFAULT_BOX)),
            features=d.get("features"),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def zeros(cls, kind, n_states, n_actions, features=None, box_bound=DEFAULT_BOX):
        if kind == "direct":
            values = np.full(n_states * n_actions, 1.0 / n_actions)
        elif kind == "linear_softmax":
            values = np.zeros(np.asarray(features).shape[1])
        else:
            values = np.zeros(n_states * n_actions)
        return cls(values, kind, n_states, n_actions, box_bound, features)

    @classmethod
    def from_policy(cls, policy, kind="direct", box_bound=DEFAULT_BOX):
        """Parameters reproducing ``policy`` (log-probabilities for tabular soft-max).

        Zero probabilities are mapped to ``-box_bound``, so the soft-max policy
        is only approximately deterministic.
        """
        p = np.asarray(policy, dtype=float)
        S, A = p.shape
        if kind == "direct":
            return cls(p.ravel(), kind, S, A, box_bound)
        if kind != "tabular_softmax":
            raise ValueError("from_policy supports direct and tabular_softmax")
        with np.errstate(divide="ignore"):
            logits = np.log(p)
        logits = logits - logits.max(axis=1, keepdims=True)
        return cls(np.clip(logits, -box_bound, box_bound).ravel(), kind, S, A, box_bound)


@dataclass(frozen=True)
class SmoothnessConstants:
    """Bounds on the gradient and Hessian of the logit map psi."""

    l_psi_1: float
    l_psi_2: float = 0.0

    def __post_init__(self):
        if self.l_psi_1 < 0 or self.l_psi_2 < 0:
            raise ValueError("smoothness constants must be nonnegative")

    @classmethod
    def for_theta(cls, theta: ThetaParams):
        if theta.kind == "tabular_softmax":
            return cls(1.0, 0.0)
        if theta.kind == "linear_softmax":
            return cls(float(np.linalg.norm(theta.features, axis=1).max()), 0.0)
        raise ValueError("direct parameterization has no logit map")


def logits(theta: ThetaParams) -> np.ndarray:
    """psi(theta; s, a) as an (S, A) table."""
    if theta.kind == "linear_softmax":
        psi = theta.features @ theta.values
    else:
        psi = theta.values
    return psi.reshape(theta.n_states, theta.n_actions)


def softmax_rows(psi):
    z = psi - psi.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def policy_table(theta: ThetaParams) -> np.ndarray:
    """Policy probabilities as a raw (S, A) array, without the Policy wrapper."""
    if theta.kind == "direct":
        return theta.values.reshape(theta.n_states, theta.n_actions)
    psi = logits(theta)
    if not np.all(np.isfinite(psi)):
        raise ValueError("non-finite logits")
    return softmax_rows(psi)


def build_policy(theta: ThetaParams, dims=None) -> Policy:
    if dims is not None and tuple(dims) != (theta.n_states, theta.n_actions):
        raise ValueError(f"theta is for dims {(theta.n_states, theta.n_actions)}, not {tuple(dims)}")
    return Policy(policy_table(theta))


def log_policy_gradient(theta: ThetaParams, s: int, a: int) -> np.ndarray:
    """Score vector grad_theta log pi_theta(a | s)."""
    if theta.kind == "direct":
        raise ValueError("score function is not used under direct parameterization")
    pi = policy_table(theta)
    S, A = theta.n_states, theta.n_actions
    if theta.kind == "tabular_softmax":
        g = np.zeros(S * A)
        g[s * A:(s + 1) * A] = -pi[s]
        g[s * A + a] += 1.0
        return g
    phi = theta.features.reshape(S, A, -1)
    return phi[s, a] - pi[s] @ phi[s]


def score_matrix(theta: ThetaParams, pi=None) -> np.ndarray:
    """All score vectors stacked: row ``s*A + a`` is grad log pi(a|s)."""
    if pi is None:
        pi = policy_table(theta)
    S, A = theta.n_states, theta.n_actions
    phi = theta.feature_matrix().reshape(S, A, -1)
    mean = np.einsum("sa,sad->sd", pi, phi)
    return (phi - mean[:, None, :]).reshape(S * A, -1)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex (sort-based)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = v.shape[1]
    u = -np.sort(-v, axis=1, kind="stable")
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - tau[:, None], 0.0)


def project_theta(theta_raw, kind, box_bound=DEFAULT_BOX, n_states=None, n_actions=None, features=None):
    """Projection onto Theta: a box clamp for soft-max kinds, per-state simplex for direct."""
    x = np.asarray(theta_raw, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project non-finite parameters")
    if kind == "direct":
        if n_actions is None:
            raise ValueError("direct projection needs n_actions")
        out = project_simplex(x.reshape(-1, n_actions)).ravel()
        n_states = out.size // n_actions
    else:
        out = np.clip(x, -box_bound, box_bound)
        if n_states is None or n_actions is None:
            raise ValueError("soft-max projection needs the MDP dimensions")
    return ThetaParams(out, kind, n_states, n_actions, box_bound, features)


def project_like(theta: ThetaParams, raw) -> ThetaParams:
    return project_theta(raw, theta.kind, theta.box_bound, theta.n_states, theta.n_actions, theta.features)
