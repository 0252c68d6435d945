"""Tabular MDPs, occupancy measures, value functions and trajectory sampling.

State-action quantities are stored flat in row-major ``[s][a]`` order, i.e.
index ``s * n_actions + a``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Negative entries down to -DUST are treated as float noise and clamped.
DUST = 1e-12


class InvalidMdpError(ValueError):
    pass


def _clean_distribution(p, where, atol=DUST):
    p = np.array(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidMdpError(f"{where}: non-finite entries")
    if np.any(p < -atol):
        raise InvalidMdpError(f"{where}: negative entry {p.min():.3g}")
    p = np.where(p < 0, 0.0, p)
    total = p.sum(axis=-1, keepdims=True)
    bad = np.abs(total - 1.0) > atol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0][:-1])
        raise InvalidMdpError(f"{where}{list(idx) if idx else ''}: sums to {float(total[bad][0])!r}, not 1")
    return p / total


@dataclass(frozen=True)
class TabularMdp:
    """Finite discounted MDP.

    Parameters
    ----------
    transition : array of shape (S, A, S)
        ``transition[s, a, s']`` is P(s' | s, a).
    gamma : float
        Discount factor in [0, 1).
    rho : array of shape (S,)
        Initial state distribution.
    """

    transition: np.ndarray
    gamma: float
    rho: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidMdpError(f"transition must have shape (S, A, S), got {P.shape}")
        if not 0.0 <= float(self.gamma) < 1.0:
            raise InvalidMdpError(f"gamma must lie in [0, 1), got {self.gamma}")
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (P.shape[0],):
            raise InvalidMdpError(f"rho must have shape ({P.shape[0]},), got {rho.shape}")
        P = _clean_distribution(P, "transition row")
        rho = _clean_distribution(rho, "rho")
        P.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "rho": self.rho.tolist(),
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        P = np.asarray(d["transition"], dtype=float)
        expected = (int(d["n_states"]), int(d["n_actions"]), int(d["n_states"]))
        if P.shape != expected:
            raise InvalidMdpError(f"transition has shape {P.shape}, expected {expected}")
        return cls(transition=P, gamma=d["gamma"], rho=d["rho"])


def load_mdp(path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def save_mdp(mdp: TabularMdp, path):
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1))


@dataclass(frozen=True)
class Policy:
    """Stochastic policy table ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {p.shape}")
        p = _clean_distribution(p, "policy row")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    @property
    def shape(self):
        return self.probs.shape

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(p)


@dataclass(frozen=True)
class OccupancyMeasure:
    """Discounted state-action occupancy, flat vector over S x A."""

    values: np.ndarray
    n_actions: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size % self.n_actions:
            raise ValueError(f"length {v.size} is not a multiple of n_actions={self.n_actions}")
        if np.any(v < -DUST):
            raise ValueError(f"occupancy has negative entry {v.min():.3g}")
        v = np.where(v < 0, 0.0, v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    @property
    def table(self):
        return self.values.reshape(-1, self.n_actions)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    seed: int
    index: int = 0

    @property
    def steps(self):
        return list(zip(self.states.tolist(), self.actions.tolist()))

    def __len__(self):
        return len(self.states)


def _probs(policy) -> np.ndarray:
    return policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)


def _check_dims(mdp, pi):
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {pi.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")


def _flat(x, n) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n:
        raise ValueError(f"expected a vector of length {n}, got {x.size}")
    return x


def policy_transition(mdp: TabularMdp, pi) -> np.ndarray:
    """State-to-state kernel P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)."""
    return np.einsum("sa,sat->st", pi, mdp.transition)


def state_occupancy_exact(mdp: TabularMdp, policy) -> np.ndarray:
    pi = _probs(policy)
    _check_dims(mdp, pi)
    P_pi = policy_transition(mdp, pi)
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi.T
    return np.linalg.solve(A, (1.0 - mdp.gamma) * mdp.rho)


def occupancy_exact(mdp: TabularMdp, policy) -> OccupancyMeasure:
    """Occupancy of ``policy`` from the flow equations.

    Solves ``d = (1 - gamma) rho + gamma P_pi^T d`` and returns
    ``lambda(s, a) = d(s) pi(a|s)``.
    """
    pi = _probs(policy)
    d = state_occupancy_exact(mdp, pi)
    lam = d[:, None] * pi
    return OccupancyMeasure(lam.ravel(), mdp.n_actions)


def state_occupancy(lam, n_actions=None) -> np.ndarray:
    if isinstance(lam, OccupancyMeasure):
        return lam.table.sum(axis=1)
    return np.asarray(lam, dtype=float).reshape(-1, n_actions).sum(axis=1)


def policy_from_occupancy(lam, n_actions=None, atol=0.0) -> Policy:
    if isinstance(lam, OccupancyMeasure):
        table = lam.table
    else:
        table = np.asarray(lam, dtype=float).reshape(-1, n_actions)
    mass = table.sum(axis=1)
    empty = np.flatnonzero(mass <= atol)
    if empty.size:
        raise ValueError(f"state {int(empty[0])} has zero occupancy mass; its policy is undetermined")
    return Policy(table / mass[:, None])


def flow_residual(mdp: TabularMdp, lam) -> np.ndarray:
    """Per-state violation of the flow equalities defining the occupancy polytope."""
    table = np.asarray(lam, dtype=float).reshape(mdp.n_states, mdp.n_actions)
    inflow = np.einsum("sa,sat->t", table, mdp.transition)
    return table.sum(axis=1) - (1.0 - mdp.gamma) * mdp.rho - mdp.gamma * inflow


def value_q_advantage(mdp: TabularMdp, policy, reward):
    """Exact policy evaluation for a state-action reward.

    Returns
    -------
    value : float
        ``sum_s rho(s) V(s)``.
    q : ndarray, flat (S*A,)
    advantage : ndarray, flat (S*A,)
    """
    pi = _probs(policy)
    _check_dims(mdp, pi)
    S, A = mdp.n_states, mdp.n_actions
    r = _flat(reward, S * A).reshape(S, A)
    P_pi = policy_transition(mdp, pi)
    v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, (pi * r).sum(axis=1))
    q = r + mdp.gamma * mdp.transition @ v
    adv = q - v[:, None]
    return float(mdp.rho @ v), q.ravel(), adv.ravel()


def q_values_batch(mdp: TabularMdp, policy, rewards) -> np.ndarray:
    """Q-functions for several rewards at once; ``rewards`` has shape (k, S*A)."""
    pi = _probs(policy)
    S, A = mdp.n_states, mdp.n_actions
    R = np.asarray(rewards, dtype=float).reshape(-1, S, A)
    P_pi = policy_transition(mdp, pi)
    rhs = np.einsum("sa,ksa->sk", pi, R)
    v = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, rhs)
    q = R + mdp.gamma * np.einsum("sat,tk->ksa", mdp.transition, v)
    return q.reshape(len(R), S * A)


# --- sampling -------------------------------------------------------------

def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index`` of a batch seeded with ``seed``.

    Each trajectory gets its own Philox stream keyed by ``(seed, index)`` via
    ``SeedSequence.spawn_key``, so sampled batches do not depend on how the
    trajectories are distributed over workers.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _inverse_cdf(cdf, last, u):
    # cdf: (..., n) cumulative sums; last: index of the last positive entry.
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, last)


class _Sampler:
    def __init__(self, mdp, pi):
        self.rho_cdf = np.cumsum(mdp.rho)
        self.rho_last = int(np.flatnonzero(mdp.rho > 0)[-1])
        self.pi_cdf = np.cumsum(pi, axis=1)
        self.pi_last = (pi > 0).shape[1] - 1 - np.argmax((pi > 0)[:, ::-1], axis=1)
        self.P_cdf = np.cumsum(mdp.transition, axis=2)
        pos = mdp.transition > 0
        self.P_last = pos.shape[2] - 1 - np.argmax(pos[:, :, ::-1], axis=2)

    def sample(self, uniforms):
        # uniforms: (n, K, 2) -> states, actions of shape (n, K)
        n, K, _ = uniforms.shape
        states = np.empty((n, K), dtype=np.int64)
        actions = np.empty((n, K), dtype=np.int64)
        s = _inverse_cdf(self.rho_cdf, self.rho_last, uniforms[:, 0, 0])
        for k in range(K):
            a = _inverse_cdf(self.pi_cdf[s], self.pi_last[s], uniforms[:, k, 1])
            states[:, k] = s
            actions[:, k] = a
            if k + 1 < K:
                s = _inverse_cdf(self.P_cdf[s, a], self.P_last[s, a], uniforms[:, k + 1, 0])
        return states, actions


def rollout(mdp: TabularMdp, policy, horizon: int, seed: int, index: int = 0) -> Trajectory:
    """Sample one length-``horizon`` trajectory from rho, the policy and P."""
    return rollouts(mdp, policy, 1, horizon, seed, first_index=index)[0]


def rollouts(mdp, policy, n, horizon, seed, workers=1, first_index=0):
    """Sample ``n`` trajectories; trajectory i uses stream ``(seed, first_index + i)``."""
    if horizon < 1 or n < 1:
        raise ValueError("need n >= 1 and horizon >= 1")
    pi = _probs(policy)
    _check_dims(mdp, pi)
    sampler = _Sampler(mdp, pi)
    indices = range(first_index, first_index + n)

    def draw(i):
        return trajectory_rng(seed, i).random((horizon, 2))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            u = np.stack(list(ex.map(draw, indices)))
    else:
        u = np.stack([draw(i) for i in indices])
    states, actions = sampler.sample(u)
    return [Trajectory(states[j], actions[j], seed, i) for j, i in enumerate(indices)]


def occupancy_estimate(trajectories, gamma: float, n_states: int, n_actions: int) -> np.ndarray:
    """Discounted empirical occupancy, summing from k = 0 to K - 1.

    The result has total mass ``1 - gamma**K``.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    K = len(trajectories[0])
    if any(len(t) != K for t in trajectories):
        raise ValueError("all trajectories must have the same length")
    disc = (1.0 - gamma) * gamma ** np.arange(K) / len(trajectories)
    lam = np.zeros(n_states * n_actions)
    for t in trajectories:
        np.add.at(lam, t.states * n_actions + t.actions, disc)
    return lam
