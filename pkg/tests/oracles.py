"""Reference computations that share no code with the package under test."""

import numpy as np


def series_occupancy(P, gamma, rho, pi, tol=1e-15):
    """Occupancy from the truncated series (1-gamma) sum_k gamma^k Pr(s_k, a_k)."""
    S, A, _ = P.shape
    state = np.asarray(rho, dtype=float)
    lam = np.zeros((S, A))
    w = 1.0 - gamma
    while w > tol:
        joint = state[:, None] * pi
        lam += w * joint
        state = np.einsum("sa,sat->t", joint, P)
        w *= gamma
    return lam.ravel()


def iterative_values(P, gamma, rho, pi, r, tol=1e-14):
    """V, Q by repeated Bellman backups (no linear solves)."""
    S, A, _ = P.shape
    r = np.asarray(r, dtype=float).reshape(S, A)
    v = np.zeros(S)
    while True:
        q = r + gamma * P @ v
        v_new = (pi * q).sum(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            break
        v = v_new
    q = r + gamma * P @ v_new
    return float(rho @ v_new), q.ravel()


def value_iteration(P, gamma, rho, r, tol=1e-13):
    """Optimal rho-weighted value for reward r."""
    S, A, _ = P.shape
    r = np.asarray(r, dtype=float).reshape(S, A)
    v = np.zeros(S)
    while True:
        v_new = (r + gamma * P @ v).max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            return float(rho @ v_new)
        v = v_new


def central_difference(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def random_mdp_arrays(rng, S, A, gamma=None):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    rho = rng.dirichlet(np.ones(S))
    if gamma is None:
        gamma = float(rng.uniform(0.3, 0.9))
    return P, gamma, rho


def table_from_theta(kind, values, S, A, features=None):
    """Policy table (unnormalized for ``direct``) computed from scratch."""
    values = np.asarray(values, dtype=float)
    if kind == "direct":
        return values.reshape(S, A)
    logits = values if kind == "tabular_softmax" else features @ values
    e = np.exp(logits.reshape(S, A) - logits.reshape(S, A).max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def lagrangian_of_theta(mdp, theta, mu, f, g):
    """theta-values -> f(lam) - mu g(lam) via the series occupancy; f, g map lam to a scalar."""
    P, gamma, rho = mdp.transition, mdp.gamma, mdp.rho
    S, A, _ = P.shape

    def L(values):
        lam = series_occupancy(P, gamma, rho, table_from_theta(theta.kind, values, S, A, theta.features))
        return f(lam) - mu * g(lam)

    return L
