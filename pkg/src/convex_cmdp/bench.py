"""Instance generators, the config-driven experiment runner and rate fitting."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gradients import GradEstimatorConfig, lagrangian_at
from .mdp import OccupancyMeasure, Policy, TabularMdp, load_mdp, occupancy_exact
from .objectives import ConstraintSpec, ObjectiveSpec
from .oracle import solve_polytope, solve_saddle_fw
from .pdpg import (
    PdpgConfig,
    derive_hyperparams,
    problem_constants,
    run_pdpg,
    run_pdpg0,
    solve_delta,
    write_summary,
)
from .policy import ThetaParams, policy_table

SCHEMA = 1
OUT_ENV = "CONVEX_CMDP_OUT"

# Action order for grid worlds; (row, col) offsets.
MOVES = ((0, 0), (0, -1), (0, 1), (-1, 0), (1, 0))
ACTION_NAMES = ("stay", "left", "right", "up", "down")


def _default_block():
    return [(r, c) for r in range(2, 8) for c in range(2, 8)]


def _default_demo():
    # Up the left edge, a shortcut through the corner of the block, then along row 1.
    path = [(r, 0) for r in range(9, 3, -1)]
    path += [(4, 1), (4, 2), (3, 2), (2, 2), (1, 2)]
    path += [(1, c) for c in range(3, 10)]
    path += [(0, 9)]
    return path


@dataclass(frozen=True)
class GridworldSpec:
    """Grid navigation task; cells are ``(row, col)`` with row 0 at the top.

    The default is a 10x10 grid with start at the bottom-left, target at the
    top-right and a 6x6 penalty block in the middle, leaving two corridors
    (along the left/top edges and along the bottom/right edges). The demo
    follows the left/top corridor but cuts through a corner of the block.
    """

    width: int = 10
    height: int = 10
    start: tuple = (9, 0)
    target: tuple = (0, 9)
    penalty_region: tuple = field(default_factory=lambda: tuple(_default_block()))
    step_reward: float = 0.0
    goal_reward: float = 1.0
    penalty: float = -1.0
    gamma: float = 0.95
    demo_path: tuple = field(default_factory=lambda: tuple(_default_demo()))
    d0: float = 0.2

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        cells = [self.start, self.target, *self.penalty_region, *self.demo_path]
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"cell {(r, c)} is outside the {self.height}x{self.width} grid")
        path = [tuple(p) for p in self.demo_path]
        if not path or path[0] != tuple(self.start):
            raise ValueError("demo path must begin at the start cell")
        for a, b in zip(path, path[1:]):
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise ValueError(f"demo path is disconnected between {a} and {b}")
        object.__setattr__(self, "demo_path", tuple(path))
        object.__setattr__(self, "penalty_region", tuple(tuple(p) for p in self.penalty_region))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "target", tuple(self.target))

    def index(self, cell):
        return int(cell[0]) * self.width + int(cell[1])

    def to_dict(self):
        return {
            "width": self.width, "height": self.height, "start": list(self.start),
            "target": list(self.target), "penalty_region": [list(p) for p in self.penalty_region],
            "step_reward": self.step_reward, "goal_reward": self.goal_reward, "penalty": self.penalty,
            "gamma": self.gamma, "demo_path": [list(p) for p in self.demo_path], "d0": self.d0,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("start", "target"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("penalty_region", "demo_path"):
            if key in d:
                d[key] = tuple(tuple(p) for p in d[key])
        return cls(**d)


def _move(spec, cell, a):
    dr, dc = MOVES[a]
    return min(max(cell[0] + dr, 0), spec.height - 1), min(max(cell[1] + dc, 0), spec.width - 1)


def demo_policy(spec: GridworldSpec) -> Policy:
    """Deterministic policy following the demo path, then staying put."""
    A = len(MOVES)
    actions = np.zeros(spec.width * spec.height, dtype=int)
    path = list(spec.demo_path)
    for a_cell, b_cell in zip(path, path[1:]):
        step = (b_cell[0] - a_cell[0], b_cell[1] - a_cell[1])
        actions[spec.index(a_cell)] = MOVES.index(step)
    return Policy.deterministic(actions, A)


def make_gridworld(spec: GridworldSpec | None = None):
    """Returns ``(mdp, lambda0, reward)`` for the grid task."""
    spec = spec or GridworldSpec()
    S, A = spec.width * spec.height, len(MOVES)
    P = np.zeros((S, A, S))
    for r in range(spec.height):
        for c in range(spec.width):
            for a in range(A):
                P[spec.index((r, c)), a, spec.index(_move(spec, (r, c), a))] = 1.0
    rho = np.zeros(S)
    rho[spec.index(spec.start)] = 1.0
    mdp = TabularMdp(P, spec.gamma, rho)

    reward = np.full((S, A), spec.step_reward)
    for cell in spec.penalty_region:
        reward[spec.index(cell)] += spec.penalty
    reward[spec.index(spec.target)] += spec.goal_reward
    lam0 = occupancy_exact(mdp, demo_policy(spec))
    return mdp, lam0, reward.ravel()


def corridor_masks(spec: GridworldSpec):
    """Boolean state masks of the two routes around the penalty block.

    Cells are assigned by which side of the block they lie on: above or left
    of it (first mask), below or right of it (second). Cells outside both
    bands are in neither.
    """
    block = np.array(spec.penalty_region)
    r0, r1 = block[:, 0].min(), block[:, 0].max()
    c0, c1 = block[:, 1].min(), block[:, 1].max()
    rows, cols = np.divmod(np.arange(spec.width * spec.height), spec.width)
    in_block = (rows >= r0) & (rows <= r1) & (cols >= c0) & (cols <= c1)
    first = ((rows < r0) | (cols < c0)) & ~in_block
    second = ((rows > r1) | (cols > c1)) & ~in_block
    return first, second


def corridor_share(spec: GridworldSpec, state_occ):
    """Fraction of the route-distinguishing mass on the dominant corridor.

    Only cells belonging to exactly one corridor count, so the shared start
    and target corners do not inflate the share. Returns ``(share, index)``.
    """
    first, second = corridor_masks(spec)
    d = np.asarray(state_occ, dtype=float).ravel()
    m = np.array([d[first & ~second].sum(), d[second & ~first].sum()])
    if m.sum() <= 0:
        return 0.0, -1
    k = int(np.argmax(m))
    return float(m[k] / m.sum()), k


def make_random_mdp(seed, n_states, n_actions, gamma=0.9, concentration=1.0) -> TabularMdp:
    """Transition rows from a symmetric Dirichlet, uniform initial distribution."""
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, float(concentration)), size=(n_states, n_actions))
    return TabularMdp(P, gamma, np.full(n_states, 1.0 / n_states))


def make_standard_cmdp(seed=1, n_states=3, n_actions=2, gamma=0.5, slack=0.3):
    """Random MDP with a linear reward objective and a linear cost constraint.

    Reward and cost entries are uniform on [0, 1]; the budget leaves the
    uniform policy exactly ``slack`` below it, and that policy is attached as
    the Slater witness. Returns ``(mdp, objective, constraint)``.
    """
    mdp = make_random_mdp(seed, n_states, n_actions, gamma)
    rng = np.random.default_rng(1000 + seed)
    reward = rng.uniform(size=n_states * n_actions)
    cost = rng.uniform(size=n_states * n_actions)
    obj = ObjectiveSpec.linear(reward, gamma)
    uniform = Policy.uniform(n_states, n_actions).probs
    lam_u = occupancy_exact(mdp, uniform).values
    budget = float(cost @ lam_u) / (1.0 - gamma) + slack
    con = ConstraintSpec.linear(cost, gamma, budget).with_slater(mdp, uniform, objective=obj)
    return mdp, obj, con


def rate_fit(summaries):
    """Least-squares slope of log(avg_gap + avg_violation) against log T.

    ``summaries`` holds dicts with ``T`` (or ``config.solver.T``), ``avg_gap``
    and ``avg_violation``, or ``(T, value)`` pairs. Values below 1e-12 are
    floored and flagged.
    """
    Ts, vals = [], []
    for s in summaries:
        if isinstance(s, dict):
            T = s.get("T", s.get("config", {}).get("solver", {}).get("T"))
            v = s["avg_gap"] + s["avg_violation"]
        else:
            T, v = s
        Ts.append(float(T))
        vals.append(float(v))
    Ts, vals = np.array(Ts), np.array(vals)
    if len(np.unique(Ts)) < 4:
        raise ValueError("rate fitting needs at least 4 distinct values of T")
    if np.log10(Ts.max() / Ts.min()) < 2 - 1e-9:
        raise ValueError("values of T must span at least two decades")
    floored = bool(np.any(vals < 1e-12))
    y = np.log(np.maximum(vals, 1e-12))
    x = np.log(Ts)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r_squared": r2, "floored": floored}


# --- experiments ---------------------------------------------------------------

class ExperimentError(RuntimeError):
    """Wraps a failure with the experiment stage that raised it."""


@dataclass
class Instance:
    mdp: TabularMdp
    objective: ObjectiveSpec
    constraint: ConstraintSpec
    grid: GridworldSpec | None = None
    lambda0: OccupancyMeasure | None = None


def output_root():
    return Path(os.environ.get(OUT_ENV, "."))


def _policy_from_config(p, mdp):
    if p == "uniform":
        return Policy.uniform(mdp.n_states, mdp.n_actions).probs
    if p == "demo":
        raise ValueError("'demo' Slater policies are only available for grid worlds")
    return np.asarray(p, dtype=float)


def build_instance(cfg: dict, base_dir=Path(".")) -> Instance:
    inst = cfg["instance"]
    grid = lam0 = reward = None
    kind = inst["type"]
    if kind == "standard":
        mdp, obj, con = make_standard_cmdp(inst.get("seed", 1), inst.get("n_states", 3),
                                           inst.get("n_actions", 2), inst.get("gamma", 0.5),
                                           inst.get("slack", 0.3))
        if "objective" in cfg:
            obj = ObjectiveSpec.from_dict(cfg["objective"])
            con = ConstraintSpec("linear", con.vector, con.gamma, con.budget).with_slater(
                mdp, con.slater.policy, objective=obj)
        return Instance(mdp, obj, con)
    if kind == "gridworld":
        grid = GridworldSpec.from_dict(inst.get("spec", {}))
        mdp, lam0, reward = make_gridworld(grid)
    elif kind == "random":
        mdp = make_random_mdp(inst["seed"], inst["n_states"], inst["n_actions"],
                              inst.get("gamma", 0.9), inst.get("concentration", 1.0))
    elif kind == "file":
        mdp = load_mdp(base_dir / inst["path"])
    elif kind == "inline":
        mdp = TabularMdp.from_dict(inst["mdp"])
    else:
        raise ValueError(f"unknown instance type {kind!r}")

    if "objective" in cfg:
        obj = ObjectiveSpec.from_dict(cfg["objective"])
    elif grid is not None:
        obj = ObjectiveSpec.linear(reward, mdp.gamma)
    else:
        raise ValueError("config needs an objective")

    c = cfg.get("constraint")
    if c is None and grid is not None:
        con = ConstraintSpec.sq_ball(lam0.values, grid.d0)
        slater = {"policy": "demo"}
    elif c is not None:
        slater = c.get("slater")
        con = ConstraintSpec.from_dict({k: v for k, v in c.items() if k != "slater"})
    else:
        raise ValueError("config needs a constraint")
    if slater is not None:
        if slater.get("policy") == "demo" and grid is not None:
            pol = demo_policy(grid).probs
        else:
            pol = _policy_from_config(slater["policy"], mdp)
        con = con.with_slater(mdp, pol, slater.get("xi"), obj)
    return Instance(mdp, obj, con, grid, lam0)


def build_solver(cfg: dict, instance: Instance) -> tuple[PdpgConfig, str]:
    s = cfg["solver"]
    mdp = instance.mdp
    kind = s.get("parameterization", "tabular_softmax")
    if "theta0" in s:
        theta0 = ThetaParams.from_dict(s["theta0"])
    else:
        theta0 = ThetaParams.zeros(kind, mdp.n_states, mdp.n_actions, s.get("features"),
                                   s.get("box_bound", 50.0))
    T = int(s["T"])
    needs_theory = any(s.get(k, "theory") == "theory" for k in ("eta1", "eta2", "C0")) or s.get("delta") == "solve"
    consts = problem_constants(mdp, instance.objective, instance.constraint, theta0) if needs_theory else None
    variant = s.get("variant", "concave")
    if consts is not None:
        eta1_t, eta2_t, C0_t = derive_hyperparams(variant, consts, T)
    vals = {}
    for key in ("eta1", "eta2", "C0"):
        v = s.get(key, "theory")
        vals[key] = {"eta1": eta1_t, "eta2": eta2_t, "C0": C0_t}[key] if v == "theory" else float(v)
    algorithm = s.get("algorithm", "pdpg")
    delta = s.get("delta", 0.0)
    if delta == "solve":
        delta = solve_delta(variant, consts, T)
    est = GradEstimatorConfig.from_dict(s.get("estimator", {"mode": "exact"}))
    pc = PdpgConfig(T=T, eta1=vals["eta1"], eta2=vals["eta2"], C0=vals["C0"], theta0=theta0,
                    mu0=float(s.get("mu0", 0.0)), delta=float(delta), estimator=est,
                    constraint_mode=s.get("constraint_mode", "exact"), seed=int(s.get("seed", 0)),
                    backtrack=bool(s.get("backtrack", False)))
    return pc, algorithm


def solve_oracle(cfg: dict, instance: Instance):
    o = cfg.get("oracle", {})
    method = o.get("method", "fw")
    if method == "none":
        return None
    if method == "fw":
        return solve_saddle_fw(instance.mdp, instance.objective, instance.constraint,
                               tol=o.get("tol", 1e-7), max_iters=o.get("max_iters", 500))
    if method == "polytope":
        return solve_polytope(instance.mdp, instance.objective, instance.constraint)
    raise ValueError(f"unknown oracle method {method!r}")


def heatmap(instance: Instance, theta: ThetaParams) -> np.ndarray:
    """State occupancy on the grid (height x width) or the S x A occupancy table."""
    lam = occupancy_exact(instance.mdp, policy_table(theta))
    if instance.grid is not None:
        return lam.table.sum(axis=1).reshape(instance.grid.height, instance.grid.width)
    return lam.table


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise ExperimentError(f"{name} stage failed: {exc}") from exc


def load_config(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    if cfg.get("schema") != SCHEMA:
        raise ValueError(f"unsupported config schema {cfg.get('schema')!r}; expected {SCHEMA}")
    return cfg


def run_experiment(cfg: dict, out_dir=None, base_dir=Path(".")) -> dict:
    """Oracle, solver run and artifact emission for one config.

    Writes ``iterates.csv``, ``summary.json``, ``heatmap.csv`` and, when an
    oracle ran, ``oracle.json`` into ``out_dir`` and returns the summary.
    """
    if out_dir is None:
        out_dir = output_root() / cfg.get("output_dir", "runs/" + cfg.get("name", "experiment"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    instance = _stage("instance", build_instance, cfg, Path(base_dir))
    sol = _stage("oracle", solve_oracle, cfg, instance)
    pc, algorithm = _stage("config", build_solver, cfg, instance)
    runner = run_pdpg0 if algorithm == "pdpg0" else run_pdpg
    t0 = time.perf_counter()
    log = _stage("solver", runner, instance.mdp, instance.objective, instance.constraint, pc)
    wall = time.perf_counter() - t0

    log.to_csv(out_dir / "iterates.csv")
    hm = heatmap(instance, log.theta_final)
    np.savetxt(out_dir / "heatmap.csv", hm, delimiter=",", fmt="%.17g")
    F_star = sol.F_star if sol is not None else math.nan
    if sol is not None:
        sol.save(out_dir / "oracle.json")
    config_echo = dict(cfg)
    config_echo["resolved"] = {"eta1": pc.eta1, "eta2": pc.eta2, "C0": pc.C0, "delta": pc.delta}
    summary = write_summary(out_dir / "summary.json", config_echo, log, F_star, wall)
    final = lagrangian_at(instance.mdp, log.theta_final, 0.0, instance.objective, instance.constraint)
    summary.update(T=pc.T, final_F=final["F"], final_G=final["G"])
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary
