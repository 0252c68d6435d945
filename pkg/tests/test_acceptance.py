"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in the
pytest terminal summary. Run standalone with ``python3 tests/test_acceptance.py``.
"""

import copy
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import random_mdp
from lemma_checks import CHECKS
from test_gradients import fd_lagrangian_grad, random_pair, random_theta, truncation_slack

from convex_cmdp.bench import (
    GridworldSpec,
    corridor_share,
    demo_policy,
    load_config,
    make_gridworld,
    make_standard_cmdp,
    rate_fit,
    run_experiment,
)
from convex_cmdp.gradients import GradEstimatorConfig, exact_grad, reinforce_grad, variational_grad
from convex_cmdp.mdp import TabularMdp, occupancy_exact
from convex_cmdp.objectives import ConstraintSpec, ObjectiveSpec, f_eval_grad
from convex_cmdp.oracle import duality_check, solve_saddle_fw, vertex_occupancy
from convex_cmdp.pdpg import (
    PdpgConfig,
    derive_hyperparams,
    problem_constants,
    run_metrics,
    run_pdpg,
    run_pdpg0,
    solve_delta,
)
from convex_cmdp.policy import ThetaParams

ROOT = Path(__file__).resolve().parents[1]
RESULTS = []
SWEEP_T = (100, 1_000, 10_000, 100_000)


def report(name, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{elapsed:.1f}s / {limit:.0f}s]"
    RESULTS.append(line)
    print(line)
    return ok


def theory_sweep(obj=None, variant="concave"):
    mdp, base_obj, con = make_standard_cmdp(seed=1)
    obj = obj or base_obj
    if obj is not base_obj:
        con = ConstraintSpec.linear(con.vector, con.gamma, con.budget).with_slater(mdp, con.slater.policy,
                                                                                 objective=obj)
    theta = ThetaParams.zeros("direct", 3, 2)
    consts = problem_constants(mdp, obj, con, theta)
    F_star = solve_saddle_fw(mdp, obj, con, tol=1e-9).F_star
    out = {}
    for T in SWEEP_T:
        eta1, eta2, C0 = derive_hyperparams(variant, consts, T)
        log = run_pdpg(mdp, obj, con, PdpgConfig(T, eta1, eta2, C0, theta))
        out[T] = {"T": T, **run_metrics(log, F_star)}
    return {"runs": out, "fit": rate_fit(list(out.values())), "M_F": consts["M_F"],
            "instance": (mdp, obj, con, theta, consts, F_star)}


@pytest.fixture(scope="module")
def theorem1():
    t0 = time.perf_counter()
    res = theory_sweep()
    res["elapsed"] = time.perf_counter() - t0
    return res


def test_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, n = 0.0, 0
    kinds = ("tabular_softmax", "linear_softmax", "direct")
    for i in range(50):
        mdp = random_mdp(rng, int(rng.integers(2, 5)), int(rng.integers(2, 4)))
        obj_kind = ("linear", "neg_sq_distance")[i % 2]
        con_kind = ("linear", "sq_ball")[(i // 2) % 2]
        mu = (0.0, 0.7)[(i // 4) % 2]
        theta = random_theta(rng, kinds[i % 3], mdp.n_states, mdp.n_actions)
        obj, con = random_pair(rng, mdp, obj_kind, con_kind)
        ex = exact_grad(mdp, theta, mu, obj, con)
        fd = fd_lagrangian_grad(mdp, theta, mu, obj, con)
        worst = max(worst, np.linalg.norm(ex - fd) / np.linalg.norm(fd))
        n += 1
    ok = report("gradient correctness", worst <= 1e-5, f"max relative error {worst:.2e} over {n} instances",
                time.perf_counter() - t0, 60)
    assert ok


def test_estimator_fidelity():
    t0 = time.perf_counter()
    P = np.array([[[0.7, 0.3], [0.2, 0.8]], [[0.5, 0.5], [0.9, 0.1]]])
    mdp = TabularMdp(P, 0.6, np.array([0.4, 0.6]))
    theta = ThetaParams([0.3, -0.2, 0.5, 0.1], "tabular_softmax", 2, 2)
    rng = np.random.default_rng(11)
    reinforce_ok, worst_z, var_worst = True, 0.0, 0.0
    for pair in (("linear", "linear"), ("neg_sq_distance", "sq_ball")):
        obj, con = random_pair(rng, mdp, *pair)
        for mu in (0.0, 0.7):
            ex = exact_grad(mdp, theta, mu, obj, con)
            est = np.array([reinforce_grad(mdp, theta, mu, obj, con, GradEstimatorConfig("reinforce", 10, 40, seed=s))
                            for s in range(200)])
            stderr = est.std(axis=0, ddof=1) / np.sqrt(200)
            dev = np.abs(est.mean(axis=0) - ex)
            reinforce_ok &= bool(np.all(dev <= 3 * stderr + truncation_slack(mdp, theta, obj, con, mu, 40)))
            worst_z = max(worst_z, float(np.max(dev / stderr)))
    for pair in (("neg_sq_distance", "sq_ball"), ("neg_sq_distance", "linear"), ("linear", "sq_ball"),
                 ("linear", "linear")):
        obj, con = random_pair(rng, mdp, *pair)
        ex = exact_grad(mdp, theta, 0.7, obj, con)
        v = variational_grad(mdp, theta, 0.7, obj, con, GradEstimatorConfig("variational", inner_iters=2000,
                                                                              delta=1e-4))
        var_worst = max(var_worst, np.linalg.norm(v - ex) / np.linalg.norm(ex))
    ok = report("estimator fidelity", reinforce_ok and var_worst <= 1e-3,
                f"reinforce max |bias|/stderr {worst_z:.2f}, variational max relative error {var_worst:.1e}",
                time.perf_counter() - t0, 120)
    assert ok


def test_strong_duality():
    t0 = time.perf_counter()
    worst_gap, bound_ok = 0.0, True
    for seed in range(1, 21):
        mdp, obj, con = make_standard_cmdp(seed=seed)
        sol = solve_saddle_fw(mdp, obj, con)
        rep = duality_check(mdp, obj, con, sol)
        worst_gap = max(worst_gap, rep.gap)
        bound_ok &= bool(rep.bound_ok)
    ok = report("strong duality", worst_gap <= 1e-4 and bound_ok,
                f"max |F* - D(mu*)| {worst_gap:.1e}, multiplier bound {'holds' if bound_ok else 'violated'} on 20 instances",
                time.perf_counter() - t0, 120)
    assert ok


def test_lemma_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    counts = {name: fn(rng, n=100) for name, fn in CHECKS.items()}
    detail = ", ".join(f"{k} {v}" for k, v in counts.items())
    ok = report("lemma suite", sum(counts.values()) == 0, f"violations: {detail}", time.perf_counter() - t0, 60)
    assert ok


def test_theorem1_rate(theorem1):
    last = theorem1["runs"][SWEEP_T[-1]]
    cap = 0.05 * theorem1["M_F"]
    slope = theorem1["fit"]["slope"]
    ok = report("theorem 1 behavior", last["avg_gap"] <= cap and last["avg_violation"] <= cap and slope <= -0.25,
                f"T=1e5 gap {last['avg_gap']:.2e}, violation {last['avg_violation']:.2e} (cap {cap:.3f}), "
                f"slope {slope:.3f}", theorem1["elapsed"], 600)
    assert ok


def test_theorem2_rate(theorem1):
    t0 = time.perf_counter()
    mdp, obj, _ = make_standard_cmdp(seed=1)
    target = vertex_occupancy(mdp, obj.vector)
    res = theory_sweep(ObjectiveSpec.neg_sq_distance(target), variant="strongly_concave")
    slope, slope1 = res["fit"]["slope"], theorem1["fit"]["slope"]
    ok = report("theorem 2 behavior", slope <= -0.35 and slope < slope1,
                f"slope {slope:.3f} vs theorem 1 slope {slope1:.3f}", time.perf_counter() - t0, 600)
    assert ok


def test_theorem3_zero_violation(theorem1):
    t0 = time.perf_counter()
    mdp, obj, con, theta, consts, F_star = theorem1["instance"]
    T = 10_000
    try:
        delta = solve_delta("concave", consts, T)
    except ValueError as exc:
        report("theorem 3 zero violation", False, f"solve_delta failed: {exc}", time.perf_counter() - t0, 300)
        pytest.fail(f"pessimism term unavailable at T = {T}: {exc}")
    eta1, eta2, C0 = derive_hyperparams("concave", {**consts, "xi": consts["xi"] - delta}, T)
    log = run_pdpg0(mdp, obj, con, PdpgConfig(T, eta1, eta2, C0, theta, delta=delta))
    m = run_metrics(log, F_star)
    plain = theorem1["runs"][T]["avg_gap"]
    ok = report("theorem 3 zero violation", m["avg_violation"] == 0.0 and m["avg_gap"] <= 1.5 * plain,
                f"delta {delta:.3g}, violation {m['avg_violation']:.2e}, gap {m['avg_gap']:.2e} vs plain {plain:.2e}",
                time.perf_counter() - t0, 300)
    assert ok


def test_gridworld_reproduction(tmp_path):
    t0 = time.perf_counter()
    cfg = load_config(ROOT / "configs" / "gridworld.json")
    assert cfg["solver"]["T"] == 20_000
    summary = run_experiment(cfg, tmp_path)
    spec = GridworldSpec.from_dict(cfg["instance"]["spec"])
    mdp, lam0, reward = make_gridworld(spec)
    demo_F = f_eval_grad(ObjectiveSpec.linear(reward, mdp.gamma), occupancy_exact(mdp, demo_policy(spec)).values)[0]
    dist = math.sqrt(max(0.0, summary["final_G"] + spec.d0 ** 2))
    heat = np.loadtxt(tmp_path / "heatmap.csv", delimiter=",")
    share, _ = corridor_share(spec, heat.ravel())
    ok = report("gridworld reproduction",
                dist <= spec.d0 + 0.02 and summary["final_F"] >= demo_F and share >= 0.8,
                f"distance to demo {dist:.3f} (radius {spec.d0}), reward {summary['final_F']:.3f} vs demo "
                f"{demo_F:.3f}, corridor share {share:.2f}", time.perf_counter() - t0, 600)
    assert ok


def test_determinism(tmp_path):
    t0 = time.perf_counter()
    base = load_config(ROOT / "configs" / "standard_cmdp_reinforce.json")
    variants = {"sampled": base}
    fen = copy.deepcopy(base)
    fen["solver"]["constraint_mode"] = "fenchel"
    fen["solver"]["T"] = 300
    fen["instance"] = {"type": "random", "seed": 3, "n_states": 4, "n_actions": 3, "gamma": 0.8}
    fen["objective"] = {"kind": "neg_sq_distance", "params": {"target": [1 / 12] * 12}}
    fen["constraint"] = {"kind": "sq_ball", "params": {"center": [1 / 12] * 12, "radius": 0.3},
                         "slater": {"policy": "uniform"}}
    fen["solver"]["C0"] = 5.0
    variants["fenchel"] = fen
    identical = True
    for name, cfg in variants.items():
        outputs = []
        for workers in (1, 8):
            for rep in range(2):
                c = copy.deepcopy(cfg)
                c["solver"]["estimator"]["workers"] = workers
                out = tmp_path / f"{name}_{workers}_{rep}"
                run_experiment(c, out)
                outputs.append(((out / "iterates.csv").read_bytes(), (out / "heatmap.csv").read_bytes()))
        identical &= all(o == outputs[0] for o in outputs)
    ok = report("determinism", identical, "CSV bytes identical across repeats and 1/8 workers" if identical
                else "CSV output differs", time.perf_counter() - t0, 600)
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
