"""Averaged-iterate convergence of the primal-dual method on a 3-state CMDP.

The step sizes follow the theory: eta1 = 1/ell_L and eta2 = T^(-2/3) for a
linear objective, T^(-1/2) for a strongly concave one.
"""

# %%
from convex_cmdp import (
    PdpgConfig,
    ThetaParams,
    derive_hyperparams,
    make_standard_cmdp,
    problem_constants,
    rate_fit,
    run_metrics,
    run_pdpg,
    solve_saddle_fw,
)

mdp, obj, con = make_standard_cmdp(seed=1)
theta0 = ThetaParams.zeros("direct", 3, 2)
consts = problem_constants(mdp, obj, con, theta0)
F_star = solve_saddle_fw(mdp, obj, con).F_star
print(f"F* = {F_star:.4f}, ell_L = {consts['ell_L']:.1f}, C0 = {consts['C0']:.2f}")

# %%
rows = []
for T in (100, 1_000, 10_000):
    eta1, eta2, C0 = derive_hyperparams("concave", consts, T)
    m = run_metrics(run_pdpg(mdp, obj, con, PdpgConfig(T, eta1, eta2, C0, theta0)), F_star)
    rows.append({"T": T, **m})
    print(f"T = {T:6d}  avg gap {m['avg_gap']:.4f}  avg violation {m['avg_violation']:.5f}")

# %% Three points are too few for rate_fit's two-decade rule; add a fourth.
eta1, eta2, C0 = derive_hyperparams("concave", consts, 30_000)
rows.append({"T": 30_000, **run_metrics(run_pdpg(mdp, obj, con, PdpgConfig(30_000, eta1, eta2, C0, theta0)), F_star)})
print("fitted slope:", round(rate_fit(rows)["slope"], 3))
