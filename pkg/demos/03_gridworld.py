"""Imitation-constrained navigation on the 10x10 grid.

The agent must stay within distance d0 = 0.2 of a demonstration's occupancy
measure while maximizing reward; the learned route should follow one of the
two corridors around the penalty block.
"""

# %%
import numpy as np

from convex_cmdp import (
    ConstraintSpec,
    GridworldSpec,
    ObjectiveSpec,
    PdpgConfig,
    ThetaParams,
    corridor_share,
    demo_policy,
    lagrangian_at,
    make_gridworld,
    occupancy_exact,
    policy_table,
    run_pdpg,
)

spec = GridworldSpec()
mdp, lam0, reward = make_gridworld(spec)
obj = ObjectiveSpec.linear(reward, mdp.gamma)
con = ConstraintSpec.sq_ball(lam0.values, spec.d0)

# %%
theta0 = ThetaParams.zeros("direct", mdp.n_states, mdp.n_actions)
log = run_pdpg(mdp, obj, con, PdpgConfig(T=20_000, eta1=10.0, eta2=0.1, C0=50.0, theta0=theta0))
final = lagrangian_at(mdp, log.theta_final, 0.0, obj, con)
demo = lagrangian_at(mdp, ThetaParams(demo_policy(spec).probs.ravel(), "direct", 100, 5), 0.0, obj, con)
print(f"reward {final['F']:.3f} (demo {demo['F']:.3f}), distance {np.sqrt(final['G'] + spec.d0 ** 2):.3f}")

# %% Heatmap of the state occupancy on a square-root scale: denser characters carry more mass.
occ = occupancy_exact(mdp, policy_table(log.theta_final)).table.sum(axis=1).reshape(10, 10)
shades = " .:-=+*#%@"
for row in occ:
    print("".join(shades[min(9, int(9 * np.sqrt(v / occ.max()) + 0.5))] * 2 for v in row))
print("corridor share:", round(corridor_share(spec, occ.ravel())[0], 3))
