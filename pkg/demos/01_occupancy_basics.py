"""Occupancy measures, the Lagrangian and its policy gradient on a small CMDP."""

# %%
import numpy as np

from convex_cmdp import (
    ConstraintSpec,
    ObjectiveSpec,
    Policy,
    ThetaParams,
    exact_grad,
    make_random_mdp,
    occupancy_exact,
    policy_table,
)

mdp = make_random_mdp(seed=0, n_states=3, n_actions=2, gamma=0.8)
pi = Policy.uniform(3, 2)
lam = occupancy_exact(mdp, pi)
print("occupancy table (rows are states):")
print(np.round(lam.table, 4))
print("total mass:", lam.values.sum())

# %% A concave objective and a convex constraint, both quadratic in lambda.
target = occupancy_exact(mdp, Policy.deterministic([0, 1, 0], 2)).values
obj = ObjectiveSpec.neg_sq_distance(target)
con = ConstraintSpec.sq_ball(lam.values, radius=0.15)

# %% Gradient ascent on theta with a fixed multiplier moves the occupancy toward the target.
theta = ThetaParams.zeros("tabular_softmax", 3, 2)
for step in range(201):
    g = exact_grad(mdp, theta, 0.5, obj, con)
    if step % 50 == 0:
        cur = occupancy_exact(mdp, policy_table(theta)).values
        print(f"step {step:3d}  distance to target {np.linalg.norm(cur - target):.4f}  |grad| {np.linalg.norm(g):.2e}")
    theta = theta.with_values(np.clip(theta.values + 5.0 * g, -50, 50))
