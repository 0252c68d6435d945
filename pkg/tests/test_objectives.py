import math

import numpy as np
import pytest
from conftest import random_mdp
from oracles import central_difference

from convex_cmdp.gradients import exact_grad
from convex_cmdp.mdp import Policy, occupancy_exact
from convex_cmdp.objectives import (
    ConstraintSpec,
    ObjectiveSpec,
    composed_smoothness,
    direct_smoothness,
    f_eval_grad,
    g_conjugate,
    g_eval_grad,
    lagrangian_conjugate,
    lagrangian_curvature,
    lagrangian_eval_grad,
    softmax_smoothness,
)
from convex_cmdp.policy import SmoothnessConstants, ThetaParams


def random_lams(rng, mdp, n):
    S, A = mdp.n_states, mdp.n_actions
    return [occupancy_exact(mdp, Policy(rng.dirichlet(np.ones(A) * 0.5, size=S))).values for _ in range(n)]


def catalog(rng, mdp):
    D = mdp.n_states * mdp.n_actions
    center = random_lams(rng, mdp, 1)[0]
    objs = [ObjectiveSpec.linear(rng.uniform(-1, 1, D), mdp.gamma),
            ObjectiveSpec.neg_sq_distance(rng.dirichlet(np.ones(D)), scale=1.5)]
    cons = [ConstraintSpec.linear(rng.uniform(-1, 1, D), mdp.gamma, budget=0.2),
            ConstraintSpec.sq_ball(center, 0.3)]
    return objs, cons


class TestEvaluation:
    def test_linear_closed_form(self, rng):
        r, lam = rng.normal(size=6), rng.dirichlet(np.ones(6))
        v, g = f_eval_grad(ObjectiveSpec.linear(r, 0.75), lam)
        assert v == pytest.approx(r @ lam / 0.25)
        np.testing.assert_allclose(g, r / 0.25)

    def test_distance_at_target(self, rng):
        e = rng.dirichlet(np.ones(6))
        v, g = f_eval_grad(ObjectiveSpec.neg_sq_distance(e), e)
        assert v == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_ball_at_center(self, rng):
        c = rng.dirichlet(np.ones(6))
        v, g = g_eval_grad(ConstraintSpec.sq_ball(c, 0.4), c)
        assert v == pytest.approx(-0.16)
        np.testing.assert_array_equal(g, 0.0)

    def test_zero_linear_constraint(self, rng):
        con = ConstraintSpec.linear(np.zeros(6), 0.9, budget=0.0)
        for lam in rng.dirichlet(np.ones(6), size=10):
            assert g_eval_grad(con, lam)[0] == 0.0

    def test_finite_differences(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        for lam in random_lams(rng, small_mdp, 5):
            for o in objs:
                np.testing.assert_allclose(f_eval_grad(o, lam)[1],
                                           central_difference(lambda x: f_eval_grad(o, x)[0], lam), atol=1e-7)
            for c in cons:
                np.testing.assert_allclose(g_eval_grad(c, lam)[1],
                                           central_difference(lambda x: g_eval_grad(c, x)[0], lam), atol=1e-7)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            f_eval_grad(ObjectiveSpec.linear(np.zeros(4), 0.5), np.zeros(3))
        with pytest.raises(ValueError, match="length"):
            g_eval_grad(ConstraintSpec.sq_ball(np.zeros(4), 0.1), np.zeros(5))

    def test_bad_specs(self):
        with pytest.raises(ValueError):
            ObjectiveSpec("kl", np.zeros(2))
        with pytest.raises(ValueError):
            ObjectiveSpec.neg_sq_distance(np.zeros(2), scale=0.0)
        with pytest.raises(ValueError):
            ConstraintSpec.sq_ball(np.zeros(2), -0.1)
        with pytest.raises(ValueError):
            ObjectiveSpec.from_dict({"kind": "entropy", "params": {}})

    def test_roundtrip(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        for o in objs:
            assert ObjectiveSpec.from_dict(o.to_dict()).to_dict() == o.to_dict()
        for c in cons:
            assert ConstraintSpec.from_dict(c.to_dict()).to_dict() == c.to_dict()


class TestLagrangian:
    def test_zero_multiplier(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        lam = random_lams(rng, small_mdp, 1)[0]
        v, g = lagrangian_eval_grad(objs[1], cons[1], lam, 0.0)
        fv, fg = f_eval_grad(objs[1], lam)
        assert v == fv
        np.testing.assert_array_equal(g, fg)

    def test_linear_pair(self, rng):
        r, c = rng.normal(size=4), rng.normal(size=4)
        _, g = lagrangian_eval_grad(ObjectiveSpec.linear(r, 0.6), ConstraintSpec.linear(c, 0.6), np.full(4, 0.25), 2.0)
        np.testing.assert_allclose(g, (r - 2.0 * c) / 0.4)

    def test_negative_multiplier(self, rng):
        with pytest.raises(ValueError, match="nonnegative"):
            lagrangian_eval_grad(ObjectiveSpec.linear(np.ones(2), 0.5), ConstraintSpec.linear(np.ones(2), 0.5),
                                 np.full(2, 0.5), -0.1)

    def test_midpoint_concavity(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        for _ in range(200):
            o, c = objs[rng.integers(2)], cons[rng.integers(2)]
            mu = rng.uniform(0, 5)
            l1, l2 = random_lams(rng, small_mdp, 2)
            mid = lagrangian_eval_grad(o, c, (l1 + l2) / 2, mu)[0]
            avg = (lagrangian_eval_grad(o, c, l1, mu)[0] + lagrangian_eval_grad(o, c, l2, mu)[0]) / 2
            assert mid >= avg - 1e-10

    def test_curvature(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        assert lagrangian_curvature(objs[0], cons[0], 3.0) == 0.0
        assert lagrangian_curvature(objs[1], cons[1], 2.0) == pytest.approx(1.5 + 2.0)

    def test_concave_conjugate(self, rng, small_mdp):
        # inf_lam <z, lam> - L(lam, mu): the minimizer satisfies z = grad L
        objs, cons = catalog(rng, small_mdp)
        for _ in range(20):
            z, mu = rng.normal(size=6), rng.uniform(0, 3)
            val, lam = lagrangian_conjugate(objs[1], cons[1], z, mu)
            L, gL = lagrangian_eval_grad(objs[1], cons[1], lam, mu)
            np.testing.assert_allclose(gL, z, atol=1e-10)
            assert val == pytest.approx(z @ lam - L, abs=1e-10)
            for _ in range(5):
                other = lam + rng.normal(size=6)
                assert z @ other - lagrangian_eval_grad(objs[1], cons[1], other, mu)[0] >= val - 1e-10

    def test_concave_conjugate_linear_support(self, rng):
        r, c = rng.normal(size=4), rng.normal(size=4)
        o, k = ObjectiveSpec.linear(r, 0.5), ConstraintSpec.linear(c, 0.5, budget=0.3)
        z = (r - 2.0 * c) / 0.5
        assert lagrangian_conjugate(o, k, z, 2.0)[0] == pytest.approx(-0.6)
        assert lagrangian_conjugate(o, k, z + 1e-3, 2.0)[0] == -math.inf


class TestConjugate:
    def test_ball_at_zero(self):
        con = ConstraintSpec.sq_ball(np.full(4, 0.25), 0.3)
        assert g_conjugate(con, np.zeros(4)) == pytest.approx(0.09)

    def test_ball_biconjugate(self, rng, small_mdp):
        con = ConstraintSpec.sq_ball(random_lams(rng, small_mdp, 1)[0], 0.2)
        for lam in rng.normal(size=(20, 6)):
            z = np.zeros(6)
            for _ in range(200):
                z += lam - con.vector - z / 2.0  # ascent on <z, lam> - g*(z)
            assert z @ lam - g_conjugate(con, z) == pytest.approx(g_eval_grad(con, lam)[0], abs=1e-6)

    def test_linear_indicator(self, rng):
        c = rng.normal(size=4)
        con = ConstraintSpec.linear(c, 0.8, budget=0.1)
        assert g_conjugate(con, c / 0.2) == pytest.approx(0.1)
        assert g_conjugate(con, c / 0.2 + np.array([1e-6, 0, 0, 0])) == math.inf

    def test_fenchel_young(self, rng, small_mdp):
        _, cons = catalog(rng, small_mdp)
        for con in cons:
            for _ in range(200):
                lam = rng.normal(size=6)
                z = rng.normal(size=6) if con.kind == "sq_ball" else con.vector / (1 - con.gamma)
                assert g_eval_grad(con, lam)[0] + g_conjugate(con, z) >= z @ lam - 1e-10


class TestSmoothness:
    def test_softmax_reference(self):
        assert softmax_smoothness(1.0, 0.0, 1.0, 0.0, 0.9) == pytest.approx(8200.0)

    def test_direct_reference(self):
        assert direct_smoothness(1.0, 2.0, 2, 0.5) == pytest.approx(38.62741699796952, rel=1e-12)

    def test_zero_multiplier(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        ell_F, _, ell_L, M_L = composed_smoothness(objs[0], cons[1], SmoothnessConstants(1.0, 0.0), 0.0, 0.9)
        assert ell_L == ell_F and M_L == objs[0].M_F
        _, ell_G, ell_L, M_L = composed_smoothness(objs[0], cons[1], "direct", 3.0, 0.9, n_actions=2)
        assert ell_L == pytest.approx(direct_smoothness(objs[0].ell_f1, 0.0, 2, 0.9) + 3.0 * ell_G)
        assert M_L == pytest.approx(objs[0].M_F + 3.0 * cons[1].M_G)

    def test_unsupported(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        with pytest.raises(ValueError):
            composed_smoothness(objs[0], cons[0], "neural", 1.0, 0.9)
        with pytest.raises(ValueError):
            composed_smoothness(objs[0], cons[0], "direct", 1.0, 0.9)

    def test_value_bounds(self, rng, small_mdp):
        objs, cons = catalog(rng, small_mdp)
        for lam in random_lams(rng, small_mdp, 1000):
            for o in objs:
                assert abs(f_eval_grad(o, lam)[0]) <= o.M_F + 1e-12
            for c in cons:
                assert abs(g_eval_grad(c, lam)[0]) <= c.M_G + 1e-12

    @pytest.mark.parametrize("kind", ["tabular_softmax", "linear_softmax", "direct"])
    def test_empirical_smoothness(self, rng, kind):
        mdp = random_mdp(rng, 3, 2, 0.7)
        objs, cons = catalog(rng, mdp)
        phi = rng.normal(size=(6, 4)) if kind == "linear_softmax" else None

        def draw():
            if kind == "direct":
                return ThetaParams(rng.dirichlet(np.ones(2), size=3).ravel(), kind, 3, 2)
            d = 4 if phi is not None else 6
            return ThetaParams(rng.normal(scale=2, size=d), kind, 3, 2, features=phi)

        for obj in objs:
            if kind == "direct":
                bound = composed_smoothness(obj, cons[0], "direct", 0.0, mdp.gamma, 2)[0]
            else:
                t = draw()
                bound = composed_smoothness(obj, cons[0], SmoothnessConstants.for_theta(t), 0.0, mdp.gamma)[0]
            for _ in range(100):
                t1, t2 = draw(), draw()
                diff = exact_grad(mdp, t1, 0.0, obj, cons[0]) - exact_grad(mdp, t2, 0.0, obj, cons[0])
                assert np.linalg.norm(diff) <= bound * np.linalg.norm(t1.values - t2.values) + 1e-12
