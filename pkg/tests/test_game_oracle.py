import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from riskpo import matrix_kit as mk
from riskpo.dual_loop import inner_loop
from riskpo.errors import (
    GammaTooSmallError,
    NotAdmissibleError,
    RiskInfeasibleError,
    UnstableMatrixError,
)
from riskpo.game_oracle import (
    estimate_gamma_inf,
    evaluate_policy,
    gare_residual,
    leqg_cost,
    solve_gare_value_iteration,
    u_of_p,
    worst_case_gain,
)
from riskpo.plant import PlantModel, hinf_norm, is_admissible

from frozen import CART_K_STAR, CART_P_STAR, ILLUS_K_STAR, ILLUS_L_STAR, ILLUS_P_STAR
from helpers import random_game, random_psd


def scalar(a=1.0, b=1.0, d=0.0, gamma=1.0):
    return PlantModel([[a]], [[b]], [[1.0], [0.0]], [[d]], [[0.0], [1.0]], gamma)


def dare_oracle(model):
    """Stacked-input DARE with indefinite weight, solved by QZ."""
    B_aug = np.hstack([model.B, model.D])
    R_aug = sla.block_diag(model.R, -model.gamma**2 * np.eye(model.q))
    return sla.solve_discrete_are(model.A, B_aug, model.Q, R_aug)


class TestUofP:
    def test_no_disturbance(self):
        m = scalar(d=0.0)
        assert u_of_p(m, np.array([[3.0]])) == pytest.approx(3.0)

    def test_zero_p(self):
        m = scalar(d=1.0, gamma=2.0)
        assert u_of_p(m, np.zeros((1, 1))) == pytest.approx(0.0)

    def test_scalar_value(self):
        m = scalar(d=1.0, gamma=2.0)
        assert u_of_p(m, np.array([[1.0]]))[0, 0] == pytest.approx(4 / 3, rel=1e-15)

    def test_infeasible(self):
        m = scalar(d=1.0, gamma=1.0)
        with pytest.raises(RiskInfeasibleError):
            u_of_p(m, np.array([[1.0]]))

    @given(st.integers(0, 2**32 - 1))
    def test_dominates_p(self, seed):
        rng = np.random.default_rng(seed)
        n, q = rng.integers(1, 5, size=2)
        D = rng.standard_normal((n, q))
        P = random_psd(rng, n)
        gamma = np.sqrt(2.0 * np.linalg.norm(D.T @ P @ D, 2) + 1e-3)
        m = PlantModel(np.eye(n) * 0.5, np.ones((n, 1)), np.eye(n), D, np.zeros((n, 1)), gamma)
        U = u_of_p(m, P)
        assert np.allclose(U, U.T)
        assert np.linalg.eigvalsh(U - P)[0] >= -1e-10 * max(1.0, np.linalg.norm(P))


class TestValueIteration:
    def test_scalar_golden_ratio(self):
        sol = solve_gare_value_iteration(scalar())
        phi = (1 + np.sqrt(5)) / 2
        assert sol.P_star[0, 0] == pytest.approx(phi, rel=1e-12)
        assert sol.K_star[0, 0] == pytest.approx(phi / (1 + phi), rel=1e-12)

    def test_illustrative_frozen(self, illus_ref):
        assert np.allclose(illus_ref.P_star, ILLUS_P_STAR, rtol=1e-10, atol=0)
        assert np.allclose(illus_ref.K_star, ILLUS_K_STAR, rtol=1e-9, atol=1e-12)
        assert np.allclose(illus_ref.L_star, ILLUS_L_STAR, rtol=1e-8, atol=1e-12)

    def test_cartpole_frozen(self, cart_ref):
        assert np.allclose(cart_ref.P_star, CART_P_STAR, rtol=1e-9, atol=0)
        assert np.allclose(cart_ref.K_star, CART_K_STAR, rtol=1e-8, atol=0)

    @pytest.mark.parametrize("name", ["illus", "cart"])
    def test_invariants(self, request, name):
        model = request.getfixturevalue(name)
        sol = request.getfixturevalue(name + "_ref")
        assert mk.is_pd(sol.P_star)
        H = np.eye(model.q) - model.D.T @ sol.P_star @ model.D / model.gamma**2
        assert mk.is_pd(H)
        A_K = model.closed_loop(sol.K_star)
        assert mk.is_stable(A_K) and mk.is_stable(A_K + model.D @ sol.L_star)
        assert sol.residual <= 1e-8 * np.linalg.norm(sol.P_star)
        assert hinf_norm(model, sol.K_star) < model.gamma
        assert np.allclose(sol.U_star, u_of_p(model, sol.P_star))

    def test_gamma_too_small(self, illus):
        with pytest.raises(GammaTooSmallError):
            solve_gare_value_iteration(illus.with_gamma(0.1))

    def test_assumptions_checked(self, illus):
        bad = PlantModel(illus.A, illus.B, np.zeros_like(illus.C), illus.D, illus.E, 5.0)
        with pytest.raises(ValueError):
            solve_gare_value_iteration(bad)

    def test_random_against_qz_dare(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, m, q = (int(v) for v in rng.integers(1, 5, size=3))
            model, _ = random_game(rng, n, m, q)
            sol = solve_gare_value_iteration(model)
            P = dare_oracle(model)
            assert np.linalg.norm(sol.P_star - P) <= 1e-7 * np.linalg.norm(P)
            assert gare_residual(model, sol.P_star, sol.K_star) <= 1e-8 * np.linalg.norm(P)


class TestEvaluatePolicy:
    def test_no_disturbance_is_lyapunov(self, illus, illus_ref):
        m0 = PlantModel(illus.A, illus.B, illus.C, np.zeros_like(illus.D), illus.E, illus.gamma)
        K = illus_ref.K_star
        P = evaluate_policy(m0, K)
        assert np.allclose(P, mk.solve_dlyap(m0.closed_loop(K), m0.stage_weight(K)), rtol=1e-12)

    @pytest.mark.parametrize("name", ["illus", "cart"])
    def test_optimal_gain_recovers_p_star(self, request, name):
        model = request.getfixturevalue(name)
        ref = request.getfixturevalue(name + "_ref")
        P = evaluate_policy(model, ref.K_star)
        assert np.linalg.norm(P - ref.P_star) <= 1e-8 * np.linalg.norm(ref.P_star)

    def test_suboptimal_costs_more(self, illus, illus_ref, illus_K1):
        P1 = evaluate_policy(illus, illus_K1)
        assert np.trace(P1) > np.trace(illus_ref.P_star)
        assert np.linalg.eigvalsh(P1 - illus_ref.P_star)[0] >= -1e-9

    def test_satisfies_policy_equation(self, cart, cart_K1):
        P = evaluate_policy(cart, cart_K1)
        A_K = cart.closed_loop(cart_K1)
        res = A_K.T @ u_of_p(cart, P) @ A_K - P + cart.stage_weight(cart_K1)
        assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(P)

    def test_unstable(self, illus):
        with pytest.raises(UnstableMatrixError):
            evaluate_policy(illus, np.zeros((3, 3)))

    def test_not_admissible(self, illus, illus_ref):
        with pytest.raises(NotAdmissibleError):
            evaluate_policy(illus.with_gamma(0.5), illus_ref.K_star)

    def test_matches_inner_loop_limit(self):
        rng = np.random.default_rng(99)
        for _ in range(10):
            n, m, q = (int(v) for v in rng.integers(1, 5, size=3))
            model, K1 = random_game(rng, n, m, q)
            P = evaluate_policy(model, K1)
            res = inner_loop(model, K1, 200)
            assert res.status is None
            assert np.linalg.norm(res.P - P) <= 1e-8 * np.linalg.norm(P)


class TestWorstCaseGain:
    def test_no_disturbance(self, illus, illus_ref):
        m0 = PlantModel(illus.A, illus.B, illus.C, np.zeros_like(illus.D), illus.E, illus.gamma)
        assert np.array_equal(worst_case_gain(m0, illus_ref.K_star, illus_ref.P_star), np.zeros((3, 3)))

    def test_optimum(self, illus, illus_ref):
        L = worst_case_gain(illus, illus_ref.K_star, illus_ref.P_star)
        assert np.allclose(L, illus_ref.L_star, rtol=1e-12, atol=1e-15)

    def test_scalar(self):
        m = scalar(a=0.5, b=0.0, d=1.0, gamma=2.0)
        assert worst_case_gain(m, np.zeros((1, 1)), np.array([[1.0]]))[0, 0] == pytest.approx(1 / 6)

    def test_stabilizes(self, cart, cart_K1):
        P = evaluate_policy(cart, cart_K1)
        L = worst_case_gain(cart, cart_K1, P)
        assert mk.is_stable(cart.closed_loop(cart_K1) + cart.D @ L)

    def test_infeasible(self):
        m = scalar(a=0.5, d=1.0, gamma=1.0)
        with pytest.raises(RiskInfeasibleError):
            worst_case_gain(m, np.zeros((1, 1)), np.array([[2.0]]))


class TestGammaInf:
    def test_no_disturbance_hits_floor(self):
        assert estimate_gamma_inf(scalar()) == 1e-6

    def test_builtin_models_below_design_gamma(self, illus, cart):
        g_illus = estimate_gamma_inf(illus)
        g_cart = estimate_gamma_inf(cart)
        assert 0 < g_illus < 5 and 0 < g_cart < 10

    def test_bracket_edges(self, illus):
        g = estimate_gamma_inf(illus, tol=1e-3)
        # same probe settings as the bisection; convergence slows near the edge
        solve_gare_value_iteration(illus.with_gamma(g), tol=1e-10, max_iter=20_000)
        with pytest.raises(GammaTooSmallError):
            solve_gare_value_iteration(illus.with_gamma(0.99 * g), tol=1e-10, max_iter=20_000)

    def test_at_optimum_admissible(self, illus, illus_ref):
        assert is_admissible(illus, illus_ref.K_star)


class TestLeqgCost:
    def test_no_disturbance_is_zero(self):
        assert leqg_cost(scalar(), np.array([[2.0]])) == 0.0

    def test_scalar(self):
        m = scalar(d=1.0, gamma=2.0)
        assert leqg_cost(m, np.array([[1.0]])) == pytest.approx(-4 * np.log(0.75))

    def test_small_gamma_limit_is_trace(self, illus, illus_ref):
        big = illus.with_gamma(1e4)
        P = illus_ref.P_star
        expected = np.trace(P @ illus.D @ illus.D.T)
        assert leqg_cost(big, P) == pytest.approx(expected, rel=1e-6)

    def test_infeasible(self):
        with pytest.raises(RiskInfeasibleError):
            leqg_cost(scalar(d=1.0, gamma=1.0), np.array([[2.0]]))
