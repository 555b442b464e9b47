import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskpo import matrix_kit as mk
from riskpo.data_driven import (
    DataBuffer,
    ExplorationPolicy,
    LearningConfig,
    build_operators,
    gamma_hat,
    gamma_model,
    ideal_operators,
    learn_from_operators,
    omega_hat,
    run_learning,
    simulate,
    solve_p_data,
    update_k_data,
    update_l_data,
)
from riskpo.dual_loop import DualLoopConfig, inner_loop, run
from riskpo.errors import InsufficientExcitationError, UnstableExplorationError
from riskpo.game_oracle import u_of_p
from riskpo.plant import PlantModel

from helpers import random_game, random_sym


def no_disturbance(model):
    return PlantModel(model.A, model.B, model.C, np.zeros_like(model.D), model.E, model.gamma, model.sigma)


def sampled_ops(model, K, tau, seed, sigma=1.0):
    policy = ExplorationPolicy.for_model(model, K, sigma, sigma)
    return build_operators(simulate(model, policy, tau, np.random.default_rng(seed)))


@pytest.fixture(scope="module")
def illus_big(illus, illus_K1):
    return sampled_ops(illus, illus_K1, 50_000, 1)


class TestSimulate:
    def test_unforced_is_zero(self, illus, illus_K1):
        m0 = illus.with_sigma(np.zeros((3, 3)))
        policy = ExplorationPolicy.for_model(m0, illus_K1, 0.0, 0.0)
        buf = simulate(m0, policy, 50, np.random.default_rng(0), x0=np.zeros(3))
        assert buf.tau == 50 and not np.any(buf.Z) and not np.any(buf.X_next) and not np.any(buf.r)

    def test_dynamics_and_reward(self, illus, illus_K1, rng):
        buf = simulate(illus, ExplorationPolicy.for_model(illus, illus_K1), 100, rng)
        m = illus
        v = buf.X_next - buf.X @ m.A.T - buf.U @ m.B.T - buf.W @ m.D.T
        # with identity noise covariance the residual is the process noise itself
        assert 0.5 < np.std(v) < 1.5
        t = 7
        x, u, w = buf.X[t], buf.U[t], buf.W[t]
        assert buf.r[t] == pytest.approx(x @ m.Q @ x + u @ m.R @ u - 25.0 * w @ w)
        assert np.array_equal(buf.X[1:], buf.X_next[:-1])

    def test_blowup(self, illus):
        policy = ExplorationPolicy(np.zeros((3, 3)), np.zeros((3, 3)), 1.0, 1.0)
        with pytest.raises(UnstableExplorationError):
            simulate(illus, policy, 5000, np.random.default_rng(0))

    def test_policy_checks_stability(self, illus):
        with pytest.raises(ValueError):
            ExplorationPolicy.for_model(illus, np.zeros((3, 3)))
        with pytest.raises(ValueError):
            ExplorationPolicy(np.zeros((3, 3)), np.zeros((3, 3)), -1.0, 1.0)

    def test_deterministic(self, illus, illus_K1):
        p = ExplorationPolicy.for_model(illus, illus_K1)
        a = simulate(illus, p, 300, np.random.default_rng(8))
        b = simulate(illus, p, 300, np.random.default_rng(8))
        assert a.digest() == b.digest()

    def test_buffer_immutable(self, illus, illus_K1, rng):
        buf = simulate(illus, ExplorationPolicy.for_model(illus, illus_K1), 20, rng)
        with pytest.raises(ValueError):
            buf.X[0, 0] = 1.0

    def test_csv_round_trip(self, tmp_path, cart, cart_K1, rng):
        buf = simulate(cart, ExplorationPolicy.for_model(cart, cart_K1, 20.0, 20.0), 40, rng)
        path = tmp_path / "buffer.csv"
        buf.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "t,x0,x1,x2,x3,u0,w0,w1,w2,w3,x_next0,x_next1,x_next2,x_next3,r"
        assert DataBuffer.from_csv(path).digest() == buf.digest()


class TestOperators:
    def test_single_record(self):
        buf = DataBuffer(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), [1.0])
        ops = build_operators(buf)
        zbar = np.concatenate([mk.vecv(np.ones(3)), [1.0]])
        assert np.allclose(ops.Phi, np.outer(zbar, zbar))
        assert np.allclose(ops.Xi, zbar[:, None] * mk.vecv(np.ones(1))[None])
        assert np.allclose(ops.Psi, zbar)
        assert (ops.n2, ops.n1) == (6, 6)

    def test_dimensions(self, illus_big):
        assert illus_big.Phi.shape == (46, 46)
        assert illus_big.Xi.shape == (46, 6)
        assert (illus_big.n2, illus_big.n1) == (45, 40)

    def test_excitation(self, illus_big):
        assert np.linalg.eigvalsh(illus_big.Phi)[0] > 0
        assert np.allclose(illus_big.Phi, illus_big.Phi.T)

    def test_monte_carlo_consistency(self, illus, illus_K1, illus_big):
        other = sampled_ops(illus, illus_K1, 50_000, 2)
        a, b = illus_big.Phi, other.Phi
        dominant = np.abs(a) >= 0.1 * np.abs(a).max()
        assert np.all(np.abs(a - b)[dominant] <= 0.05 * np.abs(a)[dominant])

    def test_insufficient_excitation(self, illus, illus_K1):
        ops = sampled_ops(illus, illus_K1, 10, 0)
        with pytest.raises(InsufficientExcitationError):
            gamma_hat(ops, np.eye(3))


class TestIdealOperators:
    @given(st.integers(0, 2**32 - 1))
    def test_gamma_matches_model(self, seed):
        rng = np.random.default_rng(seed)
        n, m, q = (int(v) for v in rng.integers(1, 4, size=3))
        from helpers import random_plant

        model = random_plant(rng, n, m, q, gamma=3.0)
        ops = ideal_operators(model)
        X = random_sym(rng, n)
        G = gamma_model(model, X)
        assert np.linalg.norm(gamma_hat(ops, X) - G) <= 1e-8 * max(1.0, np.linalg.norm(G))

    def test_gamma_at_zero(self, illus):
        G = gamma_hat(ideal_operators(illus), np.zeros((3, 3)))
        expected = np.block(
            [[illus.Q, np.zeros((3, 6))], [np.zeros((3, 3)), illus.R, np.zeros((3, 3))],
             [np.zeros((3, 6)), -25.0 * np.eye(3)]]
        )
        assert np.allclose(G, expected, atol=1e-12)

    def test_omega(self, illus, cart):
        for model in (illus, cart):
            ops = ideal_operators(model)
            assert np.allclose(omega_hat(ops, np.eye(model.q)), model.D @ model.D.T, atol=1e-12)
            assert np.array_equal(omega_hat(ops, np.zeros((model.q, model.q))), np.zeros((model.n, model.n)))

    def test_block_extraction_identity(self, illus_big, illus_ref):
        ops = illus_big
        G = gamma_hat(ops, illus_ref.P_star)
        direct = ops.ww_linear @ mk.vecs(illus_ref.P_star) + ops.Phi_pinv[ops.n1 - 1 : ops.n2] @ ops.Psi
        assert np.allclose(mk.vecs(G[6:, 6:]), direct, rtol=1e-10, atol=1e-10 * np.abs(direct).max())

    def test_solve_p_matches_lyapunov(self, cart, cart_K1):
        ops = ideal_operators(cart)
        L = 0.01 * np.ones((4, 4))
        P = solve_p_data(ops, cart_K1, L)
        A_L = cart.closed_loop(cart_K1) + cart.D @ L
        expected = mk.solve_dlyap(A_L, cart.stage_weight(cart_K1) - 100.0 * L.T @ L)
        assert np.linalg.norm(P - expected) <= 1e-8 * np.linalg.norm(expected)

    def test_solve_p_first_inner_step(self, illus, illus_K1):
        P = solve_p_data(ideal_operators(illus), illus_K1, np.zeros((3, 3)))
        assert np.allclose(P, inner_loop(illus, illus_K1, 1).P, rtol=1e-9)

    def test_update_l(self, illus, illus_K1):
        ops = ideal_operators(illus)
        P = inner_loop(illus, illus_K1, 3).P
        H = 25.0 * np.eye(3) - illus.D.T @ P @ illus.D
        expected = np.linalg.solve(H, illus.D.T @ P @ illus.closed_loop(illus_K1))
        assert np.allclose(update_l_data(ops, P, illus_K1), expected, rtol=1e-8, atol=1e-12)
        assert np.allclose(update_l_data(ops, np.zeros((3, 3)), illus_K1), 0.0, atol=1e-14)

    def test_update_l_without_disturbance(self, illus, illus_K1, rng):
        m0 = no_disturbance(illus)
        L = update_l_data(ideal_operators(m0), random_sym(rng, 3), illus_K1)
        assert np.allclose(L, 0.0, atol=1e-12)

    @pytest.mark.parametrize("name", ["illus", "cart"])
    def test_update_k_at_optimum(self, request, name):
        model = request.getfixturevalue(name)
        ref = request.getfixturevalue(name + "_ref")
        K = update_k_data(ideal_operators(model), ref.P_star)
        assert np.linalg.norm(K - ref.K_star) <= 1e-8 * np.linalg.norm(ref.K_star)

    def test_update_k_without_disturbance(self, illus, illus_ref):
        m0 = no_disturbance(illus)
        P = illus_ref.P_star
        expected = np.linalg.solve(m0.R + m0.B.T @ P @ m0.B, m0.B.T @ P @ m0.A)
        assert np.allclose(update_k_data(ideal_operators(m0), P), expected, rtol=1e-9)
        assert np.allclose(u_of_p(m0, P), P)

    @pytest.mark.parametrize("name", ["illus", "cart"])
    def test_learning_reproduces_exact_trace(self, request, name):
        model = request.getfixturevalue(name)
        ref = request.getfixturevalue(name + "_ref")
        K1 = request.getfixturevalue(name + "_K1")
        learned = learn_from_operators(model, ideal_operators(model), K1, 10, 20, ref, compute_hinf=False)
        exact = run(model, DualLoopConfig(K_init=K1, inner_tol=0.0, compute_hinf=False), ref)
        for a, b in zip(learned.records, exact.records):
            assert abs(a.rel_err_K - b.rel_err_K) <= 1e-6
            assert abs(a.rel_err_P - b.rel_err_P) <= 1e-6

    def test_random_models(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            n, m, q = (int(v) for v in rng.integers(1, 4, size=3))
            model, K1 = random_game(rng, n, m, q)
            ops = ideal_operators(model)
            P = inner_loop(model, K1, 2).P
            K = update_k_data(ops, P)
            U = u_of_p(model, P)
            expected = np.linalg.solve(model.R + model.B.T @ U @ model.B, model.B.T @ U @ model.A)
            assert np.linalg.norm(K - expected) <= 1e-8 * max(1.0, np.linalg.norm(expected))


class TestSampled:
    def test_gamma_estimate(self, illus, illus_ref, illus_big):
        G = gamma_model(illus, illus_ref.P_star)
        err = np.linalg.norm(gamma_hat(illus_big, illus_ref.P_star) - G) / np.linalg.norm(G)
        assert err <= 0.05

    @pytest.mark.xfail(
        strict=True,
        reason="D'XD is a weak signal under unit process noise; at sigma=1 the error is ~0.7 at this length",
    )
    def test_omega_estimate(self, illus, illus_big):
        DDt = illus.D @ illus.D.T
        err = np.linalg.norm(omega_hat(illus_big, np.eye(3)) - DDt) / np.linalg.norm(DDt)
        assert err <= 0.10

    def test_omega_estimate_improves(self, illus, illus_K1):
        DDt = illus.D @ illus.D.T
        errs = []
        for tau in (5000, 50_000, 200_000):
            est = omega_hat(sampled_ops(illus, illus_K1, tau, 1), np.eye(3))
            errs.append(np.linalg.norm(est - DDt) / np.linalg.norm(DDt))
        assert errs[0] > errs[1] > errs[2], errs

    def test_evaluation_residual(self, illus, illus_K1):
        ops = sampled_ops(illus, illus_K1, 5000, 3)
        _, res = solve_p_data(ops, illus_K1, np.zeros((3, 3)), return_residual=True)
        assert res <= 0.1

    def test_off_policy_digest(self, illus, illus_ref, illus_K1):
        policy = ExplorationPolicy.for_model(illus, illus_K1)
        cfg = LearningConfig(outer_iters=3, tau=2000, K_init=illus_K1, rng_seed=4, compute_hinf=False)
        a = run_learning(illus, policy, cfg, illus_ref)
        b = run_learning(illus, policy, cfg, illus_ref)
        assert a.buffer_digest == b.buffer_digest and len(a.buffer_digest) == 64
        expected = simulate(illus, policy, 2000, np.random.default_rng(4)).digest()
        assert a.buffer_digest == expected
        assert [r.rel_err_K for r in a.records] == [r.rel_err_K for r in b.records]

    def test_consistency_in_tau(self, illus, illus_ref, illus_K1):
        G = gamma_model(illus, illus_ref.P_star)
        medians = []
        for tau in (2000, 5000, 20000, 50000):
            errs = [
                np.linalg.norm(gamma_hat(sampled_ops(illus, illus_K1, tau, 100 + s), illus_ref.P_star) - G)
                for s in range(20)
            ]
            medians.append(np.median(errs))
        assert all(b <= a for a, b in zip(medians[:-1], medians[1:])), medians
