"""Off-policy learning of the robust gain from input-state data.

One trajectory is collected under a fixed exploratory policy. Sample moments
of the lifted regressor ``zbar_t = [vecv(z_t), 1]`` give an affine estimate
of the quadratic kernel

    Gamma(X) = [[A'XA + Q, A'XB,     A'XD          ],
                [B'XA,     B'XB + R, B'XD          ],
                [D'XA,     D'XB,     D'XD - g^2 I  ]]

and of ``Omega(Y) = D Y D'``, from which every step of the dual loop can be
carried out without the system matrices.
"""

import csv
import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import matrix_kit as mk
from .dual_loop import IterationTrace, OuterRecord, _score, relative_errors
from .errors import (
    IllConditionedError,
    InsufficientExcitationError,
    RiskInfeasibleError,
    RiskPOError,
    UnstableExplorationError,
)
from .game_oracle import solve_gare_value_iteration

__all__ = [
    "ExplorationPolicy",
    "DataBuffer",
    "EstimatedOperators",
    "LearningConfig",
    "simulate",
    "build_operators",
    "ideal_operators",
    "gamma_model",
    "gamma_hat",
    "omega_hat",
    "solve_p_data",
    "update_l_data",
    "update_k_data",
    "learn_from_operators",
    "run_learning",
]

BURN_IN = 200
_BLOWUP = 1e9
_EXCITATION_CUTOFF = 1e-10


@dataclass(frozen=True)
class ExplorationPolicy:
    """``u = -K_exp x + sigma1 xi1``, ``w = L_exp x + sigma2 xi2``."""

    K_exp: np.ndarray
    L_exp: np.ndarray
    sigma1: float
    sigma2: float

    def __post_init__(self):
        # zero noise is allowed for deterministic replays; it never excites the data
        if not (self.sigma1 >= 0 and self.sigma2 >= 0):
            raise ValueError("exploration noise levels must be nonnegative")

    def closed_loop(self, model):
        return model.A - model.B @ self.K_exp + model.D @ self.L_exp

    @classmethod
    def for_model(cls, model, K_exp, sigma1=1.0, sigma2=1.0, L_exp=None):
        """Build a policy and check that ``A - B K_exp + D L_exp`` is stable."""
        K_exp = np.asarray(K_exp, dtype=float)
        L_exp = np.zeros((model.q, model.n)) if L_exp is None else np.asarray(L_exp, dtype=float)
        policy = cls(K_exp, L_exp, sigma1, sigma2)
        if not mk.is_stable(policy.closed_loop(model)):
            raise ValueError("exploratory closed loop is not stable")
        return policy


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DataBuffer:
    """Time-indexed records ``(x_t, u_t, w_t, x_{t+1}, r_t)``; immutable."""

    X: np.ndarray
    U: np.ndarray
    W: np.ndarray
    X_next: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("X", "U", "W", "X_next"):
            arr = _readonly(getattr(self, name))
            if arr.ndim == 1:
                arr = _readonly(arr.reshape(-1, 1))
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "r", _readonly(np.ravel(self.r)))
        tau = self.X.shape[0]
        if any(a.shape[0] != tau for a in (self.U, self.W, self.X_next, self.r)):
            raise ValueError("all buffer columns must have the same length")
        if self.X_next.shape[1] != self.X.shape[1]:
            raise ValueError("x and x_next dimensions differ")

    @property
    def tau(self):
        return self.X.shape[0]

    @property
    def dims(self):
        return self.X.shape[1], self.U.shape[1], self.W.shape[1]

    @property
    def Z(self):
        return np.hstack([self.X, self.U, self.W])

    def digest(self):
        h = hashlib.sha256()
        for a in (self.X, self.U, self.W, self.X_next, self.r):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def header(self):
        n, m, q = self.dims
        return (
            ["t"]
            + [f"x{i}" for i in range(n)]
            + [f"u{i}" for i in range(m)]
            + [f"w{i}" for i in range(q)]
            + [f"x_next{i}" for i in range(n)]
            + ["r"]
        )

    def to_csv(self, path):
        """Write one row per sample; floats use ``repr`` so the file round-trips exactly."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            body = np.hstack([self.X, self.U, self.W, self.X_next, self.r[:, None]])
            for t, row in enumerate(body):
                writer.writerow([t] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader])
        n = sum(1 for h in header if h.startswith("x") and not h.startswith("x_next"))
        m = sum(1 for h in header if h.startswith("u"))
        q = sum(1 for h in header if h.startswith("w"))
        if rows.size == 0:
            rows = np.zeros((0, len(header)))
        c = 1
        X = rows[:, c : c + n]
        c += n
        U = rows[:, c : c + m]
        c += m
        W = rows[:, c : c + q]
        c += q
        X_next = rows[:, c : c + n]
        return cls(X, U, W, X_next, rows[:, -1])


def simulate(model, policy, tau, rng, burn_in=BURN_IN, x0=None):
    """Run the noisy game system under ``policy`` and record ``tau`` samples.

    ``burn_in`` initial samples are simulated and dropped so that the buffer
    is closer to the stationary regime. ``x0`` defaults to a standard
    Gaussian draw. Noise is drawn in a fixed order from ``rng``: the initial
    state, then all ``xi1``, ``xi2`` and ``v`` blocks.

    Raises
    ------
    UnstableExplorationError
        If ``|x_t|`` exceeds 1e9.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    n, m, q = model.n, model.m, model.q
    T = tau + burn_in
    x = rng.standard_normal(n) if x0 is None else np.array(x0, dtype=float)
    xi1 = rng.standard_normal((T, m))
    xi2 = rng.standard_normal((T, q))
    # symmetric square root handles singular covariances
    lam, vec = np.linalg.eigh(model.sigma)
    sqrt_sigma = vec * np.sqrt(np.clip(lam, 0.0, None))
    v = rng.standard_normal((T, n)) @ sqrt_sigma.T

    A, B, D = model.A, model.B, model.D
    K, L = np.asarray(policy.K_exp), np.asarray(policy.L_exp)
    X = np.empty((T, n))
    U = np.empty((T, m))
    W = np.empty((T, q))
    Xn = np.empty((T, n))
    for t in range(T):
        u = -K @ x + policy.sigma1 * xi1[t]
        w = L @ x + policy.sigma2 * xi2[t]
        x_next = A @ x + B @ u + D @ w + v[t]
        if not np.all(np.abs(x_next) < _BLOWUP):
            raise UnstableExplorationError(f"state exceeded {_BLOWUP:g} at t={t}")
        X[t], U[t], W[t], Xn[t] = x, u, w, x_next
        x = x_next
    X, U, W, Xn = X[burn_in:], U[burn_in:], W[burn_in:], Xn[burn_in:]
    r = (
        np.einsum("ti,ij,tj->t", X, model.Q, X)
        + np.einsum("ti,ij,tj->t", U, model.R, U)
        - model.gamma**2 * np.einsum("ti,ti->t", W, W)
    )
    return DataBuffer(X, U, W, Xn, r)


@dataclass(frozen=True, eq=False)
class EstimatedOperators:
    """Sample moments ``Phi``, ``Xi``, ``Psi`` and the derived affine maps.

    Row blocks follow ``zbar = [vecv(z), 1]`` with ``z = [x, u, w]``. The
    first ``n2`` rows of ``Phi^+ Xi`` and ``Phi^+ Psi`` give ``vecs(Gamma(X))``;
    rows ``n1..n2`` (1-based, inclusive) are its ``ww`` block.
    """

    Phi: np.ndarray
    Xi: np.ndarray
    Psi: np.ndarray
    n: int
    m: int
    q: int

    @property
    def N(self):
        return self.n + self.m + self.q

    @property
    def n2(self):
        return mk.sym_dim(self.N)

    @property
    def n1(self):
        return self.n2 + 1 - mk.sym_dim(self.q)

    @cached_property
    def Phi_pinv(self):
        """Inverse of ``Phi`` after Jacobi scaling; raises if the scaled matrix is singular."""
        Phi = 0.5 * (self.Phi + self.Phi.T)
        d = np.sqrt(np.clip(np.diag(Phi), 1e-300, None))
        scaled = Phi / np.outer(d, d)
        lam = np.linalg.eigvalsh(scaled)
        if lam[0] <= _EXCITATION_CUTOFF * lam[-1]:
            raise InsufficientExcitationError(
                f"scaled Phi has eigenvalue ratio {lam[0] / lam[-1]:.3g}"
            )
        inv = np.linalg.inv(scaled)
        return 0.5 * (inv + inv.T) / np.outer(d, d)

    @cached_property
    def gamma_linear(self):
        """``[Phi^+]_{1..n2} Xi``: maps ``vecs(X)`` to the linear part of ``vecs(Gamma(X))``."""
        return self.Phi_pinv[: self.n2] @ self.Xi

    @cached_property
    def gamma_offset(self):
        return self.Phi_pinv[: self.n2] @ self.Psi

    @cached_property
    def ww_linear(self):
        """``[Phi^+]_{n1..n2} Xi``."""
        return self.Phi_pinv[self.n1 - 1 : self.n2] @ self.Xi

    @cached_property
    def omega_linear(self):
        """``(T_n'T_n)^{-1} Xi' [Phi^+]_{n1..n2}' (T_q'T_q)``: maps ``vecs(Y)`` to ``vecs(Omega(Y))``."""
        Tn = mk.duplication(self.n).matrix
        Tq = mk.duplication(self.q).matrix
        return np.linalg.solve(Tn.T @ Tn, self.ww_linear.T @ (Tq.T @ Tq))


def build_operators(buffer):
    """Sample averages ``Phi = mean(zbar zbar')``, ``Xi = mean(zbar vecv(x+)')``, ``Psi = mean(zbar r)``."""
    if buffer.tau < 1:
        raise ValueError("empty buffer")
    n, m, q = buffer.dims
    Zbar = np.hstack([mk.vecv_rows(buffer.Z), np.ones((buffer.tau, 1))])
    tau = buffer.tau
    return EstimatedOperators(
        Phi=Zbar.T @ Zbar / tau,
        Xi=Zbar.T @ mk.vecv_rows(buffer.X_next) / tau,
        Psi=Zbar.T @ buffer.r / tau,
        n=n,
        m=m,
        q=q,
    )


def gamma_model(model, X):
    """The kernel ``Gamma(X)`` computed from the true matrices."""
    F = np.hstack([model.A, model.B, model.D])
    G = F.T @ X @ F
    G = G + np.block(
        [
            [model.Q, np.zeros((model.n, model.m + model.q))],
            [np.zeros((model.m, model.n)), model.R, np.zeros((model.m, model.q))],
            [np.zeros((model.q, model.n + model.m)), -(model.gamma**2) * np.eye(model.q)],
        ]
    )
    return 0.5 * (G + G.T)


def ideal_operators(model):
    """Noise-free operators with ``Phi = I``: ``Xi`` and ``Psi`` encode ``theta(X)`` exactly.

    With these the data-driven formulas reduce to direct evaluation of the
    model-based kernel, so every learner step can be compared against its
    model-based counterpart.
    """
    n = model.n
    N = n + model.m + model.q
    dim = mk.sym_dim(n)
    base = gamma_model(model, np.zeros((n, n)))
    Xi = np.zeros((mk.sym_dim(N) + 1, dim))
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = 1.0
        Ek = mk.unvecs(e, n)
        Xi[:-1, k] = mk.vecs(gamma_model(model, Ek) - base)
        Xi[-1, k] = np.trace(model.sigma @ Ek)
    Psi = np.concatenate([mk.vecs(base), [0.0]])
    return EstimatedOperators(np.eye(mk.sym_dim(N) + 1), Xi, Psi, n, model.m, model.q)


def gamma_hat(ops, X):
    """Data-driven ``Gamma(X)`` as an ``(n+m+q)``-square symmetric matrix."""
    X = mk.symmetrize(X, "X")
    return mk.unvecs(ops.gamma_linear @ mk.vecs(X) + ops.gamma_offset, ops.N)


def _blocks(ops, G):
    n, m = ops.n, ops.m
    x, u, w = slice(0, n), slice(n, n + m), slice(n + m, ops.N)
    return {
        "xx": G[x, x],
        "ux": G[u, x],
        "uu": G[u, u],
        "wx": G[w, x],
        "wu": G[w, u],
        "ww": G[w, w],
    }


def omega_hat(ops, Y):
    """Data-driven ``D Y D'`` for symmetric ``q x q`` ``Y``."""
    Y = mk.symmetrize(Y, "Y")
    return mk.unvecs(ops.omega_linear @ mk.vecs(Y), ops.n)


def _policy_matrix(ops, K, L):
    return np.hstack([np.eye(ops.n), -np.asarray(K, dtype=float).T, np.asarray(L, dtype=float).T])


def solve_p_data(ops, K, L, return_residual=False):
    """Least-squares solve of the vectorized evaluation equation for ``vecs(P)``.

    With ``M = [I, -K', L']`` the equation ``M Gamma(P) M' - P = 0`` becomes
    ``{(M kron M) T_N G - T_n} vecs(P) = -(M kron M) T_N g`` where ``G, g``
    are the linear and constant parts of ``vecs(Gamma)``. There are ``n^2``
    equations in ``n(n+1)/2`` unknowns.

    Raises
    ------
    InsufficientExcitationError
        If the system is rank deficient.
    """
    M = _policy_matrix(ops, K, L)
    MM = np.kron(M, M) @ mk.duplication(ops.N).matrix
    lhs = MM @ ops.gamma_linear - mk.duplication(ops.n).matrix
    rhs = -MM @ ops.gamma_offset
    sol, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < lhs.shape[1]:
        raise InsufficientExcitationError("policy evaluation system is rank deficient")
    P = mk.unvecs(sol, ops.n)
    if return_residual:
        res = np.linalg.norm(lhs @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
        return P, float(res)
    return P


def _ww_inverse(blocks):
    ww = blocks["ww"]
    if not mk.is_pd(-ww, 1e-9):
        raise RiskInfeasibleError("estimated Gamma_ww(P) is not negative definite")
    return ww


def update_l_data(ops, P, K):
    """Maximizer update ``L = -Gamma_ww^{-1} (Gamma_wx - Gamma_wu K)`` at ``Gamma(P)``."""
    b = _blocks(ops, gamma_hat(ops, P))
    ww = _ww_inverse(b)
    return -np.linalg.solve(ww, b["wx"] - b["wu"] @ np.asarray(K, dtype=float))


def update_k_data(ops, P):
    """Minimizer update ``K = Gamma_uu(U)^{-1} Gamma_ux(U)`` with ``U = P - P Omega(Gamma_ww(P)^{-1}) P``."""
    P = mk.symmetrize(P, "P")
    ww = _ww_inverse(_blocks(ops, gamma_hat(ops, P)))
    Y = np.linalg.inv(ww)
    U = P - P @ omega_hat(ops, 0.5 * (Y + Y.T)) @ P
    b = _blocks(ops, gamma_hat(ops, 0.5 * (U + U.T)))
    if not mk.is_pd(b["uu"], 1e-9):
        raise IllConditionedError("estimated Gamma_uu(U) is not positive definite")
    return np.linalg.solve(b["uu"], b["ux"])


@dataclass
class LearningConfig:
    outer_iters: int = 10
    inner_iters: int = 20
    tau: int = 5000
    K_init: np.ndarray = None
    rng_seed: int = 0
    burn_in: int = BURN_IN
    compute_hinf: bool = True

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")


def learn_from_operators(model, ops, K_init, outer_iters, inner_iters, reference=None, compute_hinf=True):
    """Run the dual loop with every update computed from ``ops``.

    ``model`` and ``reference`` are only used to score the iterates
    (relative errors against the game solution and closed-loop H-infinity
    norms); the updates themselves see nothing but ``ops``.
    """
    if reference is None:
        reference = solve_gare_value_iteration(model)
    K = np.asarray(K_init, dtype=float)
    trace = IterationTrace(outer_iters=outer_iters, inner_iters=inner_iters)
    for i in range(1, outer_iters + 1):
        L = np.zeros((ops.q, ops.n))
        P = None
        steps = 0
        try:
            for _ in range(inner_iters):
                P = solve_p_data(ops, K, L)
                steps += 1
                L = update_l_data(ops, P, K)
        except (RiskPOError, np.linalg.LinAlgError) as exc:
            trace.fail(f"inner loop: {exc}")
        if P is None:
            break
        err_K, err_P = relative_errors(K, P, reference)
        hinf, admissible = _score(model, K, compute_hinf)
        trace.records.append(
            OuterRecord(i=i, K=K, P=P, rel_err_K=err_K, rel_err_P=err_P, hinf=hinf,
                        admissible=admissible, inner_steps=steps)
        )
        if trace.failed or i == outer_iters:
            break
        try:
            K = update_k_data(ops, P)
        except (RiskPOError, np.linalg.LinAlgError) as exc:
            trace.fail(f"outer update: {exc}")
            break
    return trace


def run_learning(model, policy, config, reference=None):
    """Collect one trajectory, build the operators, then learn from them.

    The buffer is never touched again after collection; its digest is stored
    on the trace so callers can confirm the learner stayed off-policy.
    """
    if config.K_init is None:
        raise ValueError("config.K_init is required")
    rng = np.random.default_rng(config.rng_seed)
    buffer = simulate(model, policy, config.tau, rng, burn_in=config.burn_in)
    digest = buffer.digest()
    ops = build_operators(buffer)
    trace = learn_from_operators(
        model, ops, config.K_init, config.outer_iters, config.inner_iters,
        reference=reference, compute_hinf=config.compute_hinf,
    )
    trace.buffer_digest = digest
    if buffer.digest() != digest:
        raise RuntimeError("data buffer changed during learning")
    return trace
