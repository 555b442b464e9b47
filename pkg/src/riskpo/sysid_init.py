"""Initial admissible gain from data: least-squares identification plus an LMI solve."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import matrix_kit as mk
from .data_driven import _EXCITATION_CUTOFF, BURN_IN, ExplorationPolicy, simulate
from .errors import InfeasibleLMIError, InsufficientExcitationError, RiskPOError, StageError
from .lmi import AffineMatrixFunction, minimize_max_eigenvalue
from .plant import Admissibility, PlantModel, is_admissible, lmi_blocks

__all__ = [
    "IdentifiedModel",
    "LmiSolution",
    "InitialController",
    "identify",
    "initial_gain_lmi",
    "find_initial_gain",
    "find_initial_gain_for_model",
    "learn_initial_controller",
    "MAX_RETRIES",
]

MAX_RETRIES = 10
DEFAULT_MU = 1e-2


@dataclass
class IdentifiedModel:
    A_hat: np.ndarray
    B_hat: np.ndarray
    D_hat: np.ndarray
    residual_norm: float = None

    def to_dict(self):
        return {
            "A_hat": self.A_hat.tolist(),
            "B_hat": self.B_hat.tolist(),
            "D_hat": self.D_hat.tolist(),
            "residual_norm": self.residual_norm,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            np.array(d["A_hat"], dtype=float),
            np.array(d["B_hat"], dtype=float),
            np.array(d["D_hat"], dtype=float),
            d.get("residual_norm"),
        )

    @property
    def stacked(self):
        return np.hstack([self.A_hat, self.B_hat, self.D_hat])

    def as_model(self, C, E, gamma):
        return PlantModel(self.A_hat, self.B_hat, C, self.D_hat, E, gamma)


def identify(buffer, truth=None):
    """Least-squares fit of ``x+ = A x + B u + D w`` from the buffer.

    ``[A, B, D]^T = Phi'^{-1} Xi'`` with ``Phi' = mean(z z^T)`` and
    ``Xi' = mean(z x+^T)``. When ``truth`` (a plant model) is given the
    Frobenius distance to its ``[A, B, D]`` is stored as ``residual_norm``.

    Raises
    ------
    InsufficientExcitationError
        If fewer than ``n + m + q`` samples are available or ``Phi'`` is singular.
    """
    n, m, q = buffer.dims
    N = n + m + q
    if buffer.tau < N:
        raise InsufficientExcitationError(f"need at least {N} samples, got {buffer.tau}")
    Z = buffer.Z
    Phi = Z.T @ Z / buffer.tau
    Xi = Z.T @ buffer.X_next / buffer.tau
    d = np.sqrt(np.clip(np.diag(Phi), 1e-300, None))
    scaled = Phi / np.outer(d, d)
    lam = np.linalg.eigvalsh(scaled)
    if lam[0] <= _EXCITATION_CUTOFF * lam[-1]:
        raise InsufficientExcitationError("regressor second moment is singular")
    theta = np.linalg.solve(scaled, Xi / d[:, None]) / d[:, None]
    F = theta.T
    idm = IdentifiedModel(F[:, :n], F[:, n : n + m], F[:, n + m :])
    if truth is not None:
        idm.residual_norm = float(np.linalg.norm(idm.stacked - np.hstack([truth.A, truth.B, truth.D])))
    return idm


@dataclass
class LmiSolution:
    W: np.ndarray
    V: np.ndarray
    epsilon: float
    mu: float
    margin: float
    retries: int = 0

    @property
    def K(self):
        return np.linalg.solve(self.W.T, self.V.T).T


def _coupling_block(W, V, mu):
    """``[[I, mu W^T, mu V^T], [mu W, I, 0], [mu V, 0, I]]``, required to be positive definite."""
    n, m = W.shape[0], V.shape[0]
    Z = np.zeros
    M = np.block(
        [
            [np.eye(n), mu * W.T, mu * V.T],
            [mu * W, np.eye(n), Z((n, m))],
            [mu * V, Z((m, n)), np.eye(m)],
        ]
    )
    return 0.5 * (M + M.T)


def _stacked_constraint(A, B, C, D, E, gamma, epsilon, mu, W, V):
    F1 = lmi_blocks(A, B, C, D, E, gamma, W, V) + epsilon * np.eye(2 * A.shape[0] + D.shape[1] + C.shape[0])
    F2 = -_coupling_block(W, V, mu)
    N1, N2 = F1.shape[0], F2.shape[0]
    out = np.zeros((N1 + N2, N1 + N2))
    out[:N1, :N1] = F1
    out[N1:, N1:] = F2
    return out


def _affine_form(A, B, C, D, E, gamma, epsilon, mu):
    """Write the stacked constraint as ``F0 + sum_k y_k F_k`` over ``y = [vecs(W), vec(V)]``."""
    n, m = B.shape
    args = (A, B, C, D, E, gamma, epsilon, mu)
    F0 = _stacked_constraint(*args, np.zeros((n, n)), np.zeros((m, n)))
    basis = []
    for k in range(mk.sym_dim(n)):
        e = np.zeros(mk.sym_dim(n))
        e[k] = 1.0
        basis.append(_stacked_constraint(*args, mk.unvecs(e, n), np.zeros((m, n))) - F0)
    for k in range(m * n):
        Vk = np.zeros(m * n)
        Vk[k] = 1.0
        basis.append(_stacked_constraint(*args, np.zeros((n, n)), Vk.reshape(m, n)) - F0)
    return AffineMatrixFunction(F0, np.array(basis))


def _unpack(y, n, m):
    s = mk.sym_dim(n)
    return mk.unvecs(y[:s], n), y[s:].reshape(m, n)


def initial_gain_lmi(A, B, C, D, E, gamma, epsilon, mu):
    """One feasibility solve at fixed margins ``(epsilon, mu)``.

    Minimizes the largest eigenvalue of the block-diagonal stack of the
    bounded-real matrix plus ``epsilon I`` and the negated coupling block,
    starting from ``W = I``, ``V = 0``; stops as soon as it is negative.

    Raises
    ------
    InfeasibleLMIError
        If the optimum is not negative.
    """
    if not (epsilon > 0 and mu > 0):
        raise ValueError("epsilon and mu must be positive")
    A, B, C, D, E = (np.asarray(x, dtype=float) for x in (A, B, C, D, E))
    n, m = B.shape
    F = _affine_form(A, B, C, D, E, gamma, epsilon, mu)
    y0 = np.concatenate([mk.vecs(np.eye(n)), np.zeros(m * n)])
    res = minimize_max_eigenvalue(F, y0, stop_below=0.0)
    if not res.t < 0.0:
        raise InfeasibleLMIError(f"LMI infeasible at epsilon={epsilon:.3g}, mu={mu:.3g}", res.t)
    W, V = _unpack(res.y, n, m)
    return LmiSolution(W=W, V=V, epsilon=epsilon, mu=mu, margin=res.t)


def find_initial_gain(idm, C, E, gamma, epsilon=None, mu=None, max_retries=MAX_RETRIES):
    """Solve the initial-gain LMIs for an identified model, halving margins on failure.

    ``epsilon`` defaults to ``1e-3 * ||[A, B, D]||_F`` and ``mu`` to 1e-2.
    Both are halved after each infeasible attempt, up to ``max_retries`` times.
    A failed attempt also reports the best bounded-real margin ``lam``
    reachable at the current ``mu`` (``lambda_max = epsilon + lam``); when
    ``lam < 0`` the next ``epsilon`` is at most ``-lam / 2`` so that slow
    plants with tiny attainable margins do not exhaust the ladder.

    Raises
    ------
    InfeasibleLMIError
        Carrying the smallest ``lambda_max`` seen over all attempts.
    """
    if epsilon is None:
        epsilon = 1e-3 * np.linalg.norm(idm.stacked)
    if mu is None:
        mu = DEFAULT_MU
    best = np.inf
    for attempt in range(max_retries + 1):
        try:
            sol = initial_gain_lmi(idm.A_hat, idm.B_hat, C, idm.D_hat, E, gamma, epsilon, mu)
            sol.retries = attempt
            return sol
        except InfeasibleLMIError as exc:
            best = min(best, exc.best_margin)
            lam = exc.best_margin - epsilon
        epsilon *= 0.5
        if lam < 0.0:
            epsilon = min(epsilon, -0.5 * lam)
        mu *= 0.5
    raise InfeasibleLMIError(f"LMI infeasible after {max_retries} retries", best)


def find_initial_gain_for_model(model, epsilon=None, mu=None):
    """Initial-gain LMI on the true matrices of ``model``."""
    idm = IdentifiedModel(model.A, model.B, model.D, 0.0)
    return find_initial_gain(idm, model.C, model.E, model.gamma, epsilon, mu)


@dataclass
class InitialController:
    """Result of the identify-then-LMI pipeline.

    ``admissibility`` is judged against the true model; it is an evaluation
    only and never feeds back into the pipeline.
    """

    K: np.ndarray
    identified: IdentifiedModel
    lmi: LmiSolution
    admissibility: Admissibility = field(default=None, repr=False)

    @property
    def admissible(self):
        return bool(self.admissibility)


def learn_initial_controller(model, policy, tau, rng, epsilon=None, mu=None, burn_in=BURN_IN):
    """Simulate, identify, solve the LMIs and check the gain on the true plant.

    Raises
    ------
    StageError
        Wrapping the failure of the ``simulate``, ``identify`` or ``lmi`` stage.
    """
    if not isinstance(policy, ExplorationPolicy):
        raise TypeError("policy must be an ExplorationPolicy")
    stage = "simulate"
    try:
        buffer = simulate(model, policy, tau, rng, burn_in=burn_in)
        stage = "identify"
        idm = identify(buffer, truth=model)
        stage = "lmi"
        sol = find_initial_gain(idm, model.C, model.E, model.gamma, epsilon, mu)
    except (RiskPOError, np.linalg.LinAlgError, ValueError) as exc:
        raise StageError(stage, exc) from exc
    K = sol.K
    return InitialController(K=K, identified=idm, lmi=sol, admissibility=is_admissible(model, K))
