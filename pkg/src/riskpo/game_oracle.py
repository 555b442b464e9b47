"""Reference solutions for the zero-sum LQ game.

Everything here is computed by routes that do not share code with the
dual-loop policy optimizer, so the two can be checked against each other:
value iteration for the game Riccati equation, a damped fixed point for the
cost of a fixed policy, and bisection on gamma for the attenuation limit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import matrix_kit as mk
from .errors import (
    GammaTooSmallError,
    NoConvergenceError,
    NotAdmissibleError,
    NotStabilizableError,
    RiskInfeasibleError,
    UnstableMatrixError,
)
from .plant import check_assumptions

__all__ = [
    "GameSolution",
    "u_of_p",
    "gare_residual",
    "solve_gare_value_iteration",
    "evaluate_policy",
    "worst_case_gain",
    "estimate_gamma_inf",
    "leqg_cost",
]

_PD_REL = 1e-9
_DIVERGENCE = 1e12


def _risk_matrix(model, P):
    """``gamma^2 I - D^T P D``; raises if it is not positive definite."""
    D = model.D
    H = model.gamma**2 * np.eye(model.q) - D.T @ P @ D
    if not mk.is_pd(H, _PD_REL):
        raise RiskInfeasibleError("gamma^2 I - D^T P D is not positive definite")
    return H


def u_of_p(model, P):
    """``U = P + P D (gamma^2 I - D^T P D)^{-1} D^T P``."""
    P = mk.symmetrize(P, "P")
    H = _risk_matrix(model, P)
    DP = model.D.T @ P
    U = P + DP.T @ np.linalg.solve(H, DP)
    return 0.5 * (U + U.T)


def _gain_from_u(model, U):
    B = model.B
    return np.linalg.solve(model.R + B.T @ U @ B, B.T @ U @ model.A)


def gare_residual(model, P, K):
    """Frobenius norm of the left-hand side of the game Riccati equation at ``(P, K)``."""
    U = u_of_p(model, P)
    A_K = model.closed_loop(K)
    res = A_K.T @ U @ A_K - P + model.stage_weight(K)
    return float(np.linalg.norm(res))


@dataclass
class GameSolution:
    """Saddle-point solution: cost matrix, minimizer gain and maximizer gain."""

    P_star: np.ndarray
    K_star: np.ndarray
    L_star: np.ndarray
    iterations: int
    residual: float
    gamma: float = field(default=None, repr=False)
    _U: np.ndarray = field(default=None, repr=False)

    @property
    def U_star(self):
        return self._U


def solve_gare_value_iteration(model, tol=1e-14, max_iter=200_000, check=True):
    """Solve the game Riccati equation by value iteration from ``P0 = Q``.

    Iterates ``P <- Q + A^T U A - A^T U B (R + B^T U B)^{-1} B^T U A`` with
    ``U = U(P)`` until the relative step is below ``tol``.

    Raises
    ------
    GammaTooSmallError
        On divergence, loss of ``gamma^2 I - D^T P D > 0``, or a returned
        triple that fails the saddle-point invariants.
    NoConvergenceError
        If ``max_iter`` is exhausted.
    """
    if check:
        report = check_assumptions(model)
        if not report.ok:
            raise ValueError(f"model violates standing assumptions: {report}")
    A, B = model.A, model.B
    Q, R = model.Q, model.R
    P = Q.copy()
    for k in range(1, max_iter + 1):
        try:
            U = u_of_p(model, P)
        except RiskInfeasibleError as exc:
            raise GammaTooSmallError(f"definiteness lost at iteration {k}") from exc
        AU = A.T @ U
        P_new = Q + AU @ A - AU @ B @ np.linalg.solve(R + B.T @ U @ B, B.T @ U @ A)
        P_new = 0.5 * (P_new + P_new.T)
        step = np.linalg.norm(P_new - P)
        P = P_new
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > _DIVERGENCE:
            raise GammaTooSmallError(f"value iteration diverged at iteration {k}")
        if step <= tol * np.linalg.norm(P):
            break
    else:
        raise NoConvergenceError(f"value iteration did not converge in {max_iter} steps")

    try:
        U = u_of_p(model, P)
    except RiskInfeasibleError as exc:
        raise GammaTooSmallError("definiteness lost at the limit") from exc
    K = _gain_from_u(model, U)
    A_K = model.closed_loop(K)
    H = model.gamma**2 * np.eye(model.q) - model.D.T @ P @ model.D
    L = np.linalg.solve(H, model.D.T @ P @ A_K)
    if not mk.is_pd(P, _PD_REL):
        raise GammaTooSmallError("limit P is not positive definite")
    if not mk.is_stable(A_K) or not mk.is_stable(A_K + model.D @ L):
        raise GammaTooSmallError("limit is not a stabilizing solution")
    return GameSolution(
        P_star=P,
        K_star=K,
        L_star=L,
        iterations=k,
        residual=gare_residual(model, P, K),
        gamma=model.gamma,
        _U=U,
    )


def evaluate_policy(model, K, tol=1e-13, max_iter=100_000):
    """Worst-case cost matrix ``P_K`` of the fixed minimizer gain ``K``.

    Damped fixed point ``P <- P + s (Q_K + A_K^T U(P) A_K - P)`` started from
    the Lyapunov solution with ``w = 0``. The step ``s`` starts at 1, is
    halved (at most 30 times in total) whenever the residual grows above the
    rounding floor, and doubles back towards 1 after each accepted step.

    Raises
    ------
    UnstableMatrixError
        If ``A - BK`` is not stable.
    NotAdmissibleError
        On divergence or loss of ``gamma^2 I - D^T P D > 0``, i.e. when the
        closed loop violates the H-infinity bound.
    NoConvergenceError
        If ``max_iter`` is exhausted.
    """
    K = np.asarray(K, dtype=float)
    A_K = model.closed_loop(K)
    Q_K = model.stage_weight(K)
    if not mk.is_stable(A_K):
        raise UnstableMatrixError("A - BK is not stable")
    P = mk.solve_dlyap(A_K, Q_K)

    def fixed_point_map(P):
        try:
            U = u_of_p(model, P)
        except RiskInfeasibleError as exc:
            raise NotAdmissibleError("gamma^2 I - D^T P D lost definiteness") from exc
        F = Q_K + A_K.T @ U @ A_K
        return 0.5 * (F + F.T)

    F = fixed_point_map(P)
    res = np.linalg.norm(F - P)
    step = 1.0
    halvings = 0
    # residuals below this are rounding noise and neither count as growth nor block convergence
    noise = 1e3 * np.finfo(float).eps * (np.linalg.norm(Q_K) + np.linalg.norm(A_K) ** 2 * np.linalg.norm(P))
    for _ in range(max_iter):
        if res <= max(tol * max(1.0, np.linalg.norm(P)), noise):
            return P
        P_try = P + step * (F - P)
        if not np.all(np.isfinite(P_try)) or np.linalg.norm(P_try) > _DIVERGENCE:
            raise NotAdmissibleError("policy evaluation diverged")
        F_try = fixed_point_map(P_try)
        res_try = np.linalg.norm(F_try - P_try)
        if res_try > res and res_try > noise and halvings < 30:
            step *= 0.5
            halvings += 1
            continue
        P, F, res = P_try, F_try, res_try
        step = min(1.0, 2.0 * step)
    raise NoConvergenceError(f"policy evaluation did not converge in {max_iter} steps")


def worst_case_gain(model, K, P_K):
    """Maximizer's best response ``(gamma^2 I - D^T P_K D)^{-1} D^T P_K (A - BK)``."""
    P_K = mk.symmetrize(P_K, "P_K")
    H = _risk_matrix(model, P_K)
    return np.linalg.solve(H, model.D.T @ P_K @ model.closed_loop(K))


def _gare_feasible(model, gamma):
    try:
        solve_gare_value_iteration(model.with_gamma(gamma), tol=1e-10, max_iter=20_000, check=False)
    except (GammaTooSmallError, NoConvergenceError, np.linalg.LinAlgError):
        return False
    return True


def estimate_gamma_inf(model, tol=1e-3, floor=1e-6, ceiling=1e6):
    """Smallest gamma (to relative ``tol``) at which value iteration succeeds.

    Returns the upper edge of the final bracket. A model with no disturbance
    channel returns ``floor``.

    Raises
    ------
    NotStabilizableError
        If there is no stabilizing solution even at ``ceiling``.
    """
    report = check_assumptions(model)
    if not report.ok:
        raise ValueError(f"model violates standing assumptions: {report}")
    if not _gare_feasible(model, ceiling):
        raise NotStabilizableError(f"no stabilizing game solution at gamma={ceiling:g}")
    if _gare_feasible(model, floor):
        return floor
    lo, hi = floor, ceiling
    # geometric bisection: the bracket spans many decades
    while hi - lo > tol * hi:
        mid = np.sqrt(lo * hi) if hi / lo > 4.0 else 0.5 * (lo + hi)
        if _gare_feasible(model, mid):
            hi = mid
        else:
            lo = mid
    return hi


def leqg_cost(model, P_K):
    """Closed-form risk-sensitive cost ``-gamma^2 log det(I - gamma^-2 P_K D D^T)``."""
    n = model.n
    M = np.eye(n) - P_K @ model.D @ model.D.T / model.gamma**2
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise RiskInfeasibleError("I - gamma^-2 P_K D D^T is not positive definite")
    eig = np.linalg.eigvals(M)
    if np.min(eig.real) <= 0:
        raise RiskInfeasibleError("I - gamma^-2 P_K D D^T is not positive definite")
    return float(-model.gamma**2 * logdet)
