"""Plant and cost model, the admissible gain set, and closed-loop H-infinity norms.

The plant is

    x_{t+1} = A x_t + B u_t + D w_t (+ v_t),    y_t = C x_t + E u_t,

with ``Q = C^T C``, ``R = E^T E``, attenuation level ``gamma`` and process
noise covariance ``sigma`` (only used when simulating). A gain ``K`` is
admissible when ``A - BK`` is stable and the transfer function
``T(K) = (C - EK)(zI - (A - BK))^{-1} D`` has H-infinity norm below ``gamma``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import matrix_kit as mk
from .errors import UnstableMatrixError

__all__ = [
    "PlantModel",
    "AssumptionReport",
    "Admissibility",
    "check_assumptions",
    "hinf_norm",
    "hinf_grid",
    "riccati_test",
    "is_admissible",
    "lmi_blocks",
    "lmi_admissibility_check",
]

_PD_REL = 1e-9


def _as_matrix(x, name):
    arr = np.array(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PlantModel:
    """System matrices, risk level and process-noise covariance.

    Arrays are copied and made read-only. ``sigma`` defaults to zeros.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    gamma: float
    sigma: np.ndarray = None

    def __post_init__(self):
        for name in "ABCDE":
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        sigma = np.zeros((n, n)) if self.sigma is None else self.sigma
        sigma = _as_matrix(sigma, "sigma")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma", float(self.gamma))

        A, B, C, D, E = self.A, self.B, self.C, self.D, self.E
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or D.shape[0] != n or C.shape[1] != n:
            raise ValueError("B, D must have n rows and C n columns")
        if E.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"E must be {(C.shape[0], B.shape[1])}, got {E.shape}")
        if sigma.shape != (n, n):
            raise ValueError(f"sigma must be {(n, n)}, got {sigma.shape}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not mk.is_psd(mk.symmetrize(sigma, "sigma"), 1e-12):
            raise ValueError("sigma must be positive semidefinite")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.D.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def Q(self):
        return self.C.T @ self.C

    @property
    def R(self):
        return self.E.T @ self.E

    def closed_loop(self, K):
        return self.A - self.B @ np.asarray(K, dtype=float)

    def stage_weight(self, K):
        """``Q + K^T R K``, which equals ``(C - EK)^T (C - EK)`` when ``C^T E = 0``."""
        K = np.asarray(K, dtype=float)
        return self.Q + K.T @ self.R @ K

    def with_gamma(self, gamma):
        return PlantModel(self.A, self.B, self.C, self.D, self.E, gamma, self.sigma)

    def with_sigma(self, sigma):
        return PlantModel(self.A, self.B, self.C, self.D, self.E, self.gamma, sigma)

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "E": self.E.tolist(),
            "gamma": self.gamma,
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        missing = {"A", "B", "C", "D", "E", "gamma"} - set(payload)
        if missing:
            raise ValueError(f"model payload missing keys: {sorted(missing)}")
        return cls(
            A=payload["A"],
            B=payload["B"],
            C=payload["C"],
            D=payload["D"],
            E=payload["E"],
            gamma=payload["gamma"],
            sigma=payload.get("sigma"),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class AssumptionReport:
    Q_pd: bool
    R_pd: bool
    no_cross_term: bool
    stabilizable: bool

    @property
    def ok(self):
        return self.Q_pd and self.R_pd and self.no_cross_term and self.stabilizable

    def __bool__(self):
        return self.ok


def _stabilizable(A, B, tol=1e-9):
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - tol:
            M = np.hstack([lam * np.eye(n) - A, B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.linalg.norm(M))) < n:
                return False
    return True


def check_assumptions(model):
    """Check positivity of the weights, the zero cross term and stabilizability (PBH)."""
    cross = model.C.T @ model.E
    scale = max(1.0, np.linalg.norm(model.C) * np.linalg.norm(model.E))
    return AssumptionReport(
        Q_pd=mk.is_pd(model.Q, _PD_REL),
        R_pd=mk.is_pd(model.R, _PD_REL),
        no_cross_term=bool(np.linalg.norm(cross) <= 1e-12 * scale),
        stabilizable=_stabilizable(model.A, model.B),
    )


# ---------------------------------------------------------------------------
# H-infinity norm
# ---------------------------------------------------------------------------


def _freq_response_norms(Acl, Ccl, D, n_points):
    n = Acl.shape[0]
    omega = np.linspace(0.0, np.pi, n_points)
    z = np.exp(1j * omega)
    M = z[:, None, None] * np.eye(n)[None] - Acl[None].astype(complex)
    G = Ccl[None] @ np.linalg.solve(M, np.broadcast_to(D.astype(complex), (n_points,) + D.shape))
    # largest singular value via the smaller Gram matrix
    GH = np.conj(np.swapaxes(G, 1, 2))
    gram = GH @ G if G.shape[2] <= G.shape[1] else G @ GH
    lam = np.linalg.eigvalsh(gram)[:, -1]
    return omega, np.sqrt(np.maximum(lam, 0.0))


def hinf_grid(model, K, n_points=4096):
    """Peak of the largest singular value of ``T(K)`` on a uniform grid of ``[0, pi]``.

    Always a lower bound on the true norm. Real systems have conjugate-symmetric
    responses, so ``[0, pi]`` covers ``[0, 2 pi]``.
    """
    K = np.asarray(K, dtype=float)
    Acl = model.closed_loop(K)
    rho = mk.spectral_radius(Acl)
    if rho >= 1.0 - mk.STABILITY_MARGIN:
        raise UnstableMatrixError(f"closed loop spectral radius {rho:.6g}")
    _, sv = _freq_response_norms(Acl, model.C - model.E @ K, model.D, n_points)
    return float(np.max(sv))


_TIE_MARGIN = 1e-7


def riccati_test(model, K, gamma, max_iter=200, tol=1e-10):
    """Bounded-real Riccati test for ``||T(K)|| < gamma``.

    Runs worst-case policy iteration: evaluate ``L`` by a Lyapunov solve, then
    ``L <- (gamma^2 I - D^T P D)^{-1} D^T P (A - BK)``. The iterates increase
    monotonically to the stabilizing Riccati solution when it exists.

    Returns ``P_K`` when the stabilizing solution exists with
    ``gamma^2 I - D^T P_K D > 0`` and ``A - BK + D L_{K,*}`` stable, otherwise
    ``None``. ``A - BK`` must already be stable.
    """
    K = np.asarray(K, dtype=float)
    A_K = model.closed_loop(K)
    Q_K = model.stage_weight(K)
    D = model.D
    g2 = gamma * gamma
    L = np.zeros((model.q, model.n))
    P_prev = None
    for _ in range(max_iter):
        A_L = A_K + D @ L
        if mk.spectral_radius(A_L) >= 1.0 - mk.STABILITY_MARGIN:
            return None
        try:
            P = mk.solve_dlyap(A_L, Q_K - g2 * L.T @ L)
        except Exception:
            return None
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > 1e12:
            return None
        H = g2 * np.eye(model.q) - D.T @ P @ D
        if not mk.is_pd(H, _PD_REL):
            return None
        L = np.linalg.solve(H, D.T @ P @ A_K)
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol * max(1.0, np.linalg.norm(P)):
            # at a tie the worst-case loop sits on the unit circle; 1 - rho grows
            # like sqrt(gamma - ||T||), so this rejects only a ~1e-14 relative band
            if mk.spectral_radius(A_K + D @ L) >= 1.0 - _TIE_MARGIN:
                return None
            return P
        P_prev = P
    return None


def _sigma_max_at(Acl, Ccl, D, omega):
    n = Acl.shape[0]
    G = Ccl @ np.linalg.solve(np.exp(1j * omega) * np.eye(n) - Acl, D)
    return float(np.linalg.norm(G, 2))


def _refined_peak(Acl, Ccl, D, n_points=64):
    """Grid peak polished by a bounded scalar search between its neighbours."""
    omega, sv = _freq_response_norms(Acl, Ccl, D, n_points)
    k = int(np.argmax(sv))
    a, b = omega[max(k - 1, 0)], omega[min(k + 1, n_points - 1)]
    res = minimize_scalar(
        lambda w: -_sigma_max_at(Acl, Ccl, D, w),
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return max(float(sv[k]), -float(res.fun))


def hinf_norm(model, K, rtol=1e-6, cross_check=True):
    """H-infinity norm of ``T(K)`` by bisection on the bounded-real Riccati test.

    The lower end of the bracket is the peak of a 64-point frequency grid,
    polished by a local search (still an attained value, hence a valid lower
    bound). The upper end starts a relative ``rtol`` above it and the gap is
    widened (up to doubling) until the Riccati test passes. The result is cross-checked against a 4096-point grid, which must
    not exceed it.

    Raises
    ------
    UnstableMatrixError
        If ``A - BK`` is not stable.
    """
    K = np.asarray(K, dtype=float)
    Acl = model.closed_loop(K)
    rho = mk.spectral_radius(Acl)
    if rho >= 1.0 - mk.STABILITY_MARGIN:
        raise UnstableMatrixError(f"closed loop spectral radius {rho:.6g}")
    Ccl = model.C - model.E @ K
    if not np.any(model.D) or not np.any(Ccl):
        return 0.0
    lo = _refined_peak(Acl, Ccl, model.D)
    if lo <= 0.0:
        return 0.0
    gap = rtol
    hi = lo * (1.0 + gap)
    while riccati_test(model, K, hi) is None:
        # the polished peak was local, not global: widen the bracket
        gap = min(2.0 * gap * 10.0, 1.0)
        lo, hi = hi, hi * (1.0 + gap)
        if hi > 1e12:
            raise UnstableMatrixError("H-infinity bracket diverged")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if riccati_test(model, K, mid) is None:
            lo = mid
        else:
            hi = mid
    if cross_check:
        _, sv = _freq_response_norms(Acl, Ccl, model.D, 4096)
        # grid values are attained; a larger one means the Riccati test misfired
        hi = max(hi, float(np.max(sv)))
    return hi


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------


@dataclass
class Admissibility:
    """Outcome of :func:`is_admissible`. Truthy iff admissible.

    ``certificate`` holds the stabilizing Riccati solution ``P_K`` when admissible.
    ``reason`` is ``"unstable"`` or ``"hinf"`` otherwise.
    """

    admissible: bool
    reason: str = None
    certificate: np.ndarray = field(default=None, repr=False)
    spectral_radius: float = None

    def __bool__(self):
        return self.admissible


def is_admissible(model, K):
    """Membership of ``K`` in the admissible set (strict inequalities)."""
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        return Admissibility(False, "unstable", None, float("inf"))
    rho = mk.spectral_radius(model.closed_loop(K))
    if rho >= 1.0 - mk.STABILITY_MARGIN:
        return Admissibility(False, "unstable", None, rho)
    P = riccati_test(model, K, model.gamma)
    if P is None:
        return Admissibility(False, "hinf", None, rho)
    return Admissibility(True, None, P, rho)


def lmi_blocks(A, B, C, D, E, gamma, W, V):
    """The symmetric 4-block bounded-real LMI matrix in ``(W, V)``.

    Block order is ``(n, q, n, p)``; the matrix is negative definite iff
    ``K = V W^{-1}`` is admissible (given ``W > 0``).
    """
    n, q, p = A.shape[0], D.shape[1], C.shape[0]
    AW = A @ W - B @ V
    CW = C @ W - E @ V
    Z = np.zeros
    M = np.block(
        [
            [-W, Z((n, q)), AW.T, CW.T],
            [Z((q, n)), -(gamma**2) * np.eye(q), D.T, Z((q, p))],
            [AW, D, -W, Z((n, p))],
            [CW, Z((p, q)), Z((p, n)), -np.eye(p)],
        ]
    )
    return 0.5 * (M + M.T)


def lmi_admissibility_check(model, W, V, margin=1e-9):
    """True iff ``W > 0`` and the bounded-real LMI has ``lambda_max < -margin``."""
    W = np.asarray(W, dtype=float)
    V = np.asarray(V, dtype=float)
    if W.shape != (model.n, model.n) or V.shape != (model.m, model.n):
        return False
    if np.linalg.norm(W - W.T) > 1e-8 * max(1.0, np.linalg.norm(W)):
        return False
    if not mk.is_pd(W, _PD_REL):
        return False
    M = lmi_blocks(model.A, model.B, model.C, model.D, model.E, model.gamma, W, V)
    return bool(np.linalg.eigvalsh(M)[-1] < -margin)
