"""A small log-det barrier solver for ``min t  s.t.  F(y) <= t I`` with ``F`` affine.

Sized for the initial-gain problem (a few dozen scalar unknowns, matrices of
order < 50); everything is dense.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["AffineMatrixFunction", "BarrierResult", "minimize_max_eigenvalue"]


@dataclass
class AffineMatrixFunction:
    """``F(y) = F0 + sum_k y_k F_k`` with symmetric ``F0`` and ``F_k``.

    ``basis`` has shape ``(d, N, N)``.
    """

    F0: np.ndarray
    basis: np.ndarray

    def __call__(self, y):
        return self.F0 + np.tensordot(y, self.basis, axes=1)

    @property
    def dim(self):
        return self.basis.shape[0]


@dataclass
class BarrierResult:
    y: np.ndarray
    t: float
    newton_steps: int
    converged: bool


def _chol(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None


def _objective(F, y, t, s):
    S = t * np.eye(F.F0.shape[0]) - F(y)
    L = _chol(S)
    if L is None:
        return np.inf, None
    return s * t - 2.0 * np.sum(np.log(np.diag(L))), L


def minimize_max_eigenvalue(F, y0, gap_tol=1e-7, s0=1.0, growth=8.0, max_newton=60, stop_below=None):
    """Minimize ``lambda_max(F(y))`` by a barrier path-following method.

    The auxiliary variable ``t`` bounds the spectrum from above; for each
    barrier weight ``s`` the function ``s t - log det(t I - F(y))`` is minimized
    by damped Newton steps with backtracking, then ``s`` is multiplied by
    ``growth`` until the duality-gap bound ``N / s`` drops below ``gap_tol``.

    ``stop_below`` ends the path early once a centered point has
    ``lambda_max(F(y)) < stop_below``.
    """
    N = F.F0.shape[0]
    d = F.dim
    y = np.array(y0, dtype=float)
    t = float(np.linalg.eigvalsh(F(y))[-1]) + 1.0
    s = s0
    total = 0
    converged = False
    # G_k = dS/dz_k for z = (y, t): -F_k for the y-block and I for t
    G = np.concatenate([-F.basis, np.eye(N)[None]], axis=0)
    while True:
        for _ in range(max_newton):
            f, L = _objective(F, y, t, s)
            Linv = np.linalg.solve(L, np.eye(N))
            # Ghat_k = L^{-1} G_k L^{-T}
            Gh = Linv[None] @ G @ Linv.T[None]
            grad = -np.einsum("kii->k", Gh)
            grad[-1] += s
            Hm = np.einsum("kij,lij->kl", Gh, Gh)
            try:
                step = -np.linalg.solve(Hm, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(Hm, grad, rcond=None)[0]
            dec2 = float(-grad @ step)
            total += 1
            if dec2 < 1e-10:
                break
            alpha = 1.0
            while alpha > 1e-12:
                y_new = y + alpha * step[:d]
                t_new = t + alpha * step[-1]
                f_new, _ = _objective(F, y_new, t_new, s)
                if f_new <= f - 0.25 * alpha * dec2:
                    break
                alpha *= 0.5
            else:
                break
            y, t = y_new, t_new
        lam = float(np.linalg.eigvalsh(F(y))[-1])
        if stop_below is not None and lam < stop_below:
            break
        if N / s < gap_tol:
            converged = True
            break
        s *= growth
    return BarrierResult(y=y, t=float(np.linalg.eigvalsh(F(y))[-1]), newton_steps=total, converged=converged)
