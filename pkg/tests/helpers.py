import numpy as np

from riskpo.errors import RiskPOError
from riskpo.game_oracle import estimate_gamma_inf
from riskpo.plant import PlantModel, check_assumptions
from riskpo.sysid_init import find_initial_gain_for_model


def random_plant(rng, n, m, q, gamma=1.0, rho=None, d_scale=0.5):
    A = rng.standard_normal((n, n))
    target = rng.uniform(0.5, 1.2) if rho is None else rho
    A *= target / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    B = rng.standard_normal((n, m))
    D = d_scale * rng.standard_normal((n, q))
    C = np.vstack([np.eye(n), np.zeros((m, n))])
    E = np.vstack([np.zeros((n, m)), np.eye(m)])
    return PlantModel(A, B, C, D, E, gamma, np.eye(n))


def random_game(rng, n, m, q, margin=2.0):
    """A random plant with ``gamma = margin * gamma_inf`` and an admissible initial gain."""
    for _ in range(50):
        model = random_plant(rng, n, m, q)
        if not check_assumptions(model):
            continue
        try:
            g_inf = estimate_gamma_inf(model, tol=1e-3)
            model = model.with_gamma(max(margin * g_inf, 0.1))
            K1 = find_initial_gain_for_model(model).K
        except RiskPOError:
            continue
        return model, K1
    raise RuntimeError("could not draw a random game")


def random_stable(rng, n, rho=0.9):
    A = rng.standard_normal((n, n))
    return A * (rho / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12))


def random_sym(rng, n):
    X = rng.standard_normal((n, n))
    return X + X.T


def random_psd(rng, n, rank=None):
    G = rng.standard_normal((n, rank or n))
    return G @ G.T


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, title, checks):
    """Store a PASS/FAIL line for ``checks`` (a list of ``(label, ok, detail)``)."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{label} {'ok' if passed else 'FAILED'} ({info})" for label, passed, info in checks)
    ACCEPTANCE_LINES[number] = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} | {detail}"
    return ok
