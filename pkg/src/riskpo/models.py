"""The two benchmark plants: a 3-state illustrative system and a linearized cart-pole."""

import numpy as np

from .plant import PlantModel

__all__ = ["illustrative_model", "cartpole_model", "cartpole_matrices", "BUILTIN_MODELS"]


def illustrative_model(gamma=5.0, sigma=None):
    """Three states, three inputs, three disturbance channels; ``Q = R = I``.

    ``sigma`` defaults to ``I_3`` (the noise level used for learning).
    """
    A = np.array([[1.0, 0.0, -5.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    B = np.array([[1.0, -10.0, 0.0], [0.0, 3.0, 1.0], [-1.0, 0.0, 2.0]])
    D = np.diag([0.5, 0.2, 0.2])
    C = np.vstack([np.eye(3), np.zeros((3, 3))])
    E = np.vstack([np.zeros((3, 3)), np.eye(3)])
    return PlantModel(A, B, C, D, E, gamma, np.eye(3) if sigma is None else sigma)


def cartpole_matrices(dt=0.01, m_c=1.0, m_p=0.1, length=0.5, g=9.8):
    """Euler-discretized cart-pole about the upright equilibrium, state ``[s, ds, phi, dphi]``.

    Entries are rounded to the published precision (two significant digits for
    the coupling terms), which reproduces the benchmark matrices exactly for
    the default parameters.
    """
    total = m_c + m_p
    # linearized point-mass-on-massless-rod model with the pivot at l
    denom = length * (4.0 / 3.0 - m_p / total)
    a_phi = g / denom
    b_phi = -1.0 / (total * denom)
    a_s = -m_p * length * a_phi / total
    b_s = 1.0 / total - m_p * length * b_phi / total
    A = np.array(
        [
            [1.0, dt, 0.0, 0.0],
            [0.0, 1.0, a_s * dt, 0.0],
            [0.0, 0.0, 1.0, dt],
            [0.0, 0.0, a_phi * dt, 1.0],
        ]
    )
    B = np.array([[0.0], [b_s * dt], [0.0], [b_phi * dt]])
    return np.round(A, 2), np.round(B, 3)


def cartpole_model(gamma=10.0, sigma=None):
    """Linearized cart-pole with ``D = 0.001 I_4``; ``sigma`` defaults to ``0.1 I_4``."""
    A = np.array(
        [
            [1.0, 0.01, 0.0, 0.0],
            [0.0, 1.0, -0.01, 0.0],
            [0.0, 0.0, 1.0, 0.01],
            [0.0, 0.0, 0.16, 1.0],
        ]
    )
    B = np.array([[0.0], [0.01], [0.0], [-0.015]])
    D = 0.001 * np.eye(4)
    C = np.vstack([np.eye(4), np.zeros((1, 4))])
    E = np.vstack([np.zeros((4, 1)), np.ones((1, 1))])
    return PlantModel(A, B, C, D, E, gamma, 0.1 * np.eye(4) if sigma is None else sigma)


BUILTIN_MODELS = {
    "illustrative": illustrative_model,
    "cartpole": cartpole_model,
}
