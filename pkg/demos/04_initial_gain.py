"""
An admissible starting gain from data
=====================================

Identify [A, B, D] by least squares from a short exploratory run, then solve
the bounded-real LMIs on the estimate. The truth is consulted only at the end.
"""

import numpy as np

from riskpo import cartpole_model, hinf_norm
from riskpo.errors import UnstableMatrixError
from riskpo.data_driven import ExplorationPolicy
from riskpo.sysid_init import find_initial_gain_for_model, learn_initial_controller

model = cartpole_model()  # open loop unstable, gamma = 10

# any stabilizing exploration gain will do; here the LMI gain of the true plant
K_exp = find_initial_gain_for_model(model).K
policy = ExplorationPolicy.for_model(model, K_exp, sigma1=20.0, sigma2=20.0)

for seed in range(5):
    ic = learn_initial_controller(model, policy, tau=10_000, rng=np.random.default_rng(seed))
    try:
        h = f"{hinf_norm(model, ic.K):.3f}"
    except UnstableMatrixError:
        h = "unstable"
    print(
        f"seed {seed}: id error {ic.identified.residual_norm:.4f}, "
        f"LMI margin {ic.lmi.margin:.1e}, ||T(K)|| = {h}, admissible = {ic.admissible}"
    )
# the cart-pole entries are O(dt); an identification error of a few 1e-2 is
# enough to occasionally hand back a gain that is stable only for the estimate
