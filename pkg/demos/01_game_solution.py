"""
The robust gain of a small game
===============================

Solve the game Riccati equation for the 3-state illustrative plant and
look at what the optimal gain buys in terms of disturbance attenuation.
"""

import numpy as np

from riskpo import estimate_gamma_inf, hinf_norm, illustrative_model, is_admissible
from riskpo.game_oracle import solve_gare_value_iteration

np.set_printoptions(precision=4, suppress=True)

model = illustrative_model()  # gamma = 5
sol = solve_gare_value_iteration(model)
print(f"value iteration converged in {sol.iterations} steps, residual {sol.residual:.1e}")
print("P* =\n", sol.P_star)
print("K* =\n", sol.K_star)

# the worst-case adversary is weak here: D is small next to the weights
print("L* =\n", sol.L_star)

# K* keeps the closed-loop gain from w to y well below gamma
print(f"||T(K*)||_inf = {hinf_norm(model, sol.K_star):.4f}  (gamma = {model.gamma:g})")
print("admissible:", bool(is_admissible(model, sol.K_star)))

# how far could gamma shrink before the game stops having a solution?
g_inf = estimate_gamma_inf(model, tol=1e-4)
print(f"gamma_inf ~ {g_inf:.4f}")

# a smaller gamma is more risk averse and pays for it in nominal cost
for gamma in (5.0, 2.0, 1.1 * g_inf):
    P = solve_gare_value_iteration(model.with_gamma(gamma)).P_star
    print(f"gamma = {gamma:6.3f}   tr P* = {np.trace(P):.4f}")
