"""
Learning the robust gain from one trajectory
============================================

Nothing below the data collection step touches A, B or D. The true model is
used afterwards only to score the learned gains.
"""

import numpy as np

from riskpo import illustrative_model
from riskpo.data_driven import (
    ExplorationPolicy,
    build_operators,
    gamma_hat,
    gamma_model,
    learn_from_operators,
    simulate,
)
from riskpo.game_oracle import solve_gare_value_iteration
from riskpo.sysid_init import find_initial_gain_for_model

model = illustrative_model()
ref = solve_gare_value_iteration(model)
K1 = find_initial_gain_for_model(model).K

# explore with the initial gain plus unit Gaussian noise on both players
policy = ExplorationPolicy.for_model(model, K1, sigma1=1.0, sigma2=1.0)
rng = np.random.default_rng(0)
buffer = simulate(model, policy, tau=5000, rng=rng)
print(f"collected {buffer.tau} samples, digest {buffer.digest()[:12]}...")

ops = build_operators(buffer)
print("Phi is", ops.Phi.shape, "with smallest eigenvalue", f"{np.linalg.eigvalsh(ops.Phi)[0]:.2e}")

# the estimated kernel at P* against the model-based one
G_true = gamma_model(model, ref.P_star)
G_est = gamma_hat(ops, ref.P_star)
print(f"relative kernel error at P*: {np.linalg.norm(G_est - G_true) / np.linalg.norm(G_true):.3f}")

trace = learn_from_operators(model, ops, K1, outer_iters=10, inner_iters=20, reference=ref)
print("\n i   rel_err_K   hinf")
for r in trace.records:
    print(f"{r.i:2d}   {r.rel_err_K:.4f}      {r.hinf:.4f}")
