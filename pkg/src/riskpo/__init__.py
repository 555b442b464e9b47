"""Risk-sensitive LQ control by dual-loop policy optimization, model-based or learned from data."""

from .data_driven import (
    DataBuffer,
    EstimatedOperators,
    ExplorationPolicy,
    LearningConfig,
    build_operators,
    gamma_hat,
    ideal_operators,
    omega_hat,
    run_learning,
    simulate,
    solve_p_data,
    update_k_data,
    update_l_data,
)
from .dual_loop import (
    DisturbanceSpec,
    DualLoopConfig,
    IterationTrace,
    inner_loop,
    measure_rates,
    outer_step,
    run,
)
from .errors import *  # noqa: F401,F403
from .game_oracle import (
    GameSolution,
    estimate_gamma_inf,
    evaluate_policy,
    solve_gare_value_iteration,
    u_of_p,
    worst_case_gain,
)
from .models import cartpole_model, illustrative_model
from .plant import PlantModel, check_assumptions, hinf_norm, is_admissible, lmi_admissibility_check
from .sysid_init import find_initial_gain, find_initial_gain_for_model, identify, learn_initial_controller

__version__ = "0.1.0"
