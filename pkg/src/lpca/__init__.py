"""Lagrange-relaxed Q-learning for weakly coupled MDPs with continuous actions."""

__version__ = "0.1.0"

from .envs import (
    ENV_KINDS,
    EnvironmentSpec,
    JointState,
    ProjectModel,
    StepResult,
    make_environment,
    speed_scaling_model,
    step,
    type_a_kernel,
    type_a_model,
    type_b_kernel,
    type_b_model,
)
from .qnet import (
    Adam,
    LambdaGrid,
    QNetwork,
    ReplayBuffer,
    TargetNetwork,
    Transition,
    compute_target,
    load_checkpoint,
    max_over_actions,
    save_checkpoint,
    soft_update,
    train_step,
)
from .lagrange import (
    PolicyDictionary,
    compute_J,
    j_curve,
    lambda_star,
    per_state_max_tables,
    update_policy_dictionary,
)
from .selectors import DEConfig, GreedyConfig, de_objective, differential_evolution, greedy_select
from .baselines import (
    JointDPSolution,
    TabularQ,
    WhittleTable,
    compute_whittle,
    solve_joint_dp,
    solve_project_tabular,
    whittle_policy,
)
from .harness import EvalReport, TrainConfig, TrainResult, evaluate, run_experiment, train
