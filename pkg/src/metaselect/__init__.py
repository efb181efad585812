"""Task selection for meta-reinforcement learning on tabular task families.

The toolkit covers the full loop: generate families of related tabular
tasks, train each to convergence, keep the training tasks that are both
pairwise different (policy KL divergence over validation states) and
relevant to held-out validation tasks (fine-tuning their policy lowers its
entropy), meta-train an initialization on the kept subset, and evaluate
few-episode adaptation on test tasks against non-selective baselines.
"""

from .errors import (
    ConfigurationError,
    GenerationError,
    MetaselectError,
    NumericalError,
    StageError,
)
from .mdp import (
    SoftmaxPolicy,
    TabularMdp,
    Trajectory,
    VisitationProfile,
    evaluate_policy,
    on_policy_distribution,
    reachable_states,
    rollout,
    sample_states,
)
from .generators import (
    CARTPOLE,
    GRID_MAZE,
    CartPoleParams,
    GridMazeParams,
    TaskPool,
    TaskSpec,
    build_mdp,
    build_task_pool,
    generate_cartpole,
    generate_grid_maze,
    grid_maze_layout,
)
from .training import (
    LearnerConfig,
    TrainedTask,
    exact_policy_gradient,
    execute_policy,
    fine_tune,
    fine_tune_with_returns,
    mean_return,
    train_to_convergence,
)
from .selection import (
    RelevanceTrace,
    SelectionConfig,
    SelectionResult,
    ValidationStateSample,
    exhaustive_validation_states,
    policy_entropy,
    policy_kl,
    relevance_evaluation,
    sample_validation_states,
    select_tasks,
    task_difference,
)
from .metalearn import (
    AdaptationCurve,
    MetaConfig,
    MetaPolicy,
    evaluate_meta_policy,
    meta_train,
)
from .experiments import (
    BaselineSpec,
    EvalConfig,
    ExperimentConfig,
    ExperimentReport,
    PoolConfig,
    ablation,
    config_from_json_dict,
    default_config,
    emit_plots,
    epsilon_sweep,
    run_pipeline,
)

__version__ = "0.1.0"
