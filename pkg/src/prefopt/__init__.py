"""Preference optimization over tabular softmax policies.

DPO, IPO and their self-refined variants (Sr-DPO, Sr-IPO), a synthetic
ground-truth reward oracle, and the metrics used to compare them.
"""

from .datagen import (
    Dataset,
    Gaussian,
    PreferenceTuple,
    ScenarioSpec,
    TwoCluster,
    Uniform,
    generate,
    load_jsonl,
    make_assumption_satisfying_policies,
)
from .errors import (
    ConfigurationError,
    DatasetError,
    DatasetParseError,
    DatasetValidationError,
    EmptyDatasetError,
    TrainingDiverged,
)
from .loss import (
    LossBatchResult,
    dpo_loss,
    ipo_loss,
    method_loss,
    shifted_loss,
    sr_dpo_loss,
    sr_dpo_naive_degeneracy,
    sr_ipo_loss,
)
from .metrics import (
    MetricsReport,
    accuracy,
    average_marginal,
    correlations,
    evaluate,
    judge_compare,
)
from .optim import TrainConfig, TrainState, clip_gradient, rmsprop_step, train
from .policy import ContextId, PolicyTable, implicit_reward_diff, log_prob
from .refine import (
    RefinementValue,
    check_monotone_equivalence,
    check_telescoping,
    delta_naive,
    delta_refine,
)
from .reward import GroundTruth, bt_log_likelihood, bt_probability

__version__ = "0.1.0"
