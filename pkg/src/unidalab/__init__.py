"""Desk-scale universal domain adaptation lab.

A numpy implementation of one-vs-all open-set adaptation: synthetic
domain-shift benchmark, MLP model with closed/open heads and an adversarial
domain discriminator behind gradient reversal, two-stage training, and
ACC/AUROC evaluation with 5-crop inference.
"""

from .config import (
    AblationOptions,
    ConfigError,
    EvalOptions,
    ExperimentConfig,
    ModelDims,
    config_from_dict,
    config_to_dict,
    default_stage1,
    default_stage2,
    default_train_config,
    full_scale_train_config,
    load_config,
    save_config,
)
from .experiments import (
    build_model_config,
    run_ablation,
    run_experiment,
    run_source_only,
    single_thread_limits,
    with_seed,
)
from .losses import (
    LossBreakdown,
    closed_set_ce,
    domain_adversarial_loss,
    open_entropy,
    ova_loss_topk,
    unknown_weight,
)
from .metrics import MetricsReport, Prediction, accuracy_known, auroc, evaluate, predict
from .model import (
    GradReversalConfig,
    ModelConfig,
    ModelParams,
    OpenSetScores,
    closed_logits,
    discriminate,
    extract_features,
    init_params,
    load_checkpoint,
    open_scores,
    save_checkpoint,
)
from .synth import (
    SOURCE,
    TARGET,
    UNKNOWN,
    Batch,
    DatasetSpec,
    DomainShift,
    LabeledImage,
    augment_source,
    five_crops,
    generate_dataset,
    load_dataset,
    make_batch,
    save_dataset,
)
from .train import (
    StageConfig,
    TrainConfig,
    TrainLog,
    TrainingDivergedError,
    lr_schedule,
    run_stage,
    train_full,
    train_step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
