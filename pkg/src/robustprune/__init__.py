"""Robust-training-aware network pruning laboratory."""

from .attacks import AttackConfig, adversarial_loss, pgd_attack
from .autodiff import (
    Conv2d,
    Dense,
    Flatten,
    Network,
    ReLU,
    Tensor,
    cross_entropy,
    finite_diff_check,
    forward_backward,
    input_gradient,
)
from .bounds import EpsilonSchedule, Interval, ibp_propagate, ibp_robust_loss, worst_case_logits
from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    load_cifar_binary,
    load_digits_dataset,
    load_idx,
    save_idx,
    split_batches,
    train_val_split,
)
from .errors import ConfigError, FormatError, NumericsError, ShapeError
from .metrics import evaluate_metrics
from .models import ARCHITECTURES, build_architecture
from .objectives import make_objective
from .optim import OptimizerState, cosine_lr, sgd_step_cosine
from .pipeline import PipelineConfig, run_pipeline, run_sweep, write_report
from .pruning import (
    ImportanceScores,
    PruneConfig,
    PruneMask,
    finalize_mask,
    finetune,
    kept_count,
    lwm_mask,
    masked_forward_ste,
    multi_step_lwm,
    prune_optimize,
    quantize_weights,
    random_score_init,
    scaled_init,
    structured_scaled_init,
    structured_scores,
    train,
)
from .smoothing import (
    ABSTAIN,
    CertifyResult,
    SmoothingConfig,
    clopper_pearson_lower,
    inverse_normal_cdf,
    smoothing_certify,
    stability_loss,
)

__version__ = "0.1.0"
