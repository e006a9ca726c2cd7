"""Separability-adjusting consistency training, white-box inversion
attacks, and a constructive CNF-to-ReLU-network hardness gadget."""

from .data import BatchPlan, Dataset, batches, flip_labels, gen_synthetic, load_idx, save_idx
from .errors import (
    AttackError,
    ConfigError,
    ContractError,
    FormatError,
    ShapeError,
    TrainingError,
)
from .invert import InversionConfig, InversionResult, attack_dataset, invert, tv
from .checkpoint import load_checkpoint, read_checkpoint_tensors, save_checkpoint
from .losses import (
    CombinedLoss,
    LossValue,
    MixConParams,
    combined_objective,
    cross_entropy,
    mixcon_loss,
    normalize_features,
    normalize_features_backward,
    one_hot,
    rank_pair_set,
    unicon_loss,
)
from .metrics import SimilarityReport, aggregate, cosine_similarity, mcs, mse, separability, ssim
from .network import (
    ActivationTape,
    Conv2d,
    Flatten,
    Linear,
    MaxPool2d,
    Network,
    NetworkSpec,
    ReLU,
    Softmax,
    backward,
    forward,
    glorot_scales,
    hidden,
    init_params,
    lenet5_network_spec,
    predict_class,
    spectral_norm,
    synthetic_network_spec,
)
from .hardness import (
    CnfFormula,
    ReducedNetwork,
    assignment_to_input,
    attack_reduction,
    build_reduction,
    input_to_assignment,
    lipschitz_check,
    parse_dimacs,
    soundness_scan,
    unsat_count,
    verify_completeness,
)
from .train import (
    SweepGrid,
    SweepRow,
    TrainConfig,
    TrainHistory,
    evaluate_accuracy,
    make_variant,
    run_sweep,
    train,
)

__version__ = "0.1.0"
