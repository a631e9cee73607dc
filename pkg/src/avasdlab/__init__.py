"""Desk-scale robustness laboratory for audio-visual active speaker detection.

The package bundles a tiny reverse-mode autodiff engine, a miniature
cross-attention speaker model, cross-modal interaction losses, joint
l-infinity attacks (bim / mim / pgd), ranking and embedding-change
metrics, a deterministic synthetic data generator, and a command-line
harness that wires them into reproducible experiments.
"""

from .autodiff import GraphError, ShapeError, Tensor, input_gradients
from .attacks import AdversarialPair, AttackConfig, AttackError, attack_objective, bim, craft, mim, pgd
from .data import (AVDataset, AVSample, DatasetFormatError, GeneratorSpec, generate_dataset,
                   load_dataset, save_dataset)
from .interaction import (Centers, InteractionWeights, class_dispersion_loss,
                          center_compactness_loss, compute_centers, interaction_objective,
                          modality_alignment_loss, pair_distance_loss)
from .metrics import (EvalReport, average_precision, ecr, evaluate,
                      filter_correct_predictions, transfer_attack)
from .model import (DivergenceError, ForwardTrace, ModelConfig, ModelParams, forward,
                    frame_cross_entropy, init_params, load_checkpoint, multi_head_cross_entropy,
                    save_checkpoint, variant_config)
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "GraphError", "input_gradients",
    "AttackConfig", "AdversarialPair", "AttackError", "attack_objective", "bim", "mim", "pgd", "craft",
    "AVDataset", "AVSample", "GeneratorSpec", "DatasetFormatError",
    "generate_dataset", "save_dataset", "load_dataset",
    "Centers", "InteractionWeights", "compute_centers", "class_dispersion_loss",
    "center_compactness_loss", "modality_alignment_loss", "pair_distance_loss",
    "interaction_objective",
    "EvalReport", "average_precision", "ecr", "evaluate", "transfer_attack",
    "filter_correct_predictions",
    "ModelConfig", "ModelParams", "ForwardTrace", "DivergenceError", "init_params", "forward",
    "frame_cross_entropy", "multi_head_cross_entropy", "save_checkpoint", "load_checkpoint",
    "variant_config",
    "TrainConfig", "TrainResult", "train",
    "__version__",
]
