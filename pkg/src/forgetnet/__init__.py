"""Invariant representation learning by adversarial forgetting.

An encoder builds a latent code z, a forget-gate masks it to
z_tilde = z * m, and a min-max game against a discriminator removes a
chosen factor s from z_tilde while a predictor keeps the target y
readable and a decoder keeps z informative. Information bounds on the
gated channel quantify what the mask can leak.
"""

from .bounds import (BoundReport, ChannelSpec, estimate_mi, fixed_mask_bound,
                     model_bound_trace, multivariate_bound, random_mask_bound,
                     sample_channel, variance_inequality_check)
from .checkpoint import (CheckpointChecksumError, CheckpointError,
                         CheckpointTruncatedError, CheckpointVersionError,
                         load_checkpoint, save_checkpoint)
from .data import (DataFormatError, Dataset, DatasetManifest, ShapesSpec,
                   gen_biased_tabular, gen_shapes, load_adult, load_dataset,
                   load_german, load_idx, make_rot, save_dataset,
                   stratified_split)
from .estimator import AdversarialForgettingClassifier
from .evaluate import (EvalReport, ProbeSpec, delta_metric, evaluate,
                       evaluate_all, project_embeddings)
from .nets import (ForgettingModel, MaskSummary, ObjectiveWeights,
                   discriminator_loss, mask_statistics, objective)
from .presets import DATASETS, PRESETS, build_dataset, preset_config
from .reference import CITATIONS, REFERENCE_RESULTS
from .tensor import Adam, ShapeError, Tape, Tensor, TrainingDiverged
from .train import (EmpiricalSDistribution, GridResult, TrainConfig,
                    TrainResult, config_from_file, config_from_mapping,
                    grid_search, sample_random_s, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdversarialForgettingClassifier", "BoundReport", "ChannelSpec",
    "CheckpointChecksumError", "CheckpointError", "CheckpointTruncatedError",
    "CheckpointVersionError", "CITATIONS", "DataFormatError", "Dataset",
    "DatasetManifest", "DATASETS", "EmpiricalSDistribution", "EvalReport",
    "ForgettingModel", "GridResult", "MaskSummary", "ObjectiveWeights",
    "PRESETS", "ProbeSpec", "REFERENCE_RESULTS", "ShapeError", "ShapesSpec",
    "Tape", "Tensor", "TrainConfig", "TrainingDiverged", "TrainResult",
    "build_dataset", "config_from_file", "config_from_mapping",
    "delta_metric", "discriminator_loss", "estimate_mi", "evaluate",
    "evaluate_all", "fixed_mask_bound", "gen_biased_tabular", "gen_shapes",
    "grid_search", "load_adult", "load_checkpoint", "load_dataset",
    "load_german", "load_idx", "make_rot", "mask_statistics",
    "model_bound_trace", "multivariate_bound", "objective", "preset_config",
    "project_embeddings", "random_mask_bound", "sample_channel",
    "sample_random_s", "save_checkpoint", "save_dataset", "stratified_split",
    "train", "variance_inequality_check",
]
