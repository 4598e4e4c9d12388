"""Distribution-aware prompt tuning over frozen mini dual encoders.

The package trains small learnable prompt tensors against a contrastive
objective extended with two dispersion terms: a Gaussian-potential loss that
spreads class text embeddings apart on the unit sphere, and a prototype
anchoring loss that pulls image embeddings of a class together.  Everything
runs on a self-contained reverse-mode autodiff tape, is deterministic given
its seeds, and is verifiable through finite-difference gradient checks.
"""

from .autodiff import Tensor, backward, grad_check
from .data import FewShotDataset, Split, base_new_split, generate_dataset, sample_k_shot
from .encoders import (
    EncoderConfig,
    FrozenEncoderPair,
    build_encoders,
    encode_image,
    encode_text,
    weight_checksum,
)
from .losses import (
    LossWeights,
    Prototypes,
    clip_loss,
    compute_prototypes,
    gaussian_potential,
    inter_dispersion_loss,
    intra_dispersion_loss,
    total_loss,
)
from .analysis import (
    EvalResult,
    ExperimentReport,
    convex_hull_area,
    delta_pdist,
    evaluate,
    export_embeddings,
    harmonic_mean,
    pairwise_distance_stats,
)
from .prompts import PromptSet, init_prompts, load_prompts, save_prompts
from .trainer import (
    BETA_GRID,
    LR_GRID,
    TrainConfig,
    TrainTrace,
    base_to_new,
    beta_sweep,
    lr_grid_search,
    multi_seed_run,
    sgd_step,
    train,
)

__all__ = [
    "Tensor", "backward", "grad_check",
    "EncoderConfig", "FrozenEncoderPair", "build_encoders", "encode_image", "encode_text",
    "weight_checksum",
    "PromptSet", "init_prompts", "save_prompts", "load_prompts",
    "LossWeights", "Prototypes", "clip_loss", "gaussian_potential",
    "inter_dispersion_loss", "compute_prototypes", "intra_dispersion_loss", "total_loss",
    "FewShotDataset", "Split", "generate_dataset", "sample_k_shot", "base_new_split",
    "TrainConfig", "TrainTrace", "train", "sgd_step", "multi_seed_run",
    "lr_grid_search", "beta_sweep", "base_to_new", "LR_GRID", "BETA_GRID",
    "EvalResult", "ExperimentReport", "evaluate", "harmonic_mean",
    "pairwise_distance_stats", "delta_pdist", "convex_hull_area", "export_embeddings",
]

__version__ = "0.1.0"
