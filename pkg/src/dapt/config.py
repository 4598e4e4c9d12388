"""Experiment configuration files: strict JSON with an explicit version.

Unknown fields are rejected at every level and the version must match
exactly; silent default drift is the main reproducibility hazard in
experiment harnesses, so anything unrecognized is an error rather than a
warning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .encoders import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights
from .trainer import TrainConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 8
    per_class: int = 40
    noise_sigma: float = 0.5
    seed: int = 11


@dataclass(frozen=True)
class AnalysisConfig:
    figures: bool = True
    hull: bool = True
    pdist: bool = True
    export_embeddings: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    encoder: EncoderConfig
    dataset: DatasetConfig
    train: TrainConfig
    analysis: AnalysisConfig
    output_dir: str = "out"

    def echo(self) -> dict:
        """Resolved scientific settings, path-free so reports stay portable."""
        return {
            "encoder": {
                "d_model": self.encoder.d_model,
                "d_embed": self.encoder.d_embed,
                "n_blocks": self.encoder.n_blocks,
                "n_patches": self.encoder.n_patches,
                "prompt_len": self.encoder.prompt_len,
                "seed": self.encoder.seed,
            },
            "dataset": {
                "num_classes": self.dataset.num_classes,
                "per_class": self.dataset.per_class,
                "noise_sigma": self.dataset.noise_sigma,
                "seed": self.dataset.seed,
            },
            "train": {
                "mode": self.train.mode,
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "shots": self.train.shots,
                "seeds": list(self.train.seeds),
                "beta_t": self.train.weights.beta_t,
                "beta_v": self.train.weights.beta_v,
                "kernel_scale": self.train.weights.kernel_scale,
                "tau": self.train.weights.tau,
                "prototype_renormalize": self.train.prototype_renormalize,
                "prototype_refresh": self.train.prototype_refresh,
                "text_std": self.train.text_std,
            },
        }


def _section(doc: dict, name: str, allowed: dict) -> dict:
    """Pull one sub-object, rejecting unknown keys; values fall back to defaults."""
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"config section {name!r}: unknown fields {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(raw)
    return merged


_ENCODER_DEFAULTS = {"d_model": 32, "d_embed": 16, "n_blocks": 2, "n_patches": 8,
                     "prompt_len": 16, "seed": 7}
_DATASET_DEFAULTS = {"num_classes": 8, "per_class": 40, "noise_sigma": 0.5, "seed": 11}
_TRAIN_DEFAULTS = {"mode": "dapt", "learning_rate": 0.2, "epochs": 50, "batch_size": None,
                   "shots": 16, "seeds": [0, 1, 2], "beta_t": 1.0, "beta_v": 1.0,
                   "kernel_scale": 2.0, "tau": 0.07, "prototype_renormalize": False,
                   "prototype_refresh": False, "text_std": 0.02}
_ANALYSIS_DEFAULTS = {"figures": True, "hull": True, "pdist": True, "export_embeddings": False}


def parse_experiment_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    allowed_top = {"version", "output_dir", "encoder", "dataset", "train", "analysis"}
    unknown = set(doc) - allowed_top
    if unknown:
        raise ConfigError(f"config: unknown top-level fields {sorted(unknown)}")
    if "version" not in doc:
        raise ConfigError("config: missing required field 'version'")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(f"config: version {doc['version']!r} unsupported, expected {CONFIG_VERSION}")

    enc = _section(doc, "encoder", _ENCODER_DEFAULTS)
    ds = _section(doc, "dataset", _DATASET_DEFAULTS)
    tr = _section(doc, "train", _TRAIN_DEFAULTS)
    an = _section(doc, "analysis", _ANALYSIS_DEFAULTS)

    seeds = tr.pop("seeds")
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("config: train.seeds must be a list of integers")
    try:
        weights = LossWeights(beta_t=float(tr.pop("beta_t")), beta_v=float(tr.pop("beta_v")),
                              kernel_scale=float(tr.pop("kernel_scale")), tau=float(tr.pop("tau")))
        train_cfg = TrainConfig(weights=weights, seeds=tuple(seeds), **tr)
        return ExperimentConfig(
            encoder=EncoderConfig(**enc),
            dataset=DatasetConfig(**ds),
            train=train_cfg,
            analysis=AnalysisConfig(**an),
            output_dir=str(doc.get("output_dir", "out")),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"config: invalid field value ({err})") from err


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    return parse_experiment_config(doc)
