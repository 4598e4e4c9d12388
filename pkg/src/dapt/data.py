"""Synthetic few-shot datasets: Gaussian token clusters with class labels.

Each class gets a center drawn coordinate-wise from N(0, 1) in the flattened
token space; every sample is the center plus N(0, sigma^2) noise, reshaped to
(n_patches, d_model).  Samples are stored class-major, so class c occupies
global indices [c * per_class, (c + 1) * per_class).

Draw order from one SplitMix64 stream seeded with ``seed``: all class
centers in class order (row-major), then all samples in (class, sample,
coordinate) order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import SplitMix64


@dataclass(frozen=True)
class FewShotDataset:
    num_classes: int
    n_patches: int
    d_model: int
    per_class: int
    noise_sigma: float
    seed: int
    samples: tuple  # of (tokens: ndarray (n_patches, d_model), label: int)
    class_centers: np.ndarray | None


@dataclass(frozen=True)
class Split:
    """A labeled sample list plus the class set it classifies among."""

    samples: tuple
    classes: tuple[int, ...]


def generate_dataset(num_classes: int, n_patches: int, d_model: int, per_class: int,
                     noise_sigma: float, seed: int) -> FewShotDataset:
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if n_patches < 1 or d_model < 1:
        raise ConfigError(f"invalid token shape {n_patches}x{d_model}")
    width = n_patches * d_model
    stream = SplitMix64(seed)
    centers = np.array(
        [stream.next_gaussian() for _ in range(num_classes * width)]
    ).reshape(num_classes, width)
    samples = []
    for c in range(num_classes):
        for _ in range(per_class):
            noise = np.array([stream.next_gaussian() for _ in range(width)])
            tokens = (centers[c] + noise_sigma * noise).reshape(n_patches, d_model)
            samples.append((tokens, c))
    return FewShotDataset(
        num_classes=num_classes,
        n_patches=n_patches,
        d_model=d_model,
        per_class=per_class,
        noise_sigma=noise_sigma,
        seed=seed,
        samples=tuple(samples),
        class_centers=centers,
    )


def _pick_k(indices: list[int], k: int, stream: SplitMix64) -> list[int]:
    """First k entries of a partial Fisher-Yates pass, in selection order."""
    pool = list(indices)
    for j in range(k):
        r = j + stream.next_below(len(pool) - j)
        pool[j], pool[r] = pool[r], pool[j]
    return pool[:k]


def sample_k_shot(dataset: FewShotDataset, k: int, sampling_seed: int) -> tuple[Split, Split]:
    """K training samples per class without replacement; remainder is test."""
    if k < 1:
        raise ConfigError(f"shots must be >= 1, got {k}")
    if k >= dataset.per_class:
        raise ConfigError(
            f"shots ({k}) must be below the per-class count ({dataset.per_class})"
        )
    stream = SplitMix64(sampling_seed)
    classes = tuple(range(dataset.num_classes))
    train, test = [], []
    for c in classes:
        base = c * dataset.per_class
        chosen = _pick_k(list(range(base, base + dataset.per_class)), k, stream)
        chosen_set = set(chosen)
        train.extend(dataset.samples[i] for i in chosen)
        test.extend(
            dataset.samples[i]
            for i in range(base, base + dataset.per_class)
            if i not in chosen_set
        )
    return Split(tuple(train), classes), Split(tuple(test), classes)


def base_new_split(dataset: FewShotDataset, k: int,
                   sampling_seed: int) -> tuple[Split, Split, Split]:
    """First ceil(C/2) classes are base, the rest are new (test-only)."""
    if dataset.num_classes < 2:
        raise ConfigError("base/new split needs at least 2 classes")
    if k < 1 or k >= dataset.per_class:
        raise ConfigError(
            f"shots ({k}) must be in [1, per_class) = [1, {dataset.per_class})"
        )
    n_base = math.ceil(dataset.num_classes / 2)
    base = tuple(range(n_base))
    new = tuple(range(n_base, dataset.num_classes))
    stream = SplitMix64(sampling_seed)
    base_train, base_test = [], []
    for c in base:
        lo = c * dataset.per_class
        chosen = _pick_k(list(range(lo, lo + dataset.per_class)), k, stream)
        chosen_set = set(chosen)
        base_train.extend(dataset.samples[i] for i in chosen)
        base_test.extend(
            dataset.samples[i] for i in range(lo, lo + dataset.per_class) if i not in chosen_set
        )
    new_test = [
        dataset.samples[i]
        for c in new
        for i in range(c * dataset.per_class, (c + 1) * dataset.per_class)
    ]
    return Split(tuple(base_train), base), Split(tuple(base_test), base), Split(tuple(new_test), new)


# ---------------------------------------------------------------------------
# JSON fixture interchange

_CONFIG_KEYS = ("num_classes", "n_patches", "d_model", "per_class", "noise_sigma", "seed")


def save_dataset(dataset: FewShotDataset, path) -> None:
    doc = {
        "config": {key: getattr(dataset, key) for key in _CONFIG_KEYS},
        "samples": [
            {"tokens": tokens.tolist(), "label": label} for tokens, label in dataset.samples
        ],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh)


def load_dataset(path) -> FewShotDataset:
    with open(path, encoding="ascii") as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"config", "samples"}
    if unknown:
        raise ConfigError(f"dataset file: unknown top-level fields {sorted(unknown)}")
    cfg = doc.get("config", {})
    unknown = set(cfg) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"dataset file: unknown config fields {sorted(unknown)}")
    missing = set(_CONFIG_KEYS) - set(cfg)
    if missing:
        raise ConfigError(f"dataset file: missing config fields {sorted(missing)}")
    shape = (cfg["n_patches"], cfg["d_model"])
    samples = []
    for rec in doc.get("samples", []):
        unknown = set(rec) - {"tokens", "label"}
        if unknown:
            raise ConfigError(f"dataset file: unknown sample fields {sorted(unknown)}")
        tokens = np.asarray(rec["tokens"], dtype=np.float64)
        if tokens.shape != shape:
            raise ConfigError(
                f"dataset file: sample tokens shape {tokens.shape}, expected {shape}"
            )
        label = int(rec["label"])
        if not 0 <= label < cfg["num_classes"]:
            raise ConfigError(f"dataset file: label {label} out of range")
        samples.append((tokens, label))
    return FewShotDataset(
        num_classes=cfg["num_classes"],
        n_patches=cfg["n_patches"],
        d_model=cfg["d_model"],
        per_class=cfg["per_class"],
        noise_sigma=cfg["noise_sigma"],
        seed=cfg["seed"],
        samples=tuple(samples),
        class_centers=None,
    )
