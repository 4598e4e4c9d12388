"""The training objective: contrastive loss plus two dispersion terms.

* ``clip_loss``: mean cross-entropy over temperature-scaled cosine logits,
  image-to-text direction only.
* ``inter_dispersion_loss``: sum of Gaussian potentials exp(-t*||wm - wn||^2)
  over ordered pairs of distinct class text embeddings (the potential is
  symmetric, so the ordered sum equals twice the unordered one).
* ``intra_dispersion_loss``: summed squared distance from each image
  embedding to its class prototype, no batch averaging.

Prototypes are per-class means of unprompted image embeddings, computed once
before training and detached from any gradient graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import FrozenEncoderPair, encode_image
from .errors import ConfigError, ContractError, DatasetError, NumericalError
from .rng import SplitMix64

UNIT_NORM_TOL = 1e-8


@dataclass(frozen=True)
class LossWeights:
    beta_t: float
    beta_v: float
    kernel_scale: float = 2.0
    tau: float = 0.07

    def __post_init__(self):
        if self.kernel_scale <= 0:
            raise ConfigError(f"kernel_scale must be positive, got {self.kernel_scale}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.beta_t < 0 or self.beta_v < 0:
            raise ConfigError(
                f"dispersion weights must be non-negative, got beta_t={self.beta_t}, beta_v={self.beta_v}"
            )


@dataclass(frozen=True)
class Prototypes:
    """Per-class embedding anchors, aligned with ``classes`` order."""

    s: np.ndarray
    counts: tuple[int, ...]
    classes: tuple[int, ...]


def _check_unit_rows(name: str, emb: Tensor) -> None:
    norms = np.sqrt((emb.data * emb.data).sum(axis=-1))
    worst = float(np.abs(norms - 1.0).max())
    if worst > UNIT_NORM_TOL:
        raise ContractError(f"{name}: embedding norm off unit sphere by {worst:.3e}")


def clip_loss(image_emb: Tensor, text_emb: Tensor, labels: Sequence[int], tau: float,
              validate: bool = True) -> Tensor:
    """-(1/B) * sum_i log softmax(z_i . W / tau)[y_i]."""
    b = image_emb.data.shape[0]
    c = text_emb.data.shape[0]
    if b == 0:
        raise ContractError("clip_loss: empty batch")
    if len(labels) != b:
        raise ContractError(f"clip_loss: {len(labels)} labels for batch of {b}")
    for y in labels:
        if not 0 <= y < c:
            raise IndexError(f"clip_loss: label {y} out of range for {c} classes")
    if validate:
        _check_unit_rows("clip_loss image embeddings", image_emb)
        _check_unit_rows("clip_loss text embeddings", text_emb)
    logits = ad.scale(ad.matmul(image_emb, ad.transpose(text_emb)), 1.0 / tau)
    log_probs = ad.log_softmax_rows(logits)
    mask = np.zeros((b, c))
    mask[np.arange(b), list(labels)] = 1.0
    picked = ad.mul(log_probs, Tensor(mask))
    return ad.scale(ad.sum_all(picked), -1.0 / b)


def gaussian_potential(w_m: Tensor, w_n: Tensor, kernel_scale: float,
                       validate: bool = True) -> Tensor:
    """exp(-t * ||w_m - w_n||_2^2) for unit vectors."""
    if validate:
        _check_unit_rows("gaussian_potential", w_m)
        _check_unit_rows("gaussian_potential", w_n)
    return ad.exp(ad.scale(ad.sq_dist(w_m, w_n), -kernel_scale))


def inter_dispersion_loss(text_emb: Tensor, kernel_scale: float,
                          validate: bool = True) -> Tensor:
    """Sum of pairwise Gaussian potentials over ordered distinct pairs."""
    c = text_emb.data.shape[0]
    if c < 2:
        raise ContractError(f"inter_dispersion_loss: need >= 2 embeddings, got {c}")
    if validate:
        _check_unit_rows("inter_dispersion_loss", text_emb)
    rows = [ad.select_rows(text_emb, [m]) for m in range(c)]
    total = None
    for m in range(c):
        for n in range(m + 1, c):
            pot = ad.exp(ad.scale(ad.sq_dist(rows[m], rows[n]), -kernel_scale))
            total = pot if total is None else ad.add(total, pot)
    # each unordered pair appears twice in the ordered double sum
    return ad.scale(total, 2.0)


def unprompted_image_embeddings(pair: FrozenEncoderPair, samples) -> np.ndarray:
    """Rows of f(x) without any visual prompt; constants, no graph recorded."""
    return np.stack([encode_image(pair, tokens).data for tokens, _ in samples])


def compute_prototypes(pair: FrozenEncoderPair, split, renormalize: bool = False,
                       visual_prompt: Tensor | None = None) -> Prototypes:
    """Per-class mean of image embeddings over a training split.

    Embeddings are unprompted unless ``visual_prompt`` is supplied (used only
    by the optional refresh path); the result never carries gradients, and
    the mean is not renormalized unless asked.
    """
    by_class: dict[int, list[np.ndarray]] = {c: [] for c in split.classes}
    for tokens, label in split.samples:
        if label in by_class:
            emb = encode_image(pair, tokens, visual_prompt)
            by_class[label].append(emb.data)
    rows, counts = [], []
    for c in split.classes:
        if not by_class[c]:
            raise DatasetError(f"class {c} has no training samples")
        rows.append(np.mean(np.stack(by_class[c]), axis=0))
        counts.append(len(by_class[c]))
    s = np.stack(rows)
    if renormalize:
        s = s / np.sqrt((s * s).sum(axis=1, keepdims=True))
    return Prototypes(s=s, counts=tuple(counts), classes=tuple(split.classes))


def random_prototypes(pair: FrozenEncoderPair, split, stream: SplitMix64) -> Prototypes:
    """One uniformly chosen training sample's unprompted embedding per class."""
    by_class: dict[int, list] = {c: [] for c in split.classes}
    for tokens, label in split.samples:
        if label in by_class:
            by_class[label].append(tokens)
    rows = []
    for c in split.classes:
        if not by_class[c]:
            raise DatasetError(f"class {c} has no training samples")
        pick = stream.next_below(len(by_class[c]))
        rows.append(encode_image(pair, by_class[c][pick]).data)
    return Prototypes(
        s=np.stack(rows),
        counts=tuple(1 for _ in split.classes),
        classes=tuple(split.classes),
    )


def intra_dispersion_loss(image_emb: Tensor, labels: Sequence[int],
                          prototypes: Prototypes) -> Tensor:
    """sum_i ||z_i - s_{y_i}||^2 with labels as positions into the prototype rows."""
    n_proto = prototypes.s.shape[0]
    for y in labels:
        if not 0 <= y < n_proto:
            raise IndexError(f"intra_dispersion_loss: no prototype at position {y}")
    targets = Tensor(prototypes.s[list(labels)])
    return ad.sq_dist(image_emb, targets)


def total_loss(clip: Tensor, inter: Tensor, intra: Tensor, weights: LossWeights) -> Tensor:
    """clip + beta_t * inter + beta_v * intra."""
    for name, t in (("clip", clip), ("inter", inter), ("intra", intra)):
        if not np.isfinite(t.data).all():
            raise NumericalError(f"total_loss: non-finite {name} component")
    return ad.add(clip, ad.add(ad.scale(inter, weights.beta_t), ad.scale(intra, weights.beta_v)))
