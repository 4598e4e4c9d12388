"""Frozen dual mini-encoders with prompt-injection slots.

Both encoders share one architecture: ``n_blocks`` pre-norm transformer
blocks (RMS-normalize, single-head scaled dot-product self-attention over
all tokens, residual add, RMS-normalize, tanh MLP d->2d->d, residual add),
followed by a linear projection of the readout token to the joint embedding
width and an L2 normalization.  The image readout is the CLS token at
position 0; the text readout is the class token at the last position.
Inserting prompt tokens never displaces either readout position.

Weights are deterministic functions of (config, seed, num_classes).  A
single SplitMix64 stream seeded with ``config.seed`` supplies every draw as
Gaussian(0, 1/sqrt(d_model)); biases are zeros and consume no draws.  Draw
order, row-major within each matrix:

    image encoder, per block: Wq, Wk, Wv, Wo, W1 (d x 2d), W2 (2d x d)
    image projection (d_model x d_embed), then cls_token (d_model)
    text encoder, per block:  Wq, Wk, Wv, Wo, W1, W2
    text projection, then class_table (num_classes x d_model)

Only prompt tensors may carry gradients; every weight here is a constant.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .rng import SplitMix64


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 32
    d_embed: int = 16
    n_blocks: int = 2
    n_patches: int = 8
    prompt_len: int = 16
    seed: int = 7

    def __post_init__(self):
        for name in ("d_model", "d_embed", "n_blocks", "n_patches", "prompt_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_embed > self.d_model:
            raise ConfigError(
                f"d_embed ({self.d_embed}) must not exceed d_model ({self.d_model})"
            )


@dataclass(frozen=True)
class BlockWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass(frozen=True)
class FrozenEncoderPair:
    config: EncoderConfig
    num_classes: int
    image_blocks: tuple[BlockWeights, ...]
    image_proj: Tensor
    cls_token: Tensor
    text_blocks: tuple[BlockWeights, ...]
    text_proj: Tensor
    class_table: Tensor
    _attn_scale: float = field(init=False, default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "_attn_scale", 1.0 / math.sqrt(self.config.d_model))


def _draw_matrix(stream: SplitMix64, rows: int, cols: int, std: float) -> Tensor:
    vals = [stream.next_gaussian() * std for _ in range(rows * cols)]
    return Tensor(np.array(vals, dtype=np.float64).reshape(rows, cols))


def _draw_vector(stream: SplitMix64, n: int, std: float) -> Tensor:
    return Tensor(np.array([stream.next_gaussian() * std for _ in range(n)]))


def _draw_blocks(stream: SplitMix64, cfg: EncoderConfig, std: float) -> tuple[BlockWeights, ...]:
    d = cfg.d_model
    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(
            BlockWeights(
                wq=_draw_matrix(stream, d, d, std),
                wk=_draw_matrix(stream, d, d, std),
                wv=_draw_matrix(stream, d, d, std),
                wo=_draw_matrix(stream, d, d, std),
                w1=_draw_matrix(stream, d, 2 * d, std),
                b1=Tensor(np.zeros(2 * d)),
                w2=_draw_matrix(stream, 2 * d, d, std),
                b2=Tensor(np.zeros(d)),
            )
        )
    return tuple(blocks)


def build_encoders(config: EncoderConfig, num_classes: int) -> FrozenEncoderPair:
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    std = 1.0 / math.sqrt(config.d_model)
    stream = SplitMix64(config.seed)
    image_blocks = _draw_blocks(stream, config, std)
    image_proj = _draw_matrix(stream, config.d_model, config.d_embed, std)
    cls_token = _draw_vector(stream, config.d_model, std)
    text_blocks = _draw_blocks(stream, config, std)
    text_proj = _draw_matrix(stream, config.d_model, config.d_embed, std)
    class_table = _draw_matrix(stream, num_classes, config.d_model, std)
    return FrozenEncoderPair(
        config=config,
        num_classes=num_classes,
        image_blocks=image_blocks,
        image_proj=image_proj,
        cls_token=cls_token,
        text_blocks=text_blocks,
        text_proj=text_proj,
        class_table=class_table,
    )


def _iter_weights(pair: FrozenEncoderPair):
    for blocks in (pair.image_blocks, pair.text_blocks):
        for bw in blocks:
            yield from (bw.wq, bw.wk, bw.wv, bw.wo, bw.w1, bw.b1, bw.w2, bw.b2)
    yield from (pair.image_proj, pair.cls_token, pair.text_proj, pair.class_table)


def weight_checksum(pair: FrozenEncoderPair) -> str:
    """SHA-256 over all weight bytes; stable across calls, changed by any edit."""
    digest = hashlib.sha256()
    for w in _iter_weights(pair):
        digest.update(w.data.tobytes())
    return digest.hexdigest()


def _run_blocks(blocks: tuple[BlockWeights, ...], seq: Tensor, attn_scale: float) -> Tensor:
    h = seq
    for bw in blocks:
        a_in = ad.rms_normalize(h)
        q = ad.matmul(a_in, bw.wq)
        k = ad.matmul(a_in, bw.wk)
        v = ad.matmul(a_in, bw.wv)
        attn = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), attn_scale))
        h = ad.add(h, ad.matmul(ad.matmul(attn, v), bw.wo))
        m_in = ad.rms_normalize(h)
        hidden = ad.tanh(ad.add(ad.matmul(m_in, bw.w1), bw.b1))
        h = ad.add(h, ad.add(ad.matmul(hidden, bw.w2), bw.b2))
    return h


def _readout(h: Tensor, index: int, proj: Tensor) -> Tensor:
    row = ad.select_rows(h, [index])
    emb = ad.matmul(row, proj)
    return ad.l2_normalize(ad.reshape(emb, (proj.shape[1],)))


def _check_prompt(pair: FrozenEncoderPair, prompt: Tensor, name: str) -> None:
    want = (pair.config.prompt_len, pair.config.d_model)
    if prompt.data.shape != want:
        raise ShapeError(f"{name}: expected shape {want}, got {prompt.data.shape}")


def encode_image(pair: FrozenEncoderPair, tokens, visual_prompt: Tensor | None = None) -> Tensor:
    """Unit-norm image embedding; sequence [CLS, u_1..u_L, patches] when prompted."""
    tokens = ad.as_tensor(tokens)
    want = (pair.config.n_patches, pair.config.d_model)
    if tokens.data.shape != want:
        raise ShapeError(f"encode_image: expected tokens {want}, got {tokens.data.shape}")
    cls_row = ad.reshape(pair.cls_token, (1, pair.config.d_model))
    if visual_prompt is None:
        seq = ad.concat_rows([cls_row, tokens])
    else:
        _check_prompt(pair, visual_prompt, "encode_image visual prompt")
        seq = ad.concat_rows([cls_row, visual_prompt, tokens])
    h = _run_blocks(pair.image_blocks, seq, pair._attn_scale)
    return _readout(h, 0, pair.image_proj)


def encode_text(pair: FrozenEncoderPair, class_index: int, text_prompt: Tensor | None = None) -> Tensor:
    """Unit-norm text embedding; sequence [v_1..v_L, class token] when prompted."""
    if not 0 <= class_index < pair.num_classes:
        raise IndexError(
            f"encode_text: class index {class_index} out of range for {pair.num_classes} classes"
        )
    class_row = ad.select_rows(pair.class_table, [class_index])
    if text_prompt is None:
        seq = class_row
    else:
        _check_prompt(pair, text_prompt, "encode_text text prompt")
        seq = ad.concat_rows([text_prompt, class_row])
    h = _run_blocks(pair.text_blocks, seq, pair._attn_scale)
    return _readout(h, h.shape[0] - 1, pair.text_proj)
