"""Learnable prompt storage, initialization, and on-disk persistence.

The prompt file is a small header followed by raw payload:

    line 1: magic string "DAPT1"
    line 2: "<prompt_len> <d_model>" in decimal text
    payload: text prompt then visual prompt, row-major little-endian float64

A payload whose byte count is not a whole number of rows (or a header that
cannot be read) is a parse error carrying the byte offset; a payload with a
whole but wrong number of rows is a format error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .encoders import EncoderConfig
from .errors import PromptFormatError, PromptParseError
from .rng import SplitMix64

MAGIC = b"DAPT1"
DEFAULT_TEXT_STD = 0.02


@dataclass
class PromptSet:
    """The only trainable parameters: text prompt V and visual prompt U."""

    text: Tensor
    visual: Tensor

    def snapshot(self) -> "PromptSet":
        """Detached copy for evaluation; carries no gradients."""
        return PromptSet(self.text.detach(), self.visual.detach())

    def finite(self) -> bool:
        return bool(np.isfinite(self.text.data).all() and np.isfinite(self.visual.data).all())


def xavier_bound(prompt_len: int, d_model: int) -> float:
    """Uniform init bound sqrt(6 / (fan_in + fan_out)) with fans (L, d_model)."""
    return math.sqrt(6.0 / (prompt_len + d_model))


def init_prompts(config: EncoderConfig, seed: int, text_std: float = DEFAULT_TEXT_STD) -> PromptSet:
    """Gaussian(0, text_std^2) text prompt, Xavier-uniform visual prompt.

    One SplitMix64 stream seeded with ``seed``; text entries are drawn first,
    then visual entries, row-major.
    """
    L, d = config.prompt_len, config.d_model
    stream = SplitMix64(seed)
    text = np.array([stream.next_gaussian() * text_std for _ in range(L * d)]).reshape(L, d)
    a = xavier_bound(L, d)
    visual = np.array([stream.next_uniform(-a, a) for _ in range(L * d)]).reshape(L, d)
    return PromptSet(Tensor(text, requires_grad=True), Tensor(visual, requires_grad=True))


def save_prompts(prompts: PromptSet, path) -> None:
    L, d = prompts.text.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(f"{L} {d}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(prompts.text.data, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(prompts.visual.data, dtype="<f8").tobytes())


def load_prompts(path) -> PromptSet:
    with open(path, "rb") as fh:
        blob = fh.read()

    first = blob.find(b"\n")
    if first < 0 or blob[:first] != MAGIC:
        raise PromptParseError("bad or missing magic string", 0)
    second = blob.find(b"\n", first + 1)
    if second < 0:
        raise PromptParseError("missing dimension line", first + 1)
    try:
        L, d = (int(tok) for tok in blob[first + 1:second].split())
    except ValueError:
        raise PromptParseError("unreadable dimensions", first + 1) from None
    if L < 1 or d < 1:
        raise PromptParseError(f"invalid dimensions {L}x{d}", first + 1)

    payload = blob[second + 1:]
    row_bytes = d * 8
    if len(payload) % row_bytes != 0:
        raise PromptParseError(
            f"payload is not a whole number of {d}-wide rows", second + 1 + len(payload)
        )
    rows = len(payload) // row_bytes
    if rows != 2 * L:
        raise PromptFormatError(
            f"header promises {2 * L} rows ({L} text + {L} visual), payload holds {rows}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    text = flat[: L * d].reshape(L, d).copy()
    visual = flat[L * d:].reshape(L, d).copy()
    return PromptSet(Tensor(text, requires_grad=True), Tensor(visual, requires_grad=True))
