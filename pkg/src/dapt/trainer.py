"""Prompt optimization loop and the experiment protocols built on it.

One training run: compute unprompted image embeddings and per-class
prototypes (or single random-sample prototypes in dapt-r mode), then for
every epoch shuffle the train split and, per minibatch, forward the prompted
embeddings, combine the contrastive and dispersion losses, backpropagate,
and take a plain SGD step on the prompt tensors the mode allows to move.
Everything is a pure function of (config, dataset, seeds).

Seed derivation inside a run with seed s: prompt init uses s directly; the
epoch shuffle stream is SplitMix64(s ^ SHUFFLE_SALT); dapt-r prototype picks
come from SplitMix64(s ^ PROTO_SALT), a stream of their own so that runs
which never draw from it (dapt with one shot) stay bit-identical to dapt-r.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .analysis import evaluate, harmonic_mean, population_std, prompt_args_for_mode
from .data import FewShotDataset, Split, base_new_split, sample_k_shot
from .encoders import FrozenEncoderPair, encode_image, encode_text
from .errors import ConfigError, ContractError, TrainingAbort
from .losses import (
    LossWeights,
    clip_loss,
    compute_prototypes,
    inter_dispersion_loss,
    intra_dispersion_loss,
    random_prototypes,
    total_loss,
)
from .prompts import PromptSet, init_prompts
from .rng import MASK64, SplitMix64

log = logging.getLogger("dapt.trainer")

MODES = ("dapt", "dapt-r", "text-only", "visual-only", "joint-no-dispersion", "zero-shot")
LR_GRID = (0.002, 0.02, 0.2, 2.0, 20.0)
BETA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_BATCH = 4

SHUFFLE_SALT = 0x9D2C5680E94F86D3
PROTO_SALT = 0xD1B54A32D192ED03


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights
    learning_rate: float = 0.2
    epochs: int = 50
    batch_size: int | None = None
    shots: int = 16
    seeds: tuple[int, ...] = (0, 1, 2)
    mode: str = "dapt"
    prototype_renormalize: bool = False
    prototype_refresh: bool = False
    text_std: float = 0.02

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.mode == "text-only" and self.weights.beta_v != 0:
            raise ConfigError("text-only mode requires beta_v = 0")
        if self.mode == "visual-only" and self.weights.beta_t != 0:
            raise ConfigError("visual-only mode requires beta_t = 0")
        if self.mode == "joint-no-dispersion" and (self.weights.beta_t != 0 or self.weights.beta_v != 0):
            raise ConfigError("joint-no-dispersion mode requires beta_t = beta_v = 0")

    def resolve_batch(self, n_train: int) -> int:
        # Small default batch on purpose: the intra term is a batch sum while
        # the contrastive gradient carries a 1/(B*tau) factor, so large
        # batches let the anchoring term drown the alignment signal.
        b = self.batch_size if self.batch_size is not None else min(DEFAULT_BATCH, n_train)
        if not 1 <= b <= n_train:
            raise ConfigError(f"batch_size {b} outside [1, {n_train}]")
        return b

    @property
    def uses_text_prompt(self) -> bool:
        return self.mode in ("dapt", "dapt-r", "text-only", "joint-no-dispersion")

    @property
    def uses_visual_prompt(self) -> bool:
        return self.mode in ("dapt", "dapt-r", "visual-only", "joint-no-dispersion")


@dataclass(frozen=True)
class StepRecord:
    step: int
    l_clip: float
    l_inter: float
    l_intra: float
    l_total: float


@dataclass
class TrainTrace:
    steps: list[StepRecord]
    prompts: PromptSet
    wall_clock_s: float
    steps_per_epoch: int

    def epoch_mean_total(self, epoch: int) -> float:
        lo = epoch * self.steps_per_epoch
        chunk = self.steps[lo:lo + self.steps_per_epoch]
        if not chunk:
            raise ContractError(f"no steps recorded for epoch {epoch}")
        return sum(r.l_total for r in chunk) / len(chunk)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for r in self.steps:
                fh.write(json.dumps({
                    "step": r.step,
                    "l_clip": r.l_clip,
                    "l_inter": r.l_inter,
                    "l_intra": r.l_intra,
                    "l_total": r.l_total,
                }) + "\n")


def sgd_step(prompts: PromptSet, learning_rate: float) -> None:
    """theta <- theta - lr * grad on both prompt tensors, then clear grads."""
    for name, t in (("text", prompts.text), ("visual", prompts.visual)):
        if t.grad is None:
            raise ContractError(f"sgd_step: {name} prompt has no gradient")
    for t in (prompts.text, prompts.visual):
        t.data -= learning_rate * t.grad
        t.zero_grad()


def _update_tensor(t, learning_rate: float) -> None:
    if t.grad is not None:
        t.data -= learning_rate * t.grad
        t.zero_grad()


def train(cfg: TrainConfig, pair: FrozenEncoderPair, train_split: Split, *, seed: int) -> TrainTrace:
    """Run the optimization loop for one seed and return its trace."""
    t0 = time.perf_counter()
    prompts = init_prompts(pair.config, seed, text_std=cfg.text_std)
    if cfg.mode == "zero-shot":
        return TrainTrace([], prompts, time.perf_counter() - t0, 0)

    n = len(train_split.samples)
    batch = cfg.resolve_batch(n)
    classes = train_split.classes
    positions = {c: i for i, c in enumerate(classes)}
    labels_pos = [positions[label] for _, label in train_split.samples]

    if cfg.mode == "dapt-r":
        proto_stream = SplitMix64((seed ^ PROTO_SALT) & MASK64)
        proto = random_prototypes(pair, train_split, proto_stream)
    else:
        proto = compute_prototypes(pair, train_split, renormalize=cfg.prototype_renormalize)

    shuffle_stream = SplitMix64((seed ^ SHUFFLE_SALT) & MASK64)
    text_arg = prompts.text if cfg.uses_text_prompt else None
    visual_arg = prompts.visual if cfg.uses_visual_prompt else None

    records: list[StepRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        if cfg.prototype_refresh and epoch > 0 and cfg.mode != "dapt-r":
            snapshot = visual_arg.detach() if visual_arg is not None else None
            proto = compute_prototypes(pair, train_split,
                                       renormalize=cfg.prototype_renormalize,
                                       visual_prompt=snapshot)
        order = list(range(n))
        shuffle_stream.shuffle(order)
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            w_rows = [encode_text(pair, c, text_arg) for c in classes]
            w = ad.stack_rows(w_rows)
            z_rows = [encode_image(pair, train_split.samples[i][0], visual_arg) for i in idx]
            z = ad.stack_rows(z_rows)
            y = [labels_pos[i] for i in idx]

            l_clip = clip_loss(z, w, y, cfg.weights.tau)
            l_inter = inter_dispersion_loss(w, cfg.weights.kernel_scale)
            l_intra = intra_dispersion_loss(z, y, proto)
            l_total = total_loss(l_clip, l_inter, l_intra, cfg.weights)
            for name, tensor in (("l_clip", l_clip), ("l_inter", l_inter),
                                 ("l_intra", l_intra), ("l_total", l_total)):
                if not math.isfinite(float(tensor.data)):
                    raise TrainingAbort(step, name)

            ad.backward(l_total)
            if cfg.uses_text_prompt:
                _update_tensor(prompts.text, cfg.learning_rate)
            if cfg.uses_visual_prompt:
                _update_tensor(prompts.visual, cfg.learning_rate)
            if not prompts.finite():
                raise TrainingAbort(step, "prompts")

            records.append(StepRecord(step, float(l_clip.data), float(l_inter.data),
                                      float(l_intra.data), float(l_total.data)))
            step += 1
        log.debug("epoch %d done, last l_total=%.6f", epoch, records[-1].l_total)

    return TrainTrace(records, prompts, time.perf_counter() - t0,
                      steps_per_epoch=math.ceil(n / batch))


# ---------------------------------------------------------------------------
# protocols


@dataclass
class RunResult:
    seed: int
    trace: TrainTrace
    accuracy: float
    zero_shot_accuracy: float
    per_class: dict[int, float]
    train_split: Split
    test_split: Split


@dataclass
class MultiSeedResult:
    runs: list[RunResult]
    mean_accuracy: float
    std_accuracy: float
    mean_zero_shot: float
    std_zero_shot: float


def multi_seed_run(cfg: TrainConfig, pair: FrozenEncoderPair,
                   dataset: FewShotDataset) -> MultiSeedResult:
    """Resample, retrain, and evaluate once per seed; aggregate mean and std."""
    runs = []
    for seed in cfg.seeds:
        train_split, test_split = sample_k_shot(dataset, cfg.shots, sampling_seed=seed)
        trace = train(cfg, pair, train_split, seed=seed)
        result = evaluate(pair, test_split, tau=cfg.weights.tau,
                          **prompt_args_for_mode(cfg.mode, trace.prompts))
        zero_shot = evaluate(pair, test_split, tau=cfg.weights.tau)
        runs.append(RunResult(seed=seed, trace=trace, accuracy=result.accuracy,
                              zero_shot_accuracy=zero_shot.accuracy,
                              per_class=result.per_class,
                              train_split=train_split, test_split=test_split))
        log.info("seed %d: accuracy %.4f (zero-shot %.4f)", seed, result.accuracy,
                 zero_shot.accuracy)
    accs = [r.accuracy for r in runs]
    zs = [r.zero_shot_accuracy for r in runs]
    return MultiSeedResult(
        runs=runs,
        mean_accuracy=sum(accs) / len(accs),
        std_accuracy=population_std(accs),
        mean_zero_shot=sum(zs) / len(zs),
        std_zero_shot=population_std(zs),
    )


def _annotate(err: Exception, note: str) -> None:
    err.args = (f"{note}: {err.args[0] if err.args else ''}",) + err.args[1:]


@dataclass
class LrGridResult:
    rows: list[tuple[float, float, float]]  # (lr, mean accuracy, std)
    best_lr: float


def lr_grid_search(cfg: TrainConfig, pair: FrozenEncoderPair, dataset: FewShotDataset,
                   grid: tuple[float, ...] = LR_GRID) -> LrGridResult:
    """Seed-averaged accuracy per learning rate; ties break toward the smaller lr."""
    if not grid:
        raise ConfigError("lr_grid_search: empty grid")
    rows = []
    for lr in grid:
        try:
            res = multi_seed_run(replace(cfg, learning_rate=lr), pair, dataset)
        except Exception as err:
            _annotate(err, f"lr={lr}")
            raise
        rows.append((lr, res.mean_accuracy, res.std_accuracy))
        log.info("lr %g: mean accuracy %.4f", lr, res.mean_accuracy)
    best_lr = min(rows, key=lambda r: (-r[1], r[0]))[0]
    return LrGridResult(rows=rows, best_lr=best_lr)


@dataclass
class BetaSweepResult:
    beta_t_grid: tuple[float, ...]
    beta_v_grid: tuple[float, ...]
    mean: list[list[float]]
    std: list[list[float]]


def beta_sweep(cfg: TrainConfig, pair: FrozenEncoderPair, dataset: FewShotDataset,
               beta_t_grid: tuple[float, ...] = BETA_GRID,
               beta_v_grid: tuple[float, ...] = BETA_GRID) -> BetaSweepResult:
    """Full-factorial seed-averaged accuracy over the dispersion weights."""
    if not beta_t_grid or not beta_v_grid:
        raise ConfigError("beta_sweep: empty grid")
    mean = []
    std = []
    for bt in beta_t_grid:
        mean_row, std_row = [], []
        for bv in beta_v_grid:
            weights = replace(cfg.weights, beta_t=bt, beta_v=bv)
            try:
                res = multi_seed_run(replace(cfg, weights=weights), pair, dataset)
            except Exception as err:
                _annotate(err, f"beta_t={bt}, beta_v={bv}")
                raise
            mean_row.append(res.mean_accuracy)
            std_row.append(res.std_accuracy)
        mean.append(mean_row)
        std.append(std_row)
    return BetaSweepResult(beta_t_grid=tuple(beta_t_grid), beta_v_grid=tuple(beta_v_grid),
                           mean=mean, std=std)


@dataclass
class BaseNewResult:
    per_seed: list[tuple[float, float, float]]  # (base_acc, new_acc, harmonic mean)
    base_mean: float
    new_mean: float
    harmonic_mean_of_means: float
    base_std: float
    new_std: float


def base_to_new(cfg: TrainConfig, pair: FrozenEncoderPair,
                dataset: FewShotDataset) -> BaseNewResult:
    """Train on the base-class half, evaluate both halves, summarize harmonically."""
    per_seed = []
    for seed in cfg.seeds:
        base_train, base_test, new_test = base_new_split(dataset, cfg.shots, sampling_seed=seed)
        trace = train(cfg, pair, base_train, seed=seed)
        args = prompt_args_for_mode(cfg.mode, trace.prompts)
        base_acc = evaluate(pair, base_test, tau=cfg.weights.tau, **args).accuracy
        new_acc = evaluate(pair, new_test, tau=cfg.weights.tau, **args).accuracy
        per_seed.append((base_acc, new_acc, harmonic_mean(base_acc, new_acc)))
        log.info("seed %d: base %.4f new %.4f", seed, base_acc, new_acc)
    base_accs = [r[0] for r in per_seed]
    new_accs = [r[1] for r in per_seed]
    base_mean = sum(base_accs) / len(base_accs)
    new_mean = sum(new_accs) / len(new_accs)
    return BaseNewResult(
        per_seed=per_seed,
        base_mean=base_mean,
        new_mean=new_mean,
        harmonic_mean_of_means=harmonic_mean(base_mean, new_mean),
        base_std=population_std(base_accs),
        new_std=population_std(new_accs),
    )
