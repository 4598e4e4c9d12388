"""Command-line front door for reproducible experiments.

Commands: train, eval, analyze, grid-lr, grid-beta, base2new,
export-embeddings.  Every command resolves a JSON experiment config, prints
the seed set and mode it will use, and writes its outputs (JSON reports,
delimited tables, prompt files, and figures) into the output directory.

Exit codes: 0 success, 1 configuration problem, 2 numerical abort during
training.  Verbosity comes from the DAPT_LOG environment variable (quiet,
info, or debug); timing lines go to run.log so the JSON artifacts stay
byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import figures
from .analysis import (
    ExperimentReport,
    convex_hull_area,
    delta_pdist_by_class,
    embed_split,
    evaluate,
    export_embeddings,
    pairwise_distance_stats,
    prompt_args_for_mode,
    text_embedding_matrix,
)
from .config import ExperimentConfig, load_experiment_config
from .data import generate_dataset, sample_k_shot
from .encoders import build_encoders
from .errors import DaptError, NumericalError
from .prompts import load_prompts, save_prompts
from .trainer import BETA_GRID, LR_GRID, base_to_new, beta_sweep, lr_grid_search, multi_seed_run

_LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level_name = os.environ.get("DAPT_LOG", "info").lower()
    if level_name not in _LOG_LEVELS:
        level_name = "info"
    logging.basicConfig(level=_LOG_LEVELS[level_name],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_experiment_config(args.config)
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seeds=seeds))
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"seeds={list(cfg.train.seeds)} mode={cfg.train.mode}")
    return cfg, out_dir


def _build(cfg: ExperimentConfig):
    dataset = generate_dataset(cfg.dataset.num_classes, cfg.encoder.n_patches,
                               cfg.encoder.d_model, cfg.dataset.per_class,
                               cfg.dataset.noise_sigma, cfg.dataset.seed)
    pair = build_encoders(cfg.encoder, cfg.dataset.num_classes)
    return dataset, pair


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_prompts_arg(args):
    return load_prompts(args.prompts) if args.prompts else None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    result = multi_seed_run(cfg.train, pair, dataset)

    traces_by_seed = {}
    for run in result.runs:
        save_prompts(run.trace.prompts, out_dir / f"prompts_seed{run.seed}.dapt")
        run.trace.to_jsonl(out_dir / f"trace_seed{run.seed}.jsonl")
        traces_by_seed[run.seed] = run.trace

    report = ExperimentReport(
        mode=cfg.train.mode,
        seeds=list(cfg.train.seeds),
        seed_accuracies=[r.accuracy for r in result.runs],
        accuracy_mean=result.mean_accuracy,
        accuracy_std=result.std_accuracy,
        zero_shot_accuracies=[r.zero_shot_accuracy for r in result.runs],
        zero_shot_mean=result.mean_zero_shot,
        per_class_accuracy=result.runs[0].per_class,
    )
    _write_json(out_dir / "report.json", {"config": cfg.echo(), **report.to_dict()})

    with open(out_dir / "metrics.csv", "w", encoding="ascii") as fh:
        fh.write("seed,accuracy,zero_shot_accuracy,final_l_total\n")
        for run in result.runs:
            final = repr(run.trace.steps[-1].l_total) if run.trace.steps else ""
            fh.write(f"{run.seed},{run.accuracy!r},{run.zero_shot_accuracy!r},{final}\n")

    if cfg.analysis.figures and any(t.steps for t in traces_by_seed.values()):
        figures.save_loss_curves(traces_by_seed, out_dir / "loss_curves.png")

    with open(out_dir / "run.log", "w", encoding="ascii") as fh:
        for run in result.runs:
            fh.write(f"seed {run.seed}: wall_clock_s={run.trace.wall_clock_s:.3f}\n")

    print(f"mean accuracy {result.mean_accuracy:.4f} +/- {result.std_accuracy:.4f} "
          f"(zero-shot {result.mean_zero_shot:.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    _, test_split = sample_k_shot(dataset, cfg.train.shots, sampling_seed=cfg.train.seeds[0])
    prompt_args = prompt_args_for_mode(cfg.train.mode, _load_prompts_arg(args))
    result = evaluate(pair, test_split, tau=cfg.train.weights.tau, **prompt_args)
    _write_json(out_dir / "eval_report.json", {
        "config": cfg.echo(),
        "prompt_file": bool(args.prompts),
        "accuracy": result.accuracy,
        "per_class_accuracy": {str(k): v for k, v in result.per_class.items()},
    })
    print(f"accuracy {result.accuracy:.4f}")
    return 0


def cmd_analyze(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    _, test_split = sample_k_shot(dataset, cfg.train.shots, sampling_seed=cfg.train.seeds[0])
    prompt_args = prompt_args_for_mode(cfg.train.mode, _load_prompts_arg(args))

    z_tuned, labels = embed_split(pair, test_split, prompt_args["visual_prompt"])
    z_zero, _ = embed_split(pair, test_split, None)
    w_tuned = text_embedding_matrix(pair, test_split.classes, prompt_args["text_prompt"])
    w_zero = text_embedding_matrix(pair, test_split.classes, None)

    doc: dict = {"config": cfg.echo()}
    if cfg.analysis.pdist:
        tuned_stats = pairwise_distance_stats(z_tuned, labels)
        zero_stats = pairwise_distance_stats(z_zero, labels)
        deltas, delta_mean = delta_pdist_by_class(tuned_stats, zero_stats)
        text_stats = pairwise_distance_stats(w_tuned, list(test_split.classes))
        text_zero_stats = pairwise_distance_stats(w_zero, list(test_split.classes))
        doc.update({
            "image_pdist_per_class": {str(k): v for k, v in tuned_stats.per_class.items()},
            "zero_shot_image_pdist_per_class": {str(k): v for k, v in zero_stats.per_class.items()},
            "delta_pdist_per_class": {str(k): v for k, v in deltas.items()},
            "delta_pdist_mean": delta_mean,
            "pdist_skipped_classes": tuned_stats.skipped,
            "text_pdist": text_stats.cross_class_mean,
            "zero_shot_text_pdist": text_zero_stats.cross_class_mean,
        })
    if cfg.analysis.hull:
        hull = convex_hull_area(z_tuned, labels)
        doc.update({
            "hull_areas": {str(k): v for k, v in hull.areas.items()},
            "degenerate_hulls": hull.degenerate,
        })
        if cfg.analysis.figures:
            figures.save_projection(hull, labels, out_dir / "projection.png")
    if cfg.analysis.export_embeddings:
        export_embeddings(pair, test_split, out_dir / "embeddings_tuned.csv",
                          visual_prompt=prompt_args["visual_prompt"])
        export_embeddings(pair, test_split, out_dir / "embeddings_zero_shot.csv")
    _write_json(out_dir / "analysis.json", doc)
    print(f"analysis written to {out_dir / 'analysis.json'}")
    return 0


def cmd_grid_lr(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    result = lr_grid_search(cfg.train, pair, dataset, LR_GRID)
    _write_json(out_dir / "grid_lr.json", {
        "config": cfg.echo(),
        "grid": list(LR_GRID),
        "rows": [{"lr": lr, "accuracy_mean": m, "accuracy_std": s} for lr, m, s in result.rows],
        "best_lr": result.best_lr,
    })
    with open(out_dir / "grid_lr.csv", "w", encoding="ascii") as fh:
        fh.write("lr,accuracy_mean,accuracy_std\n")
        for lr, m, s in result.rows:
            fh.write(f"{lr!r},{m!r},{s!r}\n")
    if cfg.analysis.figures:
        figures.save_lr_curve(result.rows, result.best_lr, out_dir / "grid_lr.png")
    print(f"best lr {result.best_lr:g}")
    return 0


def cmd_grid_beta(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    result = beta_sweep(cfg.train, pair, dataset, BETA_GRID, BETA_GRID)
    _write_json(out_dir / "grid_beta.json", {
        "config": cfg.echo(),
        "beta_t_grid": list(result.beta_t_grid),
        "beta_v_grid": list(result.beta_v_grid),
        "accuracy_mean": result.mean,
        "accuracy_std": result.std,
    })
    with open(out_dir / "grid_beta.csv", "w", encoding="ascii") as fh:
        fh.write("beta_t,beta_v,accuracy_mean,accuracy_std\n")
        for i, bt in enumerate(result.beta_t_grid):
            for j, bv in enumerate(result.beta_v_grid):
                fh.write(f"{bt!r},{bv!r},{result.mean[i][j]!r},{result.std[i][j]!r}\n")
    if cfg.analysis.figures:
        figures.save_beta_heatmap(result, out_dir / "grid_beta.png")
    print("beta sweep done")
    return 0


def cmd_base2new(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    result = base_to_new(cfg.train, pair, dataset)
    _write_json(out_dir / "base2new.json", {
        "config": cfg.echo(),
        "per_seed": [
            {"base_acc": b, "new_acc": n, "harmonic_mean": h} for b, n, h in result.per_seed
        ],
        "base_acc": result.base_mean,
        "new_acc": result.new_mean,
        "harmonic_mean": result.harmonic_mean_of_means,
        "base_std": result.base_std,
        "new_std": result.new_std,
    })
    if cfg.analysis.figures:
        figures.save_base_new(result, out_dir / "base2new.png")
    print(f"base {result.base_mean:.4f} new {result.new_mean:.4f} "
          f"harmonic {result.harmonic_mean_of_means:.4f}")
    return 0


def cmd_export(args) -> int:
    cfg, out_dir = _resolve(args)
    dataset, pair = _build(cfg)
    _, test_split = sample_k_shot(dataset, cfg.train.shots, sampling_seed=cfg.train.seeds[0])
    prompt_args = prompt_args_for_mode(cfg.train.mode, _load_prompts_arg(args))
    csv_path = Path(args.csv) if args.csv else out_dir / "embeddings.csv"
    export_embeddings(pair, test_split, csv_path, visual_prompt=prompt_args["visual_prompt"])
    print(f"embeddings written to {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _add_common(sub, prompts: bool = False, csv: bool = False):
    sub.add_argument("--config", required=True, help="experiment config JSON")
    sub.add_argument("--out", help="output directory (overrides config output_dir)")
    sub.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
    if prompts:
        sub.add_argument("--prompts", help="trained prompt file; omit for zero-shot encoders")
    if csv:
        sub.add_argument("--csv", help="embedding CSV path (default <out>/embeddings.csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dapt",
                                     description="prompt tuning experiments over frozen mini encoders")
    subs = parser.add_subparsers(dest="command", required=True)

    _add_common(subs.add_parser("train", help="train prompts and write reports"))
    _add_common(subs.add_parser("eval", help="classification accuracy on the test split"),
                prompts=True)
    _add_common(subs.add_parser("analyze", help="embedding-geometry analysis"), prompts=True)
    _add_common(subs.add_parser("grid-lr", help="learning-rate grid search"))
    _add_common(subs.add_parser("grid-beta", help="dispersion-weight sweep"))
    _add_common(subs.add_parser("base2new", help="base-to-new generalization protocol"))
    _add_common(subs.add_parser("export-embeddings", help="write embedding CSV"),
                prompts=True, csv=True)
    return parser


_DISPATCH = {
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "grid-lr": cmd_grid_lr,
    "grid-beta": cmd_grid_beta,
    "base2new": cmd_base2new,
    "export-embeddings": cmd_export,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except NumericalError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 2
    except (DaptError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main_entry() -> None:
    raise SystemExit(main())
