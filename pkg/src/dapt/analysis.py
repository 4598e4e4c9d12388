"""Classification evaluation and embedding-geometry analysis.

Everything here is read-only: embeddings are computed from detached prompt
copies so no gradient graph is ever recorded, and the outputs are plain
floats, dicts, and CSV/JSON files for downstream tools.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .data import Split
from .encoders import FrozenEncoderPair, encode_image, encode_text
from .errors import ContractError
from .prompts import PromptSet


def _const(prompt: Tensor | None) -> Tensor | None:
    return None if prompt is None else prompt.detach()


def text_embedding_matrix(pair: FrozenEncoderPair, classes: Sequence[int],
                          text_prompt: Tensor | None = None) -> np.ndarray:
    prompt = _const(text_prompt)
    return np.stack([encode_text(pair, c, prompt).data for c in classes])


def embed_split(pair: FrozenEncoderPair, split: Split,
                visual_prompt: Tensor | None = None) -> tuple[np.ndarray, list[int]]:
    """Image embeddings for every sample in a split, plus the label list."""
    prompt = _const(visual_prompt)
    embs = np.stack([encode_image(pair, tokens, prompt).data for tokens, _ in split.samples])
    labels = [label for _, label in split.samples]
    return embs, labels


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, float]
    predictions: list[int]
    labels: list[int]


def evaluate(pair: FrozenEncoderPair, split: Split, *, text_prompt: Tensor | None = None,
             visual_prompt: Tensor | None = None, tau: float = 0.07) -> EvalResult:
    """Argmax-cosine classification accuracy over a split.

    The temperature never changes the argmax; it is accepted only so callers
    can pass their training configuration through unchanged.
    """
    if not split.samples:
        raise ContractError("evaluate: empty split")
    del tau  # monotone rescaling cannot change an argmax
    w = text_embedding_matrix(pair, split.classes, text_prompt)
    z, labels = embed_split(pair, split, visual_prompt)
    picks = np.argmax(z @ w.T, axis=1)
    predictions = [split.classes[int(i)] for i in picks]
    hits: dict[int, int] = {c: 0 for c in split.classes}
    totals: dict[int, int] = {c: 0 for c in split.classes}
    correct = 0
    for pred, truth in zip(predictions, labels):
        totals[truth] += 1
        if pred == truth:
            hits[truth] += 1
            correct += 1
    per_class = {c: hits[c] / totals[c] for c in split.classes if totals[c]}
    return EvalResult(
        accuracy=correct / len(labels),
        per_class=per_class,
        predictions=predictions,
        labels=labels,
    )


def harmonic_mean(base_acc: float, new_acc: float) -> float:
    """2bn/(b+n); defined as 0 when both accuracies are 0."""
    for name, v in (("base_acc", base_acc), ("new_acc", new_acc)):
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"harmonic_mean: {name}={v} outside [0, 1]")
    if base_acc == 0.0 and new_acc == 0.0:
        return 0.0
    return 2.0 * base_acc * new_acc / (base_acc + new_acc)


@dataclass
class PdistStats:
    per_class: dict[int, float]
    skipped: list[int]
    within_mean: float | None
    cross_class_mean: float | None


def pairwise_distance_stats(embeddings: np.ndarray, labels: Sequence[int]) -> PdistStats:
    """Mean pairwise Euclidean distances, within each class and across classes.

    Unordered pairs throughout; classes with fewer than two points are skipped
    and reported rather than raising, so 1-shot evaluation paths stay alive.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    classes = sorted(set(labels))
    by_class = {c: [i for i, y in enumerate(labels) if y == c] for c in classes}

    per_class: dict[int, float] = {}
    skipped: list[int] = []
    for c in classes:
        idx = by_class[c]
        if len(idx) < 2:
            skipped.append(c)
            continue
        total, count = 0.0, 0
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                diff = emb[idx[a]] - emb[idx[b]]
                total += math.sqrt(float(diff @ diff))
                count += 1
        per_class[c] = total / count

    cross_total, cross_count = 0.0, 0
    n = len(labels)
    for a in range(n):
        for b in range(a + 1, n):
            if labels[a] != labels[b]:
                diff = emb[a] - emb[b]
                cross_total += math.sqrt(float(diff @ diff))
                cross_count += 1

    return PdistStats(
        per_class=per_class,
        skipped=skipped,
        within_mean=(sum(per_class.values()) / len(per_class)) if per_class else None,
        cross_class_mean=(cross_total / cross_count) if cross_count else None,
    )


def delta_pdist(method_pdist: float, zeroshot_pdist: float) -> float:
    """(1 - method/zero-shot) * 100; positive means contraction."""
    if zeroshot_pdist == 0.0:
        raise ContractError("delta_pdist: zero-shot pairwise distance is 0, ratio undefined")
    return (1.0 - method_pdist / zeroshot_pdist) * 100.0


def delta_pdist_by_class(method: PdistStats, zeroshot: PdistStats) -> tuple[dict[int, float], float | None]:
    """Per-class contraction percentages and their mean, over shared classes."""
    shared = sorted(set(method.per_class) & set(zeroshot.per_class))
    deltas = {c: delta_pdist(method.per_class[c], zeroshot.per_class[c]) for c in shared}
    mean = (sum(deltas.values()) / len(deltas)) if deltas else None
    return deltas, mean


# ---------------------------------------------------------------------------
# convex hulls on the top-2 principal plane


def pca_project_2d(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top-2 covariance eigenvectors.

    Signs are fixed so each component's first entry above 1e-12 in magnitude
    is positive, making the projection deterministic across runs.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    center = x - x.mean(axis=0)
    cov = center.T @ center / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    comps = eigvecs[:, np.argsort(eigvals)[::-1][:2]].T
    fixed = []
    for v in comps:
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0:
            v = -v
        fixed.append(v)
    comps = np.stack(fixed)
    return center @ comps.T, comps


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull vertices in counter-clockwise order (Andrew's monotone chain)."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)
    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def shoelace_area(polygon: np.ndarray) -> float:
    if polygon.shape[0] < 3:
        return 0.0
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass
class HullResult:
    areas: dict[int, float]
    degenerate: list[int]
    projection: np.ndarray
    components: np.ndarray
    hulls: dict[int, np.ndarray] = field(default_factory=dict)


def convex_hull_area(embeddings: np.ndarray, labels: Sequence[int]) -> HullResult:
    """Per-class convex-hull areas on the shared top-2 principal plane.

    Classes whose projected points are fewer than three or collinear get area
    0 and a degenerate flag.
    """
    projection, components = pca_project_2d(embeddings)
    labels = list(labels)
    areas: dict[int, float] = {}
    degenerate: list[int] = []
    hulls: dict[int, np.ndarray] = {}
    for c in sorted(set(labels)):
        pts = projection[[i for i, y in enumerate(labels) if y == c]]
        hull = monotone_chain_hull(pts)
        area = shoelace_area(hull)
        areas[c] = area
        hulls[c] = hull
        if area == 0.0:
            degenerate.append(c)
    return HullResult(areas=areas, degenerate=degenerate, projection=projection,
                      components=components, hulls=hulls)


# ---------------------------------------------------------------------------
# embedding export


def export_embeddings(pair: FrozenEncoderPair, split: Split, path, *,
                      text_prompt: Tensor | None = None,
                      visual_prompt: Tensor | None = None) -> None:
    """CSV of image embeddings: header label,e0,...,e{d-1}, exact float64 text."""
    del text_prompt  # image rows only; text embeddings are one per class, not per sample
    z, labels = embed_split(pair, split, visual_prompt)
    d = z.shape[1]
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("label," + ",".join(f"e{i}" for i in range(d)) + "\n")
            for row, label in zip(z, labels):
                fh.write(str(label) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    except OSError as err:
        raise OSError(f"export_embeddings: cannot write {path}: {err}") from err


def import_embeddings(path) -> tuple[np.ndarray, list[int]]:
    with open(path, encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("label,"):
            raise ContractError(f"{path}: missing embedding CSV header")
        rows, labels = [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    return np.array(rows, dtype=np.float64), labels


# ---------------------------------------------------------------------------
# aggregated report


@dataclass
class ExperimentReport:
    """Aggregated metrics for one experiment; JSON field order is fixed."""

    mode: str
    seeds: list[int]
    seed_accuracies: list[float]
    accuracy_mean: float
    accuracy_std: float
    zero_shot_accuracies: list[float] | None = None
    zero_shot_mean: float | None = None
    per_class_accuracy: dict[int, float] | None = None
    base_acc: float | None = None
    new_acc: float | None = None
    harmonic_mean: float | None = None
    delta_pdist_per_class: dict[int, float] | None = None
    delta_pdist_mean: float | None = None
    text_pdist: float | None = None
    zero_shot_text_pdist: float | None = None
    hull_areas: dict[int, float] | None = None
    degenerate_hulls: list[int] | None = None

    def to_dict(self) -> dict:
        def keyed(d):
            return None if d is None else {str(k): v for k, v in d.items()}

        return {
            "mode": self.mode,
            "seeds": list(self.seeds),
            "seed_accuracies": list(self.seed_accuracies),
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "zero_shot_accuracies": self.zero_shot_accuracies,
            "zero_shot_mean": self.zero_shot_mean,
            "per_class_accuracy": keyed(self.per_class_accuracy),
            "base_acc": self.base_acc,
            "new_acc": self.new_acc,
            "harmonic_mean": self.harmonic_mean,
            "delta_pdist_per_class": keyed(self.delta_pdist_per_class),
            "delta_pdist_mean": self.delta_pdist_mean,
            "text_pdist": self.text_pdist,
            "zero_shot_text_pdist": self.zero_shot_text_pdist,
            "hull_areas": keyed(self.hull_areas),
            "degenerate_hulls": self.degenerate_hulls,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def population_std(values: Sequence[float]) -> float:
    vals = list(values)
    mean = sum(vals) / len(vals)
    return math.sqrt(sum((v - mean) ** 2 for v in vals) / len(vals))


def prompt_args_for_mode(mode: str, prompts: PromptSet | None) -> dict:
    """Which prompt tensors a mode applies at evaluation time."""
    if prompts is None or mode == "zero-shot":
        return {"text_prompt": None, "visual_prompt": None}
    if mode == "text-only":
        return {"text_prompt": prompts.text, "visual_prompt": None}
    if mode == "visual-only":
        return {"text_prompt": None, "visual_prompt": prompts.visual}
    return {"text_prompt": prompts.text, "visual_prompt": prompts.visual}
