"""Accuracy, whole-string next-char accuracy, macro F-1 and seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from .data import SPLITS, DatasetBundle, Example
from .languages import Family, LanguageSpec, Task
from .model import khot, predict


def _require(examples: Sequence[Example]) -> None:
    if not examples:
        raise ValueError("accuracy is undefined on an empty set")


def classify_accuracy(model, examples: Sequence[Example]) -> float:
    _require(examples)
    preds = predict(model, [e.s for e in examples])
    return sum(int(p == e.label) for p, e in zip(preds, examples)) / len(examples)


def _khot_hits(model, examples):
    preds = predict(model, [e.s for e in examples])
    vocab = model.config.vocab
    for pred, ex in zip(preds, examples):
        yield (pred == khot(ex.targets, vocab).bool()).all(-1)


def nextchar_accuracy(model, examples: Sequence[Example]) -> float:
    """Fraction of strings whose every predicted k-hot vector is exactly right."""
    _require(examples)
    return sum(int(hit.all()) for hit in _khot_hits(model, examples)) / len(examples)


def position_accuracy(model, examples: Sequence[Example]) -> float:
    _require(examples)
    hits = torch.cat(list(_khot_hits(model, examples)))
    return hits.float().mean().item()


def macro_f1(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Unweighted mean of the class-0 and class-1 F-1; an absent class scores 0."""
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    scores = []
    for c in (0, 1):
        tp = sum(1 for p, y in zip(predictions, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(predictions, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(predictions, labels) if p != c and y == c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return sum(scores) / 2


def metric_name(spec: LanguageSpec) -> str:
    if spec.task is Task.NEXTCHAR:
        return "nextchar_accuracy"
    return "macro_f1" if spec.family is Family.SCRAMBLE else "accuracy"


def split_metric(model, spec: LanguageSpec, examples: Sequence[Example]) -> float:
    name = metric_name(spec)
    if name == "nextchar_accuracy":
        return nextchar_accuracy(model, examples)
    if name == "accuracy":
        return classify_accuracy(model, examples)
    _require(examples)
    preds = predict(model, [e.s for e in examples])
    return macro_f1(preds, [e.label for e in examples])


def evaluate_suite(model, bundle: DatasetBundle, splits: Sequence[str] = ("test", "ood1", "ood2")) -> dict:
    """Metric per split (None for empty splits)."""
    spec = bundle.spec
    report = {"language": spec.id, "metric": metric_name(spec), "splits": {}}
    for name in splits:
        exs = bundle.splits.get(name, [])
        report["splits"][name] = split_metric(model, spec, exs) if exs else None
    return report


@dataclass
class Aggregate:
    mean: float
    std: float
    n: int

    @property
    def single_seed(self) -> bool:
        return self.n == 1

    def format(self, scale: float = 100.0) -> str:
        text = f"{self.mean * scale:.1f} ± {self.std * scale:.1f}"
        return text + " (single seed)" if self.single_seed else text


def mean_std(values: Sequence[float]) -> Aggregate:
    """Mean and population standard deviation."""
    if not values:
        raise ValueError("nothing to aggregate")
    mu = math.fsum(values) / len(values)
    var = math.fsum((v - mu) ** 2 for v in values) / len(values)
    return Aggregate(mu, math.sqrt(var), len(values))


def aggregate(reports: Sequence[dict]) -> dict:
    if not reports:
        raise ValueError("nothing to aggregate")
    languages = {r["language"] for r in reports}
    if len(languages) > 1:
        raise ValueError(f"cannot aggregate runs over different languages: {sorted(languages)}")
    out = {}
    for name in SPLITS:
        vals = [r["splits"][name] for r in reports if r["splits"].get(name) is not None]
        if vals:
            out[name] = mean_std(sorted(vals))
    return out


def format_table(rows: dict[str, dict[str, Aggregate]], splits=("test", "ood1", "ood2")) -> str:
    """``rows`` maps a row label (e.g. 'Tr.-PE') to per-split aggregates."""
    header = ["model"] + list(splits)
    lines = [header]
    for label, aggs in rows.items():
        lines.append([label] + [aggs[s].format() if s in aggs else "—" for s in splits])
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in lines)
