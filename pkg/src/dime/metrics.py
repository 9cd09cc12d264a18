"""Continual-learning accuracy metrics: A_T, mean accuracy, weighted mean, size tiers."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .stream_gen import StreamProtocol

TIERS = ("large", "middle", "small")


@dataclass
class Tally:
    correct: dict[int, int] = field(default_factory=dict)
    total: dict[int, int] = field(default_factory=dict)

    def accuracy(self, classes=None) -> float:
        classes = self.total.keys() if classes is None else classes
        c = sum(self.correct.get(k, 0) for k in classes)
        n = sum(self.total.get(k, 0) for k in classes)
        if n == 0:
            raise ValueError("no evaluated samples")
        return c / n


@dataclass
class StepRecord:
    step_index: int
    accumulated_class_count: int
    accuracy: float
    tally: Tally


@dataclass
class MetricsReport:
    records: list[StepRecord]
    a_final: float
    a_bar: float
    wa_bar: float
    group_accuracies: dict[str, float | None]

    @classmethod
    def from_records(cls, records: list[StepRecord], protocol: StreamProtocol) -> "MetricsReport":
        return cls(
            records=records,
            a_final=records[-1].accuracy,
            a_bar=average_accuracy(records),
            wa_bar=weighted_average_accuracy(records, protocol.step_sizes[: len(records)]),
            group_accuracies=group_by_task_size(records[-1].tally, protocol),
        )


def step_accuracy(predictions) -> tuple[float, Tally]:
    """``predictions`` is an iterable of ``(predicted_id, true_id)`` pairs."""
    correct: dict[int, int] = defaultdict(int)
    total: dict[int, int] = defaultdict(int)
    for pred, true in predictions:
        true = int(true)
        total[true] += 1
        correct[true] += int(int(pred) == true)
    if not total:
        raise ValueError("no predictions to score")
    tally = Tally(dict(sorted(correct.items())), dict(sorted(total.items())))
    return sum(correct.values()) / sum(total.values()), tally


def _accuracies(records) -> np.ndarray:
    return np.array([r.accuracy if isinstance(r, StepRecord) else float(r) for r in records])


def average_accuracy(records) -> float:
    acc = _accuracies(records)
    if acc.size == 0:
        raise ValueError("no records")
    return float(acc.mean())


def step_weights(class_counts) -> np.ndarray:
    """w_t = (classes seen up to t) / (C t / T)."""
    sizes = np.asarray(class_counts, dtype=np.float64)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("class counts must be positive")
    t_steps = sizes.size
    total = sizes.sum()
    t = np.arange(1, t_steps + 1)
    return np.cumsum(sizes) / (total * t / t_steps)


def weighted_average_accuracy(records, class_counts) -> float:
    acc = _accuracies(records)
    if acc.size != len(class_counts):
        raise ValueError(f"{acc.size} records but {len(class_counts)} class counts")
    w = step_weights(class_counts)
    return float(np.sum(w * acc) / np.sum(w))


def assign_tiers(sizes) -> dict[str, list[int]]:
    """Split step indices (0-based) into large/middle/small by size rank.

    The top ``T // 3`` ranks are large, the bottom ``T // 3`` small, the rest
    middle. Steps whose size equals a size in a larger tier join that tier.
    """
    t_steps = len(sizes)
    k = t_steps // 3
    ranked = sorted(range(t_steps), key=lambda i: (-sizes[i], i))
    tiers = {
        "large": ranked[:k],
        "middle": ranked[k:t_steps - k],
        "small": ranked[t_steps - k:] if k else [],
    }
    if k == 0:
        return tiers
    for upper, lower in (("large", "middle"), ("middle", "small"), ("large", "small")):
        upper_sizes = {sizes[i] for i in tiers[upper]}
        moved = [i for i in tiers[lower] if sizes[i] in upper_sizes]
        tiers[upper] += moved
        tiers[lower] = [i for i in tiers[lower] if i not in moved]
    return tiers


def group_by_task_size(tally: Tally, protocol: StreamProtocol) -> dict[str, float | None]:
    """Class-weighted accuracy per size tier on the final tally.

    A tier left empty because its steps tied with a larger tier reports that
    tier's value; a tier empty because T < 3 reports ``None``.
    """
    sizes = protocol.step_sizes
    tiers = assign_tiers(sizes)
    out: dict[str, float | None] = {}
    for name in TIERS:
        members = tiers[name]
        if members:
            classes = [c for i in members for c in protocol.steps[i].class_ids]
            out[name] = tally.accuracy(classes)
        else:
            out[name] = None
    if len(sizes) >= 3:
        for upper, lower in (("large", "middle"), ("middle", "small")):
            if out[lower] is None:
                out[lower] = out[upper]
    return out


def tiers_are_degenerate(protocol: StreamProtocol) -> bool:
    return any(not v for v in assign_tiers(protocol.step_sizes).values())


def format_metrics_csv(report: MetricsReport) -> str:
    lines = ["step,acc,accum_classes"]
    for r in report.records:
        lines.append(f"{r.step_index},{r.accuracy:.6f},{r.accumulated_class_count}")
    lines.append("A_T,Abar,wAbar,large,middle,small")
    g = report.group_accuracies
    vals = [report.a_final, report.a_bar, report.wa_bar] + [g[k] for k in TIERS]
    lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.6f}"
