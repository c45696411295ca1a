"""Per-device F-beta scoring, averaged over devices."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping

BETA = 0.5


@dataclass(frozen=True)
class EvalComponents:
    tp: int
    fp: int
    fn: int
    p: float
    r: float
    f05: float


def f_beta(p: float, r: float, beta: float = BETA) -> float:
    b2 = beta * beta
    denom = b2 * p + r
    if denom == 0:
        return 0.0
    return (1 + b2) * p * r / denom


def f05_device(predicted: Iterable[str], truth: Iterable[str]) -> EvalComponents:
    predicted = set(predicted)
    truth = set(truth)
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return EvalComponents(tp, fp, fn, p, r, f_beta(p, r))


@dataclass
class Evaluation:
    mean_f05: float
    per_device: dict[str, EvalComponents]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["device_id", "tp", "fp", "fn", "precision", "recall", "f05"])
            for did in sorted(self.per_device):
                e = self.per_device[did]
                writer.writerow([did, e.tp, e.fp, e.fn, repr(e.p), repr(e.r), repr(e.f05)])


def evaluate(predictions, truth: Mapping[str, Iterable[str]]) -> Evaluation:
    """Unweighted mean of per-device F0.5.

    ``predictions`` is a mapping device_id -> cookie ids, or an iterable of
    objects with ``device_id`` and ``cookie_ids`` attributes.
    """
    if not isinstance(predictions, Mapping):
        predictions = {p.device_id: p for p in predictions}
    predictions = {d: getattr(p, "cookie_ids", p) for d, p in predictions.items()}
    missing = [d for d in predictions if d not in truth]
    if missing:
        raise KeyError(f"devices missing from truth: {sorted(missing)[:5]}")
    per_device = {did: f05_device(predictions[did], truth[did]) for did in sorted(predictions)}
    total = 0.0
    for did in sorted(per_device):
        total += per_device[did].f05
    mean = total / len(per_device) if per_device else 0.0
    return Evaluation(mean, per_device)
