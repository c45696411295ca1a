"""End-to-end runs: training, scoring, self-training, post-processing, reports."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


from . import features as feat
from .candidates import BlockingThresholds, CandidateSet, expand_candidates, select_all, true_cookies
from .config import PipelineConfig, SelfTrainConfig
from .datamodel import Catalog
from .features import DeviceLabels, FeatureRow
from .learner import BaggedEnsemble, BoostedModel, BoostParams, fold_assignment, predict, train, train_bagged
from .metrics import evaluate, f05_device
from .postprocess import (
    ALL_ACCESS_KEYS, PostProcessConfig, PredictionSet, ScoredCandidates, postprocess,
)

log = logging.getLogger(__name__)

Model = BoostedModel | BaggedEnsemble


def split_devices(catalog: Catalog) -> tuple[list[str], list[str]]:
    """(training devices with a known handle, test devices without one)."""
    train_ids = sorted(d for d, r in catalog.devices.items() if r.handle.known)
    test_ids = sorted(d for d, r in catalog.devices.items() if not r.handle.known)
    return train_ids, test_ids


def fit(rows: Sequence[FeatureRow], params: BoostParams, seed: int, n_bags: int | None, n_jobs: int = 1) -> Model:
    X = feat.to_matrix(rows)
    y = feat.to_labels(rows)
    mask = feat.missing_mask()
    if n_bags is None:
        return train(X, y, params, seed, mask)
    return train_bagged(X, y, params, n_bags, seed, mask, n_jobs=n_jobs)


def score_rows(model: Model, rows: Sequence[FeatureRow]) -> dict[str, ScoredCandidates]:
    probs = predict(model, feat.to_matrix(rows))
    grouped: dict[str, tuple[list[str], list[float]]] = {}
    for r, p in zip(rows, probs):
        ids, scores = grouped.setdefault(r.device_id, ([], []))
        ids.append(r.cookie_id)
        scores.append(p)
    return {d: ScoredCandidates.from_scores(d, ids, s) for d, (ids, s) in grouped.items()}


def score_devices(
    model: Model,
    catalog: Catalog,
    candidate_sets: Mapping[str, CandidateSet],
    labeled_handles,
    thresholds: BlockingThresholds = BlockingThresholds(),
) -> dict[str, ScoredCandidates]:
    rows = feat.build_dataset(catalog, candidate_sets, labeled_handles, thresholds)
    scored = score_rows(model, rows)
    for did in candidate_sets:
        scored.setdefault(did, ScoredCandidates(did, ()))
    return scored


def score_device(
    model: Model,
    catalog: Catalog,
    device_id: str,
    candidate_set: CandidateSet,
    labeled_handles,
    thresholds: BlockingThresholds = BlockingThresholds(),
) -> ScoredCandidates:
    return score_devices(model, catalog, {device_id: candidate_set}, labeled_handles, thresholds)[device_id]


def select_pseudo_labels(
    all_scored: Iterable[ScoredCandidates] | Mapping[str, ScoredCandidates],
    top_min: float = 0.4,
    second_max: float = 0.05,
) -> dict[str, str]:
    """Devices whose best cookie scores above ``top_min`` while the runner-up (if any)
    scores below ``second_max``, mapped to that best cookie."""
    if isinstance(all_scored, Mapping):
        all_scored = all_scored.values()
    chosen = {}
    for sc in all_scored:
        if not sc.entries:
            continue
        cid, top = sc.entries[0]
        second = sc.second_score
        if top > top_min and (second is None or second < second_max):
            chosen[sc.device_id] = cid
    return dict(sorted(chosen.items()))


def pseudo_handles(catalog: Catalog, pseudo: Mapping[str, str]) -> dict:
    """Handle of each pseudo-labeled device's top cookie (unknown handles dropped)."""
    return {d: catalog.cookies[c].handle for d, c in pseudo.items() if catalog.cookies[c].handle.known}


@dataclass
class SelfTrainResult:
    round1: Model
    round2: Model
    pseudo_labels: dict[str, str]
    labels: DeviceLabels
    train_rows: list[FeatureRow]
    round1_scores: dict[str, ScoredCandidates]


def self_train(
    catalog: Catalog,
    train_rows: Sequence[FeatureRow],
    test_candidate_sets: Mapping[str, CandidateSet],
    params: BoostParams,
    config: SelfTrainConfig = SelfTrainConfig(),
    labels=None,
    seed: int = 0,
    n_bags: int | None = 8,
    thresholds: BlockingThresholds = BlockingThresholds(),
    round1: Model | None = None,
    n_jobs: int = 1,
) -> SelfTrainResult:
    """One round of self-training.

    Confident test devices take the handle of their best cookie; the
    owner-set slots of the training rows are refreshed under the enlarged
    labels and the model is retrained from scratch with the same seed(s).
    """
    labels = DeviceLabels.from_catalog(catalog) if labels is None else DeviceLabels.of(labels)
    if round1 is None:
        round1 = fit(train_rows, params, seed, n_bags, n_jobs)
    scores = score_devices(round1, catalog, test_candidate_sets, labels, thresholds)
    pseudo = select_pseudo_labels(scores, config.top_min, config.second_max)
    labels2 = labels.augmented(pseudo_handles(catalog, pseudo))
    rows2 = feat.recompute_owner_features(catalog, train_rows, labels2)
    log.info("self-training: %d pseudo-labeled devices", len(pseudo))
    round2 = fit(rows2, params, seed, n_bags, n_jobs)
    return SelfTrainResult(round1, round2, pseudo, labels2, rows2, scores)


def make_rescorer(model: Model, catalog: Catalog, labels, thresholds: BlockingThresholds):
    def rescore(device_id: str) -> ScoredCandidates:
        return score_device(model, catalog, device_id, expand_candidates(catalog, device_id), labels, thresholds)
    return rescore


def postprocess_all(
    catalog: Catalog,
    model: Model | None,
    scored: Mapping[str, ScoredCandidates],
    config: PostProcessConfig,
    labels=None,
    thresholds: BlockingThresholds = BlockingThresholds(),
    expanded: Mapping[str, ScoredCandidates] | None = None,
) -> dict[str, PredictionSet]:
    """Post-process every device. Step 2 rescoring uses ``expanded`` when
    given, otherwise scores the expanded candidates with ``model``."""
    if expanded is not None:
        rescore = expanded.__getitem__
    elif model is not None:
        rescore = make_rescorer(model, catalog, labels if labels is not None else {}, thresholds)
    else:
        rescore = None
    return {d: postprocess(catalog, d, scored[d], config, rescore) for d in sorted(scored)}


def candidate_predictions(candidate_sets: Mapping[str, CandidateSet], sentinel: str = "NO_MATCH"):
    """Baseline: every eligible cookie is predicted."""
    return {
        d: PredictionSet(d, cs.cookie_ids or (sentinel,), {c: "candidate" for c in cs.cookie_ids})
        for d, cs in sorted(candidate_sets.items())
    }


@dataclass
class SweepRow:
    threshold: float
    fraction_of_devices: float
    n_devices: int
    mean_f05: float


def threshold_sweep(
    all_scored: Mapping[str, ScoredCandidates],
    truth: Mapping[str, Iterable[str]],
    thresholds: Sequence[float],
    predictions: Mapping[str, Iterable[str]] | None = None,
) -> list[SweepRow]:
    """Share of devices whose runner-up scores below each threshold, and their mean F0.5.

    Devices with fewer than two candidates always qualify. Without
    ``predictions`` a device is predicted to own only its best cookie.
    """
    devices = sorted(all_scored)
    if predictions is None:
        predictions = {d: {all_scored[d].entries[0][0]} if all_scored[d].entries else set() for d in devices}
    f05 = {d: f05_device(predictions[d], truth[d]).f05 for d in devices}
    out = []
    for t in sorted(thresholds):
        qual = [d for d in devices if all_scored[d].second_score is None or all_scored[d].second_score < t]
        mean = sum(f05[d] for d in qual) / len(qual) if qual else math.nan
        out.append(SweepRow(t, len(qual) / len(devices) if devices else 0.0, len(qual), mean))
    return out


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fraction_of_devices", "n_devices", "mean_f05"])
        for r in rows:
            w.writerow([r.threshold, repr(r.fraction_of_devices), r.n_devices,
                        "" if math.isnan(r.mean_f05) else repr(r.mean_f05)])


# --------------------------------------------------------------------------
# full runs


@dataclass
class Prepared:
    catalog: Catalog
    train_ids: list[str]
    test_ids: list[str]
    labels: DeviceLabels
    train_candidates: dict[str, CandidateSet]
    test_candidates: dict[str, CandidateSet]
    train_rows: list[FeatureRow]


def prepare(catalog: Catalog, cfg: PipelineConfig) -> Prepared:
    train_ids, test_ids = split_devices(catalog)
    labels = DeviceLabels.from_catalog(catalog, train_ids)
    train_cs = select_all(catalog, train_ids, cfg.blocking)
    test_cs = select_all(catalog, test_ids, cfg.blocking)
    rows = feat.build_dataset(catalog, train_cs, labels, cfg.blocking, n_jobs=cfg.n_jobs)
    return Prepared(catalog, train_ids, test_ids, labels, train_cs, test_cs, rows)


@dataclass
class RunResult:
    model: Model | None
    scores: dict[str, ScoredCandidates]
    predictions: dict[str, PredictionSet]
    labels: DeviceLabels
    pseudo_labels: dict[str, str] = field(default_factory=dict)


def run_full(prep: Prepared, cfg: PipelineConfig, round1: Model | None = None) -> RunResult:
    """Selection, bagged boosting, self-training and post-processing."""
    st = self_train(
        prep.catalog, prep.train_rows, prep.test_candidates, cfg.boost, cfg.self_training,
        prep.labels, cfg.seed, cfg.n_bags, cfg.blocking, round1=round1, n_jobs=cfg.n_jobs,
    )
    scores = score_devices(st.round2, prep.catalog, prep.test_candidates, st.labels, cfg.blocking)
    preds = postprocess_all(prep.catalog, st.round2, scores, cfg.postprocess, st.labels, cfg.blocking)
    return RunResult(st.round2, scores, preds, st.labels, st.pseudo_labels)


def run_winner(prep: Prepared, cfg: PipelineConfig, model: Model) -> RunResult:
    """Best cookie plus its handle-mates, scored by ``model``."""
    scores = score_devices(model, prep.catalog, prep.test_candidates, prep.labels, cfg.blocking)
    preds = postprocess_all(prep.catalog, None, scores, PostProcessConfig.winner_only(cfg.postprocess.sentinel))
    return RunResult(model, scores, preds, prep.labels)


ABLATION_VARIANTS = ("Sel", "Sel+SL", "Sel+SL+B", "Sel+SSL+B+PP")
ROUND1_PP = "Sel+SL+B+PP"


@dataclass
class AblationRow:
    variant: str
    mean_f05: float
    n_devices: int
    note: str = ""


def ablation(catalog: Catalog, truth: Mapping[str, Iterable[str]], cfg: PipelineConfig) -> list[AblationRow]:
    """Score the four procedure stacks on the test devices with shared seeds.

    A fifth, diagnostic row post-processes the round-1 ensemble without
    self-training, isolating the effect of the second round.
    """
    prep = prepare(catalog, cfg)
    test_truth = {d: truth[d] for d in prep.test_ids}
    rows = []

    sel = candidate_predictions(prep.test_candidates, cfg.postprocess.sentinel)
    rows.append(AblationRow("Sel", evaluate(sel, test_truth).mean_f05, len(sel)))
    log.info("ablation Sel done")

    single = fit(prep.train_rows, cfg.boost, cfg.seed, None)
    res = run_winner(prep, cfg, single)
    rows.append(AblationRow("Sel+SL", evaluate(res.predictions, test_truth).mean_f05, len(res.predictions)))
    log.info("ablation Sel+SL done")

    bagged = fit(prep.train_rows, cfg.boost, cfg.seed, cfg.n_bags, cfg.n_jobs)
    res = run_winner(prep, cfg, bagged)
    rows.append(AblationRow("Sel+SL+B", evaluate(res.predictions, test_truth).mean_f05, len(res.predictions)))
    log.info("ablation Sel+SL+B done")

    # diagnostic: round 1 with post-processing, the baseline for self-training
    r1_scores = res.scores
    r1 = postprocess_all(prep.catalog, bagged, r1_scores, cfg.postprocess, prep.labels, cfg.blocking)
    round1_row = AblationRow(ROUND1_PP, evaluate(r1, test_truth).mean_f05, len(r1), "diagnostic")

    # the round-1 ensemble of the full stack is exactly the bagged model above
    full = run_full(prep, cfg, round1=bagged)
    rows.append(AblationRow(
        "Sel+SSL+B+PP", evaluate(full.predictions, test_truth).mean_f05, len(full.predictions),
        f"{len(full.pseudo_labels)} pseudo-labels",
    ))
    rows.append(round1_row)
    return rows


def write_ablation_csv(path, rows: Sequence[AblationRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "mean_f05", "n_devices", "note"])
        for r in rows:
            w.writerow([r.variant, repr(r.mean_f05), r.n_devices, r.note])


# --------------------------------------------------------------------------
# tuning the post-processing on out-of-fold scores


@dataclass
class OutOfFold:
    scores: dict[str, ScoredCandidates]
    expanded: dict[str, ScoredCandidates]
    truth: dict[str, frozenset[str]]


def out_of_fold_scores(prep: Prepared, cfg: PipelineConfig, k: int = 5, n_bags: int | None = None) -> OutOfFold:
    """Score every training device with a model that never saw its handle.

    Folds group devices by handle so that a person's other devices cannot
    leak into the O-dependent slots of the held-out rows.
    """
    catalog = prep.catalog
    handle_of = {d: catalog.devices[d].handle.value for d in prep.train_ids}
    folds = fold_assignment(list(handle_of.values()), k, cfg.seed)
    scores: dict[str, ScoredCandidates] = {}
    expanded: dict[str, ScoredCandidates] = {}
    for fold in range(k):
        held = [d for d in prep.train_ids if folds[handle_of[d]] == fold]
        keep = set(prep.train_ids) - set(held)
        labels = DeviceLabels({d: catalog.devices[d].handle for d in keep})
        rows = feat.recompute_owner_features(
            catalog, [r for r in prep.train_rows if r.device_id in keep], labels)
        model = fit(rows, cfg.boost, cfg.seed, n_bags, cfg.n_jobs)
        held_cs = {d: prep.train_candidates[d] for d in held}
        scores.update(score_devices(model, catalog, held_cs, labels, cfg.blocking))
        exp_cs = {d: expand_candidates(catalog, d) for d in held}
        expanded.update(score_devices(model, catalog, exp_cs, labels, cfg.blocking))
        log.info("out-of-fold %d/%d done", fold + 1, k)
    truth = {d: true_cookies(catalog, d) for d in prep.train_ids}
    return OutOfFold(scores, expanded, truth)


def tune_postprocess(
    catalog: Catalog,
    oof: OutOfFold,
    base: PostProcessConfig = PostProcessConfig(),
    threshold_grid: Sequence[float] = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5),
    multiplier_grid: Sequence[float] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    sweeps: int = 2,
) -> tuple[PostProcessConfig, float]:
    """Coordinate ascent on mean F0.5 over the out-of-fold devices.

    No retraining is needed: the scores are fixed and only the selection
    rule changes. Ties keep the current (more conservative) value.
    """
    devices = sorted(oof.scores)

    def objective(cfg: PostProcessConfig) -> float:
        preds = {d: postprocess(catalog, d, oof.scores[d], cfg, oof.expanded.__getitem__) for d in devices}
        return evaluate(preds, oof.truth).mean_f05

    current = base
    best = objective(current)
    for _ in range(sweeps):
        improved = False
        for t in threshold_grid:
            cand = current.with_params(step1_threshold=t)
            val = objective(cand)
            if val > best:
                best, current, improved = val, cand, True
        for key in ALL_ACCESS_KEYS:
            for m in multiplier_grid:
                params = dict(current.access_params)
                params[key] = m
                cand = current.with_params(access_params=params)
                val = objective(cand)
                if val > best:
                    best, current, improved = val, cand, True
        if not improved:
            break
    return current, best
