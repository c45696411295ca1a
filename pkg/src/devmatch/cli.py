"""Command line entry point.

Every subcommand reads one YAML config and accepts ``--set key=value``
overrides (dotted keys, YAML-parsed values). Intermediate artefacts live in
``paths.work_dir``; the generated world lives in ``paths.world_dir``.

    devmatch generate --config configs/default.yaml
    devmatch ingest --config configs/default.yaml
    devmatch candidates ...      devmatch features ...
    devmatch train ...           devmatch predict ...
    devmatch evaluate ...        devmatch sweep ...
    devmatch ablation ...
"""
from __future__ import annotations

import argparse
import logging
import pickle
import sys
from pathlib import Path

import yaml

from . import features as feat
from .candidates import coverage_report, write_candidates_csv
from .config import PipelineConfig, load_config, save_config
from .datamodel import Catalog, ingest, load_truth, propagate_same_handle_ips
from .learner import load as load_model
from .learner import save as save_model
from .metrics import evaluate
from .pipeline import (
    ablation, fit, postprocess_all, prepare, score_devices, self_train, threshold_sweep,
    write_ablation_csv, write_sweep_csv,
)
from .postprocess import ScoredCandidates, read_scores_csv, write_predictions_csv, write_scores_csv
from .synthgen import TRUTH_FILE, generate, verify_world

log = logging.getLogger("devmatch")

CATALOG = "catalog.pkl"
PREPARED = "prepared.pkl"
LABELS = "labels.pkl"
MODEL = "model.txt"
SCORES = "scores.csv"
PREDICTIONS = "predictions.csv"


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _dump(obj, path: Path) -> None:
    with open(path, "wb") as fh:
        pickle.dump(obj, fh, protocol=pickle.HIGHEST_PROTOCOL)


def _load(path: Path, hint: str):
    if not path.exists():
        raise SystemExit(f"{path} not found; run `devmatch {hint}` first")
    with open(path, "rb") as fh:
        return pickle.load(fh)


def _work(cfg: PipelineConfig) -> Path:
    cfg.work.mkdir(parents=True, exist_ok=True)
    return cfg.work


def _truth(cfg: PipelineConfig, path: str | None):
    return load_truth(path or Path(cfg.world_dir) / TRUTH_FILE)


def cmd_generate(cfg: PipelineConfig, args) -> int:
    gt = generate(cfg.world, cfg.world_dir)
    report = verify_world(cfg.world_dir)
    print(f"world: {len(gt.persons)} persons, {len(gt.device_cookies)} devices -> {cfg.world_dir}")
    for p in report.problems[:10]:
        print(f"problem: {p}")
    return 0 if report.ok else 1


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    catalog = ingest(cfg.world_dir)
    if not args.no_propagate:
        catalog = propagate_same_handle_ips(catalog)
    work = _work(cfg)
    _dump(catalog, work / CATALOG)
    catalog.vocab.save(work / "vocab.csv")
    print(f"catalog: {len(catalog.devices)} devices, {len(catalog.cookies)} cookies, "
          f"{len(catalog.ip_agg)} ips, hash {catalog.content_hash[:12]}")
    return 0


def _catalog(cfg: PipelineConfig) -> Catalog:
    return _load(cfg.work / CATALOG, "ingest")


def cmd_candidates(cfg: PipelineConfig, args) -> int:
    catalog = _catalog(cfg)
    prep = prepare(catalog, cfg)
    work = _work(cfg)
    _dump(prep, work / PREPARED)
    write_candidates_csv(work / "candidates_train.csv", prep.train_candidates)
    write_candidates_csv(work / "candidates_test.csv", prep.test_candidates)
    rep = coverage_report(catalog, cfg.blocking, candidate_sets=prep.train_candidates)
    for name, value in rep.as_rows():
        print(f"{name}\t{value}")
    return 0


def _prepared(cfg: PipelineConfig):
    return _load(cfg.work / PREPARED, "candidates")


def cmd_features(cfg: PipelineConfig, args) -> int:
    prep = _prepared(cfg)
    work = _work(cfg)
    test_rows = feat.build_dataset(prep.catalog, prep.test_candidates, prep.labels, cfg.blocking, cfg.n_jobs)
    feat.write_binary_cache(feat.cache_path(work, prep.catalog.content_hash), prep.train_rows)
    if args.csv:
        feat.write_dataset_csv(work / "features_train.csv", prep.train_rows)
        feat.write_dataset_csv(work / "features_test.csv", test_rows)
    print(f"features: {len(prep.train_rows)} training rows, {len(test_rows)} test rows")
    return 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    prep = _prepared(cfg)
    n_bags = None if cfg.n_bags <= 0 else cfg.n_bags
    if args.no_self_training:
        model = fit(prep.train_rows, cfg.boost, cfg.seed, n_bags, cfg.n_jobs)
        labels, n_pseudo = prep.labels, 0
    else:
        res = self_train(prep.catalog, prep.train_rows, prep.test_candidates, cfg.boost, cfg.self_training,
                         prep.labels, cfg.seed, n_bags, cfg.blocking, n_jobs=cfg.n_jobs)
        model, labels, n_pseudo = res.round2, res.labels, len(res.pseudo_labels)
    work = _work(cfg)
    save_model(model, work / MODEL)
    _dump(labels, work / LABELS)
    save_config(cfg, work / "config.yaml")
    print(f"model -> {work / MODEL} ({n_pseudo} pseudo-labeled devices)")
    return 0


def cmd_predict(cfg: PipelineConfig, args) -> int:
    prep = _prepared(cfg)
    work = _work(cfg)
    model = load_model(work / MODEL)
    labels = _load(work / LABELS, "train")
    scores = score_devices(model, prep.catalog, prep.test_candidates, labels, cfg.blocking)
    preds = postprocess_all(prep.catalog, model, scores, cfg.postprocess, labels, cfg.blocking)
    write_scores_csv(work / SCORES, scores)
    write_predictions_csv(work / PREDICTIONS, preds)
    print(f"predictions for {len(preds)} devices -> {work / PREDICTIONS}")
    return 0


def _read_predictions(path: Path) -> dict[str, frozenset[str]]:
    if not path.exists():
        raise SystemExit(f"{path} not found; run `devmatch predict` first")
    return load_truth(path)


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    work = _work(cfg)
    preds = _read_predictions(Path(args.predictions) if args.predictions else work / PREDICTIONS)
    ev = evaluate(preds, _truth(cfg, args.truth))
    ev.write_csv(work / "evaluation.csv")
    print(f"mean F0.5 {ev.mean_f05:.5f} over {len(ev.per_device)} devices")
    return 0


def cmd_sweep(cfg: PipelineConfig, args) -> int:
    work = _work(cfg)
    path = work / SCORES
    if not path.exists():
        raise SystemExit(f"{path} not found; run `devmatch predict` first")
    scores = read_scores_csv(path)
    truth = _truth(cfg, args.truth)
    prep = _prepared(cfg)
    for d in prep.test_candidates:
        scores.setdefault(d, ScoredCandidates(d, ()))
    winner = {}
    for d, sc in scores.items():
        if sc.entries:
            top = sc.entries[0][0]
            winner[d] = {top, *prep.catalog.handle_mates(top)}
        else:
            winner[d] = {cfg.postprocess.sentinel}
    rows = threshold_sweep(scores, truth, cfg.sweep_thresholds, winner)
    write_sweep_csv(work / "sweep.csv", rows)
    for r in rows:
        print(f"{r.threshold:.2f}\t{r.fraction_of_devices:.4f}\t{r.mean_f05:.4f}")
    return 0


def cmd_ablation(cfg: PipelineConfig, args) -> int:
    catalog = _catalog(cfg)
    rows = ablation(catalog, _truth(cfg, args.truth), cfg)
    write_ablation_csv(_work(cfg) / "ablation.csv", rows)
    for r in rows:
        print(f"{r.variant}\t{r.mean_f05:.5f}\t{r.note}")
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write a synthetic world to paths.world_dir"),
    "ingest": (cmd_ingest, "load the world tables into a catalog"),
    "candidates": (cmd_candidates, "select candidate cookies for every device"),
    "features": (cmd_features, "extract pair features"),
    "train": (cmd_train, "fit the bagged, self-trained model"),
    "predict": (cmd_predict, "score and post-process the test devices"),
    "evaluate": (cmd_evaluate, "mean F0.5 of the predictions"),
    "sweep": (cmd_sweep, "runner-up threshold sweep"),
    "ablation": (cmd_ablation, "compare the procedure stacks"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="devmatch", description="Cross-device matching pipeline")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="YAML config (defaults when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. boost.rounds=50")
        p.add_argument("--world-dir", default=None)
        p.add_argument("--work-dir", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "ingest":
            p.add_argument("--no-propagate", action="store_true", help="skip handle IP propagation")
        if name == "features":
            p.add_argument("--csv", action="store_true", help="also write the feature tables as CSV")
        if name == "train":
            p.add_argument("--no-self-training", action="store_true")
        if name in ("evaluate", "sweep", "ablation"):
            p.add_argument("--truth", default=None, help="truth CSV (default: world truth.csv)")
        if name == "evaluate":
            p.add_argument("--predictions", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    overrides = _parse_overrides(args.set)
    if args.world_dir:
        overrides["paths.world_dir"] = args.world_dir
    if args.work_dir:
        overrides["paths.work_dir"] = args.work_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    fn, _ = COMMANDS[args.command]
    return fn(cfg, args)


if __name__ == "__main__":
    sys.exit(main())
