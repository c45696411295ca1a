"""Ablation of the procedure stacks on a generated world.

    python scripts/run_ablation.py --config configs/default.yaml --out results/ablation.csv
"""
from __future__ import annotations

import argparse
import logging
import tempfile
import time

from devmatch.config import load_config
from devmatch.datamodel import ingest, load_truth, propagate_same_handle_ips
from devmatch.pipeline import ablation, write_ablation_csv
from devmatch.synthgen import generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--persons", type=int, default=None, help="override world.n_persons")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = {"world.n_persons": args.persons} if args.persons else {}
    cfg = load_config(args.config, overrides)
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as world:
        generate(cfg.world, world)
        catalog = propagate_same_handle_ips(ingest(world))
        truth = load_truth(f"{world}/truth.csv")
    rows = ablation(catalog, truth, cfg)
    for r in rows:
        print(f"{r.variant:14s} {r.mean_f05:.4f}  n={r.n_devices} {r.note}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
    if args.out:
        write_ablation_csv(args.out, rows)


if __name__ == "__main__":
    main()
