"""Fit the Step 1 threshold and Step 4 multipliers on out-of-fold training scores.

    python scripts/tune_postprocess.py --config configs/default.yaml --out configs/default.yaml
"""
from __future__ import annotations

import argparse
import logging
import tempfile
from dataclasses import replace

from devmatch.config import load_config, save_config
from devmatch.datamodel import ingest, propagate_same_handle_ips
from devmatch.pipeline import out_of_fold_scores, prepare, tune_postprocess
from devmatch.synthgen import generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--out", default=None, help="write the tuned config here")
    ap.add_argument("--folds", type=int, default=5)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    with tempfile.TemporaryDirectory() as world:
        generate(cfg.world, world)
        catalog = propagate_same_handle_ips(ingest(world))
    prep = prepare(catalog, cfg)
    oof = out_of_fold_scores(prep, cfg, k=args.folds)
    base = replace(cfg.postprocess, access_params={}, step1_threshold=0.0)
    tuned, score = tune_postprocess(catalog, oof, base)
    logging.info("out-of-fold mean F0.5 %.5f (winner-only %.5f)", score,
                 tune_postprocess(catalog, oof, base, (), (), 0)[1])
    print(tuned.to_dict())
    if args.out:
        save_config(replace(cfg, postprocess=tuned), args.out)


if __name__ == "__main__":
    main()
