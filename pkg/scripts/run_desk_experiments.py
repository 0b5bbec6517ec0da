"""Run the desk-scale protocol (B=5 and B=1 pretraining, proxy domain shift, fine-tuning).

Usage: python scripts/run_desk_experiments.py [--config configs/desk_acceptance.json] [--out DIR]
"""

import argparse
import json
import logging
import os

from evfocal import config as config_mod
from evfocal import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs",
                                                     "desk_acceptance.json"))
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--bins", default="5,1", help="comma-separated; the first is the main model")
    ap.add_argument("--no-finetune", action="store_true")
    ap.add_argument("--out", default="runs/desk_acceptance")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = {k: json.loads(v) for k, v in (s.split("=", 1) for s in args.set)}
    cfg = config_mod.load(args.config, overrides)
    bins = tuple(int(b) for b in args.bins.split(","))
    results = experiments.summary(experiments.desk_experiments(cfg, bins, not args.no_finetune))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "desk_results.json")
    with open(path, "w") as fh:
        json.dump(results, fh, indent=1, sort_keys=True, default=str)
    print(json.dumps(results, indent=1, sort_keys=True, default=str))
    print(f"-> {path}")


if __name__ == "__main__":
    main()
