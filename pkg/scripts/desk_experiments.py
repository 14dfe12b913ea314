"""Train and evaluate the desk-scale policies read by the acceptance suite.

Every run goes through the command-line interface, so each result directory
holds the same artifacts a user would get by hand. Finished steps are
skipped, which makes the script safe to re-run after an interruption.

    python scripts/desk_experiments.py                 # everything
    python scripts/desk_experiments.py --only none_s0  # one run
"""

import argparse
import json
import os
import sys
import time

from flowflight.cli import run
from flowflight.config import config_hash, load_config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG = os.path.join(ROOT, "configs", "desk.yaml")
VARIANTS = ("none", "no-flow", "no-dobs")


def expected_hash(seed, ablation, config=CONFIG):
    cfg = load_config(config, seed=seed)
    cfg.train.zero_flow = ablation == "no-flow"
    cfg.train.no_dobs = ablation == "no-dobs"
    return config_hash(cfg)


def run_dir(results, ablation, seed):
    return os.path.join(results, f"{ablation}_s{seed}")


def is_current(out, seed, ablation, config=CONFIG):
    path = os.path.join(out, "manifest.json")
    if not os.path.exists(os.path.join(out, "policy.ckpt")) or not os.path.exists(path):
        return False
    with open(path) as fh:
        return json.load(fh).get("config_hash") == expected_hash(seed, ablation, config)


def step(argv):
    t0 = time.time()
    print("+ flowflight " + " ".join(argv), flush=True)
    rc = run(argv)
    print(f"  exit {rc} after {time.time() - t0:.0f} s", flush=True)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--results", default=os.path.join(ROOT, "results", "desk"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--trials", type=int, default=20, help="episodes per speed tier")
    ap.add_argument("--only", help="a single run name such as none_s0")
    args = ap.parse_args()
    common = ["--config", CONFIG]
    for seed in args.seeds:
        for ab in VARIANTS:
            name = f"{ab}_s{seed}"
            if args.only and name != args.only:
                continue
            out = run_dir(args.results, ab, seed)
            if not is_current(out, seed, ab):
                step(["train"] + common + ["--seed", str(seed), "--ablation", ab, "--out", out])
            ckpt = os.path.join(out, "policy.ckpt")
            if not os.path.exists(os.path.join(out, "speed", "speed.csv")):
                step(["bench", "speed"] + common + ["--checkpoint", ckpt, "--trials", str(args.trials),
                                                    "--out", os.path.join(out, "speed")])
            if ab == "none" and not os.path.exists(os.path.join(out, "eval", "metrics.csv")):
                step(["eval"] + common + ["--checkpoint", ckpt, "--out", os.path.join(out, "eval")])


if __name__ == "__main__":
    main()
