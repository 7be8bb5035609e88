#!/usr/bin/env python3
"""Full-schedule reproduction runs (opt-in; hours of runtime).

Trains one of the shipped best-configuration presets on a converted
piano-roll corpus and compares the clean-weight test CE against the
reference value for that dataset/variant. Not part of the gated test suite.

Example:
    python scripts/reproduce.py --dataset jsb --variant plain \
        --data /path/to/jsb.json --out runs/jsb-plain
"""

import argparse
import json
import sys
from pathlib import Path

from rnnlab.cli import build_hyperconfig, load_config_file
from rnnlab.data import load
from rnnlab.harness import train, write_trace_csv

ROOT = Path(__file__).resolve().parent.parent

# Reference test CE per dataset/variant; plain-RNN tolerance is +/- 0.6.
REFERENCE = {
    "jsb":        {"plain": 8.58, "norm_penalty": 8.83,
                   "additive_per_time_step": 8.92, "additive_per_sequence": 8.96,
                   "multiplicative_per_time_step": 8.64,
                   "multiplicative_per_sequence": 8.64,
                   "dropconnect_per_time_step": 8.48,
                   "dropconnect_per_sequence": 8.55, "feedforward": 8.67},
    "nottingham": {"plain": 3.43, "norm_penalty": 3.70,
                   "additive_per_time_step": 3.56, "additive_per_sequence": 3.58,
                   "multiplicative_per_time_step": 3.51,
                   "multiplicative_per_sequence": 3.50,
                   "dropconnect_per_time_step": 3.49,
                   "dropconnect_per_sequence": 3.57, "feedforward": 3.54},
    "pianomidi":  {"plain": 7.58, "norm_penalty": 7.78,
                   "additive_per_time_step": 7.66, "additive_per_sequence": 7.74,
                   "multiplicative_per_time_step": 7.71,
                   "multiplicative_per_sequence": 7.70,
                   "dropconnect_per_time_step": 7.65,
                   "dropconnect_per_sequence": 7.67, "feedforward": 7.69},
    "musedata":   {"plain": 6.99, "norm_penalty": 8.62,
                   "additive_per_time_step": 8.40, "additive_per_sequence": 8.40,
                   "multiplicative_per_time_step": 8.13,
                   "multiplicative_per_sequence": 8.12,
                   "dropconnect_per_time_step": 7.98,
                   "dropconnect_per_sequence": 8.00, "feedforward": 8.10},
}
TOLERANCE = 0.6


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", choices=sorted(REFERENCE), required=True)
    parser.add_argument("--variant", default="plain")
    parser.add_argument("--data", required=True,
                        help="converted piano-roll JSON for the dataset")
    parser.add_argument("--out", default="reproduction")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    preset = ROOT / "configs" / args.dataset / f"{args.variant}.json"
    if not preset.exists():
        print(f"no preset {preset}", file=sys.stderr)
        return 2
    doc = load_config_file(preset)
    doc["seed"] = args.seed
    doc["init"]["seed"] = args.seed
    config = build_hyperconfig(doc)
    dataset = load(args.data)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, dataset)
    trace = result.trace
    write_trace_csv(trace, out / "trace.csv")
    result.params.save(out / "params.npz")

    reference = REFERENCE[args.dataset][args.variant]
    delta = (trace.test_ce - reference) if trace.test_ce is not None else None
    summary = {"dataset": args.dataset, "variant": args.variant,
               "test_ce": trace.test_ce, "reference": reference,
               "delta": delta, "tolerance": TOLERANCE,
               "within_tolerance": (delta is not None
                                    and abs(delta) <= TOLERANCE),
               "best_valid_ce": trace.best_valid,
               "epochs": trace.records[-1].epoch,
               "diverged": trace.diverged}
    with open(out / "reproduction.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return 0 if summary["within_tolerance"] else 1


if __name__ == "__main__":
    sys.exit(main())
