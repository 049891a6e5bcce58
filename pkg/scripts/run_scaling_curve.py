"""Accuracy vs number of candidates for every selection method.

Synthesises a corpus with ``max(n_values)`` candidates per query, trains
one verifier, and writes ``method,n,accuracy_pct`` rows plus a plain-text
table to stdout.

    python scripts/run_scaling_curve.py -c configs/default.yaml --n 1 2 4 8 16
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from trajselect import harness
from trajselect.config import RunConfig, load_config
from trajselect.sampler_sim import generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("-c", "--config")
    ap.add_argument("--n", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("-o", "--out", default="runs/scaling")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        cfg = replace(base, n_values=tuple(args.n), eval_seed=seed,
                      synth=replace(base.synth, seed=seed, candidates_per_query=max(args.n)),
                      train=replace(base.train, seed=seed)).resolved()
        corpus = generate_corpus(cfg.synth)
        params, _ = harness.run_training(corpus, cfg)
        sets = harness.scored_sets(harness.eval_corpus(corpus, cfg), params, cfg.verifier)
        rows = harness.evaluate(sets, cfg.n_values, cfg.eval_seed)
        path = harness.output_path(cfg, out, "results", "csv")
        harness.write_results_csv(rows, path)
        print(f"seed {seed} -> {path}")
        table = {}
        for method, n, acc in rows:
            table.setdefault(method, {})[n] = acc
        print(f"{'method':>14}" + "".join(f"{n:>8}" for n in cfg.n_values))
        for method, accs in table.items():
            print(f"{method:>14}" + "".join(f"{accs[n]:>8.1f}" for n in cfg.n_values))


if __name__ == "__main__":
    main()
