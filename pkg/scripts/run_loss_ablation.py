"""Buffer loss vs binary cross-entropy under label noise.

Flips a fraction of training labels, trains one verifier per loss and
seed on the same split, and prints a per-seed accuracy table. With
``--ratio`` it also reports selection by p_right / (p_right + p_wrong),
which shows whether the buffer head kept any ranking signal once the
buffer class has absorbed most of the probability mass.

    python scripts/run_loss_ablation.py -c configs/default.yaml --flip 0.3 --seeds 0 1 2 3 4
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from trajselect import harness
from trajselect.config import RunConfig, load_config
from trajselect.sampler_sim import generate_corpus
from trajselect.selection import accuracy, best_of_n
from trajselect.verifier import BUFFER, RIGHT, WRONG, forward


def ratio_accuracy(sets, params, vcfg) -> float:
    hits = 0
    for cs in sets:
        scores = []
        for r in cs.candidates:
            p = forward(params, vcfg, r.step_hiddens[:vcfg.max_steps])
            scores.append(float(np.mean(p[:, RIGHT] / (p[:, RIGHT] + p[:, WRONG]))))
        hits += cs.candidates[best_of_n(scores)].outcome
    return 100.0 * hits / len(sets)


def mean_buffer(sets, params, vcfg) -> float:
    return float(np.mean([forward(params, vcfg, r.step_hiddens[:vcfg.max_steps])[:, BUFFER].mean()
                          for cs in sets for r in cs.candidates]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("-c", "--config")
    ap.add_argument("--flip", type=float, default=0.3)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--lr", type=float, help="override train.learning_rate")
    ap.add_argument("--ratio", action="store_true", help="also report the right/wrong ratio score")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    base = load_config(args.config) if args.config else RunConfig()
    if args.lr:
        base = replace(base, train=replace(base.train, learning_rate=args.lr))
    header = f"{'seed':>4} {'buffer':>8} {'bce':>8} {'random':>8}"
    if args.ratio:
        header += f" {'ratio':>8} {'p_buf':>8}"
    print(header)
    cols = []
    for seed in args.seeds:
        row = [seed]
        corpus = generate_corpus(replace(base.synth, seed=seed))
        extra = []
        for kind in ("buffer", "binary_bce"):
            cfg = replace(base, label_flip_fraction=args.flip, eval_seed=seed,
                          synth=replace(base.synth, seed=seed),
                          train=replace(base.train, seed=seed, loss_kind=kind)).resolved()
            params, _ = harness.run_training(corpus, cfg)
            sets = harness.scored_sets(harness.eval_corpus(corpus, cfg), params, cfg.verifier)
            row.append(accuracy(sets, "trajselector"))
            if args.ratio and kind == "buffer":
                extra = [ratio_accuracy(sets, params, cfg.verifier), mean_buffer(sets, params, cfg.verifier)]
        row.append(accuracy(sets, "random", seed=seed))
        row += extra
        cols.append(row[1:])
        print(f"{seed:>4}" + _fmt(row[1:]))
    print(f"{'mean':>4}" + _fmt(np.mean(np.array(cols), axis=0)))


def _fmt(values) -> str:
    # accuracies in percent; the trailing mean buffer probability needs more digits
    return "".join(f" {v:>8.4f}" if i == 4 else f" {v:>8.1f}" for i, v in enumerate(values))


if __name__ == "__main__":
    main()
