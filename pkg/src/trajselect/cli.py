"""Command-line entry point.

Usage::

    trajselect synth     -c run.yaml [-o DIR]
    trajselect train     -c run.yaml [--corpus PATH] [--loss buffer|binary_bce]
    trajselect score     -c run.yaml [--corpus PATH] [--checkpoint PATH]
    trajselect select    -c run.yaml [--corpus PATH] [--checkpoint PATH]
    trajselect eval      -c run.yaml [--corpus PATH] [--checkpoint PATH]
    trajselect rank      -c run.yaml [--corpus PATH] [--checkpoint PATH]
    trajselect gradcheck -c run.yaml [--corpus PATH]

Anything that changes results lives in the config file. Default paths are
derived from the resolved-config hash, so a synth/train/eval sequence run
from one config finds its own files.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .config import RunConfig, load_config, save_config
from .corpus import Corpus, corpus_stats, load_jsonl, save_jsonl
from .errors import ConfigError, DataError, GradCheckFailure, NumericError
from .sampler_sim import generate_corpus
from .selection import METHODS, benchmark_results, rank_corpus, select
from .training import LOSS_KINDS, grad_check, make_batch
from .verifier import init_params, load_checkpoint, save_checkpoint

log = logging.getLogger("trajselect")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "loss", None):
        cfg = replace(cfg, train=replace(cfg.train, loss_kind=args.loss))
    return cfg.resolved()


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    save_config(cfg, harness.output_path(cfg, out, "config", "json"))


def _corpus(args, cfg: RunConfig, out: Path) -> Corpus:
    path = Path(args.corpus) if args.corpus else harness.output_path(cfg, out, "corpus", "jsonl")
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    return load_jsonl(path, seed=cfg.synth.seed)


def _checkpoint(args, cfg: RunConfig, out: Path):
    path = Path(args.checkpoint) if args.checkpoint else harness.output_path(cfg, out, "verifier", "json")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params, vcfg = load_checkpoint(path)
    return params, vcfg


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    corpus = generate_corpus(cfg.synth)
    path = harness.output_path(cfg, out, "corpus", "jsonl")
    save_jsonl(corpus, path)
    stats = corpus_stats(corpus)
    harness.output_path(cfg, out, "corpus-stats", "json").write_text(
        json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_resolved(cfg, out)
    print(f"wrote {len(corpus)} trajectories to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    corpus = _corpus(args, cfg, out)
    params, history = harness.run_training(corpus, cfg)
    ckpt = harness.output_path(cfg, out, "verifier", "json")
    save_checkpoint(params, cfg.verifier, ckpt)
    harness.write_trainlog_csv(history, harness.output_path(cfg, out, "trainlog", "csv"))
    _write_resolved(cfg, out)
    print(f"trained {len(history)} optimiser steps, final loss {history[-1].loss:.6f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    corpus = _corpus(args, cfg, out)
    params, vcfg = _checkpoint(args, cfg, out)
    sets = harness.scored_sets(corpus, params, vcfg)
    path = harness.output_path(cfg, out, "scores", "csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("query_id", "candidate", "trajectory_score", "outcome"))
        for cs in sets:
            for j, (rec, s) in enumerate(zip(cs.candidates, cs.scores)):
                w.writerow((cs.query.id, j, repr(s), rec.outcome))
    print(f"scored {sum(len(cs.candidates) for cs in sets)} trajectories -> {path}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    corpus = harness.eval_corpus(_corpus(args, cfg, out), cfg)
    params, vcfg = _checkpoint(args, cfg, out) if cfg.method == "trajselector" else (None, cfg.verifier)
    sets = harness.scored_sets(corpus, params, vcfg)
    path = harness.output_path(cfg, out, "selections", "csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("query_id", "method", "n", "selected", "outcome"))
        for cs in sets:
            i = select(cs, cfg.method, seed=cfg.eval_seed)
            w.writerow((cs.query.id, cfg.method, len(cs.candidates), i, cs.candidates[i].outcome))
    print(f"{cfg.method}: selections for {len(sets)} queries -> {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    corpus = harness.eval_corpus(_corpus(args, cfg, out), cfg)
    params, vcfg = _checkpoint(args, cfg, out)
    sets = harness.scored_sets(corpus, params, vcfg)
    rows = harness.evaluate(sets, cfg.n_values, cfg.eval_seed)
    if not harness.is_finite_rows(rows):
        raise NumericError("non-finite accuracy")
    harness.write_results_csv(rows, harness.output_path(cfg, out, "results", "csv"))

    usable = [n for n in cfg.n_values if n <= min(len(cs.candidates) for cs in sets)]
    if usable:
        n_top = max(usable)
        for method in METHODS:
            harness.write_table_csv(benchmark_results(sets, method, n_top, cfg.eval_seed),
                                    harness.output_path(cfg, out, f"table-{method}-n{n_top}", "csv"))
    lines = harness.write_wide_table(sets, METHODS, cfg.n_values, cfg.eval_seed,
                                     harness.output_path(cfg, out, "table1", "csv"))
    _write_resolved(cfg, out)
    for line in lines:
        print("  ".join(f"{c:>14}" for c in line))
    return EXIT_OK


def cmd_rank(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    corpus = _corpus(args, cfg, out)
    params, vcfg = _checkpoint(args, cfg, out)
    k = min(cfg.rank_k, len(corpus))
    top = rank_corpus(corpus.records, params, vcfg, k)
    path = harness.output_path(cfg, out, "ranked", "jsonl")
    save_jsonl(corpus.replace_records(top), path)
    print(f"top {k} of {len(corpus)} trajectories -> {path}")
    return EXIT_OK


def _write_gradcheck(report, path: Path) -> None:
    path.write_text(json.dumps({"max_rel_error": report.max_rel_error, "tolerance": report.tolerance,
                                "passed": report.passed, "entries": report.entries}, indent=1) + "\n",
                    encoding="utf-8")


def cmd_gradcheck(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args, cfg)
    if args.corpus:
        records = load_jsonl(args.corpus).records
    else:
        records = generate_corpus(replace(cfg.synth, n_queries=1,
                                          candidates_per_query=cfg.gradcheck_batch)).records
    batch = make_batch(records[:cfg.gradcheck_batch], cfg.verifier.max_steps)
    params = init_params(cfg.verifier, cfg.train.seed)
    path = harness.output_path(cfg, out, "gradcheck", "json")
    try:
        report = grad_check(params, cfg.verifier, batch, cfg.gradcheck_tolerance,
                            cfg.train.loss_kind, cfg.gradcheck_coords, cfg.train.seed)
    except GradCheckFailure as exc:
        _write_gradcheck(exc.report, path)
        raise
    _write_gradcheck(report, path)
    print(f"gradient check passed: max relative error {report.max_rel_error:.3e} "
          f"over {report.n_checked} coordinates")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "score": cmd_score, "select": cmd_select,
    "eval": cmd_eval, "rank": cmd_rank, "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajselect", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML or JSON run config (defaults if omitted)")
        p.add_argument("-o", "--out", help="output directory (overrides output_dir)")
        if name != "synth":
            p.add_argument("--corpus", help="corpus JSONL (default: derived from config hash)")
        if name in ("score", "select", "eval", "rank"):
            p.add_argument("--checkpoint", help="verifier checkpoint (default: derived from config hash)")
        if name in ("train", "gradcheck"):
            p.add_argument("--loss", choices=LOSS_KINDS, help="override train.loss_kind")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
