"""Command-line front end for the experiment lifecycle.

Every subcommand works inside one run directory (``--out``)::

    corpus/  source/  te2sl/  soft_prompt/  adapt/<strategy>/  eval/<strategy>/  report.*

Exit codes: 0 success, 1 configuration error or bad usage, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .adaptation import KINDS
from .checkpoint import CheckpointError
from .config import ExperimentConfig, load_config
from .corpus import CorpusError, generate_corpus, write_corpus
from .numerics import ConfigError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--config", type=Path, help="INI experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. optim.adapt.lr=1e-3 (repeatable)")
    if out:
        p.add_argument("--out", type=Path, help="run directory (default runs/seed<seed>)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="te2sl", description="Text-only domain adaptation experiments for LLM-based ASR.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    _common(sub.add_parser("generate-corpus", help="synthesize the source/target corpus"))
    _common(sub.add_parser("train-source", help="train projector and LM on paired source data"))
    _common(sub.add_parser("train-te2sl", help="train the embedding-to-latent module"))
    _common(sub.add_parser("learn-soft-prompt", help="learn the soft prompt on source text"))
    for name, text in (("adapt", "text-only adaptation on target text"), ("evaluate", "score an adapted model")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--strategy", choices=KINDS, help="adaptation strategy (default: strategy.kind)")
    p = sub.add_parser("run-all", help="full pipeline and comparison table")
    _common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel strategy runs")
    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("report", help="collect evaluations into a comparison table")
    _common(p)
    return parser


def _config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.insert(0, f"experiment.seed={args.seed}")
    return load_config(args.config, overrides)


def _out(args, cfg: ExperimentConfig) -> Path:
    return args.out if args.out is not None else Path("runs") / f"seed{cfg.seed}"


def _print_table(summaries) -> None:
    for split in dict.fromkeys(s["split"] for s in summaries):
        print(f"[{split}]")
        print(harness.format_table([s for s in summaries if s["split"] == split]), end="")


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite, tolerance

    errors = run_suite(args.seed)
    ok = True
    for op, err in errors.items():
        passed = err < tolerance(op)
        ok &= passed
        print(f"{op:16s} max_rel_err={err:.3e}  {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def dispatch(args) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(args)
    cfg = _config(args)
    out = _out(args, cfg)
    force = args.force
    cmd = args.command
    if cmd == "generate-corpus":
        dest = out / "corpus"
        harness._ensure_fresh(dest, force)
        corpus = generate_corpus(cfg.corpus, cfg.seed)
        write_corpus(corpus, dest)
        print(f"wrote corpus to {dest}")
    elif cmd == "train-source":
        corpus = harness.load_run_corpus(out)
        _, res = harness.train_source(cfg, corpus, out / "source", force=force)
        print(f"selected epoch {res.selected_epoch}: source dev WER {res.val_metric[res.selected_epoch - 1]:.4f}")
    elif cmd == "train-te2sl":
        corpus = harness.load_run_corpus(out)
        model = harness.load_run_source(out)
        _, res = harness.prepare_te2sl(cfg, model, corpus, out / "te2sl", harness.FeatureCache(model), force)
        print(f"held-out frame MSE: refined {res.extra['heldout_mse_refined']:.4f}, raw {res.extra['heldout_mse_raw']:.4f}")
    elif cmd == "learn-soft-prompt":
        corpus = harness.load_run_corpus(out)
        model = harness.load_run_source(out)
        _, res = harness.prepare_soft_prompt(cfg, model, corpus, out / "soft_prompt", force)
        print(f"soft prompt final loss {res.train_loss[-1]:.4f}")
    elif cmd == "adapt":
        kind = args.strategy or cfg.strategy.kind
        te2sl = harness.load_run_te2sl(out) if kind == "te2sl" else None
        soft_prompt = harness.load_run_soft_prompt(out) if kind == "soft_prompt" else None
        corpus = harness.load_run_corpus(out)
        model = harness.load_run_source(out)
        cache = harness.FeatureCache(model)
        _, res = harness.adapt_target(
            cfg, model, cfg.strategy.strategy(kind), corpus, out / "adapt" / kind, cache, te2sl, soft_prompt, force
        )
        print(f"adapted with {kind}; selected epoch {res.selected_epoch}")
    elif cmd == "evaluate":
        kind = args.strategy or cfg.strategy.kind
        _print_table(harness.evaluate_run(cfg, out, kind, force))
    elif cmd == "report":
        summaries = harness.collect_summaries(out)
        harness.write_report(out, summaries)
        _print_table(summaries)
    elif cmd == "run-all":
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        _print_table(harness.run_all(cfg, out, force=force, jobs=args.jobs))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return dispatch(args)
    except (ConfigError, CorpusError) as exc:
        print(f"te2sl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, CheckpointError, OSError, ValueError, ArithmeticError) as exc:
        print(f"te2sl: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
