"""Command line entry point: ``kge {train,tune,eval,project}``.

Exit codes: 0 on success, 1 for user errors (bad flags, configuration or
dataset), 2 for internal failures such as a diverging loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import load_dataset
from .errors import DatasetError, KgeError, UserError
from .evaluation import evaluate, write_metrics_csv, write_ranks_csv
from .models import model_for
from .projection import export_plots, pca_2d, subsample, tsne_2d
from .training import (GOLDEN_KEYS, load_params, save_params, train, write_timing_csv)
from .tuning import default_space, tune

logger = logging.getLogger("kge")

COMMANDS = {
    "train": "train a model, evaluate it and write model.bin, loss.csv, metrics.csv",
    "tune": "search hyperparameters and print the golden setting",
    "eval": "evaluate a trained model.bin on a split",
    "project": "project trained embeddings to 2-D (embedding_2d.csv, embedding.svg)",
}


class UsageError(UserError):
    hint = "run `kge -h` or `kge <command> -h` for usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def str2bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


ALIASES = {"model": ["-mn"], "golden": ["-ghp"]}


def _add_key(parser, key: cfgmod.Key):
    names = [key.flag, *ALIASES.get(key.name, [])]
    helptext = key.help
    if key.choices:
        helptext += f" {{{', '.join(map(str, key.choices))}}}"
    if key.default is not None:
        helptext += f" (default: {key.default})"
    kwargs = dict(dest=key.name, default=None, help=helptext)
    if key.type is bool:
        parser.add_argument(*names, nargs="?", const=True, type=str2bool, metavar="BOOL", **kwargs)
    elif key.type is list:
        parser.add_argument(*names, nargs="+", type=int, metavar="K", **kwargs)
    else:
        parser.add_argument(*names, type=key.type, metavar=key.name.upper(), **kwargs)


def flag_table() -> dict[str, str]:
    """Every long flag and its config key (shared by all subcommands)."""
    table = {"--config": "config", "--verbose": "verbose", "--quiet": "quiet"}
    table.update({k.flag: k.name for k in cfgmod.KEYS})
    return table


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON file of configuration keys")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="no progress lines")
    for key in cfgmod.KEYS:
        _add_key(common, key)

    epilog = "flags accepted by every command:\n" + "\n".join(
        f"  {k.flag:<26} {k.help}" for k in cfgmod.KEYS)
    epilog += ("\n  -mn is an alias of --model, -ghp of --golden"
               "\n  --config PATH, -v/--verbose, -q/--quiet")
    parser = _Parser(prog="kge", description="Knowledge graph embedding toolkit.",
                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}",
                                parser_class=_Parser)
    sub.required = True
    for name, helptext in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=helptext, description=helptext)
    return parser


def resolve(args) -> cfgmod.RunConfig:
    overrides = {k.name: getattr(args, k.name) for k in cfgmod.KEYS}
    return cfgmod.load_config(args.config, overrides)


def _dataset(cfg):
    if not cfg.dataset:
        raise DatasetError("no dataset given (use --dataset DIR)")
    return load_dataset(cfg.dataset)


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg):
    d = _dataset(cfg)
    out = _out(cfg)
    params, record = train(d, cfg.model, cfg.hyper, cfg.sampler, eval_every=cfg.eval_every)
    save_params(params, out / "model.bin")
    write_timing_csv(record, out / "timing.csv")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    report = None
    if len(d.split(cfg.split)):
        report, ranks = evaluate(params, d, cfg.split, workers=cfg.eval_workers,
                                 ks=cfg.hits_ks, return_ranks=True)
        write_ranks_csv(ranks, out / "ranks.csv", d.vocab)
        logger.info("%s", report)
    else:
        logger.warning("split %r is empty; skipping evaluation", cfg.split)
    export_plots(record, report, None, out)
    return 0


def cmd_tune(cfg):
    d = _dataset(cfg)
    out = _out(cfg)
    space = default_space()
    best, history = tune(d, cfg.model, space, cfg.budget, base_hp=cfg.hyper, seed=cfg.seed,
                         trials_path=out / "trials.jsonl", cfg=cfg.sampler)
    if set(best.assignment) == set(GOLDEN_KEYS):
        cfgmod.save_preset(best.assignment, out / f"golden_{cfg.model}.json")
    return 0


def _load_model(cfg, d):
    path = Path(cfg.out) / "model.bin"
    params = load_params(path)
    if (params.n_entities, params.n_relations) != (d.n_entities, d.n_relations):
        raise DatasetError(f"{path} was trained on a different vocabulary "
                           f"({params.n_entities} entities, {params.n_relations} relations)")
    return params


def cmd_eval(cfg):
    d = _dataset(cfg)
    params = _load_model(cfg, d)
    report, ranks = evaluate(params, d, cfg.split, workers=cfg.eval_workers, ks=cfg.hits_ks,
                             return_ranks=True)
    out = _out(cfg)
    write_metrics_csv(report, out / "metrics.csv")
    write_ranks_csv(ranks, out / "ranks.csv", d.vocab)
    print(report)
    return 0


def cmd_project(cfg):
    d = _dataset(cfg)
    params = _load_model(cfg, d)
    ent, rel = model_for(params).embeddings(params)
    labels = list(d.vocab.entities)
    kinds = ["entity"] * len(labels)
    X = ent
    if rel is not None and rel.shape[1] == ent.shape[1]:
        X = np.vstack([ent, rel])
        labels += list(d.vocab.relations)
        kinds += ["relation"] * len(d.vocab.relations)
    keep = subsample(len(X), cfg.max_points, cfg.seed)
    X = X[keep]
    labels = [labels[i] for i in keep]
    kinds = [kinds[i] for i in keep]
    if cfg.proj == "pca":
        proj = pca_2d(X, labels, kinds)
    else:
        proj = tsne_2d(X, cfg.perplexity, cfg.tsne_iters, cfg.seed, labels, kinds)
    export_plots(None, None, proj, _out(cfg))
    logger.info("projected %d points with %s (objective %.6f)", len(X), proj.method,
                proj.final_objective)
    return 0


HANDLERS = {"train": cmd_train, "tune": cmd_tune, "eval": cmd_eval, "project": cmd_project}


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("kge")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args)
        return HANDLERS[args.command](resolve(args))
    except SystemExit as exc:  # -h
        return int(exc.code or 0)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"hint: {exc.hint or UsageError.hint}", file=sys.stderr)
        return 1
    except KgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"hint: {exc.hint or 'rerun with -v for details'}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  internal failure
        logger.debug("internal failure", exc_info=True)
        print(f"error: internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        print("hint: rerun with -v for a traceback", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
