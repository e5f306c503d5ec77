"""Command-line interface: ``dpmnl <command> [options]``.

Commands
--------
simulate    write ``train.txt``, ``test.txt`` and ``truth.json`` for a simulation
train       run chains on a dataset file and write one trace per chain
predict     posterior-predictive probabilities for a covariate file
evaluate    compare a predictions file with the true labels
experiment  run a full experiment and write its tables

Errors are reported as a single line ``error: <kind>: <message>`` on stderr
with exit status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .config import Config, ConfigError, load_config
from .data import DataFormatError, SimSpec, expand_quadratic, generate, load_dataset, load_hierarchy, save_dataset
from .engine import ChainConfig, EngineError, run_chain
from .experiment import ExperimentError, ExperimentSpec, format_table, run_experiment, summary_rows, table_title
from .metrics import evaluate
from .model import ModelError, PriorSpec
from .predict import posterior_predictive, read_predictions, write_predictions
from .samplers import make_rng
from .trace import TraceFormatError, TraceWriter, make_header, read_trace

TRAIN_MODELS = ("dpmnl", "dpcormnl", "mnl", "qmnl", "cormnl")
CONDITIONAL = ("mnl", "qmnl", "cormnl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpmnl", description="Dirichlet-process mixtures of multinomial-logit experts")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("simulate", help="write simulated train/test data")
    common(p, "output directory")
    p.add_argument("--which", choices=("sim1", "sim2"), help="override [sim] which")

    p = sub.add_parser("train", help="run MCMC and write traces")
    common(p, "output directory for chain<k>.trace files")
    p.add_argument("--chains", type=int, help="override the number of chains")
    p.add_argument("--data", help="training dataset (default: [data] train)")
    p.add_argument("--model", choices=TRAIN_MODELS, default="dpmnl")

    p = sub.add_parser("predict", help="posterior-predictive class probabilities")
    p.add_argument("--out", required=True, help="predictions file")
    p.add_argument("--trace", nargs="+", required=True, help="trace files (chains are pooled)")
    p.add_argument("--data", required=True, help="dataset file with the cases to predict")
    p.add_argument("--seed", type=int, default=0, help="seed for the baseline-draw term")
    p.add_argument("--n-g0-draws", type=int, help="override the trace's n_g0_draws")

    p = sub.add_parser("evaluate", help="score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True, help="dataset file holding the true labels")
    p.add_argument("--hierarchy", help="hierarchy file for parent accuracy")
    p.add_argument("--out", help="also write the report as JSON")

    p = sub.add_parser("experiment", help="run a full experiment")
    common(p, "output directory for the tables")
    p.add_argument("--chains", type=int, help="override the number of chains")
    return parser


def _config(path) -> Config:
    return load_config(path) if path else Config()


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    sim = cfg.sim
    if args.which:
        sim = replace(sim, which=args.which)
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    train, test, truth = generate(sim)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(train, os.path.join(args.out, "train.txt"))
    save_dataset(test, os.path.join(args.out, "test.txt"))
    with open(os.path.join(args.out, "truth.json"), "w") as fh:
        json.dump(_jsonable({"spec": sim.__dict__, **truth}), fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote {train.n} training and {test.n} test cases to {args.out}")
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_train(args) -> int:
    cfg = _config(args.config)
    path = args.data or cfg.train_path
    if not path:
        raise UsageError("train needs --data or a [data] train entry")
    data = load_dataset(path, cfg.n_classes)
    hierarchy = None
    if args.model in ("cormnl", "dpcormnl"):
        if not cfg.hierarchy_path:
            raise UsageError(f"model {args.model} needs a [hierarchy] path")
        hierarchy = load_hierarchy(cfg.hierarchy_path, data.n_classes)
    features = "linear"
    if args.model == "qmnl":
        data = expand_quadratic(data)
        features = "quadratic"
    prior = cfg.prior or PriorSpec()
    config = cfg.chain or ChainConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.chains is not None:
        config = replace(config, n_chains=args.chains)
    config = replace(config, single_component=args.model in CONDITIONAL)
    os.makedirs(args.out, exist_ok=True)
    for c in range(config.n_chains):
        header = make_header(data, config, prior, c, args.model, hierarchy, features)
        trace_path = os.path.join(args.out, f"chain{c}.trace")
        with TraceWriter(trace_path, header) as writer:
            run_chain(data, config, prior, c, hierarchy, on_sample=writer.write)
        print(f"wrote {trace_path}")
    return 0


def cmd_predict(args) -> int:
    headers, samples = [], []
    for path in args.trace:
        h, s = read_trace(path)
        headers.append(h)
        samples.extend(s)
    first = headers[0]
    for path, h in zip(args.trace, headers):
        if (h.model, h.features, h.p, h.n_classes, h.sha256) != (
            first.model, first.features, first.p, first.n_classes, first.sha256
        ):
            raise TraceFormatError(f"{path}: trace does not match {args.trace[0]}")
    data = load_dataset(args.data, first.n_classes)
    if first.features == "quadratic":
        data = expand_quadratic(data)
    if data.p != first.p:
        raise DataFormatError(f"{args.data}: {data.p} covariates, traces expect {first.p}")
    n_draws = first.config.n_g0_draws if args.n_g0_draws is None else args.n_g0_draws
    report = posterior_predictive(
        data.x,
        samples,
        first.prior,
        first.composition(),
        n_g0_draws=n_draws,
        rng=make_rng(args.seed),
        conditional=first.model in CONDITIONAL,
    )
    write_predictions(report, args.out)
    print(f"wrote {len(report.labels)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    _, probs, labels = read_predictions(args.predictions)
    truth = load_dataset(args.data, probs.shape[1])
    hierarchy = load_hierarchy(args.hierarchy, probs.shape[1]) if args.hierarchy else None
    report = evaluate(labels, truth.y, probs.shape[1], hierarchy)
    print(report.format())
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.as_dict(), fh, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args.config)
    spec = ExperimentSpec.from_config(cfg, out_dir=args.out, seed=args.seed, chains=args.chains)
    result = run_experiment(spec)
    header, rows = summary_rows(result)
    sys.stdout.write(format_table(header, rows, table_title(spec)))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}

_ERROR_KINDS = (
    (UsageError, "usage", 2),
    (ConfigError, "config", 2),
    (DataFormatError, "data", 1),
    (TraceFormatError, "trace", 1),
    (ExperimentError, "experiment", 1),
    (EngineError, "engine", 1),
    (ModelError, "model", 1),
    (FileNotFoundError, "io", 1),
    (OSError, "io", 1),
    (ValueError, "value", 1),
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return COMMANDS[args.command](args)
    except Exception as exc:
        for cls, kind, status in _ERROR_KINDS:
            if isinstance(exc, cls):
                msg = str(exc).replace("\n", " ")
                if isinstance(exc, OSError) and exc.filename:
                    msg = f"{exc.strerror}: {exc.filename}"
                if kind == "usage":
                    sys.stderr.write(parser.format_usage())
                sys.stderr.write(f"error: {kind}: {msg}\n")
                return status
        raise


if __name__ == "__main__":
    sys.exit(main())
