"""``ltsf`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Model and dataset flags share their names with benchmark config keys.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from . import bench, checkpoint, dataio, dynsys
from .dataio import CsvImportError, FormatError
from .dynsys import GenerationError
from .numkit import NumericalError
from .tasks import ForecastTask

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("LTSF_WORKERS")
    if env is None:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise UsageError(f"LTSF_WORKERS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("LTSF_WORKERS must be >= 1")
    return value


def _key_value(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        return key, value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _add_workers(p):
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="parallel workers (default: $LTSF_WORKERS or 1); output does not depend on it")


def _add_data_source(p):
    src = p.add_argument_group("data source (one of --data or --system)")
    src.add_argument("--data", help="LTSF-TENSOR dataset file")
    src.add_argument("--system", choices=dynsys.SYSTEMS, help="generate a synthetic dataset on the fly")
    src.add_argument("--n-train", type=int, default=1000)
    src.add_argument("--n-test", type=int, default=200)
    src.add_argument("--traj-len", type=int, default=None)
    src.add_argument("--truncate-train", type=int, default=None, help="keep only the first N training trajectories")
    _add_workers(p)


def _add_model_flags(p):
    p.add_argument("--model", choices=bench.MODEL_KINDS, default=None)
    p.add_argument("--lookback", type=_positive_int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="ridge penalty (nlinear)")
    p.add_argument("--stride", type=_positive_int, default=None, help="extra windows per trajectory (nlinear)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--eval-every", type=_positive_int, default=None)
    p.add_argument("--latent-dim", type=_positive_int, default=None)
    p.add_argument("--encoder-hidden", default=None, help="comma-separated hidden widths")
    p.add_argument("--decoder-hidden", default=None, help="comma-separated hidden widths")
    p.add_argument("--delay", type=float, default=None)
    p.add_argument("--matrix-class", choices=["full", "skew_only", "diag_only", "skew_plus_diag"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ltsf", description="Long-term forecasting toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--system", required=True, choices=dynsys.SYSTEMS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=18000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--traj-len", type=int, default=None)
    p.add_argument("--no-noise", action="store_true", help="disable stochastic forcing (Lotka-Volterra)")
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                   metavar="KEY=VALUE", help="override a generator constant")
    p.add_argument("--name", default=None)
    _add_workers(p)

    p = sub.add_parser("import", help="window a CSV series into a dataset")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--traj-len", type=_positive_int, required=True)
    p.add_argument("--stride", type=_positive_int, default=1)
    p.add_argument("--split", default="0.8", help="train fraction or timestamp")
    p.add_argument("--columns", default=None, help="comma-separated value columns")
    p.add_argument("--time-column", default=None)
    p.add_argument("--subsample", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None)

    p = sub.add_parser("inspect", help="print shapes (and optionally statistics) of a file")
    p.add_argument("path")
    p.add_argument("--stats", action="store_true", help="load values and print summary statistics")

    p = sub.add_parser("train", help="fit a model and report test metrics")
    _add_data_source(p)
    _add_model_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write a checkpoint")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint (or persistence) on a dataset")
    _add_data_source(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--model", choices=["persistence"], default=None)
    p.add_argument("--lookback", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("benchmark", help="run a benchmark config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-csv", default=None, help="full-precision report CSV")
    p.add_argument("--out-md", default=None, help="markdown table")
    _add_workers(p)

    p = sub.add_parser("export-csv", help="write train.csv and test.csv")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("plot", help="bar chart SVG from a report CSV")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=["mse", "mae"], default="mse")
    p.add_argument("--group", action="append", default=[], metavar="NAME=DS1,DS2",
                   help="average these datasets into one group (repeatable)")
    return parser


def _load_source(args, seed: int):
    if (args.data is None) == (args.system is None):
        raise UsageError("give exactly one of --data or --system")
    if args.data is not None:
        container = dataio.load(args.data)
    else:
        spec = dynsys.GeneratorSpec(args.system, n_train=args.n_train, n_test=args.n_test,
                                    traj_len=args.traj_len, seed=seed)
        container = dataio.container_from_generated(args.system, spec, dynsys.generate(spec, workers=_workers(args)))
    if args.truncate_train is not None:
        container = container.truncate_train(args.truncate_train)
    return container


def _model_opts(args) -> dict:
    opts = {"seed": args.seed}
    mapping = {
        "lam": "lambda", "stride": "stride", "epochs": "epochs", "learning_rate": "learning_rate",
        "batch_size": "batch_size", "eval_every": "eval_every", "latent_dim": "latent_dim",
        "encoder_hidden": "encoder_hidden", "decoder_hidden": "decoder_hidden", "delay": "delay",
        "matrix_class": "matrix_class",
    }
    for attr, key in mapping.items():
        value = getattr(args, attr)
        if value is not None:
            opts[key] = value
    return opts


def _print_metrics(name, task, m, a):
    print(f"model={name} dataset={task.dataset} L={task.lookback} T={task.horizon}")
    print(f"test MSE: {m:.6g}")
    print(f"test MAE: {a:.6g}")
    print(f"test MSE x100: {bench.format_value(m, True)}")
    print(f"test MAE x100: {bench.format_value(a, True)}")


def cmd_generate(args):
    spec = dynsys.GeneratorSpec(args.system, n_train=args.n_train, n_test=args.n_test, traj_len=args.traj_len,
                                seed=args.seed, noise_enabled=not args.no_noise, overrides=dict(args.overrides))
    if spec.n_train < 1 or spec.n_test < 1:
        raise UsageError("--n-train and --n-test must both be >= 1")
    trajectories = dynsys.generate(spec, workers=_workers(args))
    container = dataio.container_from_generated(args.name or args.system, spec, trajectories)
    dataio.save(container, args.out)
    print(f"wrote {args.out}: train {container.train.shape}, test {container.test.shape}")


def cmd_import(args):
    split = args.split
    try:
        split = float(split)
    except ValueError:
        pass
    columns = None if args.columns is None else [c.strip() for c in args.columns.split(",") if c.strip()]
    container = dataio.import_csv(args.csv, args.traj_len, args.stride, split, columns, args.time_column,
                                  args.name, args.subsample, args.seed)
    dataio.save(container, args.out)
    print(f"wrote {args.out}: train {container.train.shape}, test {container.test.shape}")


def cmd_inspect(args):
    with open(args.path, "rb") as fh:
        meta = dataio._read_preamble(fh)
    if meta.get("format") == "checkpoint":
        model, scaler, meta = checkpoint.load_model(args.path)
        print(f"checkpoint: {meta.get('model')}")
        for k, v in meta.items():
            print(f"  {k}={v}")
        print(f"parameters: {model.count_params()}")
        return
    if args.stats:
        print(dataio.describe(dataio.load(args.path)), end="")
        return
    header = dataio.read_header(args.path)
    print(f"name: {header.metadata.get('name', '')}")
    print(f"train_data: {header.train_shape}")
    print(f"test_data: {header.test_shape}")
    print(f"timestamps: {'yes' if header.train_timestamps else 'no'}")
    for k, v in header.metadata.items():
        if k != "name":
            print(f"  {k}={v}")


def cmd_train(args):
    if args.model is None or args.lookback is None:
        raise UsageError("train needs --model and --lookback")
    container = _load_source(args, args.seed)
    task = ForecastTask.for_length(container.train.traj_len, args.lookback, container.name)
    if task.horizon < 1:
        raise UsageError(f"--lookback {args.lookback} leaves no horizon in trajectories of length {container.train.traj_len}")
    normed, scaler = dataio.normalize(container)
    result = bench.fit_model(args.model, normed, task, _model_opts(args), normalized=True)
    if not math.isfinite(result.mse):
        raise NumericalError("training produced no finite test metric")
    _print_metrics(args.model, task, result.mse, result.mae)
    print(f"parameters: {result.model.count_params()}")
    if args.out:
        checkpoint.save_model(result.model, args.out, scaler, {"dataset": container.name})
        print(f"wrote {args.out}")


def cmd_evaluate(args):
    if (args.checkpoint is None) == (args.model is None):
        raise UsageError("give exactly one of --checkpoint or --model persistence")
    container = _load_source(args, args.seed)
    if args.checkpoint:
        model, scaler, meta = checkpoint.load_model(args.checkpoint)
        name = meta.get("model", "?")
        lookback = getattr(model, "lookback", None) or args.lookback
    else:
        model, scaler, name = bench.baselines.PersistenceModel(), None, "persistence"
        lookback = args.lookback
    if lookback is None:
        raise UsageError("--lookback is required for this model")
    if scaler is None:
        container, _ = dataio.normalize(container)
    else:
        container = dataio.DatasetContainer(container.name, dataio.apply(scaler, container.train),
                                            dataio.apply(scaler, container.test), container.metadata)
    task = ForecastTask.for_length(container.test.traj_len, lookback, container.name)
    m, a = bench.evaluate(model, container, task, normalized=True)
    _print_metrics(name, task, m, a)


def cmd_benchmark(args):
    report = bench.run_benchmark(args.config, workers=_workers(args))
    table = bench.render_table(report, "markdown")
    print(table, end="")
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv(), encoding="utf-8")
    if args.out_md:
        Path(args.out_md).write_text(table, encoding="utf-8")


def cmd_export_csv(args):
    for path in dataio.export_csv(dataio.load(args.data), args.out):
        print(f"wrote {path}")


def cmd_plot(args):
    report = bench.BenchmarkReport.from_csv(Path(args.report).read_text(encoding="utf-8"))
    grouping = None
    if args.group:
        grouping = {}
        for spec in args.group:
            name, sep, members = spec.partition("=")
            if not sep or not name:
                raise UsageError(f"--group expects NAME=DS1,DS2, got {spec!r}")
            grouping[name] = [m.strip() for m in members.split(",") if m.strip()]
    if not report.rows:
        raise FormatError(f"{args.report} contains no rows")
    Path(args.out).write_text(bench.render_bar_svg(report, grouping, args.metric), encoding="utf-8")
    print(f"wrote {args.out}")


COMMANDS = {
    "generate": cmd_generate, "import": cmd_import, "inspect": cmd_inspect, "train": cmd_train,
    "evaluate": cmd_evaluate, "benchmark": cmd_benchmark, "export-csv": cmd_export_csv, "plot": cmd_plot,
}


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ltsf {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, GenerationError, FloatingPointError, ArithmeticError) as exc:
        print(f"ltsf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, CsvImportError, OSError, ValueError, KeyError) as exc:
        print(f"ltsf {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(dispatch(argv))
