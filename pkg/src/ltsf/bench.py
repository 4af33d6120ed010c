"""Evaluation protocol, benchmark runner and report rendering.

Benchmark configs are TOML files::

    seed = 0

    [datasets.sinewave]
    system = "sinewave"        # generate on the fly, or: path = "data.ltsf"
    n_train = 1000
    n_test = 200
    lookbacks = [2, 8, 96]
    scale100 = true            # display metrics multiplied by 100
    truncate_train = 1000      # optional

    [models.nlinear]
    model = "nlinear"
    lambda = 1e-6

    [models.linode]
    model = "linode"
    epochs = 20
    latent_dim = 16

Model keys use the same names as the ``ltsf train`` flags (dashes become
underscores).
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import baselines, dataio, dynsys, linode, nn
from .dataio import DatasetContainer
from .matexp import MatrixClass
from .numkit import NumericalError
from .tasks import ForecastTask, mae, metrics_batched, mse

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ForecastTask", "mse", "mae", "evaluate", "MODEL_KINDS", "fit_model", "FitResult",
    "ReportRow", "BenchmarkReport", "load_config", "run_benchmark", "render_table",
    "render_bar_svg", "format_value", "best_marks",
]

log = logging.getLogger(__name__)

MODEL_KINDS = ("linode", "linode-dde", "nlinear", "nlinear-b", "latent-nlinear", "persistence")


def evaluate(model, container: DatasetContainer, task: ForecastTask, normalized: bool = False) -> tuple[float, float]:
    """Test-set MSE and MAE on the train-standardised scale."""
    if not normalized:
        container, _ = dataio.normalize(container)
    X, Y = task.split(container.test.data)
    return metrics_batched(model, X, Y)


@dataclass
class FitResult:
    model: object
    mse: float
    mae: float
    history: nn.TrainHistory | None = None


def _train_config(opts: dict) -> nn.TrainConfig:
    kw = {}
    for key in ("learning_rate", "batch_size", "epochs", "eval_every", "seed", "beta1", "beta2", "epsilon"):
        if key in opts:
            kw[key] = opts[key]
    if "curriculum" in opts:
        kw["curriculum"] = tuple(tuple(stage) for stage in opts["curriculum"])
    return nn.TrainConfig(**kw)


def _hidden(value) -> tuple:
    if value is None:
        return ()
    if isinstance(value, str):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return tuple(int(v) for v in value)


def fit_model(kind: str, container: DatasetContainer, task: ForecastTask, opts: dict | None = None,
              normalized: bool = False) -> FitResult:
    """Fit or train one model and report its test metrics.

    Trained models report the minimum test MSE and the minimum test MAE seen
    over evaluation checkpoints; closed-form models report their single fit.
    """
    opts = dict(opts or {})
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    if not normalized:
        container, _ = dataio.normalize(container)
    seed = int(opts.get("seed", 0))
    D = container.train.dim
    if kind == "persistence":
        model = baselines.PersistenceModel()
    elif kind in ("nlinear", "nlinear-b"):
        variant = "B" if kind == "nlinear-b" else opts.get("variant", "A")
        model = baselines.nlinear_fit(container, task.lookback, task.horizon, variant,
                                      float(opts.get("lambda", 0.0)), opts.get("stride"), normalized=True)
    else:
        cfg = _train_config(opts)
        if kind == "latent-nlinear":
            model = baselines.LatentNLinearModel.init(
                task.lookback, task.horizon, D, int(opts.get("latent_dim", 2)),
                _hidden(opts.get("encoder_hidden")), _hidden(opts.get("decoder_hidden")), seed)
        else:
            delay = opts.get("delay", 1.0 if kind == "linode-dde" else None)
            model = linode.LatentLinearODEModel.init(
                task.lookback, D, int(opts.get("latent_dim", 50)),
                MatrixClass(opts.get("matrix_class", MatrixClass.SKEW_PLUS_DIAG.value)),
                _hidden(opts.get("encoder_hidden")), _hidden(opts.get("decoder_hidden", (64,))),
                None if delay is None else float(delay), seed=seed)
        model, history = nn.train_adam(model, container, task, cfg, normalized=True)
        if not history.records:
            m, a = evaluate(model, container, task, normalized=True)
            return FitResult(model, m, a, history)
        return FitResult(model, history.best_test_mse, min(r["test_mae"] for r in history.records), history)
    m, a = evaluate(model, container, task, normalized=True)
    return FitResult(model, m, a)


@dataclass
class ReportRow:
    dataset: str
    lookback: int
    model: str
    mse: float
    mae: float
    param_count: int | None
    wall_time: float

    @property
    def ok(self) -> bool:
        return math.isfinite(self.mse)


@dataclass
class BenchmarkReport:
    rows: list[ReportRow] = field(default_factory=list)
    decimals: int = 2
    scale100: dict[str, bool] = field(default_factory=dict)
    dataset_order: list[str] = field(default_factory=list)
    model_order: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def sort(self) -> None:
        d_rank = {d: i for i, d in enumerate(self.dataset_order)}
        m_rank = {m: i for i, m in enumerate(self.model_order)}
        self.rows.sort(key=lambda r: (d_rank.get(r.dataset, len(d_rank)), r.dataset, r.lookback,
                                      m_rank.get(r.model, len(m_rank)), r.model))

    def to_csv(self) -> str:
        """Full-precision long-format CSV; wall time is left out so output is reproducible."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "lookback", "model", "mse", "mae", "param_count", "scale100"])
        for r in self.rows:
            w.writerow([r.dataset, r.lookback, r.model, _num(r.mse), _num(r.mae),
                        "" if r.param_count is None else r.param_count, int(self.scale100.get(r.dataset, False))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> BenchmarkReport:
        report = cls()
        for rec in csv.DictReader(io.StringIO(text)):
            ds, model = rec["dataset"], rec["model"]
            if ds not in report.dataset_order:
                report.dataset_order.append(ds)
            if model not in report.model_order:
                report.model_order.append(model)
            report.scale100[ds] = rec.get("scale100", "0") == "1"
            pc = rec.get("param_count", "")
            report.rows.append(ReportRow(ds, int(rec["lookback"]), model, _parse_num(rec["mse"]),
                                         _parse_num(rec["mae"]), int(pc) if pc else None, math.nan))
        return report


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else "N/A"


def _parse_num(text: str) -> float:
    return math.nan if text in ("", "N/A") else float(text)


def load_config(path_or_dict) -> dict:
    if isinstance(path_or_dict, dict):
        return path_or_dict
    with open(path_or_dict, "rb") as fh:
        return tomllib.load(fh)


def load_dataset(name: str, dcfg: dict, seed: int, workers: int = 1, base_dir: Path | None = None) -> DatasetContainer:
    if "path" in dcfg:
        path = Path(dcfg["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        container = dataio.load(path)
    else:
        system = dcfg.get("system", name)
        spec = dynsys.GeneratorSpec(
            system, n_train=int(dcfg.get("n_train", 18000)), n_test=int(dcfg.get("n_test", 2000)),
            traj_len=dcfg.get("traj_len"), seed=int(dcfg.get("seed", seed)),
            noise_enabled=bool(dcfg.get("noise", True)), overrides=dict(dcfg.get("overrides", {})),
        )
        container = dataio.container_from_generated(name, spec, dynsys.generate(spec, workers=workers))
    if "truncate_train" in dcfg:
        container = container.truncate_train(int(dcfg["truncate_train"]))
    return container


def _run_cell(container, ds_name, L, model_name, mcfg, seed):
    kind = mcfg.get("model", model_name)
    opts = {"seed": seed, **{k: v for k, v in mcfg.items() if k != "model"}}
    task = ForecastTask.for_length(container.train.traj_len, L, ds_name)
    start = time.perf_counter()
    try:
        res = fit_model(kind, container, task, opts, normalized=True)
        params = baselines.count_params(res.model)
        return ReportRow(ds_name, L, model_name, res.mse, res.mae, params, time.perf_counter() - start)
    except (NumericalError, ValueError, ArithmeticError, MemoryError) as exc:
        log.warning("cell %s L=%d %s failed: %s", ds_name, L, model_name, exc)
        return ReportRow(ds_name, L, model_name, math.nan, math.nan, None, time.perf_counter() - start)


def run_benchmark(config, workers: int = 1) -> BenchmarkReport:
    """Run every (dataset, lookback, model) cell of a benchmark config.

    Failed cells become N/A rows; the run continues.  Rows are sorted by
    config order, so the report does not depend on ``workers``.
    """
    base_dir = None if isinstance(config, dict) else Path(config).parent
    cfg = load_config(config)
    seed = int(cfg.get("seed", 0))
    datasets = cfg.get("datasets", {})
    models = cfg.get("models", {})
    report = BenchmarkReport(decimals=int(cfg.get("decimals", 2)), dataset_order=list(datasets), model_order=list(models))
    if not models:
        return report
    for ds_name, dcfg in datasets.items():
        report.scale100[ds_name] = bool(dcfg.get("scale100", False))
        container, _ = dataio.normalize(load_dataset(ds_name, dcfg, seed, workers, base_dir))
        lookbacks = dcfg.get("lookbacks") or dynsys.DEFAULTS.get(dcfg.get("system", ds_name), (0, 0, ()))[2]
        jobs = [(int(L), m) for L in lookbacks for m in models]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                rows = list(ex.map(lambda job: _run_cell(container, ds_name, job[0], job[1], models[job[1]], seed), jobs))
        else:
            rows = [_run_cell(container, ds_name, L, m, models[m], seed) for L, m in jobs]
        report.rows.extend(rows)
    report.sort()
    return report


def format_value(x: float, scale100: bool = False, decimals: int = 2) -> str:
    if not math.isfinite(x):
        return "N/A"
    return f"{x * 100.0 if scale100 else x:.{decimals}f}"


def best_marks(values) -> list[bool]:
    """Mark every finite value equal to the row minimum; ties are all marked."""
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return [False] * len(values)
    lo = min(finite)
    return [math.isfinite(v) and v == lo for v in values]


def _grid(report: BenchmarkReport):
    keys = []
    cells = {}
    for r in report.rows:
        k = (r.dataset, r.lookback)
        if k not in cells:
            keys.append(k)
            cells[k] = {}
        cells[k][r.model] = r
    models = [m for m in report.model_order if any(m in c for c in cells.values())]
    models += sorted({r.model for r in report.rows} - set(models))
    return keys, cells, models


def render_table(report: BenchmarkReport, fmt: str = "markdown", metric: str = "both") -> str:
    """Render the report as a wide table with one (dataset, L) per row.

    Best values per row and metric are marked (bold in markdown, a trailing
    ``*`` in CSV).  Datasets flagged ``scale100`` show metrics times 100.
    """
    if fmt not in ("markdown", "csv"):
        raise ValueError(f"unknown table format {fmt!r}")
    metrics = ("mse", "mae") if metric == "both" else (metric,)
    keys, cells, models = _grid(report)
    header = ["dataset", "L"] + [f"{m} {k.upper()}" for m in models for k in metrics]
    body = []
    for ds, L in keys:
        row_cells = cells[(ds, L)]
        scale = report.scale100.get(ds, False)
        texts = {}
        for k in metrics:
            vals = [getattr(row_cells[m], k) if m in row_cells else math.nan for m in models]
            marks = best_marks(vals)
            for m, v, best in zip(models, vals, marks):
                s = format_value(v, scale, report.decimals)
                if best:
                    s = f"**{s}**" if fmt == "markdown" else f"{s}*"
                texts[(m, k)] = s
        label = f"{ds} (x100)" if scale else ds
        body.append([label, str(L)] + [texts[(m, k)] for m in models for k in metrics])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")


def group_averages(report: BenchmarkReport, grouping: dict | None = None, metric: str = "mse"):
    """Per-group, per-model means of a metric over all rows in the group (N/A ignored)."""
    if grouping is None:
        grouping = {}
        for r in report.rows:
            grouping.setdefault(r.dataset, [r.dataset])
    _, _, models = _grid(report)
    out = {}
    for g, members in grouping.items():
        members = set(members)
        out[g] = {}
        for m in models:
            vals = [getattr(r, metric) for r in report.rows if r.dataset in members and r.model == m and r.ok]
            if vals:
                out[g][m] = float(np.mean(vals))
    return out, models


def render_bar_svg(report: BenchmarkReport, grouping: dict | None = None, metric: str = "mse",
                   width: int = 640, height: int = 360) -> str:
    """Grouped bar chart of per-model metric averages; bar heights are linear in the value."""
    if not report.rows:
        raise ValueError("cannot plot an empty report")
    avgs, models = group_averages(report, grouping, metric)
    vmax = max((v for g in avgs.values() for v in g.values()), default=0.0)
    left, right, top, bottom = 60, 20, 30, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    n_groups = max(len(avgs), 1)
    slot = plot_w / n_groups
    bar_w = slot * 0.8 / max(len(models), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f"mean test {metric.upper()}</text>",
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{vmax:.3g}</text>',
        f'<text x="{left - 6}" y="{top + plot_h}" text-anchor="end" font-family="sans-serif" font-size="10">0</text>',
    ]
    for gi, (g, vals) in enumerate(avgs.items()):
        x0 = left + gi * slot + slot * 0.1
        for mi, m in enumerate(models):
            if m not in vals:
                continue
            v = vals[m]
            h = 0.0 if vmax <= 0 else plot_h * v / vmax
            x = x0 + mi * bar_w
            parts.append(
                f'<rect class="bar" data-group="{escape(g)}" data-model="{escape(m)}" data-value="{v!r}" '
                f'x="{x:.3f}" y="{top + plot_h - h:.6f}" width="{bar_w:.3f}" height="{h:.6f}" '
                f'fill="{_PALETTE[mi % len(_PALETTE)]}"/>'
            )
        parts.append(
            f'<text x="{left + (gi + 0.5) * slot:.1f}" y="{top + plot_h + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{escape(g)}</text>'
        )
    for mi, m in enumerate(models):
        y = height - 22
        x = left + mi * 110
        parts.append(f'<rect x="{x}" y="{y}" width="10" height="10" fill="{_PALETTE[mi % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{x + 14}" y="{y + 9}" font-family="sans-serif" font-size="10">{escape(m)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
