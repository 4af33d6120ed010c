import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import random_model
from ltsf import baselines, bench, checkpoint, dataio, nn
from ltsf.bench import BenchmarkReport, ReportRow
from ltsf.dataio import DatasetContainer, StandardScaler
from ltsf.dynsys import TrajectorySet
from ltsf.tasks import ForecastTask


def test_metric_examples():
    assert bench.mse([1.0, 1.0], [0.0, 2.0]) == 1.0
    assert bench.mae([1.0, 1.0], [0.0, 2.0]) == 1.0
    y = np.random.default_rng(0).normal(size=(3, 4, 2))
    assert bench.mse(y, y) == 0.0 == bench.mae(y, y)
    with pytest.raises(ValueError):
        bench.mse(np.zeros(3), np.zeros(4))


def test_train_mean_prediction_on_standardised_data():
    rng = np.random.default_rng(1)
    c = DatasetContainer("n", TrajectorySet(3.0 + 2.0 * rng.normal(size=(200, 50, 2))),
                         TrajectorySet(3.0 + 2.0 * rng.normal(size=(200, 50, 2))))
    normed, _ = dataio.normalize(c)
    test = normed.test.data
    assert abs(bench.mse(np.zeros_like(test), test) - 1.0) < 0.02


def white_noise(n_train=20, n_test=200, length=1000, D=1, seed=2):
    rng = np.random.default_rng(seed)
    return DatasetContainer("noise", TrajectorySet(rng.normal(size=(n_train, length, D))),
                            TrajectorySet(rng.normal(size=(n_test, length, D))))


def test_evaluate_persistence():
    const = DatasetContainer("c", TrajectorySet(np.full((3, 20, 2), 1.5)), TrajectorySet(np.full((2, 20, 2), 1.5)))
    assert bench.evaluate(baselines.PersistenceModel(), const, ForecastTask(5, 15)) == (0.0, 0.0)
    m, _ = bench.evaluate(baselines.PersistenceModel(), white_noise(n_train=2000, n_test=8000, length=40),
                          ForecastTask(8, 32))
    assert 1.9 <= m <= 2.1


def test_format_value_examples():
    assert bench.format_value(0.0049, scale100=True) == "0.49"
    assert bench.format_value(0.004) == "0.00"
    assert bench.format_value(math.nan) == "N/A"


def test_best_marks_ties_and_missing():
    assert bench.best_marks([0.5, 0.25, 0.25, math.nan]) == [False, True, True, False]
    assert bench.best_marks([math.nan, math.nan]) == [False, False]


@settings(max_examples=50)
@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=8), st.floats(1e-3, 1e3))
def test_best_marking_is_scale_invariant(values, scale):
    # integer-valued metrics differ by far more than a rounding error after scaling
    vals = [float(v) for v in values]
    assert bench.best_marks(vals) == bench.best_marks([v * scale for v in vals])


def report_of(rows, **kw):
    r = BenchmarkReport([ReportRow(*row, None, 0.0) for row in rows], **kw)
    return r


def test_render_table_marks_best_per_row():
    r = report_of([("sine", 8, "a", 0.0049, 0.05), ("sine", 8, "b", 0.0020, 0.06)],
                  scale100={"sine": True}, dataset_order=["sine"], model_order=["a", "b"])
    md = bench.render_table(r)
    assert "sine (x100)" in md
    row = md.splitlines()[2]
    assert "| 0.49 | **5.00** | **0.20** | 6.00 |" in row
    csv_text = bench.render_table(r, fmt="csv", metric="mse")
    assert csv_text.splitlines() == ["dataset,L,a MSE,b MSE", "sine (x100),8,0.49,0.20*"]
    with pytest.raises(ValueError):
        bench.render_table(r, fmt="html")


def test_render_table_na_cells():
    r = report_of([("x", 2, "a", math.nan, math.nan), ("x", 2, "b", 1.0, 1.0)], model_order=["a", "b"])
    assert "| x | 2 | N/A | N/A | **1.00** | **1.00** |" in bench.render_table(r)


def _bars(svg):
    return {m.group(1): float(m.group(2))
            for m in re.finditer(r'data-model="([^"]+)" data-value="[^"]+" x="[^"]+" y="[^"]+" width="[^"]+" height="([^"]+)"', svg)}


def test_bar_heights_are_proportional():
    r = report_of([("d", 8, "a", 1.0, 0.0), ("d", 8, "b", 2.0, 0.0)], model_order=["a", "b"])
    bars = _bars(bench.render_bar_svg(r))
    assert bars["b"] == pytest.approx(2 * bars["a"], rel=1e-12)
    single = report_of([("d", 8, "a", 0.3, 0.0)])
    svg = bench.render_bar_svg(single)
    assert svg.count('class="bar"') == 1
    assert 'data-value="0.3"' in svg


def test_group_average():
    r = report_of([("d1", 8, "a", 0.8, 0.0), ("d2", 8, "a", 0.6, 0.0)])
    avgs, _ = bench.group_averages(r, {"g": ["d1", "d2"]})
    assert avgs["g"]["a"] == pytest.approx(0.7, abs=1e-15)
    assert 'data-value="0.7"' in bench.render_bar_svg(r, {"g": ["d1", "d2"]})


def test_empty_report_cannot_be_plotted():
    with pytest.raises(ValueError):
        bench.render_bar_svg(BenchmarkReport())


def tiny_config(models):
    return {
        "seed": 1,
        "datasets": {"sine": {"system": "sinewave", "n_train": 40, "n_test": 10, "traj_len": 60,
                              "lookbacks": [8], "scale100": True}},
        "models": models,
    }


def test_empty_model_list_gives_empty_report():
    assert len(bench.run_benchmark(tiny_config({}))) == 0


def test_two_models_give_two_rows_and_best_marking():
    rep = bench.run_benchmark(tiny_config({"persistence": {"model": "persistence"},
                                           "nlinear": {"model": "nlinear", "lambda": 1e-6}}))
    assert [(r.model, r.lookback) for r in rep.rows] == [("persistence", 8), ("nlinear", 8)]
    nl = rep.rows[1]
    assert nl.mse < rep.rows[0].mse
    assert nl.param_count == baselines.nlinear_param_count(8, 52, 1)
    row = bench.render_table(rep, metric="mse").splitlines()[2]
    assert row.endswith("**" + bench.format_value(nl.mse, True) + "** |")


def test_report_csv_is_deterministic_and_worker_independent():
    cfg = tiny_config({"p": {"model": "persistence"}, "n": {"model": "nlinear-b", "lambda": 1e-3},
                       "l": {"model": "linode", "latent_dim": 3, "decoder_hidden": [], "epochs": 2}})
    a = bench.run_benchmark(cfg).to_csv()
    b = bench.run_benchmark(cfg, workers=3).to_csv()
    assert a == b
    back = BenchmarkReport.from_csv(a)
    assert back.to_csv() == a


def test_failed_cell_is_recorded_not_raised():
    cfg = tiny_config({"bad": {"model": "nlinear", "lambda": 0.0}, "p": {"model": "persistence"}})
    cfg["datasets"]["sine"]["lookbacks"] = [59]  # single-trajectory-rank design with lambda = 0
    cfg["datasets"]["sine"]["n_train"] = 5
    rep = bench.run_benchmark(cfg)
    assert not rep.rows[0].ok and rep.rows[1].ok
    assert "N/A" in rep.to_csv()
    assert "N/A" in bench.render_table(rep)


def test_truncation_reaches_the_trainer(monkeypatch):
    seen = []
    real = nn.train_adam

    def spy(model, container, *a, **kw):
        seen.append(container.train.n_traj)
        return real(model, container, *a, **kw)

    monkeypatch.setattr(nn, "train_adam", spy)
    cfg = tiny_config({"l": {"model": "latent-nlinear", "epochs": 1}})
    cfg["datasets"]["sine"].update(n_train=50, truncate_train=30)
    bench.run_benchmark(cfg)
    assert seen == [30]


def test_trained_metric_is_minimum_over_checkpoints():
    c = white_noise(n_train=30, n_test=10, length=24, D=2)
    res = bench.fit_model("linode", c, ForecastTask(4, 20), {"latent_dim": 3, "epochs": 5, "learning_rate": 0.05,
                                                             "decoder_hidden": ()})
    assert res.mse <= res.history.records[-1]["test_mse"]
    assert res.mae <= res.history.records[-1]["test_mae"]
    with pytest.raises(ValueError):
        bench.fit_model("lstm", c, ForecastTask(4, 20))


def test_default_configs_parse():
    from importlib import resources

    for name in ("default.toml", "quick.toml"):
        with resources.as_file(resources.files("ltsf") / "configs" / name) as path:
            cfg = bench.load_config(path)
        assert cfg["datasets"] and cfg["models"]
        for mcfg in cfg["models"].values():
            assert mcfg["model"] in bench.MODEL_KINDS
    default = bench.load_config(str(resources.files("ltsf") / "configs" / "default.toml"))
    assert default["datasets"]["sinewave"]["lookbacks"] == [2, 8, 96]


@pytest.mark.parametrize("make", [
    lambda: random_model(3, 4, 2, 3, delay=1.5, encoder_hidden=(5,)),
    lambda: baselines.NLinearModel(3, 2, 2, "B", np.arange(24.0).reshape(6, 4), np.ones(4)),
    lambda: baselines.LatentNLinearModel.init(3, 2, 2, 2, decoder_hidden=(4,), seed=5),
    lambda: baselines.PersistenceModel(),
])
def test_checkpoint_round_trip(tmp_path, make):
    model = make()
    scaler = StandardScaler(np.array([1.0, -2.0]), np.array([0.5, 3.0]))
    path = tmp_path / "m.ckpt"
    checkpoint.save_model(model, path, scaler, {"dataset": "toy"})
    back, sc, meta = checkpoint.load_model(path)
    assert meta["dataset"] == "toy"
    np.testing.assert_array_equal(sc.mean, scaler.mean)
    X = np.random.default_rng(0).normal(size=(3, getattr(model, "lookback", 3), 2))
    np.testing.assert_array_equal(back.predict(X, 2), model.predict(X, 2))
    assert baselines.count_params(back) == baselines.count_params(model)
    with pytest.raises(dataio.FormatError):
        dataio.load(path)


def test_checkpoint_truncation_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save_model(random_model(1, 2, 1, 2), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(dataio.TruncatedError):
        checkpoint.load_model(path)
