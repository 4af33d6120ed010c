import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltsf import baselines, dataio, dynsys, nn
from ltsf.baselines import LatentNLinearModel, NLinearModel
from ltsf.dataio import DatasetContainer
from ltsf.dynsys import TrajectorySet
from ltsf.numkit import NumericalError
from ltsf.tasks import ForecastTask, mse


def container(train, test=None):
    test = train[:1] if test is None else test
    return DatasetContainer("toy", TrajectorySet(train), TrajectorySet(test))


@pytest.mark.parametrize("variant", ["A", "B"])
def test_zero_weights_repeat_last_state(variant):
    X = np.random.default_rng(0).normal(size=(4, 5, 3))
    m = NLinearModel(5, 7, 3, variant)
    np.testing.assert_array_equal(m.predict(X), baselines.persistence_predict(X, 7))


def test_hand_example_variant_a():
    m = NLinearModel(1, 1, 1, "A", W=[[2.0]], b=[0.0])
    assert m.predict(np.array([[3.0]]))[0, 0] == 3.0
    b = NLinearModel(1, 1, 1, "B", W=[[2.0]], b=[0.0])
    assert b.predict(np.array([[3.0]]))[0, 0] == 9.0


def test_predict_shape_errors():
    m = NLinearModel(3, 2, 2)
    with pytest.raises(ValueError):
        m.predict(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        m.predict(np.zeros((3, 2)), horizon=3)
    with pytest.raises(ValueError):
        NLinearModel(3, 2, 2, W=np.zeros((5, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(-1000, 1000), min_size=2, max_size=2))
def test_variant_a_shift_equivariance(seed, shift):
    # dyadic inputs with few significant bits keep every sum and product exact
    rng = np.random.default_rng(seed)
    L, T, D = 4, 3, 2
    W = rng.integers(-8, 9, size=(L * D, T * D)) / 8.0
    b = rng.integers(-8, 9, size=T * D) / 8.0
    m = NLinearModel(L, T, D, "A", W, b)
    X = rng.integers(-64, 65, size=(5, L, D)) / 64.0
    c = np.array(shift, dtype=float) / 8.0
    np.testing.assert_array_equal(m.predict(X + c), m.predict(X) + c)


@pytest.mark.parametrize("variant", ["A", "B"])
def test_plant_and_recover(variant):
    rng = np.random.default_rng(1)
    L, T, D, n = 3, 4, 2, 200
    W = rng.normal(size=(L * D, T * D))
    if variant == "A":
        W[(L - 1) * D:] = 0.0  # multiplies the always-zero last residual, so not identifiable
    b = rng.normal(size=T * D)
    X = rng.normal(size=(n, L, D))
    truth = NLinearModel(L, T, D, variant, W, b)
    data = np.concatenate([X, truth.predict(X)], axis=1)
    fit = baselines.nlinear_fit(container(data), L, T, variant, lam=0.0, normalized=True)
    assert np.max(np.abs(fit.W - W)) < 1e-8
    assert np.max(np.abs(fit.b - b)) < 1e-8


def test_constant_trajectories_give_zero_map():
    data = np.tile(np.arange(1.0, 11.0)[:, None, None], (1, 12, 1))
    fit = baselines.nlinear_fit(container(data), 4, 8, lam=1e-3, normalized=True)
    np.testing.assert_allclose(fit.W, 0.0, atol=1e-12)
    X, Y = ForecastTask(4, 8).split(data)
    np.testing.assert_allclose(fit.predict(X), Y, atol=1e-12)


def test_fit_normalises_with_train_statistics():
    rng = np.random.default_rng(2)
    c = container(5.0 + 3.0 * rng.normal(size=(50, 10, 2)), rng.normal(size=(5, 10, 2)))
    a = baselines.nlinear_fit(c, 4, lam=1e-3)
    normed, _ = dataio.normalize(c)
    b = baselines.nlinear_fit(normed, 4, lam=1e-3, normalized=True)
    np.testing.assert_array_equal(a.W, b.W)
    assert a.horizon == 6


def test_fit_rejects_long_window():
    with pytest.raises(ValueError):
        baselines.nlinear_fit(container(np.zeros((5, 6, 1))), 4, 3, normalized=True)


def test_strided_fit_uses_more_windows():
    series = np.sin(0.3 * np.arange(400))[None, :, None] + 0.01 * np.random.default_rng(3).normal(size=(1, 400, 1))
    with pytest.raises(NumericalError):
        baselines.nlinear_fit(container(series), 40, 20, lam=0.0, normalized=True)  # one window: rank deficient
    fit = baselines.nlinear_fit(container(series), 40, 20, lam=0.0, stride=5, normalized=True)
    assert fit.W.shape == (40, 20)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_closed_form_is_optimal(seed, lam):
    rng = np.random.default_rng(seed)
    c = container(rng.normal(size=(30, 7, 2)))
    fit = baselines.nlinear_fit(c, 3, 4, lam=lam, normalized=True)
    base = baselines.ridge_objective(fit, c, lam, normalized=True)
    for _ in range(5):
        bumped = NLinearModel(3, 4, 2, fit.variant, fit.W + 1e-3 * rng.normal(size=fit.W.shape), fit.b)
        assert baselines.ridge_objective(bumped, c, lam, normalized=True) >= base - 1e-10 * max(1.0, base)


def test_sinewave_scarce_regime():
    spec = dynsys.GeneratorSpec("sinewave", n_train=1000, n_test=200, seed=0)
    c = dataio.container_from_generated("sinewave", spec, dynsys.generate(spec))
    fit = baselines.nlinear_fit(c, 96, lam=1e-6)
    normed, _ = dataio.normalize(c)
    X, Y = ForecastTask(96, 1904).split(normed.test.data)
    assert mse(fit.predict(X), Y) * 100 < 0.05


def test_persistence_examples():
    const = np.full((3, 10, 2), 4.0)
    X, Y = ForecastTask(4, 6).split(const)
    assert mse(baselines.persistence_predict(X, 6), Y) == 0.0
    np.testing.assert_array_equal(baselines.persistence_predict(np.array([[1.0], [2.0]]), 3), [[2.0]] * 3)
    with pytest.raises(ValueError):
        baselines.persistence_predict(np.zeros((0, 2)), 3)
    assert baselines.PersistenceModel().count_params() == 0


def test_persistence_on_white_noise():
    # Var(y - x) = 2 for independent standard normals; errors share x_L, so sd ~ sqrt(2 / n_traj) = 0.016
    rng = np.random.default_rng(4)
    data = rng.normal(size=(8000, 40, 1))
    normed, _ = dataio.normalize(container(data, data[:1]))
    X, Y = ForecastTask(8, 32).split(normed.train.data)
    assert 1.9 <= mse(baselines.persistence_predict(X, 32), Y) <= 2.1


@pytest.mark.parametrize("L, D, N, expected", [(96, 17, 1000, 25_095_944), (96, 3, 2000, 1_650_768), (96, 1, 1440, 130_368)])
def test_nlinear_parameter_counts(L, D, N, expected):
    assert baselines.nlinear_param_count(L, N - L, D) == expected
    assert baselines.count_params(NLinearModel(L, N - L, D) if D < 17 else _lazy_count(L, N - L, D)) == expected


class _lazy_count:
    """Avoids allocating the 200 MB cheetah-shaped matrix."""

    def __init__(self, L, T, D):
        self.n = (L * D) * (T * D) + T * D

    def count_params(self):
        return self.n


def test_latent_nlinear_count_formula():
    L, T, D, dl = 96, 1344, 1, 2
    m = LatentNLinearModel.init(L, T, D, dl)
    expected = (D * dl + dl) + (L * dl) * (T * dl) + T * dl + (dl * D + D)
    assert baselines.count_params(m) == expected == 518_791


def test_identity_latent_model_equals_variant_b():
    rng = np.random.default_rng(5)
    L, T, D = 5, 6, 3
    nl = NLinearModel(L, T, D, "B", rng.normal(size=(L * D, T * D)), rng.normal(size=T * D))
    lat = LatentNLinearModel.identity(nl)
    X = rng.normal(size=(8, L, D))
    np.testing.assert_array_equal(lat.predict(X), nl.predict(X))


def test_zero_latent_map_repeats_last_state():
    m = LatentNLinearModel.init(4, 3, 2, 2)
    m.params["encoder.0.weight"] = np.eye(2)
    m.params["encoder.0.bias"][:] = 0.0
    m.params["decoder.0.weight"] = np.eye(2)
    m.params["decoder.0.bias"][:] = 0.0
    X = np.random.default_rng(6).normal(size=(5, 4, 2))
    np.testing.assert_array_equal(m.predict(X), baselines.persistence_predict(X, 3))


def test_latent_nlinear_gradient():
    rng = np.random.default_rng(7)
    m = LatentNLinearModel.init(3, 4, 2, 3, encoder_hidden=(5,), seed=1)
    for k in m.params:
        m.params[k] = m.params[k] + 0.1 * rng.normal(size=m.params[k].shape)
    X, Y = rng.normal(size=(6, 3, 2)), rng.normal(size=(6, 4, 2))
    _, g = m.loss_and_grad(X, Y)
    h = 1e-6
    for name, arr in m.params.items():
        fd = np.empty_like(arr)
        for i in range(arr.size):
            o = arr.flat[i]
            arr.flat[i] = o + h
            lp, _ = m.loss_and_grad(X, Y)
            arr.flat[i] = o - h
            lm, _ = m.loss_and_grad(X, Y)
            arr.flat[i] = o
            fd.flat[i] = (lp - lm) / (2 * h)
        assert np.max(np.abs(g[name] - fd)) <= 1e-6 * max(np.max(np.abs(fd)), 1e-12)


def test_latent_nlinear_trains_toward_variant_b():
    rng = np.random.default_rng(8)
    L, T, D, n = 3, 2, 1, 400
    X = rng.normal(size=(n, L, D))
    W = 0.3 * rng.normal(size=(L * D, T * D))
    data = np.concatenate([X, NLinearModel(L, T, D, "B", W).predict(X)], axis=1)
    c = container(data, data[:100])
    cfg = nn.TrainConfig(epochs=300, batch_size=100, learning_rate=2e-2, curriculum=[(1, 1)], seed=0)
    model, hist = baselines.latent_nlinear_fit(c, ForecastTask(L, T), 1, cfg, normalized=True)
    assert hist.best_test_mse < 1e-4
