import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chillerkit.errors import ConfigError, InputError, TrainingError
from chillerkit.features import FeatureMatrix, FeatureSpec, ScalerParams, zscore_fit
from chillerkit.nn import (
    LinearModel,
    LstmModel,
    MlpModel,
    TrainConfig,
    load_model,
    lstm_forward,
    lstm_gradient,
    mlp_forward,
    mlp_gradient,
    predict_series,
    rmse,
    train,
)
from chillerkit.nn.models import sigmoid
from chillerkit.nn.training import fit_model, split_indices

T0 = np.datetime64("2024-01-01T00:00")


def zero_like(model):
    return type(model)(**{k: np.zeros_like(v) for k, v in model.params.items()})


def finite_diff(model, X, y, eps=1e-5):
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + eps
            up = np.mean((model.forward(X) - y) ** 2)
            flat[j] = keep - eps
            down = np.mean((model.forward(X) - y) ** 2)
            flat[j] = keep
            gflat[j] = (up - down) / (2 * eps)
        out[name] = g
    return out


def assert_grad_close(analytic, numeric):
    for k in numeric:
        a, n = analytic[k], numeric[k]
        scale = max(np.abs(a).max(), np.abs(n).max(), 1e-6)
        assert np.abs(a - n).max() / scale < 1e-4, k


def matrix(X, y, spec_name="Raw-N1", scaler=None):
    """FeatureMatrix wrapper around plain arrays."""
    n = len(y)
    spec = FeatureSpec.from_name(spec_name)
    scaler = scaler or zscore_fit(y[: int(0.7 * n)])
    ts = T0 + np.arange(n) * np.timedelta64(30, "m")
    cols = [(f"c{i}", "x") for i in range(X.shape[1])]
    return FeatureMatrix(spec, X, y, ts, cols, scaler, X[:, -1].copy(), int(0.7 * n))


# ---------------------------------------------------------------- MLP forward


def test_mlp_zero_network():
    m = zero_like(MlpModel.init(3, 4, np.random.default_rng(0)))
    assert mlp_forward(m, [1.0, -2.0, 5.0]) == 0.0


def test_mlp_constant_output():
    m = MlpModel(W1=np.zeros((4, 3)), b1=np.zeros(4), W2=np.ones(4), b2=2.5)
    assert mlp_forward(m, [9.0, 1.0, -3.0]) == 2.5


def test_mlp_matches_scalar_loops():
    rng = np.random.default_rng(1)
    m = MlpModel.init(3, 4, rng)
    m.params["b1"] = rng.normal(size=4)
    m.params["b2"] = np.asarray(0.3)
    x = [0.5, -1.2, 2.0]
    hidden = []
    for j in range(4):
        s = m.b1[j] + sum(m.W1[j][i] * x[i] for i in range(3))
        hidden.append(np.tanh(s))
    expected = float(m.b2) + sum(m.W2[j] * hidden[j] for j in range(4))
    assert mlp_forward(m, x) == pytest.approx(expected, abs=1e-12)


def test_mlp_width_mismatch():
    m = MlpModel.init(3, 4, np.random.default_rng(0))
    with pytest.raises(InputError):
        mlp_forward(m, [1.0, 2.0])


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    nin, nh, m = int(rng.integers(1, 6)), int(rng.integers(1, 7)), int(rng.integers(1, 9))
    model = MlpModel.init(nin, nh, rng)
    model.params["b1"] = rng.normal(size=nh) * 0.5
    X = rng.normal(size=(m, nin))
    y = rng.normal(size=m)
    assert_grad_close(mlp_gradient(model, X, y), finite_diff(model, X, y))


@pytest.mark.parametrize("seed", range(20))
def test_lstm_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    nin, nh = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    steps, m = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    if seed == 0:
        nin, nh, steps = 2, 3, 4
    model = LstmModel.init(nin, nh, rng)
    for g in "fico":
        model.params[f"b{g}"] = rng.normal(size=nh) * 0.5
    X = rng.normal(size=(m, steps, nin))
    y = rng.normal(size=m)
    assert_grad_close(lstm_gradient(model, X, y), finite_diff(model, X, y))


def test_gradients_vanish_on_perfect_fit():
    rng = np.random.default_rng(2)
    mlp = MlpModel.init(3, 5, rng)
    X = rng.normal(size=(7, 3))
    for g in mlp_gradient(mlp, X, mlp.forward(X)).values():
        assert np.all(g == 0)
    lstm = LstmModel.init(2, 3, rng)
    S = rng.normal(size=(6, 4, 2))
    for g in lstm_gradient(lstm, S, lstm.forward(S)).values():
        assert np.all(g == 0)


def test_duplicated_batch_leaves_gradient_unchanged():
    rng = np.random.default_rng(3)
    mlp = MlpModel.init(3, 5, rng)
    X, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    a = mlp_gradient(mlp, X, y)
    b = mlp_gradient(mlp, np.vstack([X, X]), np.concatenate([y, y]))
    for k in a:
        np.testing.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-15)
    lstm = LstmModel.init(2, 3, rng)
    S, ys = rng.normal(size=(5, 3, 2)), rng.normal(size=5)
    a = lstm_gradient(lstm, S, ys)
    b = lstm_gradient(lstm, np.concatenate([S, S]), np.concatenate([ys, ys]))
    for k in a:
        np.testing.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- LSTM forward


def test_lstm_zero_parameters_give_head_bias():
    m = zero_like(LstmModel.init(2, 3, np.random.default_rng(0)))
    m.params["b_head"] = np.asarray(0.7)
    _, cache, _ = m.run(np.random.default_rng(1).normal(size=(4, 5, 2)))
    for st_ in cache:
        assert np.all(st_["f"] == 0.5) and np.all(st_["i"] == 0.5) and np.all(st_["o"] == 0.5)
        assert np.all(st_["g"] == 0) and np.all(st_["c"] == 0) and np.all(st_["h"] == 0)
    assert np.all(m.forward(np.ones((3, 2, 2))) == 0.7)


def test_lstm_single_step_matches_cell_arithmetic():
    rng = np.random.default_rng(4)
    m = LstmModel.init(2, 3, rng)
    x = np.array([0.4, -1.1])
    z = np.concatenate([np.zeros(3), x])
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    f = sig(m.Wf @ z + m.bf)
    i = sig(m.Wi @ z + m.bi)
    g = np.tanh(m.Wc @ z + m.bc)
    o = sig(m.Wo @ z + m.bo)
    c = f * 0.0 + i * g
    h = o * np.tanh(c)
    expected = h @ m.w_head + m.b_head
    assert lstm_forward(m, x[None, :])[0] == pytest.approx(expected, abs=1e-12)


def test_lstm_errors():
    m = LstmModel.init(2, 3, np.random.default_rng(0))
    with pytest.raises(InputError):
        m.forward(np.zeros((1, 0, 2)))
    with pytest.raises(InputError):
        m.forward(np.zeros((1, 3, 5)))


@given(st.integers(0, 10_000))
def test_lstm_gate_ranges_and_cell_growth(seed):
    rng = np.random.default_rng(seed)
    m = LstmModel.init(3, 4, rng)
    for k in m.params:
        m.params[k] = m.params[k] * 3
    _, cache, _ = m.run(rng.normal(size=(5, 6, 3)) * 4)
    for st_ in cache:
        for gate in ("f", "i", "o"):
            assert np.all((st_[gate] >= 0) & (st_[gate] <= 1))
        assert np.all(np.abs(st_["g"]) <= 1) and np.all(np.abs(st_["tc"]) <= 1)
        assert np.all(np.abs(st_["c"]) <= np.abs(st_["c_prev"]) + 1)


def test_sigmoid_is_logistic():
    v = np.linspace(-30, 30, 61)
    np.testing.assert_allclose(sigmoid(v), 1 / (1 + np.exp(-v)), rtol=1e-14, atol=1e-15)


@given(st.integers(0, 10_000))
def test_mlp_hidden_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    m = MlpModel.init(4, 6, rng)
    m.params["b1"] = rng.normal(size=6)
    perm = rng.permutation(6)
    p = MlpModel(W1=m.W1[perm], b1=m.b1[perm], W2=m.W2[perm], b2=m.b2)
    X = rng.normal(size=(10, 4))
    np.testing.assert_allclose(p.forward(X), m.forward(X), rtol=0, atol=1e-12)


def test_model_json_roundtrip():
    rng = np.random.default_rng(5)
    for m in (MlpModel.init(3, 4, rng), LstmModel.init(2, 3, rng), LinearModel.init(3, 0, rng)):
        back = load_model(m.to_json())
        assert type(back) is type(m)
        for k in m.params:
            assert np.array_equal(back.params[k], m.params[k])


# ---------------------------------------------------------------- training


def test_linear_proxy_loss_non_increasing():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(200, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.normal(size=200)
    model = LinearModel.init(4, 0, rng)
    cfg = TrainConfig(lr=0.05, epochs=100, batch_size=None, optimizer="gd", clip=None)
    hist = fit_model(model, X, y, cfg, rng)
    assert np.all(np.diff(hist) <= 1e-15)
    assert hist[-1] < 0.02


def test_mlp_fits_linear_target():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(400, 3))
    y = 1000 + 100 * (X @ np.array([0.8, -0.5, 0.3]))
    data = matrix(X, y)
    _, rep = train("mlp", data, TrainConfig(runs=2, epochs=200, seed=0))
    assert rep.train_rmse < 0.05 * np.std(y[:280], ddof=1)


def small_data():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(120, 7))  # Raw-N1 layout: 6 static columns + 1 lag
    y = 500 + 50 * np.tanh(X[:, 0]) + 20 * X[:, 1] + rng.normal(0, 5, 120)
    return matrix(X, y)


def test_training_is_deterministic():
    data = small_data()
    cfg = TrainConfig(runs=1, epochs=20)
    m1, r1 = train("mlp", data, cfg)
    m2, r2 = train("mlp", data, cfg)
    assert r1.to_json() == r2.to_json()
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


@pytest.mark.parametrize("family", ["mlp", "lstm"])
def test_selected_run_is_first_minimum(family):
    data = small_data()
    _, rep = train(family, data, TrainConfig(runs=4, epochs=5))
    vals = rep.run_val_rmse
    assert rep.selected_run == vals.index(min(vals))
    assert rep.val_rmse == min(vals)


def test_predict_round_trip_matches_train_rmse():
    data = small_data()
    model, rep = train("mlp", data, TrainConfig(runs=1, epochs=30))
    tr, _, _ = split_indices(len(data), TrainConfig())
    pred = predict_series(model, data, rows=tr)
    assert rmse(data.y[tr], pred.values) == pytest.approx(rep.train_rmse, rel=1e-12)
    assert pred.provenance == "predicted"
    assert pred.timestamps[0] == data.timestamps[0] + np.timedelta64(30, "m")


def test_rmse_scales_with_target_sigma():
    data = small_data()
    model, _ = train("mlp", data, TrainConfig(runs=1, epochs=10))
    pred_z = model.forward(data.X)
    norm = rmse(data.y_scaled, pred_z)
    denorm = rmse(data.y, predict_series(model, data).values)
    assert denorm == pytest.approx(norm * data.load_scaler.std[0], rel=1e-10)


def test_predict_zero_network_gives_scaler_mean():
    rng = np.random.default_rng(0)
    data = matrix(rng.normal(size=(20, 3)), rng.normal(size=20))
    model = zero_like(MlpModel.init(3, 4, rng))
    out = predict_series(model, data, ScalerParams([1000.0], [100.0]))
    assert np.all(out.values == 1000.0)
    with pytest.raises(InputError):
        predict_series(MlpModel.init(5, 4, rng), data)


def test_all_runs_diverging_raise():
    data = small_data()
    with pytest.raises(TrainingError):
        train("mlp", data, TrainConfig(runs=2, epochs=5, lr=1e200, optimizer="gd", clip=None))


def test_config_and_split_errors():
    with pytest.raises(ConfigError):
        TrainConfig(split=(0.5, 0.2, 0.2)).validate()
    with pytest.raises(ConfigError):
        TrainConfig(runs=0).validate()
    with pytest.raises(ConfigError):
        train("gru", small_data())
    with pytest.raises(InputError):
        split_indices(3, TrainConfig())
    tr, va, te = split_indices(100, TrainConfig())
    assert (len(tr), len(va), len(te)) == (70, 15, 15)
    assert tr[-1] + 1 == va[0] and va[-1] + 1 == te[0]


# ---------------------------------------------------------------- rmse


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(3.5355339059327378, abs=1e-12)
    with pytest.raises(InputError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(InputError):
        rmse([], [])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=30))
def test_rmse_symmetric(pairs):
    a, b = zip(*pairs)
    assert rmse(a, b) == rmse(b, a)
