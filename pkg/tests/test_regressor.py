import numpy as np
import pytest

from faultstab.errors import DataFormatError, TrainingError
from faultstab.regressor import (FeatureNormWarning, MlpModel, Objective, SampleBank, _minmax, evaluate,
                                 init_params, load_model, n_params, nn_index, nn_search, predict,
                                 prediction_lipschitz, save_model, train_mlp)


def _fd_grad(f, p, h=1e-6):
    g = np.zeros_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        g[i] = (f(p + e) - f(p - e)) / (2 * h)
    return g


@pytest.mark.parametrize("gamma", [0.0, 0.2, 1.0])
def test_gradient_matches_fd(gamma, rng):
    for dims in [(2, 1, 1), (4, 3, 2), (5, 4, 3, 2)]:
        X = rng.standard_normal((6, dims[0]))
        T = rng.uniform(size=(6, dims[-1]))
        lo, span = _minmax(T)
        obj = Objective(dims, X, T, lo, span, gamma)
        p = init_params(dims, rng) + 0.1 * rng.standard_normal(n_params(dims))
        g = obj.gradient(p)
        fd = _fd_grad(obj.value, p)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_five_weight_toy_net(rng):
    # 2 -> 1 -> 1 has exactly 5 parameters
    dims = (2, 1, 1)
    assert n_params(dims) == 5
    X, T = rng.standard_normal((4, 2)), rng.uniform(size=(4, 1))
    obj = Objective(dims, X, T, *_minmax(T), 0.2)
    p = rng.standard_normal(5)
    np.testing.assert_allclose(obj.gradient(p), _fd_grad(obj.value, p), rtol=1e-5, atol=1e-10)


def test_pure_weight_decay_shrinks_weights(rng):
    X = rng.standard_normal((30, 4))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    T = rng.uniform(size=(30, 3))
    model = train_mlp(X, T, hidden=(5,), gamma=1.0, max_iters=200, seed=1)
    mask = np.concatenate([np.r_[np.ones(a * b), np.zeros(b)] for a, b in
                           zip(model.dims[:-1], model.dims[1:])]).astype(bool)
    assert np.abs(model.params[mask]).max() < 1e-6
    assert model.final_loss < 1e-10
    assert np.all(np.diff(model.loss_trace) <= 0)


def test_single_sample_interpolation(rng):
    x = rng.standard_normal((1, 3))
    x /= np.linalg.norm(x)
    t = np.array([[0.3, 0.7, 0.4]])
    model = train_mlp(x, t, hidden=(3,), gamma=0.0, max_iters=500, seed=0)
    assert np.mean((model.raw_output(x) - t) ** 2) < 1e-6


def test_final_loss_not_above_initial(rng):
    X = rng.standard_normal((40, 6))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    T = rng.uniform(size=(40, 3))
    model = train_mlp(X, T, hidden=(8, 4), gamma=0.2, max_iters=50, seed=3)
    assert model.final_loss <= model.loss_trace[0]
    assert len(model.loss_trace) == model.iterations + 1


def test_nonfinite_loss_raises(rng):
    X = rng.standard_normal((5, 3))
    T = np.full((5, 3), np.nan)
    with pytest.raises(TrainingError, match="iteration 0"):
        train_mlp(X, T, hidden=(2,), max_iters=5)


def test_training_is_deterministic(rng):
    X = rng.standard_normal((20, 4))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    T = rng.uniform(size=(20, 3))
    a = train_mlp(X, T, hidden=(4,), max_iters=30, seed=9)
    b = train_mlp(X, T, hidden=(4,), max_iters=30, seed=9)
    np.testing.assert_array_equal(a.params, b.params)


@pytest.fixture(scope="module")
def toy_model():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 7))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    T = rng.uniform(size=(60, 3))
    return train_mlp(X, T, hidden=(6, 4), max_iters=40, seed=2), X, T


def test_predict_batch_equals_single(toy_model):
    model, X, _ = toy_model
    batch = predict(model, X)
    single = np.array([predict(model, x) for x in X])
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(predict(model, X), batch)


def test_predict_output_clamped(toy_model, rng):
    model, X, _ = toy_model
    wild = MlpModel(model.dims, model.params * 50, model.x_lo, model.x_span, model.t_lo, model.t_span)
    out = predict(wild, X)
    assert np.all((out >= 0) & (out <= 1))


def test_predict_renormalizes_with_warning(toy_model):
    model, X, _ = toy_model
    with pytest.warns(FeatureNormWarning):
        out = predict(model, 3.0 * X[:4])
    np.testing.assert_allclose(out, predict(model, X[:4]), atol=1e-14)
    with pytest.raises(ValueError):
        predict(model, X[:, :3])


def test_model_roundtrip(tmp_path, toy_model):
    model, X, _ = toy_model
    save_model(model, tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    np.testing.assert_array_equal(back.params, model.params)
    assert back.dims == model.dims and back.gamma == model.gamma and back.seed == model.seed
    np.testing.assert_array_equal(predict(back, X), predict(model, X))


def test_model_file_errors(tmp_path, toy_model):
    model, _, _ = toy_model
    path = tmp_path / "m.bin"
    save_model(model, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(DataFormatError):
        load_model(path)
    path.write_bytes(b"garbage\n")
    with pytest.raises(DataFormatError):
        load_model(path)


def _linear_scan(F, q):
    d = np.sum((F - q) ** 2, axis=1)
    return int(np.argmin(d))


def test_nn_matches_linear_scan(rng):
    F = rng.standard_normal((400, 12))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    bank = SampleBank(F, rng.uniform(size=(400, 3)))
    Q = rng.standard_normal((1000, 12))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    idx = nn_index(bank, Q)
    assert all(idx[i] == _linear_scan(F, Q[i]) for i in range(len(Q)))


def test_nn_ties_pick_lowest_index(rng):
    F = rng.standard_normal((10, 5))
    F[7] = F[2]
    F[9] = F[2]
    bank = SampleBank(F, np.arange(30.0).reshape(10, 3))
    assert nn_index(bank, F[9])[0] == 2


def test_nn_exact_hit_and_single_bank(rng):
    F = rng.standard_normal((50, 6))
    T = rng.uniform(size=(50, 3))
    bank = SampleBank(F, T)
    np.testing.assert_array_equal(nn_search(bank, F[17]), T[17])
    one = SampleBank(F[:1], T[:1])
    np.testing.assert_array_equal(nn_search(one, rng.standard_normal((4, 6))), np.repeat(T[:1], 4, axis=0))
    with pytest.raises(ValueError):
        SampleBank(np.zeros((0, 6)), np.zeros((0, 3)))


def test_subsample_deterministic(rng):
    bank = SampleBank(rng.standard_normal((100, 4)), rng.uniform(size=(100, 3)))
    a, b = bank.subsample(20, seed=1), bank.subsample(20, seed=1)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.label == "S0" and len(a) == 20


class _Set:
    def __init__(self, X, T):
        self.features, self.targets = X, T


def test_evaluate_perfect_oracle_zero(toy_model):
    _, X, T = toy_model
    ev = evaluate("oracle", lambda x: T, _Set(X, T))
    np.testing.assert_array_equal(ev.mae, np.zeros(3))
    assert ev.run_time >= 0


def test_training_error_not_above_heldout(rng):
    X = rng.standard_normal((200, 5))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    T = 0.5 + 0.4 * np.tanh(X[:, :3] * 2)
    model = train_mlp(X[:100], T[:100], hidden=(10,), gamma=0.0, max_iters=300, seed=0)
    train = evaluate("N", lambda x: predict(model, x), _Set(X[:100], T[:100]))
    held = evaluate("N", lambda x: predict(model, x), _Set(X[100:], T[100:]))
    assert train.mae.mean() <= held.mae.mean()


def test_prediction_lipschitz_finite(toy_model):
    model, X, _ = toy_model
    rep = prediction_lipschitz(model, X, pairs=1000, seed=0)
    assert rep["finite"] and rep["pairs"] > 900 and rep["max"] >= rep["median"] > 0
