"""Model gradient tests: hand-computed small instances and central
finite-difference oracles over seeded random instances.
"""
import numpy as np
import pytest

from fsgd import models, rng
from fsgd.errors import ParseError, UnknownTagError
from fsgd.linalg import thin_qr


def fd_gradient(fn, params, h=1e-5):
    g = np.zeros_like(params)
    for i in range(len(params)):
        up = params.copy()
        dn = params.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (fn(up) - fn(dn)) / (2 * h)
    return g


# --- component functions -----------------------------------------------------


def test_components_at_zero():
    want = {"cospi": 1.0, "sin": 0.0, "sqabs": 1.0, "sigmoid": 0.5,
            "sqrtabs": -1.0}
    assert set(want) == set(models.COMPONENT_TAGS)
    for tag, val in want.items():
        assert abs(models.eval_component(tag, 0.0) - val) < 1e-15


def test_component_hand_values():
    assert abs(models.eval_component("sqabs", 1.0)) < 1e-15
    assert abs(models.eval_component("sigmoid", np.log(3.0)) - 0.75) < 1e-12
    assert abs(models.eval_component("cospi", 1.0) + 1.0) < 1e-15
    assert abs(models.eval_component("sqrtabs", 4.0) - 3.0) < 1e-12


def test_component_unknown_tag():
    with pytest.raises(UnknownTagError):
        models.eval_component("tanh", 0.0)


def test_components_vectorize():
    x = np.linspace(-2, 2, 9)
    for tag in models.COMPONENT_TAGS:
        out = models.eval_component(tag, x)
        assert out.shape == x.shape


# --- linear model ------------------------------------------------------------


def test_linear_perfect_fit_has_zero_gradient():
    model = models.LinearModel(3)
    theta = np.array([1.0, -1.0, 2.0])
    fs = np.random.default_rng(0).standard_normal((10, 3))
    loss, grad = model.loss_grad(theta, fs, fs @ theta)
    assert loss < 1e-28
    assert np.abs(grad).max() < 1e-13


def test_linear_hand_instance():
    # theta=1, f=2, y=1: residual 1, loss 1, gradient 2 f r = 4
    model = models.LinearModel(1)
    loss, grad = model.loss_grad(np.array([1.0]), np.array([[2.0]]),
                                 np.array([1.0]))
    assert abs(loss - 1.0) < 1e-15
    assert abs(grad[0] - 4.0) < 1e-15


def test_linear_init_is_zero():
    model = models.LinearModel(4)
    assert np.array_equal(model.init_params(), np.zeros(4))


def test_linear_gradient_matches_finite_differences():
    g = np.random.default_rng(1)
    model_cache = {}
    for trial in range(100):
        k = int(g.integers(1, 6))
        m = int(g.integers(1, 8))
        model = model_cache.setdefault(k, models.LinearModel(k))
        theta = g.standard_normal(k)
        fs = g.standard_normal((m, k))
        ys = g.standard_normal(m)
        _, grad = model.loss_grad(theta, fs, ys)
        ref = fd_gradient(lambda p: model.loss_grad(p, fs, ys)[0], theta)
        denom = max(np.abs(ref).max(), 1e-8)
        assert np.abs(grad - ref).max() / denom < 1e-7


def test_linear_rotation_covariance():
    # loss is invariant and the gradient rotates with the inputs
    g = np.random.default_rng(2)
    model = models.LinearModel(3)
    for trial in range(20):
        theta = g.standard_normal(3)
        fs = g.standard_normal((6, 3))
        ys = g.standard_normal(6)
        r, _ = thin_qr(g.standard_normal((3, 3)))
        loss, grad = model.loss_grad(theta, fs, ys)
        loss_r, grad_r = model.loss_grad(r @ theta, fs @ r.T, ys)
        assert abs(loss - loss_r) < 1e-12
        assert np.abs(grad_r - r @ grad).max() < 1e-12


# --- mlp model ---------------------------------------------------------------


def test_mlp_parameter_count():
    assert models.MlpModel(2, 3).n_params == 13
    assert models.MlpModel(5, 50).n_params == 50 * 5 + 2 * 50 + 1


def test_mlp_init_deterministic_zero_biases_glorot_bounds():
    model = models.MlpModel(4, 8)
    a = model.init_params(rng.stream(3, rng.ROLE_MODEL_INIT))
    b = model.init_params(rng.stream(3, rng.ROLE_MODEL_INIT))
    assert np.array_equal(a, b)
    w1 = a[:32]
    b1 = a[32:40]
    w2 = a[40:48]
    b2 = a[48]
    assert (b1 == 0.0).all() and b2 == 0.0
    assert (np.abs(w1) <= np.sqrt(6.0 / (4 + 8))).all()
    assert (np.abs(w2) <= np.sqrt(6.0 / (8 + 1))).all()


def test_mlp_zero_params_predict_zero():
    model = models.MlpModel(3, 5)
    xs = np.random.default_rng(4).standard_normal((7, 3))
    assert (model.predict(np.zeros(model.n_params), xs) == 0.0).all()


def test_mlp_relu_gate():
    # identity single-unit net passes positives and blocks negatives
    model = models.MlpModel(1, 1)
    params = np.array([1.0, 0.0, 1.0, 0.0])
    assert model.predict(params, np.array([[3.0]]))[0] == 3.0
    assert model.predict(params, np.array([[-3.0]]))[0] == 0.0


def test_mlp_perfect_fit_has_zero_loss():
    model = models.MlpModel(2, 4)
    params = model.init_params(rng.stream(5, rng.ROLE_MODEL_INIT))
    xs = np.random.default_rng(5).standard_normal((6, 2))
    ys = model.predict(params, xs)
    loss, grad = model.loss_grad(params, xs, ys)
    assert loss < 1e-28
    assert np.abs(grad).max() < 1e-13


def test_mlp_b2_gradient_is_mean_residual():
    model = models.MlpModel(3, 4)
    g = np.random.default_rng(6)
    for trial in range(10):
        params = g.standard_normal(model.n_params)
        xs = g.standard_normal((9, 3))
        ys = g.standard_normal(9)
        _, grad = model.loss_grad(params, xs, ys)
        resid = model.predict(params, xs) - ys
        assert abs(grad[-1] - 2.0 * resid.mean()) < 1e-12


def test_mlp_gradient_matches_finite_differences():
    # central differences, skipping instances that straddle a ReLU kink
    g = np.random.default_rng(7)
    model = models.MlpModel(2, 3)
    checked = 0
    while checked < 100:
        params = g.standard_normal(model.n_params)
        xs = g.standard_normal((4, 2))
        ys = g.standard_normal(4)
        z = xs @ params[:6].reshape(3, 2).T + params[6:9]
        if np.abs(z).min() < 1e-3:
            continue
        _, grad = model.loss_grad(params, xs, ys)
        ref = fd_gradient(lambda p: model.loss_grad(p, xs, ys)[0], params)
        denom = max(np.abs(ref).max(), 1e-8)
        assert np.abs(grad - ref).max() / denom < 1e-5
        checked += 1


# --- checkpoints -------------------------------------------------------------


def test_model_roundtrip(tmp_path):
    params = np.random.default_rng(8).standard_normal(13)
    path = tmp_path / "m.csv"
    models.save_model(path, "mlp", params)
    kind, back = models.load_model(path)
    assert kind == "mlp"
    assert np.array_equal(back, params)


def test_model_load_rejects_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("who,what\n1,2\n")
    with pytest.raises(ParseError):
        models.load_model(path)


def test_model_load_rejects_count_mismatch(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("model_kind,param_count\nlinear,3\n1.0\n2.0\n")
    with pytest.raises(ParseError):
        models.load_model(path)
