"""Estimator surface tests: sklearn conventions (fit/partial_fit/predict,
get_params, score) plus learning behavior against the oracle frame.
"""
import numpy as np
import pytest

from fsgd import FactorSGDRegressor, StreamingSubspace
from fsgd.datagen import (linear_spec, oracle_subspace, sample_batch,
                          sample_pool)
from fsgd.errors import BadShapeError, ValidationError
from fsgd.linalg import subspace_distance

SPEC = linear_spec(d=40, k=3, seed=7)
V = oracle_subspace(SPEC)


def pools():
    train = sample_pool(SPEC, 500, "train")
    warm = sample_pool(SPEC, 50, "warmup")
    test = sample_pool(SPEC, 200, "test")
    return train, warm, test, test.fs @ SPEC.response.theta


# --- StreamingSubspace -------------------------------------------------------


def test_subspace_partial_fit_converges():
    ss = StreamingSubspace(n_components=3, oja_c=0.1, oja_c0=50.0, seed=1)
    d0 = None
    for t in range(1, 2001):
        ss.partial_fit(sample_batch(SPEC, 5, t).xs)
        if t == 1:
            d0 = subspace_distance(ss.state_.q, V)
    d1 = subspace_distance(ss.state_.q, V)
    assert d1 < 0.1 < d0
    assert ss.components_.shape == (3, 40)
    assert ss.n_steps_ == 2000


def test_subspace_transform_is_scaled_projection():
    ss = StreamingSubspace(n_components=3, seed=1)
    b = sample_batch(SPEC, 5, 1)
    ss.partial_fit(b.xs)
    f = ss.transform(b.xs)
    assert f.shape == (5, 3)
    manual = b.xs @ ss.state_.q / np.sqrt(40.0)
    assert np.abs(f - manual).max() < 1e-12


def test_subspace_fit_chunks_and_resets():
    ss = StreamingSubspace(n_components=3, batch_size=16, seed=1)
    pool = sample_pool(SPEC, 512, "train").xs
    ss.fit(pool)
    assert ss.n_steps_ == 32
    ss.fit(pool)
    # refitting starts over instead of accumulating
    assert ss.n_steps_ == 32


def test_subspace_get_params_roundtrip():
    ss = StreamingSubspace(n_components=3, batch_size=16, seed=1)
    params = ss.get_params()
    assert StreamingSubspace(**params).get_params() == params


def test_subspace_freeze_stops_updates():
    ss = StreamingSubspace(n_components=3, freeze_after=10, seed=2)
    for t in range(1, 12):
        ss.partial_fit(sample_batch(SPEC, 5, t).xs)
    q10 = ss.state_.q.copy()
    for t in range(12, 30):
        ss.partial_fit(sample_batch(SPEC, 5, t).xs)
    assert np.array_equal(ss.state_.q, q10)


# --- FactorSGDRegressor ------------------------------------------------------


def test_regressor_learns_through_the_projection():
    train, warm, test, clean = pools()
    reg = FactorSGDRegressor(n_components=3, projection="oja", batch_size=32,
                             epochs=40, sgd_c=0.5, sgd_gamma=0.6, seed=3)
    reg.fit(train.xs, train.ys, unlabeled=warm.xs, eval_set=(test.xs, clean))
    mse = float(np.mean((reg.predict(test.xs) - clean) ** 2))
    assert mse < 0.05
    assert len(reg.history_) == 40
    evals = [r["eval_loss"] for r in reg.history_]
    assert evals[-1] < evals[0]


def test_identity_projection_is_worse_at_equal_budget():
    train, warm, test, clean = pools()
    reg = FactorSGDRegressor(n_components=3, projection="oja", batch_size=32,
                             epochs=40, sgd_c=0.5, sgd_gamma=0.6, seed=3)
    reg.fit(train.xs, train.ys, unlabeled=warm.xs)
    van = FactorSGDRegressor(projection="identity", batch_size=32, epochs=40,
                             sgd_c=0.5, sgd_gamma=0.6, seed=3)
    van.fit(train.xs, train.ys)
    mse_reg = float(np.mean((reg.predict(test.xs) - clean) ** 2))
    mse_van = float(np.mean((van.predict(test.xs) - clean) ** 2))
    assert mse_reg < mse_van
    assert van.components_ is None


def test_frozen_projection_at_oracle_frame():
    train, _, test, clean = pools()
    reg = FactorSGDRegressor(projection="frozen", batch_size=32, epochs=40,
                             sgd_c=0.5, sgd_gamma=0.6, seed=3)
    reg.fit(train.xs, train.ys, projection_frame=V)
    mse = float(np.mean((reg.predict(test.xs) - clean) ** 2))
    assert mse < 0.05


def test_frozen_projection_requires_a_frame():
    train, _, _, _ = pools()
    with pytest.raises(ValidationError):
        FactorSGDRegressor(projection="frozen").fit(train.xs, train.ys)


def test_ppca_projection_with_coefficient_rotation():
    train, warm, test, clean = pools()
    reg = FactorSGDRegressor(projection="ppca", batch_size=32, epochs=40,
                             ppca_refresh_every=5, ppca_window=500,
                             ppca_rotate=True, sgd_c=0.5, sgd_gamma=0.6,
                             seed=3)
    reg.fit(train.xs, train.ys, unlabeled=warm.xs)
    mse = float(np.mean((reg.predict(test.xs) - clean) ** 2))
    assert mse < 0.1


def test_random_projection_stays_finite():
    train, _, test, _ = pools()
    reg = FactorSGDRegressor(projection="random", batch_size=32, epochs=10,
                             seed=3)
    reg.fit(train.xs, train.ys)
    assert np.isfinite(reg.predict(test.xs)).all()


def test_zero_epochs_leaves_the_initialized_model():
    train, _, _, _ = pools()
    reg = FactorSGDRegressor(projection="oja", batch_size=5, epochs=0, seed=9)
    reg.fit(train.xs[:50], train.ys[:50])
    assert reg.n_steps_ == 0
    assert len(reg.history_) == 0


def test_partial_fit_streams_batches():
    _, _, test, _ = pools()
    reg = FactorSGDRegressor(projection="oja", seed=9)
    for t in range(1, 101):
        b = sample_batch(SPEC, 5, t)
        reg.partial_fit(b.xs, b.ys)
    assert reg.n_steps_ == 100
    assert np.isfinite(reg.predict(test.xs)).all()


def test_fit_is_deterministic():
    train, warm, _, _ = pools()
    def fitted():
        reg = FactorSGDRegressor(n_components=3, projection="oja",
                                 batch_size=32, epochs=5, seed=4)
        reg.fit(train.xs, train.ys, unlabeled=warm.xs)
        return reg
    a, b = fitted(), fitted()
    assert np.array_equal(a.predict(train.xs), b.predict(train.xs))
    assert a.history_ == b.history_


def test_mlp_head_rejects_coefficient_rotation():
    train, _, _, _ = pools()
    with pytest.raises(ValidationError):
        FactorSGDRegressor(model="mlp", ppca_rotate=True).fit(train.xs,
                                                              train.ys)


def test_score_is_r_squared():
    train, warm, test, clean = pools()
    reg = FactorSGDRegressor(n_components=3, projection="oja", batch_size=32,
                             epochs=40, sgd_c=0.5, sgd_gamma=0.6, seed=3)
    reg.fit(train.xs, train.ys, unlabeled=warm.xs)
    assert 0.9 < reg.score(test.xs, clean) <= 1.0


def test_predict_rejects_wrong_width():
    train, _, _, _ = pools()
    reg = FactorSGDRegressor(projection="oja", epochs=1, seed=3)
    reg.fit(train.xs, train.ys)
    with pytest.raises(BadShapeError):
        reg.predict(np.ones((3, 17)))
