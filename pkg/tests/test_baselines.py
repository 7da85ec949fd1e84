"""Baseline method tests: window bookkeeping, offline PCA against
eigendecomposition oracles, coefficient rotation identities, and
record-level equivalences between policies.
"""
from dataclasses import replace

import numpy as np
import pytest

from fsgd import baselines as bl, datagen, linalg, oja, optimizer as opt
from fsgd.errors import (EmptyHistoryError, InsufficientDataError,
                         ValidationError)


def desk_config(spec, **kw):
    base = dict(spec=spec, k_hat=spec.k, m=5, t_max=200,
                sgd=opt.SgdSchedule(c=0.5, gamma=0.6),
                oja=oja.OjaSchedule.practical(0.1, 50.0))
    base.update(kw)
    return opt.FsgdConfig(**base)


def batch_of(xs):
    return datagen.MiniBatch(xs=np.asarray(xs, dtype=float),
                             ys=np.zeros(len(xs)))


# --- window buffer -----------------------------------------------------------


def test_window_keeps_most_recent_batches():
    w = bl.WindowBuffer(3)
    for i in range(5):
        w.push(batch_of([[float(i), 0.0]]))
    kept = [b.xs[0, 0] for b in w.batches()]
    assert kept == [2.0, 3.0, 4.0]
    assert w.pushed == 5
    assert w.n_samples == 3


def test_window_counts_samples_not_batches():
    w = bl.WindowBuffer(4)
    w.push(batch_of(np.zeros((3, 2))))
    w.push(batch_of(np.zeros((5, 2))))
    assert w.n_samples == 8
    assert w.pooled_xs().shape == (8, 2)


def test_empty_window_refuses_to_pool():
    with pytest.raises(InsufficientDataError):
        bl.WindowBuffer(3).pooled_xs()


# --- offline pca -------------------------------------------------------------


def test_offline_pca_rank_one():
    w = bl.WindowBuffer(5)
    w.push(batch_of([[2.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]))
    q = bl.offline_pca(w, 1)
    assert abs(abs(q[0, 0]) - 1.0) < 1e-12
    assert np.abs(q[1:]).max() < 1e-12


def test_offline_pca_matches_eigendecomposition():
    # gaussian sample with covariance diag(3,2,1): top-2 space is (e1,e2)
    g = np.random.default_rng(0)
    xs = g.standard_normal((100_000, 3)) * np.sqrt([3.0, 2.0, 1.0])
    w = bl.WindowBuffer(1)
    w.push(batch_of(xs))
    q = bl.offline_pca(w, 2)
    assert linalg.subspace_distance(q, np.eye(3)[:, :2]) < 0.05
    # and it agrees with numpy on the same finite sample
    _, evecs = np.linalg.eigh(xs.T @ xs / len(xs))
    assert linalg.subspace_distance(q, evecs[:, -2:]) < 1e-6


def test_offline_pca_invariant_start_returns_verbatim():
    # the window's exact top eigenspace as q0 short-circuits the iteration
    w = bl.WindowBuffer(5)
    w.push(batch_of(np.diag([2.0, 1.0, 0.5])))
    q0 = np.eye(3)[:, :2]
    q = bl.offline_pca(w, 2, q0=q0)
    assert np.array_equal(q, q0)


def test_offline_pca_deterministic():
    spec = datagen.linear_spec(d=10, k=2, seed=1)
    w = bl.WindowBuffer(4)
    for pos in range(4):
        w.push(datagen.sample_batch(spec, m=50, position=pos))
    a = bl.offline_pca(w, 2, seed=3)
    b = bl.offline_pca(w, 2, seed=3)
    assert np.abs(a - b).max() < 1e-8


def test_offline_pca_tracks_oja_target():
    # both estimators chase the oracle span of the same stream
    spec = datagen.linear_spec(d=20, k=3, seed=2)
    v = datagen.oracle_subspace(spec)
    w = bl.WindowBuffer(200)
    for pos in range(200):
        w.push(datagen.sample_batch(spec, m=50, position=pos))
    q = bl.offline_pca(w, 3)
    assert linalg.subspace_distance(q, v) < 0.05


# --- ppca refresh ------------------------------------------------------------


def test_refresh_on_invariant_window_is_identity():
    w = bl.WindowBuffer(10)
    w.push(batch_of(np.diag([2.0, 1.0, 0.5])))
    state = bl.PpcaState(q=np.eye(3)[:, :2], theta=np.array([1.0, 2.0]),
                         rotate_coeffs=True)
    new = bl.ppca_refresh(state, w)
    assert np.array_equal(new.q, state.q)
    assert np.array_equal(new.theta, state.theta)


def test_refresh_composes_the_polar_rotation():
    g = np.random.default_rng(3)
    basis, _ = np.linalg.qr(g.standard_normal((3, 3)))
    xs = (basis[:, :2] @ np.diag([3.0, 2.0]) @ g.standard_normal((2, 60))).T
    w = bl.WindowBuffer(10)
    w.push(batch_of(xs))
    state = bl.PpcaState(q=np.eye(3)[:, :2], theta=np.array([1.0, 2.0]),
                         rotate_coeffs=True)
    new = bl.ppca_refresh(state, w)
    want = linalg.polar_rotation(new.q.T @ state.q) @ state.theta
    assert np.abs(new.theta - want).max() < 1e-12


def test_rotated_coefficients_preserve_predictions():
    # replacing (q, theta) by (q R, R' theta) leaves f_hat' theta unchanged
    g = np.random.default_rng(4)
    q, _ = linalg.thin_qr(g.standard_normal((12, 3)))
    theta = g.standard_normal(3)
    r0, _ = linalg.thin_qr(g.standard_normal((3, 3)))
    q_new = q @ r0
    theta_new = linalg.polar_rotation(q_new.T @ q) @ theta
    xs = g.standard_normal((30, 12))
    before = opt.estimate_factors(q, xs) @ theta
    after = opt.estimate_factors(q_new, xs) @ theta_new
    assert np.abs(before - after).max() < 1e-10


# --- random projection -------------------------------------------------------


def test_random_projection_orthonormal_and_deterministic():
    a = bl.random_projection(50, 4, seed=5)
    b = bl.random_projection(50, 4, seed=5)
    c = bl.random_projection(50, 4, seed=6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.abs(a.T @ a - np.eye(4)).max() < 1e-12


def test_random_projection_misses_the_oracle_span():
    # a blind frame in d=200 is nearly orthogonal to any fixed k-space
    spec = datagen.linear_spec(d=200, k=5, seed=7)
    v = datagen.oracle_subspace(spec)
    dists = [linalg.subspace_distance(bl.random_projection(200, 5, seed=s), v)
             for s in range(100)]
    assert float(np.median(dists)) > 0.9


# --- history predictors ------------------------------------------------------


def test_persistence_and_prevailing_mean():
    hist = np.array([1.0, 3.0, 2.0])
    assert bl.persistence_predict(hist) == 2.0
    assert abs(bl.prevailing_mean_predict(hist) - 2.0) < 1e-15


def test_predictors_reject_empty_history():
    with pytest.raises(EmptyHistoryError):
        bl.persistence_predict(np.array([]))
    with pytest.raises(EmptyHistoryError):
        bl.prevailing_mean_predict(np.array([]))


def test_prevailing_mean_matches_two_pass():
    g = np.random.default_rng(8)
    hist = g.standard_normal(100_000)
    assert abs(bl.prevailing_mean_predict(hist) - hist.mean()) < 1e-12


# --- end-to-end baseline runs ------------------------------------------------


def test_oracle_run_converges_without_noise():
    for seed in range(3):
        spec = replace(datagen.linear_spec(d=10, k=3, seed=seed,
                                           noise_sd=0.0), has_idio=False)
        config = desk_config(spec, t_max=20_000)
        _, theta, _, _ = bl.oracle_run(config)
        assert np.abs(theta - spec.response.theta).max() < 1e-3


def test_oracle_run_requires_matching_rank():
    spec = datagen.linear_spec(d=10, k=3, seed=9)
    with pytest.raises(ValidationError):
        bl.oracle_run(desk_config(spec, k_hat=4))


def test_ppca_without_refreshes_equals_frozen_frame():
    spec = datagen.linear_spec(d=12, k=3, seed=10)
    config = desk_config(spec)
    ppca = bl.PpcaConfig(k_hat=3, refresh_every=10 ** 9, window=50)
    rec_p, theta_p, _, _ = bl.ppca_run(config, ppca)
    q0 = opt.init_projection(config).q
    rec_f, theta_f, _ = opt.run_stream(config, bl.FrozenFramePolicy(q0),
                                       opt.build_model(config))
    assert rec_p == rec_f
    assert np.array_equal(theta_p, theta_f)


def test_vanilla_run_trains_on_raw_covariates():
    spec = datagen.linear_spec(d=15, k=3, seed=11)
    records, theta, _, meta = bl.vanilla_run(desk_config(spec, t_max=500))
    assert theta.shape == (15,)
    early = np.mean([r.train_loss for r in records[:50]])
    late = np.mean([r.train_loss for r in records[-50:]])
    assert late < early
    assert all(r.dist_qv is None for r in records)


def test_randomproj_run_completes_with_fixed_frame():
    spec = datagen.linear_spec(d=30, k=3, seed=12)
    records, theta, q, _ = bl.randomproj_run(desk_config(spec, t_max=300))
    assert theta.shape == (3,)
    assert np.abs(q - bl.random_projection(30, 3, seed=spec.seed)).max() == 0.0
    dists = {r.dist_qv for r in records}
    assert len(dists) == 1


def test_ppca_run_refreshes_track_the_span():
    spec = datagen.linear_spec(d=20, k=3, seed=13)
    config = desk_config(spec, t_max=2000)
    ppca = bl.PpcaConfig(k_hat=3, refresh_every=50, window=100)
    records, _, q, _ = bl.ppca_run(config, ppca)
    v = datagen.oracle_subspace(spec)
    assert linalg.subspace_distance(q, v) < 0.2
    assert records[-1].dist_qv < records[0].dist_qv
