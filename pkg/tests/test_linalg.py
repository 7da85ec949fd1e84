"""Dense linear algebra kernel tests.

Hand-checkable instances first, then seeded random sweeps against
numpy.linalg oracles.
"""
import numpy as np
import pytest

from fsgd import linalg
from fsgd.errors import (BadOrderError, BadShapeError, NotOrthonormalError,
                         RankDeficientError, SingularMatrixError)


# --- thin_qr -----------------------------------------------------------------


def test_qr_identity_is_fixed_point():
    q, r = linalg.thin_qr(np.eye(4))
    assert np.allclose(q, np.eye(4))
    assert np.allclose(r, np.eye(4))


def test_qr_single_column_normalizes():
    # (3,4) has norm 5, so q = (0.6, 0.8) and r = (5)
    q, r = linalg.thin_qr(np.array([[3.0], [4.0]]))
    assert np.allclose(q, [[0.6], [0.8]])
    assert np.allclose(r, [[5.0]])


def test_qr_reconstruction_random():
    g = np.random.default_rng(7)
    a = g.standard_normal((40, 6))
    q, r = linalg.thin_qr(a)
    assert np.allclose(q @ r, a, atol=1e-10)


def test_qr_properties_random_sweep():
    g = np.random.default_rng(0)
    for trial in range(50):
        d = int(g.integers(2, 200))
        k = int(g.integers(1, min(d, 20) + 1))
        a = g.standard_normal((d, k))
        q, r = linalg.thin_qr(a)
        assert q.shape == (d, k) and r.shape == (k, k)
        assert np.abs(q.T @ q - np.eye(k)).max() < 1e-12
        scale = max(np.abs(a).max(), 1.0)
        assert np.abs(q @ r - a).max() / scale < 1e-10
        assert (np.diag(r) > 0).all()
        # positive diagonal makes the factorization unique
        assert np.abs(np.triu(r) - r).max() == 0.0


def test_qr_rank_deficient_raises():
    with pytest.raises(RankDeficientError):
        linalg.thin_qr(np.ones((4, 2)))


def test_fast_qr_matches_reference():
    g = np.random.default_rng(3)
    for trial in range(20):
        a = g.standard_normal((int(g.integers(3, 80)), int(g.integers(1, 8))))
        q, r = linalg.thin_qr(a)
        qf, rf = linalg.fast_qr_pos(a)
        assert np.abs(q - qf).max() < 1e-10
        assert np.abs(r - rf).max() < 1e-10


# --- svd_small ---------------------------------------------------------------


def test_svd_identity():
    u, s, v = linalg.svd_small(np.eye(2))
    assert np.allclose(s, [1.0, 1.0])
    assert np.allclose(u @ np.diag(s) @ v.T, np.eye(2))


def test_svd_diagonal():
    u, s, v = linalg.svd_small(np.diag([2.0, 0.5]))
    assert np.allclose(s, [2.0, 0.5])
    assert np.allclose(np.abs(u), np.eye(2))
    assert np.allclose(np.abs(v), np.eye(2))


def test_svd_rotation_has_unit_spectrum():
    th = np.pi / 6
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    u, s, v = linalg.svd_small(rot)
    assert np.allclose(s, [1.0, 1.0])
    assert np.allclose(u @ v.T, rot)


def test_svd_matches_numpy_spectrum():
    g = np.random.default_rng(11)
    for trial in range(30):
        k = int(g.integers(1, 12))
        a = g.standard_normal((k, k))
        u, s, v = linalg.svd_small(a)
        ref = np.linalg.svd(a, compute_uv=False)
        assert np.abs(s - ref).max() < 1e-10
        assert np.abs(u @ np.diag(s) @ v.T - a).max() < 1e-9
        assert np.abs(u.T @ u - np.eye(k)).max() < 1e-10
        assert np.abs(v.T @ v - np.eye(k)).max() < 1e-10
        assert (np.diff(s) <= 1e-12).all()


def test_svd_rejects_large_input():
    with pytest.raises(BadShapeError):
        linalg.svd_small(np.eye(65))


# --- polar_rotation ----------------------------------------------------------


def test_polar_of_identity():
    assert np.allclose(linalg.polar_rotation(np.eye(3)), np.eye(3))


def test_polar_of_orthogonal_is_itself():
    g = np.random.default_rng(5)
    for trial in range(20):
        k = int(g.integers(1, 8))
        q, _ = linalg.thin_qr(g.standard_normal((k, k)))
        assert np.abs(linalg.polar_rotation(q) - q).max() < 1e-12


def test_polar_of_positive_diagonal_is_identity():
    assert np.allclose(linalg.polar_rotation(np.diag([3.0, 0.2])), np.eye(2))


def test_polar_output_is_orthogonal():
    g = np.random.default_rng(9)
    for trial in range(30):
        k = int(g.integers(1, 10))
        s = g.standard_normal((k, k)) + 0.5 * np.eye(k)
        try:
            r = linalg.polar_rotation(s)
        except SingularMatrixError:
            continue
        assert np.abs(r.T @ r - np.eye(k)).max() < 1e-10


def test_polar_maximizes_trace():
    # the polar factor R maximizes tr(R' S) over orthogonal matrices
    g = np.random.default_rng(13)
    for trial in range(20):
        k = int(g.integers(2, 6))
        s = g.standard_normal((k, k))
        try:
            r = linalg.polar_rotation(s)
        except SingularMatrixError:
            continue
        best = float(np.trace(r.T @ s))
        for probe in range(20):
            o, _ = linalg.thin_qr(g.standard_normal((k, k)))
            assert float(np.trace(o.T @ s)) <= best + 1e-10


def test_polar_singular_raises():
    with pytest.raises(SingularMatrixError):
        linalg.polar_rotation(np.zeros((2, 2)))


def test_fast_polar_matches_reference():
    g = np.random.default_rng(17)
    for trial in range(20):
        k = int(g.integers(1, 8))
        s = g.standard_normal((k, k)) + np.eye(k)
        try:
            ref = linalg.polar_rotation(s)
        except SingularMatrixError:
            continue
        assert np.abs(linalg.fast_polar(s) - ref).max() < 1e-10


# --- subspace distances ------------------------------------------------------


def test_distance_of_identical_spans_is_zero():
    q = np.eye(5)[:, :2]
    assert linalg.subspace_distance(q, q) == 0.0


def test_distance_of_orthogonal_spans_is_one():
    e1 = np.eye(3)[:, :1]
    e2 = np.eye(3)[:, 1:2]
    assert abs(linalg.subspace_distance(e1, e2) - 1.0) < 1e-12


def test_distance_of_45_degree_line():
    e1 = np.eye(2)[:, :1]
    diag = np.array([[1.0], [1.0]]) / np.sqrt(2.0)
    assert abs(linalg.subspace_distance(e1, diag) - np.sqrt(2) / 2) < 1e-12


def test_distance_symmetry_and_rotation_invariance():
    g = np.random.default_rng(21)
    for trial in range(25):
        d = int(g.integers(3, 40))
        k = int(g.integers(1, min(d, 6) + 1))
        w, _ = linalg.thin_qr(g.standard_normal((d, k)))
        v, _ = linalg.thin_qr(g.standard_normal((d, k)))
        dwv = linalg.subspace_distance(w, v)
        assert abs(dwv - linalg.subspace_distance(v, w)) < 1e-12
        # distance depends only on the span, not the basis
        rot, _ = linalg.thin_qr(g.standard_normal((k, k)))
        assert abs(linalg.subspace_distance(w @ rot, v) - dwv) < 1e-10
        assert 0.0 <= dwv <= 1.0 + 1e-12


def test_distance_rejects_non_orthonormal():
    with pytest.raises(NotOrthonormalError):
        linalg.subspace_distance(np.ones((3, 1)), np.eye(3)[:, :1])


def test_fast_distance_matches_reference():
    g = np.random.default_rng(23)
    for trial in range(20):
        d = int(g.integers(3, 50))
        k = int(g.integers(1, 5))
        w, _ = linalg.thin_qr(g.standard_normal((d, k)))
        v, _ = linalg.thin_qr(g.standard_normal((d, k)))
        ref = linalg.subspace_distance(w, v)
        assert abs(linalg.fast_subspace_distance(w, v) - ref) < 1e-12


def test_containment_distance_nested_and_disjoint():
    e = np.eye(4)
    # span(e1) inside span(e1, e2) -> 0; span(e3) orthogonal to it -> 1
    assert linalg.containment_distance(e[:, :1], e[:, :2]) < 1e-12
    assert abs(linalg.containment_distance(e[:, 2:3], e[:, :2]) - 1.0) < 1e-12


def test_spectral_cond():
    assert linalg.spectral_cond(np.eye(3)) == 1.0
    assert abs(linalg.spectral_cond(np.diag([4.0, 1.0])) - 4.0) < 1e-12
    assert linalg.spectral_cond(np.diag([1.0, 0.0])) == np.inf


# --- smooth max norm ---------------------------------------------------------


def test_ls_norm_hand_values():
    assert abs(linalg.ls_norm(np.array([3.0, 4.0]), 2) - 5.0) < 1e-12
    assert abs(linalg.ls_norm(np.array([1.0, 1.0]), 4) - 2 ** 0.25) < 1e-12
    assert linalg.ls_norm(np.zeros(5), 2) == 0.0


def test_ls_norm_rejects_odd_order():
    with pytest.raises(BadOrderError):
        linalg.ls_norm(np.array([1.0]), 3)
    with pytest.raises(BadOrderError):
        linalg.ls_norm(np.array([1.0]), 0)


def test_ls_norm_nonincreasing_in_order():
    g = np.random.default_rng(29)
    for trial in range(30):
        x = g.standard_normal(int(g.integers(1, 30)))
        vals = [linalg.ls_norm(x, s) for s in (2, 4, 6, 8, 12)]
        assert all(vals[i] >= vals[i + 1] - 1e-12 for i in range(len(vals) - 1))


def test_smooth_order_values():
    assert linalg.smooth_order(1) == 2
    assert linalg.smooth_order(2) == 2
    assert linalg.smooth_order(10) == 4
    assert linalg.smooth_order(100) == 6
    assert linalg.smooth_order(10000) == 10


def test_smooth_order_sandwich():
    # with s = smooth_order(p): max|x| <= |x|_s <= e * max|x|
    g = np.random.default_rng(31)
    for p in (10, 100, 10000):
        s = linalg.smooth_order(p)
        for trial in range(1000 // (1 if p < 10000 else 10)):
            x = g.standard_normal(p)
            top = np.abs(x).max()
            val = linalg.ls_norm(x, s)
            assert top - 1e-12 <= val <= np.e * top + 1e-12
