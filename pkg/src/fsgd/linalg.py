"""Minimal dense linear algebra: thin QR, small SVD, polar rotation,
subspace distance, and smooth max-surrogate norms.

Everything here is written against plain float64 ndarrays. The QR and SVD
are implemented directly (Householder reflections, one-sided Jacobi) rather
than through LAPACK so results are bit-stable across BLAS builds; both are
only ever applied to d x k or k x k blocks with small k, where the O(d k^2)
and O(k^3) costs are negligible.
"""

import math

import numpy as np

from .errors import (
    BadOrderError,
    BadShapeError,
    NoConvergenceError,
    NotOrthonormalError,
    RankDeficientError,
    SingularMatrixError,
    ValidationError,
)

_JACOBI_MAX_SWEEPS = 100
_JACOBI_TOL = 1e-14
_JACOBI_MAX_K = 64
_RANK_TOL = 1e-12
_SINGULAR_TOL = 1e-12
_ORTHO_TOL = 1e-8


def _check_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise BadShapeError(f"{name} must be a non-empty 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise BadShapeError(f"{name} contains non-finite entries")
    return a


def thin_qr(a):
    """Reduced QR of a d x k matrix (d >= k) via Householder reflections.

    Returns (q, r) with q of shape (d, k), r upper triangular (k, k) with a
    positive diagonal, so the factorization is unique. Raises
    RankDeficientError when a column collapses during elimination.
    """
    a = _check_matrix(a, "a")
    d, k = a.shape
    if d < k:
        raise BadShapeError(f"thin_qr needs d >= k, got {d} x {k}")

    r = a.copy()
    vs = []
    max_pivot = 0.0
    for j in range(k):
        x = r[j:, j]
        normx = math.sqrt(float(x @ x))
        max_pivot = max(max_pivot, normx)
        if normx <= _RANK_TOL * max_pivot:
            raise RankDeficientError(f"column {j} collapsed during orthogonalization")
        v = x.copy()
        v[0] += normx if x[0] >= 0 else -normx
        v /= math.sqrt(float(v @ v))
        r[j:, j:] -= 2.0 * v[:, None] * (v @ r[j:, j:])
        vs.append(v)

    q = np.zeros((d, k))
    q[:k, :k] = np.eye(k)
    for j in range(k - 1, -1, -1):
        v = vs[j]
        q[j:, :] -= 2.0 * v[:, None] * (v @ q[j:, :])

    # sign fix: flip columns so diag(r) > 0
    signs = np.where(np.diag(r[:k, :k]) < 0, -1.0, 1.0)
    q *= signs
    r = r[:k, :k] * signs[:, None]
    r[np.tril_indices(k, -1)] = 0.0
    return q, r


def _complete_orthonormal(u, cols):
    """Fill the listed columns of u with unit vectors orthogonal to the rest."""
    k = u.shape[0]
    have = [j for j in range(k) if j not in cols]
    for j in cols:
        for cand in range(k):
            v = np.zeros(k)
            v[cand] = 1.0
            for h in have:
                v -= (u[:, h] @ v) * u[:, h]
            n = math.sqrt(float(v @ v))
            if n > 0.5:  # candidate not swallowed by existing columns
                u[:, j] = v / n
                have.append(j)
                break
        else:  # pragma: no cover - k candidates always suffice
            raise RuntimeError("orthonormal completion failed")
    return u


def svd_small(s):
    """Full SVD of a small k x k matrix (k <= 64) by one-sided Jacobi.

    Returns (u, sigma, v) with s = u @ diag(sigma) @ v.T, sigma descending
    and non-negative. Raises NoConvergenceError after 100 sweeps.
    """
    s = _check_matrix(s, "s")
    k0, k1 = s.shape
    if k0 != k1:
        raise BadShapeError(f"svd_small expects a square matrix, got {k0} x {k1}")
    if k0 > _JACOBI_MAX_K:
        raise BadShapeError(f"svd_small is limited to k <= {_JACOBI_MAX_K}, got {k0}")
    k = k0

    w = s.copy()
    v = np.eye(k)
    # off-diagonal mass lives in W.T W units; its Frobenius yardstick
    # ||s.T s||_F is invariant under the sweeps, so compute it once
    g0 = s.T @ s
    fro = math.sqrt(float((g0 * g0).sum()))
    if fro == 0.0:
        return np.eye(k), np.zeros(k), np.eye(k)

    for _ in range(_JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(k - 1):
            for q in range(p + 1, k):
                wp = w[:, p].copy()
                wq = w[:, q].copy()
                gamma = float(wp @ wq)
                off += 2.0 * gamma * gamma
                if gamma == 0.0:
                    continue
                alpha = float(wp @ wp)
                beta = float(wq @ wq)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                sn = c * t
                w[:, p] = c * wp - sn * wq
                w[:, q] = sn * wp + c * wq
                vp = v[:, p].copy()
                v[:, p] = c * vp - sn * v[:, q]
                v[:, q] = sn * vp + c * v[:, q]
        if math.sqrt(off) <= _JACOBI_TOL * fro:
            break
    else:
        raise NoConvergenceError("Jacobi SVD did not converge in 100 sweeps")

    sigma = np.sqrt((w * w).sum(axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]

    u = np.zeros((k, k))
    tiny = np.finfo(np.float64).eps * max(float(sigma[0]), 1.0)
    dead = []
    for j in range(k):
        if sigma[j] > tiny:
            u[:, j] = w[:, j] / sigma[j]
        else:
            sigma[j] = 0.0
            dead.append(j)
    if dead:
        u = _complete_orthonormal(u, dead)
    return u, sigma, v


def polar_rotation(s):
    """Orthogonal polar factor u @ v.T, the rotation nearest to s.

    Maximizes trace(R.T @ s) over orthogonal R. Raises SingularMatrixError
    when the smallest singular value falls below 1e-12.
    """
    u, sigma, v = svd_small(s)
    if sigma[-1] < _SINGULAR_TOL:
        raise SingularMatrixError(
            f"polar factor undefined: smallest singular value {sigma[-1]:.3e}"
        )
    return u @ v.T


def _check_orthonormal(w, name):
    w = _check_matrix(w, name)
    g = w.T @ w
    if np.max(np.abs(g - np.eye(w.shape[1]))) > _ORTHO_TOL:
        raise NotOrthonormalError(f"{name} does not have orthonormal columns")
    return w


def _residual_sin(v, w):
    """Largest sine between span(w) directions and span(v): sigma_max of
    (I - v v.T) w, computed through the k x k Gram of the tall residual."""
    m = v.T @ w
    r = w - v @ m
    _, sigma, _ = svd_small(r.T @ r)
    return math.sqrt(min(max(float(sigma[0]), 0.0), 1.0))


def subspace_distance(w, v):
    """sin of the largest principal angle between two k-frames.

    Equals the operator norm of the difference of the two orthogonal
    projectors, sqrt(1 - sigma_min(v.T @ w)^2), evaluated through the
    residual identity r = w - v (v.T w), r.T r = I - (v.T w).T (v.T w), so
    near-equal spans come out at rounding level instead of the sqrt(eps)
    floor the direct cancellation would leave. Both arguments must have
    orthonormal columns (within 1e-8) and the same column count.
    """
    w = _check_orthonormal(w, "w")
    v = _check_orthonormal(v, "v")
    if w.shape != v.shape:
        raise BadShapeError(f"frame shapes differ: {w.shape} vs {v.shape}")
    return max(_residual_sin(v, w), _residual_sin(w, v))


def containment_distance(v, w):
    """sin of the largest principal angle over the min(k_v, k_w) spectrum.

    Coincides with subspace_distance for equal column counts; for unequal
    counts the symmetric projector distance is identically 1, so this
    one-sided variant is what misspecified-rank runs record. Measured as the
    worst sine of a direction of the thinner frame out of the span of the
    wider one.
    """
    v = _check_orthonormal(v, "v")
    w = _check_orthonormal(w, "w")
    if v.shape[0] != w.shape[0]:
        raise BadShapeError(f"ambient dimensions differ: {v.shape} vs {w.shape}")
    thin, wide = (v, w) if v.shape[1] <= w.shape[1] else (w, v)
    return _residual_sin(wide, thin)


def ls_norm(x, s):
    """l^s norm for even integer s >= 2, scaled to avoid overflow."""
    if isinstance(s, bool) or not isinstance(s, (int, np.integer)):
        raise BadOrderError(f"order must be an even integer >= 2, got {s!r}")
    if s < 2 or s % 2 != 0:
        raise BadOrderError(f"order must be an even integer >= 2, got {s}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise BadShapeError(f"ls_norm expects a vector, got shape {x.shape}")
    if x.size == 0:
        raise BadShapeError("ls_norm of an empty vector")
    if not np.all(np.isfinite(x)):
        raise BadShapeError("ls_norm input contains non-finite entries")
    amax = float(np.max(np.abs(x)))
    if amax == 0.0:
        return 0.0
    z = np.abs(x) / amax
    return amax * float((z**s).sum()) ** (1.0 / s)


def smooth_order(p):
    """Smallest even s with s > log(p): the l^s order that sandwiches the
    max norm within a factor e in dimension p."""
    if isinstance(p, bool) or not isinstance(p, (int, np.integer)) or p < 1:
        raise ValidationError(f"dimension must be an integer >= 1, got {p!r}")
    return 2 * (int(math.log(p) / 2.0) + 1)


def spectral_cond(s):
    """Condition number sigma_max / sigma_min of a small square matrix."""
    _, sigma, _ = svd_small(s)
    if sigma[-1] == 0.0:
        return math.inf
    return float(sigma[0] / sigma[-1])


# --- fast paths -------------------------------------------------------------
#
# The positive-diagonal QR and the polar factor are unique, so LAPACK kernels
# compute the same functions as the reference routines above up to rounding.
# The streaming loop takes millions of steps and is overhead-bound on small
# matrices, so it goes through these; unit tests pin them to the reference
# implementations.


def fast_qr_pos(a):
    """np.linalg.qr with the diagonal of r flipped positive."""
    q, r = np.linalg.qr(a)
    dg = r.diagonal()
    if (dg < 0.0).any():
        signs = np.where(dg < 0.0, -1.0, 1.0)
        q *= signs
        r *= signs[:, None]
    return q, r


def fast_polar(s):
    """Polar factor via LAPACK SVD; same uniqueness caveat as polar_rotation."""
    u, sigma, vt = np.linalg.svd(s)
    if sigma[-1] < _SINGULAR_TOL:
        raise SingularMatrixError(
            f"polar factor undefined: smallest singular value {sigma[-1]:.3e}"
        )
    return u @ vt


def fast_subspace_distance(w, v):
    """subspace_distance without the Jacobi sweeps or orthonormality checks."""
    m = v.T @ w
    s1 = np.linalg.svd(w - v @ m, compute_uv=False)
    s2 = np.linalg.svd(v - w @ m.T, compute_uv=False)
    return min(1.0, max(float(s1[0]), float(s2[0])))
