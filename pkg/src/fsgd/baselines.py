"""Comparison methods run against the joint streaming algorithm: SGD on the
raw covariates, a random projection fixed at initialization, periodic offline
PCA on a sliding window with coefficient rotation, training on the true
factors, and the two scalar history predictors.

All streaming baselines drive the same loop as the main algorithm
(optimizer.run_stream) through small policy objects, so records, thinning,
and diagnostics line up column for column.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import rng
from .datagen import oracle_subspace
from .errors import (
    BadShapeError,
    EmptyHistoryError,
    InsufficientDataError,
    NoConvergenceError,
    ValidationError,
)
from .linalg import polar_rotation, thin_qr
from .models import LinearModel, MlpModel
from .optimizer import estimate_factors, init_projection, run_stream


class WindowBuffer:
    """FIFO ring of the most recent mini-batches (the PPCA sliding window).

    Holds at most w batches; pushed counts every batch ever offered, so
    len(buffer) == min(pushed, w) is checkable from outside.
    """

    def __init__(self, w):
        if w < 1:
            raise ValidationError(f"window size must be >= 1, got {w}")
        self.w = w
        self._ring = deque(maxlen=w)
        self.pushed = 0

    def push(self, batch):
        self._ring.append(batch)
        self.pushed += 1

    def __len__(self):
        return len(self._ring)

    @property
    def n_samples(self):
        return sum(b.xs.shape[0] for b in self._ring)

    def batches(self):
        return list(self._ring)

    def pooled_xs(self):
        if not self._ring:
            raise InsufficientDataError("window buffer is empty")
        return np.concatenate([b.xs for b in self._ring], axis=0)


# materialize the pooled second-moment matrix below this width; above it the
# iteration multiplies through the sample matrix instead
_MATERIALIZE_LIMIT = 1024


def offline_pca(window, k_hat, q0=None, seed=0, tol=1e-8, max_iter=500):
    """Top-k_hat eigenvectors of the pooled second-moment matrix.

    window is a WindowBuffer or a plain (n, d) sample array. Orthogonal
    iteration runs from q0 when given (successive refreshes stay aligned),
    else from a seeded Gaussian start, until the invariant-subspace residual
    ||A q - q (q.T A q)||_F falls below tol relative to the leading
    eigenvalue scale.
    """
    xs = window.pooled_xs() if hasattr(window, "pooled_xs") else \
        np.asarray(window, dtype=np.float64)
    if xs.ndim != 2:
        raise BadShapeError(f"pooled samples must be 2-d, got shape {xs.shape}")
    n, d = xs.shape
    if k_hat < 1 or k_hat > d:
        raise ValidationError(f"need 1 <= k_hat <= d={d}, got {k_hat}")
    if n < k_hat:
        raise InsufficientDataError(
            f"{n} pooled samples cannot determine a rank-{k_hat} subspace")

    if q0 is not None:
        if q0.shape != (d, k_hat):
            raise BadShapeError(f"q0 shape {q0.shape} != ({d}, {k_hat})")
        q = q0
    else:
        g = rng.stream(seed, rng.ROLE_OFFLINE_PCA_INIT)
        q, _ = thin_qr(rng.normal(g, 1.0, (d, k_hat)))

    a = xs.T @ xs / n if d <= _MATERIALIZE_LIMIT else None
    for _ in range(max_iter):
        z = a @ q if a is not None else xs.T @ (xs @ q) / n
        h = q.T @ z
        resid = float(np.linalg.norm(z - q @ h))
        if resid <= tol * max(1.0, float(np.linalg.norm(h))):
            return q
        q, _ = thin_qr(z)
    raise NoConvergenceError(
        f"orthogonal iteration: residual {resid:.3e} after {max_iter} sweeps")


@dataclass(frozen=True)
class PpcaConfig:
    """Periodic-refresh settings: rank, cadence M, window W, and whether a
    linear coefficient vector is rotated across refreshes."""

    k_hat: int
    refresh_every: int
    window: int
    rotate_coeffs: bool = False

    def __post_init__(self):
        if self.k_hat < 1:
            raise ValidationError(f"k_hat must be >= 1, got {self.k_hat}")
        if self.refresh_every < 1:
            raise ValidationError(
                f"refresh_every must be >= 1, got {self.refresh_every}")
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class PpcaState:
    """Projection plus (optionally) the linear coefficients riding along."""

    q: np.ndarray
    theta: object = None
    rotate_coeffs: bool = False


def ppca_refresh(state, window, seed=0):
    """Recompute the projection from the window; rotate coefficients so
    predictions continue smoothly on the shared span.

    theta_new = R theta_old with R = polar_rotation(q_new.T q_old), the
    rotation under which f_hat_new.T theta_new ~= f_hat_old.T theta_old.
    """
    q_new = offline_pca(window, state.q.shape[1], q0=state.q, seed=seed)
    theta = state.theta
    if state.rotate_coeffs and theta is not None:
        theta = polar_rotation(q_new.T @ state.q) @ theta
    return PpcaState(q=q_new, theta=theta, rotate_coeffs=state.rotate_coeffs)


def random_projection(d, k_hat, seed):
    """Orthonormalized Gaussian frame, sampled once and kept fixed."""
    if k_hat < 1 or k_hat > d:
        raise BadShapeError(f"need 1 <= k_hat <= d, got k_hat={k_hat} d={d}")
    g = rng.stream(seed, rng.ROLE_RANDOM_PROJECTION)
    q, _ = thin_qr(rng.normal(g, 1.0, (d, k_hat)))
    return q


def persistence_predict(history):
    """Predict the last observed response."""
    h = np.asarray(history, dtype=np.float64).ravel()
    if h.size == 0:
        raise EmptyHistoryError("persistence needs at least one observation")
    return float(h[-1])


def prevailing_mean_predict(history):
    """Predict the running mean, accumulated in one numerically stable pass."""
    h = np.asarray(history, dtype=np.float64).ravel()
    if h.size == 0:
        raise EmptyHistoryError("prevailing mean needs at least one observation")
    mean = 0.0
    for i, y in enumerate(h, start=1):
        mean += (y - mean) / i
    return float(mean)


class VanillaPolicy:
    """No projection at all: the model trains on the raw covariates."""

    q = None

    def factors(self, batch):
        return batch.xs

    def update(self, batch):
        return None


class OracleFactorsPolicy:
    """Trains on the true latent factors; the frame held for diagnostics is
    the oracle loading frame, so recorded rot_err compares theta to theta*."""

    def __init__(self, v):
        self.q = v

    def factors(self, batch):
        if batch.fs is None:
            raise ValidationError("oracle baseline needs synthetic batches "
                                  "(true factors present)")
        return batch.fs

    def update(self, batch):
        return None


class FrozenFramePolicy:
    """Projects through a fixed frame (random projection, or any snapshot)."""

    def __init__(self, q):
        self.q = q

    def factors(self, batch):
        return estimate_factors(self.q, batch.xs)

    def update(self, batch):
        return None


class PpcaPolicy:
    """Sliding-window projection: push every batch, recompute the frame by
    offline PCA every refresh_every batches, and hand the span rotation to
    the loop so linear coefficients can follow."""

    def __init__(self, q0, ppca, seed=0):
        if q0.shape[1] != ppca.k_hat:
            raise BadShapeError(
                f"initial frame rank {q0.shape[1]} != k_hat {ppca.k_hat}")
        self.q = q0
        self.ppca = ppca
        self.seed = seed
        self.buffer = WindowBuffer(ppca.window)
        self.t = 0
        self._pending = None

    def factors(self, batch):
        return estimate_factors(self.q, batch.xs)

    def update(self, batch):
        self.buffer.push(batch)
        self.t += 1
        if self.t % self.ppca.refresh_every == 0 \
                and self.buffer.n_samples >= self.ppca.k_hat:
            q_old = self.q
            self.q = offline_pca(self.buffer, self.ppca.k_hat, q0=q_old,
                                 seed=self.seed)
            if self.ppca.rotate_coeffs:
                r = polar_rotation(self.q.T @ q_old)
                self._pending = r if self._pending is None \
                    else r @ self._pending
        return None

    def take_rotation(self):
        r = self._pending
        self._pending = None
        return r


def _head_model(config, in_dim):
    if config.model_kind == "linear":
        return LinearModel(in_dim)
    return MlpModel(in_dim, config.width)


def vanilla_run(config, diagnostics=True):
    """SGD straight on x (input dimension d)."""
    model = _head_model(config, config.spec.d)
    records, theta, meta = run_stream(config, VanillaPolicy(), model,
                                      diagnostics=diagnostics)
    meta["method"] = "vanilla"
    return records, theta, None, meta


def oracle_run(config, diagnostics=True):
    """SGD on the true factors; the frontier every projection chases."""
    if config.k_hat != config.spec.k:
        raise ValidationError("oracle baseline needs k_hat == k "
                              f"(got {config.k_hat} != {config.spec.k})")
    v = oracle_subspace(config.spec)
    model = _head_model(config, config.spec.k)
    policy = OracleFactorsPolicy(v)
    records, theta, meta = run_stream(config, policy, model,
                                      diagnostics=diagnostics)
    meta["method"] = "oracle"
    return records, theta, v, meta


def randomproj_run(config, diagnostics=True):
    """SGD on factors through a fixed random frame."""
    q = random_projection(config.spec.d, config.k_hat, config.spec.seed)
    model = _head_model(config, config.k_hat)
    records, theta, meta = run_stream(config, FrozenFramePolicy(q), model,
                                      diagnostics=diagnostics)
    meta["method"] = "randomproj"
    return records, theta, q, meta


def ppca_run(config, ppca, diagnostics=True):
    """SGD on factors through a periodically recomputed offline-PCA frame."""
    if ppca.k_hat != config.k_hat:
        raise ValidationError(f"ppca k_hat {ppca.k_hat} != config k_hat "
                              f"{config.k_hat}")
    if ppca.rotate_coeffs and config.model_kind != "linear":
        raise ValidationError("coefficient rotation only applies to the "
                              "linear head")
    q0 = init_projection(config).q
    policy = PpcaPolicy(q0, ppca, seed=config.spec.seed)
    model = _head_model(config, config.k_hat)
    records, theta, meta = run_stream(config, policy, model,
                                      diagnostics=diagnostics)
    meta["method"] = "ppca"
    return records, theta, policy.q, meta
