"""Streaming principal-subspace tracking by mini-batch Oja iteration.

One update takes the current orthonormal frame q (d x k) to the Q-factor of
(I + eta * A_t) q, where A_t = m^-1 X.T X is the batch second-moment matrix.
The d x d matrix is never formed: the product is computed through the batch
as q + eta * m^-1 * X.T (X q), which is what makes d in the thousands
affordable. An optional alignment step rotates each new frame onto its
predecessor (a Procrustes fit), which changes nothing about the span but
keeps the in-span orientation from drifting.

oja_step and oja_step_batch take eta literally. The drivers built on top of
them (warmup here, the joint streaming loop in optimizer) apply schedules
per sample: a batch of m samples at scheduled rate eta_t is the first-order
composition of m single-sample updates, prod_i (I + eta_t x_i x_i.T) ~=
I + (m eta_t) A_t, so they hand m * eta_t to the batch step. Decay-rate
observations on mini-batch streams match that convention, not the unscaled
one (batch size would otherwise dilute the schedule's mass per sample).
"""

import csv
import math
from dataclasses import dataclass, replace
from itertools import chain, islice

import numpy as np

from . import linalg, rng
from .datagen import MiniBatch, sample_batch
from .errors import BadShapeError, ParseError, ValidationError
from .linalg import polar_rotation, thin_qr


@dataclass(frozen=True)
class OjaSchedule:
    """Step sizes eta_t. practical: c / (c0 + t). theoretical:
    alpha / ((beta + t) * rho_k) with alpha >= 8 per the decay guarantee."""

    kind: str
    c: float = 0.0
    c0: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    rho_k: float = 0.0

    @staticmethod
    def practical(c, c0):
        if c <= 0 or c0 <= 0:
            raise ValidationError(f"practical schedule needs c, c0 > 0, got {c}, {c0}")
        return OjaSchedule(kind="practical", c=float(c), c0=float(c0))

    @staticmethod
    def theoretical(alpha, beta, rho_k):
        if alpha <= 0 or beta <= 0 or rho_k <= 0:
            raise ValidationError("theoretical schedule needs alpha, beta, rho_k > 0")
        return OjaSchedule(kind="theoretical", alpha=float(alpha),
                           beta=float(beta), rho_k=float(rho_k))


def oja_eta(schedule, t):
    if t < 0:
        raise ValidationError(f"t must be >= 0, got {t}")
    if schedule.kind == "practical":
        return schedule.c / (schedule.c0 + t)
    if schedule.kind == "theoretical":
        return schedule.alpha / ((schedule.beta + t) * schedule.rho_k)
    raise ValidationError(f"unknown schedule kind {schedule.kind!r}")


@dataclass(frozen=True)
class CapVerdict:
    """Outcome of the step-size cap check eta_0 <= k^-2 / (4 (sqrt(2)+1) M_A)."""

    ok: bool
    cap: float
    eta0: float


def check_cap(schedule, k, m_a):
    """Advisory check of the initial Oja step against the stability cap."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if m_a <= 0:
        raise ValidationError(f"m_a must be > 0, got {m_a}")
    cap = 1.0 / (k * k * 4.0 * (np.sqrt(2.0) + 1.0) * m_a)
    eta0 = oja_eta(schedule, 0)
    return CapVerdict(ok=eta0 <= cap, cap=cap, eta0=eta0)


@dataclass(frozen=True)
class OjaState:
    """Immutable tracker state: frame q (d x k), step counter t, alignment
    flag, and an optional iteration index after which q never changes."""

    q: np.ndarray
    t: int
    align: bool = False
    frozen_after: object = None

    @property
    def d(self):
        return self.q.shape[0]

    @property
    def k(self):
        return self.q.shape[1]

    def is_frozen(self):
        return self.frozen_after is not None and self.t >= self.frozen_after


def batch_covariance(batch):
    """A = m^-1 sum_i x_i x_i.T, materialized. Fine for small d and tests;
    the step itself goes through the factored product instead."""
    xs = batch.xs
    return xs.T @ xs / xs.shape[0]


def _orthonormalize(y):
    """Positive-diagonal QR of a near-orthonormal iterate.

    y = q + eta * (update) has Gram matrix ~= I, so Cholesky QR is exact to
    rounding here and much cheaper than a Householder sweep on the tall thin
    shapes the loop runs at. Falls back to the general kernel whenever the
    pivots say the input is not close to orthonormal after all.
    """
    k = y.shape[1]
    if k == 1:
        n = math.sqrt(float(y[:, 0] @ y[:, 0]))
        if n > 1e-6:
            return y / n
    elif k == 3:
        # pivots near 1 certify cond(y) = O(1), where Cholesky QR is exact
        # to rounding
        g = y.T @ y
        v00 = g[0, 0]
        if 0.25 < v00 < 4.0:
            l00 = math.sqrt(v00)
            l10 = g[0, 1] / l00
            l20 = g[0, 2] / l00
            v11 = g[1, 1] - l10 * l10
            if 0.25 < v11 < 4.0:
                l11 = math.sqrt(v11)
                l21 = (g[1, 2] - l20 * l10) / l11
                v22 = g[2, 2] - l20 * l20 - l21 * l21
                if 0.25 < v22 < 4.0:
                    l22 = math.sqrt(v22)
                    i00 = 1.0 / l00
                    i11 = 1.0 / l11
                    i22 = 1.0 / l22
                    i01 = -l10 * i00 * i11
                    i12 = -l21 * i11 * i22
                    i02 = (l10 * l21 - l20 * l11) * i00 * i11 * i22
                    rinv = np.array([[i00, i01, i02],
                                     [0.0, i11, i12],
                                     [0.0, 0.0, i22]])
                    return y @ rinv
    q_new, _ = linalg.fast_qr_pos(y)
    return q_new


def _advance(state, y):
    q_new = _orthonormalize(y)
    if state.align:
        q_new = q_new @ linalg.fast_polar(q_new.T @ state.q)
    return OjaState(q=q_new, t=state.t + 1, align=state.align,
                    frozen_after=state.frozen_after)


def oja_step(state, a, eta):
    """One update from an explicit covariance matrix a."""
    if eta < 0:
        raise ValidationError(f"eta must be >= 0, got {eta}")
    if a.shape != (state.d, state.d):
        raise BadShapeError(f"covariance shape {a.shape} != ({state.d}, {state.d})")
    if state.is_frozen():
        return replace(state, t=state.t + 1)
    return _advance(state, state.q + eta * (a @ state.q))


def oja_step_batch(state, xs, eta):
    """One update through the factored product q + eta m^-1 X.T (X q)."""
    if eta < 0:
        raise ValidationError(f"eta must be >= 0, got {eta}")
    if xs.ndim != 2 or xs.shape[1] != state.d:
        raise BadShapeError(f"batch shape {xs.shape} incompatible with d={state.d}")
    if state.is_frozen():
        return replace(state, t=state.t + 1)
    m = xs.shape[0]
    y = state.q + (eta / m) * (xs.T @ (xs @ state.q))
    return _advance(state, y)


def init_state(d, k, seed, align=False, frozen_after=None):
    """Random orthonormal start: QR of a Gaussian matrix from the seed's
    subspace-init stream."""
    if d < k or k < 1:
        raise ValidationError(f"need d >= k >= 1, got d={d} k={k}")
    g = rng.stream(seed, rng.ROLE_SUBSPACE_INIT)
    q, _ = thin_qr(rng.normal(g, 1.0, (d, k)))
    return OjaState(q=q, t=0, align=align, frozen_after=frozen_after)


def warmup(source, k, t0, eta0, seed, m=None, d=None, align=False,
           frozen_after=None):
    """Stage I: constant-step Oja from a random orthonormal start.

    source is either a FactorModelSpec (t0 fresh batches are drawn from the
    dedicated warm-up stream) or an iterable of MiniBatch, whose first t0
    elements are consumed (pass d explicitly to avoid peeking when t0 = 0).
    eta0 is the per-sample rate: each batch update applies m * eta0 (see the
    module docstring). Returns the state with the step counter reset to 0,
    ready for the joint stage.
    """
    if t0 < 0:
        raise ValidationError(f"t0 must be >= 0, got {t0}")
    if eta0 < 0:
        raise ValidationError(f"eta0 must be >= 0, got {eta0}")

    if hasattr(source, "loading"):
        if m is None:
            raise ValidationError("warmup from a spec needs a batch size m")
        d = source.d
        batches = (sample_batch(source, m, s, role=rng.ROLE_WARMUP_BATCH)
                   for s in range(1, t0 + 1))
    elif d is not None and t0 == 0:
        batches = iter(())
    else:
        it = iter(source)
        try:
            first = next(it)
        except StopIteration:
            raise ValidationError("warm-up source yielded no batches") from None
        d = first.xs.shape[1]
        # chain, not a wrapper generator: a generator suspended at
        # "yield from it" would close the caller's iterator when collected,
        # killing the stream the joint stage still needs. islice caps the
        # pull at exactly t0 batches so none are consumed and dropped.
        batches = chain([first], islice(it, max(t0 - 1, 0)))

    state = init_state(d, k, seed, align=align, frozen_after=frozen_after)
    n = 0
    for b in batches:
        if n >= t0:
            break
        state = oja_step_batch(state, b.xs, eta0 * b.xs.shape[0])
        n += 1
    return OjaState(q=state.q, t=0, align=align, frozen_after=frozen_after)


def track_rotation(q, v):
    """The orthogonal R minimizing ||q - v R||_F: polar factor of v.T q."""
    if q.shape != v.shape:
        raise BadShapeError(f"frame shapes differ: {q.shape} vs {v.shape}")
    return polar_rotation(v.T @ q)


def save_subspace(path, state):
    """Snapshot q as CSV: header "d,k,t", then d rows of k values at 17
    significant digits (round-trips float64 exactly)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "k", "t"])
        w.writerow([state.d, state.k, state.t])
        for row in state.q:
            w.writerow([f"{v:.17g}" for v in row])


def load_subspace(path, align=False, frozen_after=None):
    with open(path, "r", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0] != ["d", "k", "t"]:
        raise ParseError(f"{path}: missing subspace header 'd,k,t'")
    try:
        d, k, t = (int(v) for v in rows[1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}: bad dimension row") from None
    if len(rows) != d + 2:
        raise ParseError(f"{path}: expected {d} frame rows, found {len(rows) - 2}")
    try:
        q = np.array([[float(v) for v in row] for row in rows[2:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if q.shape != (d, k):
        raise ParseError(f"{path}: frame shape {q.shape} != ({d}, {k})")
    return OjaState(q=q, t=t, align=align, frozen_after=frozen_after)
