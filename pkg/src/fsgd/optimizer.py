"""The joint loop: SGD on estimated factors plus the subspace update.

Each iteration t draws the batch at stream position t, projects it through
the current frame (f_hat = d^-1/2 q.T x), takes one SGD step on the model
coefficients at step size c * t^-gamma, and then feeds the same batch to the
Oja update. Diagnostics compare the coefficients against the rotated
minimizer R theta*, where R is the in-span rotation carrying the oracle
frame onto the tracked frame.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import linalg, rng
from .datagen import LinearResponse, oracle_subspace, sample_batch
from .errors import BadShapeError, ParseError, ValidationError
from .linalg import (
    containment_distance,
    ls_norm,
    polar_rotation,
    smooth_order,
    spectral_cond,
    subspace_distance,
)
from .models import LinearModel, MlpModel
from .oja import OjaState, oja_eta, oja_step_batch, warmup

RECORD_HEADER = ("t", "eta_t", "eta_oja_t", "train_loss",
                 "dist_qv", "rot_err_s", "theta_drift")

# above this horizon, records are thinned to ~RECORD_CAP log-spaced rows
FULL_RECORD_LIMIT = 10_000
RECORD_CAP = 2000


@dataclass(frozen=True)
class SgdSchedule:
    """eta_t = c * (t + t_offset - 1)^-gamma; the default offset 1 gives the
    plain c * t^-gamma decay for t = 1, 2, ..."""

    c: float
    gamma: float
    t_offset: int = 1

    def __post_init__(self):
        if self.c <= 0:
            raise ValidationError(f"c must be > 0, got {self.c}")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError("gamma must lie in (0,1)")
        if self.t_offset < 0:
            raise ValidationError(f"t_offset must be >= 0, got {self.t_offset}")


def sgd_eta(schedule, t):
    base = t + schedule.t_offset - 1
    if base < 1:
        raise ValidationError(f"step index out of range: t={t} with "
                              f"t_offset={schedule.t_offset}")
    return schedule.c * float(base) ** (-schedule.gamma)


@dataclass(frozen=True)
class SgdState:
    """Coefficient vector and iteration counter (functional updates)."""

    theta: np.ndarray
    t: int


def estimate_factors(q, x):
    """f_hat = d^-1/2 q.T x for a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    d = q.shape[0]
    scale = 1.0 / math.sqrt(d)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise BadShapeError(f"x has {x.shape[0]} entries, frame has d={d}")
        return scale * (x @ q)
    if x.ndim == 2:
        if x.shape[1] != d:
            raise BadShapeError(f"batch width {x.shape[1]} != d={d}")
        return scale * (x @ q)
    raise BadShapeError(f"x must be 1-d or 2-d, got shape {x.shape}")


def rotated_minimizer_linear(q, v, theta_star):
    """The coefficients the optimizer actually tracks: R theta* with
    R = polar(q.T v).

    The estimated factors satisfy f_hat ~= (q.T v) f, so for the linear
    least-squares stream the population minimizer in the estimated-factor
    coordinates is (q.T v) theta*, whose nearest rotation image is
    polar(q.T v) theta* = track_rotation(v, q) theta*.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if q.shape != v.shape:
        raise BadShapeError(f"frame shapes differ: {q.shape} vs {v.shape}")
    if theta_star.shape != (q.shape[1],):
        raise BadShapeError(f"theta* must have k={q.shape[1]} entries")
    return polar_rotation(q.T @ v) @ theta_star


def fsgd_step(sgd, oja, batch, model, sgd_schedule, oja_schedule):
    """One joint iteration: SGD step at t = sgd.t + 1 from the frame held in
    oja, then the Oja update on the same batch at the scheduled rate for
    t - 1, applied per sample (m samples carry m * eta_oja(t - 1); see the
    oja module docstring).

    Returns (sgd', oja', info) with info carrying the pre-update batch loss
    and both applied step sizes.
    """
    t = sgd.t + 1
    fhat = estimate_factors(oja.q, batch.xs)
    loss, grad = model.loss_grad(sgd.theta, fhat, batch.ys)
    eta_t = sgd_eta(sgd_schedule, t)
    theta_new = sgd.theta - eta_t * grad

    eta_oja = batch.xs.shape[0] * oja_eta(oja_schedule, t - 1)
    oja_new = oja_step_batch(oja, batch.xs, eta_oja)

    info = {"t": t, "eta_t": eta_t,
            "eta_oja_t": 0.0 if oja.is_frozen() else eta_oja,
            "train_loss": loss}
    return SgdState(theta=theta_new, t=t), oja_new, info


@dataclass(frozen=True)
class RunRecord:
    """One recorded iteration; diagnostic fields are None when unavailable
    (non-synthetic data, mismatched rank, or a policy with no frame)."""

    t: int
    eta_t: float
    eta_oja_t: object
    train_loss: float
    dist_qv: object = None
    rot_err_s: object = None
    theta_drift: object = None


def record_steps(t_max, cap=RECORD_CAP):
    """Iterations to record: every one up to 10^4, then ~cap log-spaced
    values plus the final iteration."""
    if t_max < 1:
        raise ValidationError(f"t_max must be >= 1, got {t_max}")
    if t_max <= FULL_RECORD_LIMIT:
        return set(range(1, t_max + 1))
    ts = np.unique(np.rint(np.geomspace(1.0, float(t_max), cap)).astype(np.int64))
    out = set(int(t) for t in ts)
    out.add(t_max)
    return out


@dataclass(frozen=True)
class FsgdConfig:
    """Everything one synthetic streaming run needs."""

    spec: object
    k_hat: int
    m: int
    t_max: int
    sgd: SgdSchedule
    oja: object
    warmup_t0: int = 10
    warmup_eta0: float = 0.01
    align: bool = False
    frozen_after: object = None
    projection_init: str = "warmup"   # "warmup" | "oracle"
    model_kind: str = "linear"        # "linear" | "mlp"
    width: int = 50
    record_cap: int = RECORD_CAP
    s_order: object = None

    def __post_init__(self):
        if self.k_hat < 1:
            raise ValidationError(f"k_hat must be >= 1, got {self.k_hat}")
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        if self.t_max < 0:
            raise ValidationError(f"t_max must be >= 0, got {self.t_max}")
        if self.warmup_t0 < 0:
            raise ValidationError("warmup_t0 must be >= 0")
        if self.warmup_eta0 < 0:
            raise ValidationError("warmup_eta0 must be >= 0")
        if self.frozen_after is not None and self.frozen_after < 0:
            raise ValidationError("frozen_after must be >= 0 or None")
        if self.projection_init not in ("warmup", "oracle"):
            raise ValidationError(f"unknown projection_init "
                                  f"{self.projection_init!r}")
        if self.model_kind not in ("linear", "mlp"):
            raise ValidationError(f"unknown model_kind {self.model_kind!r}")


def build_model(config):
    if config.model_kind == "linear":
        return LinearModel(config.k_hat)
    return MlpModel(config.k_hat, config.width)


def init_projection(config):
    """Stage I, or the oracle frame for controlled experiments."""
    spec = config.spec
    if config.projection_init == "oracle":
        if config.k_hat != spec.k:
            raise ValidationError("oracle init needs k_hat == k")
        return OjaState(q=oracle_subspace(spec), t=0, align=config.align,
                        frozen_after=config.frozen_after)
    return warmup(spec, config.k_hat, config.warmup_t0, config.warmup_eta0,
                  spec.seed, m=config.m, align=config.align,
                  frozen_after=config.frozen_after)


class OjaPolicy:
    """The joint-update projection: factors through the tracked frame, frame
    refreshed by the same batch."""

    def __init__(self, state, schedule):
        self.state = state
        self.schedule = schedule

    @property
    def q(self):
        return self.state.q

    def factors(self, batch):
        return estimate_factors(self.state.q, batch.xs)

    def update(self, batch):
        eta = batch.xs.shape[0] * oja_eta(self.schedule, self.state.t)
        frozen = self.state.is_frozen()
        self.state = oja_step_batch(self.state, batch.xs, eta)
        return 0.0 if frozen else eta


def run_stream(config, policy, model, diagnostics=True):
    """Drive a policy/model pair down the synthetic stream.

    Returns (records, theta, meta). Linear-response runs with a frame of
    matching rank also record dist_qv / rot_err_s / theta_drift and report
    the final conditioning of v.T q.
    """
    spec = config.spec
    # t_max = 0 is a legal no-op run: warm-start states pass through
    rec_set = record_steps(config.t_max, config.record_cap) \
        if config.t_max > 0 else set()
    records = []

    has_frame = getattr(policy, "q", None) is not None
    linear_diag = (diagnostics and has_frame
                   and config.model_kind == "linear"
                   and isinstance(spec.response, LinearResponse)
                   and config.k_hat == spec.k)
    v = oracle_subspace(spec) if (diagnostics and has_frame) else None
    theta_star = spec.response.theta if linear_diag else None
    s = config.s_order if config.s_order is not None else smooth_order(config.k_hat)

    g_init = rng.stream(spec.seed, rng.ROLE_MODEL_INIT)
    theta = model.init_params(g_init)
    loss = math.nan

    for t in range(1, config.t_max + 1):
        batch = sample_batch(spec, config.m, t)
        rec = t in rec_set

        rot_err = None
        r_prev = None
        if rec and linear_diag:
            r_prev = linalg.fast_polar(policy.q.T @ v)
            rot_err = ls_norm(theta - r_prev @ theta_star, s)

        fhat = policy.factors(batch)
        loss, grad = model.loss_grad(theta, fhat, batch.ys)
        eta_t = sgd_eta(config.sgd, t)
        theta = theta - eta_t * grad
        eta_oja = policy.update(batch)
        take = getattr(policy, "take_rotation", None)
        if take is not None:
            r = take()
            if r is not None:
                # frame replaced: carry the coefficients across the span change
                theta = r @ theta

        if rec:
            dist = drift = None
            if has_frame and v is not None:
                if policy.q.shape[1] == v.shape[1]:
                    dist = linalg.fast_subspace_distance(policy.q, v)
                else:
                    dist = containment_distance(v, policy.q)
            if linear_diag:
                r_cur = linalg.fast_polar(policy.q.T @ v)
                drift = ls_norm((r_cur - r_prev) @ theta_star, s)
            records.append(RunRecord(t=t, eta_t=eta_t, eta_oja_t=eta_oja,
                                     train_loss=loss, dist_qv=dist,
                                     rot_err_s=rot_err, theta_drift=drift))

    meta = {"final_train_loss": loss, "s_order": s}
    if records and linear_diag:
        meta["final_rot_err_s"] = records[-1].rot_err_s
        meta["final_dist_qv"] = records[-1].dist_qv
        meta["cond_vq"] = spectral_cond(v.T @ policy.q)
    elif records and has_frame and v is not None:
        meta["final_dist_qv"] = records[-1].dist_qv
    return records, theta, meta


def run_fsgd(config, diagnostics=True):
    """The full two-stage algorithm on a synthetic stream."""
    state = init_projection(config)
    model = build_model(config)
    policy = OjaPolicy(state, config.oja)

    meta = {}
    if diagnostics:
        v = oracle_subspace(config.spec)
        if config.k_hat == config.spec.k:
            meta["warmup_dist"] = subspace_distance(state.q, v)

    records, theta, run_meta = run_stream(config, policy, model,
                                          diagnostics=diagnostics)
    meta.update(run_meta)
    return records, theta, policy.state, meta


def write_records(path, records):
    """RunRecord stream as CSV; empty cells for missing diagnostics."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([
                r.t,
                f"{r.eta_t:.17g}",
                "" if r.eta_oja_t is None else f"{r.eta_oja_t:.17g}",
                f"{r.train_loss:.17g}",
                "" if r.dist_qv is None else f"{r.dist_qv:.17g}",
                "" if r.rot_err_s is None else f"{r.rot_err_s:.17g}",
                "" if r.theta_drift is None else f"{r.theta_drift:.17g}",
            ])


def read_records(path):
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != RECORD_HEADER:
        raise ParseError(f"{path}: missing record header")
    out = []

    def _opt(v):
        return None if v == "" else float(v)

    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(RECORD_HEADER):
            raise ParseError(f"line {i}: expected {len(RECORD_HEADER)} fields")
        try:
            out.append(RunRecord(
                t=int(row[0]), eta_t=float(row[1]), eta_oja_t=_opt(row[2]),
                train_loss=float(row[3]), dist_qv=_opt(row[4]),
                rot_err_s=_opt(row[5]), theta_drift=_opt(row[6]),
            ))
        except ValueError as exc:
            raise ParseError(f"line {i}: {exc}") from None
    return out


def estimate_op_bound(spec, n=512):
    """Probe estimate of M_A = sup ||A_t||: max squared sample norm over a
    deterministic probe batch (A_t is an average of x x.T terms)."""
    probe = sample_batch(spec, n, 0, role=rng.ROLE_WARMUP_BATCH)
    return float(np.max((probe.xs * probe.xs).sum(axis=1)))
