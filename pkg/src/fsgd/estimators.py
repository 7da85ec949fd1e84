"""Scikit-learn estimators wrapping the streaming factor pipeline.

StreamingSubspace is an out-of-core transformer: each partial_fit batch
advances one Oja update of the tracked k-frame, and transform maps rows to
scaled factor scores d^-1/2 x^T q. FactorSGDRegressor stacks an SGD-trained
head (linear or small MLP) on top and runs the two-stage recipe as a
fit/predict estimator: optional warm-up on an unlabeled pool, then shuffled
epoch passes over the labeled pool with the head step and the frame update
interleaved on every mini batch, one global step counter driving both
schedules.

Both classes follow the sklearn contract (hyperparameters stored verbatim
by __init__, fitted state in trailing-underscore attributes, cloneable via
BaseEstimator). Schedules advance once per batch and are applied per
sample: a batch of n rows at scheduled rate eta_t applies n * eta_t through
the batch step (see the oja module docstring for why that composition is
the right one).
"""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin

from . import linalg, rng
from .baselines import (FrozenFramePolicy, PpcaConfig, PpcaPolicy,
                        VanillaPolicy, random_projection)
from .datagen import MiniBatch
from .errors import BadShapeError, ValidationError
from .models import LinearModel, MlpModel
from .oja import OjaSchedule, init_state, warmup
from .optimizer import OjaPolicy, SgdSchedule, estimate_factors, sgd_eta
from .oja import oja_eta, oja_step_batch

PROJECTIONS = ("oja", "identity", "random", "frozen", "ppca")


def _as_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise BadShapeError(f"{name} must be a nonempty 2-d array, "
                            f"got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite entries")
    return x


def _as_target(y, n, name="y"):
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != n:
        raise BadShapeError(f"{name} has {y.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(y)):
        raise ValidationError(f"{name} contains non-finite entries")
    return y


def _require_fitted(obj, attr):
    if not hasattr(obj, attr):
        raise ValidationError(f"{type(obj).__name__} is not fitted yet, "
                              "call fit or partial_fit first")


class StreamingSubspace(TransformerMixin, BaseEstimator):
    """Streaming principal-subspace tracker with a PCA-like interface.

    partial_fit(X) performs one Oja update from the batch X at the
    scheduled rate c / (c0 + t), applied per sample; fit(X) replays X in
    consecutive batch_size chunks after resetting the frame. transform(X)
    returns the scaled scores d^-1/2 X q.

    Attributes after fitting: components_ is the (k, d) frame transpose
    (rows are components, the sklearn PCA convention), state_ the
    underlying tracker state, n_steps_ the number of batch updates taken.
    """

    def __init__(self, n_components=3, batch_size=32, oja_c=0.1,
                 oja_c0=50.0, align=False, freeze_after=None, seed=0):
        self.n_components = n_components
        self.batch_size = batch_size
        self.oja_c = oja_c
        self.oja_c0 = oja_c0
        self.align = align
        self.freeze_after = freeze_after
        self.seed = seed

    def _schedule(self):
        return OjaSchedule.practical(self.oja_c, self.oja_c0)

    def partial_fit(self, X, y=None):
        """One frame update from one batch; initializes on the first call."""
        X = _as_matrix(X, "X")
        sched = self._schedule()
        if not hasattr(self, "state_"):
            if X.shape[1] < self.n_components:
                raise ValidationError(
                    f"n_components={self.n_components} exceeds the "
                    f"{X.shape[1]} input columns")
            self.state_ = init_state(X.shape[1], self.n_components,
                                     self.seed, align=self.align,
                                     frozen_after=self.freeze_after)
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise BadShapeError(f"X has {X.shape[1]} columns, expected "
                                f"{self.n_features_in_}")
        eta = X.shape[0] * oja_eta(sched, self.state_.t)
        self.state_ = oja_step_batch(self.state_, X, eta)
        self.components_ = self.state_.q.T
        self.n_steps_ = self.state_.t
        return self

    def fit(self, X, y=None):
        """Reset, then replay X in consecutive batch_size chunks."""
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, "
                                  f"got {self.batch_size}")
        X = _as_matrix(X, "X")
        for attr in ("state_", "components_", "n_steps_", "n_features_in_"):
            if hasattr(self, attr):
                delattr(self, attr)
        for lo in range(0, X.shape[0], self.batch_size):
            self.partial_fit(X[lo: lo + self.batch_size])
        return self

    def transform(self, X):
        _require_fitted(self, "state_")
        X = _as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise BadShapeError(f"X has {X.shape[1]} columns, expected "
                                f"{self.n_features_in_}")
        return estimate_factors(self.state_.q, X)


class FactorSGDRegressor(RegressorMixin, BaseEstimator):
    """Two-stage streaming regressor: project each batch through a tracked
    or fixed frame, take one decayed-step SGD step on the projected scores,
    then update the frame from the same batch.

    projection selects the frame policy:
      oja       joint online updates (the full streaming pipeline)
      identity  no projection, the head trains on raw covariates
      random    fixed random orthonormal frame
      frozen    fixed caller-supplied frame (pass projection_frame to fit)
      ppca      sliding-window offline PCA refreshed every few batches

    fit(X, y) makes `epochs` shuffled passes over the pool in batch_size
    chunks; one global step counter drives both schedules, so the SGD rate
    keeps decaying across epochs. An unlabeled pool warm-starts the frame
    by cycling single-sample Oja updates at the constant warm-up rate.
    partial_fit(X, y) exposes the raw per-batch step for true streams; the
    frame then initializes randomly (or from projection_frame) since no
    pool is available. freeze_after counts joint updates, warm-up excluded.

    After fitting: model_ and params_ hold the head, policy_ the frame
    policy, components_ the (k, d) frame transpose (None for identity),
    coef_ the linear head coefficients, history_ one dict per epoch with
    the mean train loss and, when eval_set was given, the eval MSE.
    """

    def __init__(self, n_components=3, projection="oja", model="linear",
                 width=50, batch_size=32, epochs=100, sgd_c=0.5,
                 sgd_gamma=0.6, oja_c=0.1, oja_c0=50.0, warmup_steps=200,
                 warmup_eta=0.005, align=False, freeze_after=None,
                 ppca_refresh_every=50, ppca_window=500, ppca_rotate=False,
                 seed=0):
        self.n_components = n_components
        self.projection = projection
        self.model = model
        self.width = width
        self.batch_size = batch_size
        self.epochs = epochs
        self.sgd_c = sgd_c
        self.sgd_gamma = sgd_gamma
        self.oja_c = oja_c
        self.oja_c0 = oja_c0
        self.warmup_steps = warmup_steps
        self.warmup_eta = warmup_eta
        self.align = align
        self.freeze_after = freeze_after
        self.ppca_refresh_every = ppca_refresh_every
        self.ppca_window = ppca_window
        self.ppca_rotate = ppca_rotate
        self.seed = seed

    # -- construction helpers ------------------------------------------

    def _validate(self):
        if self.projection not in PROJECTIONS:
            raise ValidationError(f"unknown projection {self.projection!r}, "
                                  f"expected one of {PROJECTIONS}")
        if self.model not in ("linear", "mlp"):
            raise ValidationError(f"unknown model {self.model!r}")
        if self.n_components < 1:
            raise ValidationError("n_components must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.warmup_steps < 0 or self.warmup_eta < 0:
            raise ValidationError("warm-up settings must be >= 0")
        if self.ppca_rotate and self.model != "linear":
            raise ValidationError("coefficient rotation across refreshes "
                                  "only makes sense for the linear head")

    def _init_frame(self, d, unlabeled):
        """Random orthonormal start, or single-sample cycling warm-up over
        the unlabeled pool. freeze_after is attached afterwards so warm-up
        updates never count against it."""
        if unlabeled is None or self.warmup_steps == 0:
            return init_state(d, self.n_components, self.seed,
                              align=self.align,
                              frozen_after=self.freeze_after)
        pool = _as_matrix(unlabeled, "unlabeled")
        if pool.shape[1] != d:
            raise BadShapeError(f"unlabeled has {pool.shape[1]} columns, "
                                f"expected {d}")

        def cycling():
            i = 0
            while True:
                yield MiniBatch(xs=pool[i % pool.shape[0]][None, :], ys=None)
                i += 1

        state = warmup(cycling(), self.n_components, self.warmup_steps,
                       self.warmup_eta, self.seed, align=self.align)
        return replace(state, frozen_after=self.freeze_after)

    def _build_policy(self, d, unlabeled, projection_frame):
        if self.projection == "identity":
            return VanillaPolicy()
        if d < self.n_components:
            raise ValidationError(f"n_components={self.n_components} "
                                  f"exceeds the {d} input columns")
        if self.projection == "random":
            return FrozenFramePolicy(
                random_projection(d, self.n_components, self.seed))
        if self.projection == "frozen":
            if projection_frame is None:
                raise ValidationError("projection='frozen' needs a "
                                      "projection_frame at fit time")
            frame = linalg._check_orthonormal(
                np.asarray(projection_frame, dtype=float), "projection_frame")
            if frame.shape != (d, self.n_components):
                raise BadShapeError(
                    f"projection_frame shape {frame.shape} != "
                    f"({d}, {self.n_components})")
            return FrozenFramePolicy(frame)
        state = self._init_frame(d, unlabeled)
        if self.projection == "oja":
            return OjaPolicy(state,
                             OjaSchedule.practical(self.oja_c, self.oja_c0))
        cfg = PpcaConfig(self.n_components, self.ppca_refresh_every,
                         self.ppca_window, rotate_coeffs=self.ppca_rotate)
        return PpcaPolicy(state.q, cfg, seed=self.seed)

    def _build_model(self, d):
        in_dim = d if self.projection == "identity" else self.n_components
        if self.model == "linear":
            return LinearModel(in_dim)
        return MlpModel(in_dim, self.width)

    def _project(self, policy, xs):
        if policy.q is None:
            return xs
        return estimate_factors(policy.q, xs)

    def _joint_step(self, batch, t):
        """Head step on the projected batch, then the frame update, then
        any pending coefficient rotation from a frame refresh."""
        f = self.policy_.factors(batch)
        loss, grad = self.model_.loss_grad(self.params_, f, batch.ys)
        self.params_ = self.params_ - sgd_eta(self._sched, t) * grad
        self.policy_.update(batch)
        take = getattr(self.policy_, "take_rotation", None)
        if take is not None:
            r = take()
            if r is not None:
                # frame replaced: carry the coefficients across the change
                self.params_ = r @ self.params_
        return loss

    def _refresh_views(self):
        q = self.policy_.q
        self.components_ = None if q is None else q.T
        if self.model_.kind == "linear":
            self.coef_ = self.params_

    # -- sklearn surface -----------------------------------------------

    def fit(self, X, y, unlabeled=None, eval_set=None, projection_frame=None):
        """Epoch training over a finite pool.

        unlabeled: optional (n_I, d) rows for the frame warm-up.
        eval_set: optional (X_eval, y_eval) pair; its MSE is recorded per
        epoch in history_ (never used for training decisions here).
        projection_frame: the fixed frame for projection='frozen'.
        """
        self._validate()
        X = _as_matrix(X, "X")
        y = _as_target(y, X.shape[0])
        self.n_features_in_ = X.shape[1]
        self.policy_ = self._build_policy(X.shape[1], unlabeled,
                                          projection_frame)
        self.model_ = self._build_model(X.shape[1])
        self.params_ = self.model_.init_params(
            rng.stream(self.seed, rng.ROLE_MODEL_INIT))
        self._sched = SgdSchedule(self.sgd_c, self.sgd_gamma)
        if eval_set is not None:
            ex = _as_matrix(eval_set[0], "eval X")
            ey = _as_target(eval_set[1], ex.shape[0], "eval y")
            if ex.shape[1] != X.shape[1]:
                raise BadShapeError(f"eval X has {ex.shape[1]} columns, "
                                    f"expected {X.shape[1]}")
        n = X.shape[0]
        t = 1
        history = []
        for epoch in range(self.epochs):
            order = rng.stream(self.seed, rng.ROLE_SHUFFLE,
                               epoch).permutation(n)
            losses = []
            for lo in range(0, n, self.batch_size):
                idx = order[lo: lo + self.batch_size]
                losses.append(self._joint_step(MiniBatch(xs=X[idx],
                                                         ys=y[idx]), t))
                t += 1
            row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if eval_set is not None:
                r = self.model_.predict(self.params_,
                                        self._project(self.policy_, ex)) - ey
                row["eval_loss"] = float(r @ r) / ex.shape[0]
            history.append(row)
        self.history_ = history
        self.n_steps_ = t - 1
        self._refresh_views()
        return self

    def partial_fit(self, X, y, projection_frame=None):
        """One joint step on one batch; initializes on the first call."""
        X = _as_matrix(X, "X")
        y = _as_target(y, X.shape[0])
        if not hasattr(self, "model_"):
            self._validate()
            self.n_features_in_ = X.shape[1]
            self.policy_ = self._build_policy(X.shape[1], None,
                                              projection_frame)
            self.model_ = self._build_model(X.shape[1])
            self.params_ = self.model_.init_params(
                rng.stream(self.seed, rng.ROLE_MODEL_INIT))
            self._sched = SgdSchedule(self.sgd_c, self.sgd_gamma)
            self.history_ = []
            self.n_steps_ = 0
        elif X.shape[1] != self.n_features_in_:
            raise BadShapeError(f"X has {X.shape[1]} columns, expected "
                                f"{self.n_features_in_}")
        self._joint_step(MiniBatch(xs=X, ys=y), self.n_steps_ + 1)
        self.n_steps_ += 1
        self._refresh_views()
        return self

    def predict(self, X):
        _require_fitted(self, "model_")
        X = _as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise BadShapeError(f"X has {X.shape[1]} columns, expected "
                                f"{self.n_features_in_}")
        return self.model_.predict(self.params_, self._project(self.policy_,
                                                               X))
