"""Prediction heads trained on estimated factors: linear least squares and
a two-layer ReLU network, plus the bounded component functions used by the
additive synthetic response.

Models are stateless objects; parameters travel as flat float64 vectors so
the optimizer, checkpoints, and finite-difference checks all see one layout.
"""

import csv

import numpy as np

from . import rng
from .errors import BadShapeError, ParseError, UnknownTagError

COMPONENT_TAGS = ("cospi", "sin", "sqabs", "sigmoid", "sqrtabs")


def eval_component(tag, x):
    """One scalar component function applied elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if tag == "cospi":
        return np.cos(np.pi * x)
    if tag == "sin":
        return np.sin(x)
    if tag == "sqabs":
        return (1.0 - np.abs(x)) ** 2
    if tag == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if tag == "sqrtabs":
        return 2.0 * np.sqrt(np.abs(x)) - 1.0
    raise UnknownTagError(f"unknown component tag {tag!r}")


def _check_inputs(params, inputs, ys, n_params, in_dim):
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    if params.shape != (n_params,):
        raise BadShapeError(f"expected {n_params} parameters, got {params.shape}")
    if inputs.ndim != 2 or inputs.shape[1] != in_dim:
        raise BadShapeError(f"inputs must be (m, {in_dim}), got {inputs.shape}")
    if ys is not None:
        ys = np.asarray(ys, dtype=np.float64)
        if ys.shape != (inputs.shape[0],):
            raise BadShapeError(f"ys must be ({inputs.shape[0]},), got {ys.shape}")
    return params, inputs, ys


class LinearModel:
    """y ~ <f, theta> under squared loss."""

    kind = "linear"

    def __init__(self, in_dim):
        if in_dim < 1:
            raise BadShapeError(f"in_dim must be >= 1, got {in_dim}")
        self.in_dim = in_dim
        self.n_params = in_dim

    def init_params(self, g=None):
        # deterministic zero start; the quadratic loss needs no symmetry breaking
        return np.zeros(self.in_dim)

    def loss_grad(self, params, inputs, ys):
        """Batch-mean squared loss and its gradient: 2 m^-1 F.T (F theta - y)."""
        params, inputs, ys = _check_inputs(params, inputs, ys,
                                           self.n_params, self.in_dim)
        r = inputs @ params - ys
        m = inputs.shape[0]
        loss = float(r @ r) / m
        grad = (2.0 / m) * (inputs.T @ r)
        return loss, grad

    def predict(self, params, inputs):
        params, inputs, _ = _check_inputs(params, inputs, None,
                                          self.n_params, self.in_dim)
        return inputs @ params


class MlpModel:
    """Two-layer ReLU network f -> w2 . relu(w1 f + b1) + b2."""

    kind = "mlp"

    def __init__(self, in_dim, width):
        if in_dim < 1 or width < 1:
            raise BadShapeError(f"need in_dim, width >= 1, got {in_dim}, {width}")
        self.in_dim = in_dim
        self.width = width
        self.n_params = width * in_dim + width + width + 1

    def init_params(self, g):
        """Glorot-uniform weights, zero biases, drawn from the given stream."""
        lim1 = np.sqrt(6.0 / (self.in_dim + self.width))
        lim2 = np.sqrt(6.0 / (self.width + 1))
        w1 = rng.uniform(g, -lim1, lim1, (self.width, self.in_dim))
        w2 = rng.uniform(g, -lim2, lim2, self.width)
        return np.concatenate([w1.ravel(), np.zeros(self.width), w2, np.zeros(1)])

    def _unpack(self, params):
        n, k = self.width, self.in_dim
        w1 = params[: n * k].reshape(n, k)
        b1 = params[n * k: n * k + n]
        w2 = params[n * k + n: n * k + 2 * n]
        b2 = params[-1]
        return w1, b1, w2, b2

    def loss_grad(self, params, inputs, ys):
        params, inputs, ys = _check_inputs(params, inputs, ys,
                                           self.n_params, self.in_dim)
        w1, b1, w2, b2 = self._unpack(params)
        m = inputs.shape[0]
        z = inputs @ w1.T + b1
        h = np.maximum(z, 0.0)
        r = h @ w2 + b2 - ys
        loss = float(r @ r) / m

        e = (2.0 / m) * r
        gw2 = h.T @ e
        gb2 = float(e.sum())
        dz = np.where(z > 0.0, e[:, None] * w2, 0.0)
        gw1 = dz.T @ inputs
        gb1 = dz.sum(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2, [gb2]])
        return loss, grad

    def predict(self, params, inputs):
        params, inputs, _ = _check_inputs(params, inputs, None,
                                          self.n_params, self.in_dim)
        w1, b1, w2, b2 = self._unpack(params)
        return np.maximum(inputs @ w1.T + b1, 0.0) @ w2 + b2


def save_model(path, kind, params):
    """Checkpoint: one header row "model_kind,param_count", then the flat
    parameter vector one value per row at 17 significant digits."""
    params = np.asarray(params, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_kind", "param_count"])
        w.writerow([kind, params.size])
        for v in params:
            w.writerow([f"{v:.17g}"])


def load_model(path):
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != ["model_kind", "param_count"]:
        raise ParseError(f"{path}: missing model checkpoint header")
    kind = rows[1][0]
    try:
        count = int(rows[1][1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}: bad param_count") from None
    vals = []
    for i, row in enumerate(rows[2:], start=3):
        if not row:
            continue
        try:
            vals.append(float(row[0]))
        except ValueError:
            raise ParseError(f"line {i}: not a float: {row[0]!r}") from None
    if len(vals) != count:
        raise ParseError(f"{path}: expected {count} parameters, found {len(vals)}")
    return kind, np.array(vals)
