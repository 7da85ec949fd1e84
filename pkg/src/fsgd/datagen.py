"""Synthetic factor-model streams and CSV ingestion.

Data follow y = M(f) + eps, x = B f + u with latent f in R^k observed only
through the d-dimensional x. Batches are addressed by an integer stream
position; sampling is a pure function of (spec, m, position), so replaying
a position always reproduces the same bytes.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import rng
from .errors import (
    BadShapeError,
    EmptyStreamError,
    ParseError,
    UnknownTagError,
    ValidationError,
)
from .linalg import thin_qr
from .models import COMPONENT_TAGS, eval_component

# pool positions for fixed sample sets (warm-up, train, valid, test); kept
# far above any streaming position so the two can never collide
POOL_BASE = 2**40


@dataclass(frozen=True)
class LinearResponse:
    """y = f . theta + eps."""

    theta: np.ndarray

    def __call__(self, fs):
        return fs @ self.theta


@dataclass(frozen=True)
class AdditiveResponse:
    """y = sum_j M_j(f_j) + eps with M_j drawn from the component table."""

    tags: tuple

    def __call__(self, fs):
        out = np.zeros(fs.shape[0])
        for j, tag in enumerate(self.tags):
            out += eval_component(tag, fs[:, j])
        return out


@dataclass(frozen=True)
class FactorModelSpec:
    """Everything needed to sample the stream deterministically.

    loading is the d x k matrix B; factor/idio bounds give per-coordinate
    Unif[lo, hi] laws (idio may be disabled entirely); noise_sd is the
    response noise standard deviation; response maps factors to the clean
    signal. orthonormalized records whether B came from the orthogonalized
    constructor, in which case B.T B = d I_k holds exactly.
    """

    d: int
    k: int
    loading: np.ndarray
    factor_low: float
    factor_high: float
    idio_low: float
    idio_high: float
    has_idio: bool
    noise_sd: float
    response: object
    seed: int
    orthonormalized: bool = False

    def __post_init__(self):
        if self.d < 1 or self.k < 1 or self.k > self.d:
            raise ValidationError(f"need d >= k >= 1, got d={self.d} k={self.k}")
        if self.loading.shape != (self.d, self.k):
            raise BadShapeError(
                f"loading shape {self.loading.shape} != ({self.d}, {self.k})"
            )
        if not np.all(np.isfinite(self.loading)):
            raise BadShapeError("loading contains non-finite entries")
        if self.factor_low >= self.factor_high:
            raise ValidationError("factor bounds must satisfy lo < hi")
        if self.has_idio and self.idio_low >= self.idio_high:
            raise ValidationError("idio bounds must satisfy lo < hi")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be >= 0")
        if self.orthonormalized:
            g = self.loading.T @ self.loading / self.d
            if np.max(np.abs(g - np.eye(self.k))) > 1e-8:
                raise ValidationError("orthonormalized loading violates B.T B = d I")


def make_loading(d, k, seed, kind="orthonormalized"):
    """Draw the loading matrix B.

    "orthonormalized": B = sqrt(d) * Q with Q the QR factor of a Gaussian
    matrix, so B.T B = d I_k exactly. "uniform": i.i.d. Unif[-sqrt(3),
    sqrt(3)] entries (unit variance), satisfying the identification
    condition only approximately.
    """
    if d < k:
        raise ValidationError(f"need d >= k, got d={d} k={k}")
    g = rng.stream(seed, rng.ROLE_LOADING)
    if kind == "orthonormalized":
        z = rng.normal(g, 1.0, (d, k))
        q, _ = thin_qr(z)
        return np.sqrt(d) * q
    if kind == "uniform":
        s3 = np.sqrt(3.0)
        return rng.uniform(g, -s3, s3, (d, k))
    raise UnknownTagError(f"unknown loading kind {kind!r}")


def linear_spec(d, k, seed, noise_sd=np.sqrt(0.3)):
    """Linear least-squares stream: orthogonalized B, Unif[-.5,.5] factors
    and idio noise, theta* ~ Unif(0,1)^k drawn from the seed."""
    loading = make_loading(d, k, seed, kind="orthonormalized")
    g = rng.stream(seed, rng.ROLE_COEFFS)
    theta = rng.uniform(g, 0.0, 1.0, k)
    return FactorModelSpec(
        d=d, k=k, loading=loading,
        factor_low=-0.5, factor_high=0.5,
        idio_low=-0.5, idio_high=0.5, has_idio=True,
        noise_sd=float(noise_sd),
        response=LinearResponse(theta), seed=seed, orthonormalized=True,
    )


def additive_spec(d, k, seed, noise_sd=np.sqrt(0.3)):
    """Additive nonlinear stream: uniform-entry B, Unif[-1,1] factors and
    idio noise, component functions drawn per seed."""
    loading = make_loading(d, k, seed, kind="uniform")
    g = rng.stream(seed, rng.ROLE_RESPONSE)
    idx = g.integers(0, len(COMPONENT_TAGS), size=k)
    tags = tuple(COMPONENT_TAGS[i] for i in idx)
    return FactorModelSpec(
        d=d, k=k, loading=loading,
        factor_low=-1.0, factor_high=1.0,
        idio_low=-1.0, idio_high=1.0, has_idio=True,
        noise_sd=float(noise_sd),
        response=AdditiveResponse(tags), seed=seed, orthonormalized=False,
    )


@dataclass(frozen=True)
class MiniBatch:
    """m samples: xs is (m, d), ys is (m,), fs is (m, k) ground truth for
    synthetic data and None for ingested data."""

    xs: np.ndarray
    ys: np.ndarray
    fs: object = None

    @property
    def m(self):
        return self.xs.shape[0]


def sample_batch(spec, m, position, role=rng.ROLE_BATCH, noise_sd=None):
    """Draw the batch at a stream position. Pure in (spec, m, position).

    Consumption order within the stream is factors, idio component, response
    noise; drawn as one block since the step budget is overhead-bound.
    """
    if m < 1:
        raise ValidationError(f"batch size must be >= 1, got {m}")
    d, k = spec.d, spec.k
    sd = spec.noise_sd if noise_sd is None else noise_sd
    n_f = m * k
    n_u = n_f + m * d if spec.has_idio else n_f
    g = rng.stream(spec.seed, role, position)
    u01 = rng.uniform_open(g, n_u + (m if sd != 0.0 else 0))
    fs = spec.factor_low + (spec.factor_high - spec.factor_low) \
        * u01[:n_f].reshape(m, k)
    xs = fs @ spec.loading.T
    if spec.has_idio:
        xs += spec.idio_low + (spec.idio_high - spec.idio_low) \
            * u01[n_f:n_u].reshape(m, d)
    ys = spec.response(fs)
    if sd != 0.0:
        ys = ys + sd * ndtri(u01[n_u:])
    return MiniBatch(xs=xs, ys=ys, fs=fs)


def sample_pool(spec, n, which, noise_sd=None):
    """Fixed sample sets addressed by name instead of stream position."""
    slot = {"warmup": 0, "train": 1, "valid": 2, "test": 3}
    if which not in slot:
        raise UnknownTagError(f"unknown pool {which!r}")
    return sample_batch(spec, n, POOL_BASE + slot[which], noise_sd=noise_sd)


def oracle_subspace(spec):
    """Orthonormal basis of span(B): the population principal subspace.

    Under isotropic factors and idio noise the top-k eigenspace of
    Sigma = B Sigma_f B.T + sigma_u^2 I is exactly the column span of B, so
    the QR factor of B is the target the subspace iteration should reach.
    """
    q, _ = thin_qr(spec.loading)
    return q


# --- CSV interchange -------------------------------------------------------
#
# One sample per row: response first, then the d covariates, optionally
# followed by ground-truth factor columns. An optional single header row
# names columns; factor columns are recognized by an "f" name prefix.


def write_csv(path, spec, n, m=1000, header=True, with_factors=False):
    """Materialize n samples of a synthetic stream to CSV."""
    if n < 1:
        raise ValidationError("need n >= 1 samples")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            cols = ["y"] + [f"x{j + 1}" for j in range(spec.d)]
            if with_factors:
                cols += [f"f{j + 1}" for j in range(spec.k)]
            w.writerow(cols)
        written = 0
        position = 0
        while written < n:
            take = min(m, n - written)
            b = sample_batch(spec, take, position)
            for i in range(take):
                row = [b.ys[i]] + list(b.xs[i])
                if with_factors:
                    row += list(b.fs[i])
                w.writerow([f"{v:.17g}" for v in row])
            written += take
            position += 1


def _parse_row(fields, lineno):
    try:
        return [float(v) for v in fields]
    except ValueError as exc:
        raise ParseError(f"line {lineno}: {exc}") from None


def stream_csv(path, m, has_truth=False):
    """Yield MiniBatch objects of size m from a CSV file (last batch may be
    short). With has_truth, factor columns named f* in the header are split
    out as ground truth."""
    if m < 1:
        raise ValidationError(f"batch size must be >= 1, got {m}")
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        rows = iter(reader)
        first = None
        lineno = 0
        for row in rows:
            lineno += 1
            if row:
                first = row
                break
        if first is None:
            raise EmptyStreamError(f"{path} holds no samples")

        n_factors = 0
        try:
            first_vals = [float(v) for v in first]
            header = None
        except ValueError:
            header = [c.strip() for c in first]
            if has_truth:
                n_factors = sum(1 for c in header if c.lower().startswith("f"))
            first_vals = None

        width = None
        xs, ys, fs = [], [], []

        def flush():
            b_xs = np.array(xs, dtype=np.float64)
            b_ys = np.array(ys, dtype=np.float64)
            b_fs = np.array(fs, dtype=np.float64) if n_factors else None
            xs.clear(); ys.clear(); fs.clear()
            return MiniBatch(xs=b_xs, ys=b_ys, fs=b_fs)

        def push(vals, lineno):
            nonlocal width
            if width is None:
                width = len(vals)
                if width < 2:
                    raise ParseError(f"line {lineno}: need a response and at "
                                     f"least one covariate, got {width} fields")
                if n_factors and width - 1 - n_factors < 1:
                    raise ParseError(f"line {lineno}: factor columns leave no "
                                     "covariates")
            elif len(vals) != width:
                raise ParseError(f"line {lineno}: expected {width} fields, "
                                 f"got {len(vals)}")
            ys.append(vals[0])
            if n_factors:
                xs.append(vals[1:width - n_factors])
                fs.append(vals[width - n_factors:])
            else:
                xs.append(vals[1:])

        if first_vals is not None:
            push(first_vals, lineno)
        saw_data = first_vals is not None
        for row in rows:
            lineno += 1
            if not row:
                continue
            push(_parse_row(row, lineno), lineno)
            saw_data = True
            if len(ys) == m:
                yield flush()
        if not saw_data:
            raise EmptyStreamError(f"{path} holds a header but no samples")
        if ys:
            yield flush()


def read_csv_meta(path):
    """Peek at a stream file: (n_samples, d, has_header)."""
    n = 0
    width = None
    has_header = False
    with open(path, "r", newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if width is None:
                try:
                    [float(v) for v in row]
                except ValueError:
                    has_header = True
                    width = len(row)
                    continue
                width = len(row)
            n += 1
    if width is None:
        raise EmptyStreamError(f"{path} holds no samples")
    return n, width - 1, has_header
