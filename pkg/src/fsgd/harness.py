"""Experiment orchestration: plan files, grid x repetition execution with a
worker pool, per-run record CSVs, summary/aggregate tables, and the built-in
desk-scale plans.

Plan files are flat key=value text under bracketed section headers:

    [plan]
    name = sweep-d
    method = fsgd
    task = linear_synth
    reps = 20
    seed_base = 0
    out_dir = runs/sweep_d

    [grid]
    d = 10, 40, 160

    [run]
    gamma = 0.6
    t_max = 100_000

Sections: [plan] identity and bookkeeping; [grid] comma lists for the
varied axes (d, gamma, k_hat, method), Cartesian-expanded; [run] scalar
task parameters; [method] extras for specific methods (t1, freeze_epoch,
refresh_every, window, rotate). '#' starts a comment, duplicate keys and
malformed lines are ParseErrors, unknown keys and values are
ValidationErrors naming the key.

Repetition seeds are seed_base + rep_index; grid points never perturb the
seed, so sweeps are paired (same noise realizations at every grid point).
Run artifacts: records_<hash>.csv (the per-step RunRecord stream),
meta_<hash>.json (that run's summary row, reused on resume), plan-level
meta.json and summary.csv; `report` derives aggregate.csv, slope.csv, and
curves.csv from a summary. Epoch-based NN training decays the SGD rate per
mini-batch on a global step counter, recorded in meta.json. In summary
rows the m column holds the mini-batch size and t_max holds the step
budget; for nn_synth plans those columns carry batch_size and epochs.
"""

import csv
import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng
from .baselines import (PpcaConfig, oracle_run, ppca_run, randomproj_run,
                        vanilla_run)
from .datagen import (additive_spec, linear_spec, oracle_subspace,
                      sample_batch, sample_pool, stream_csv)
from .errors import ParseError, RankDeficientError, ValidationError
from .estimators import FactorSGDRegressor
from .linalg import fast_subspace_distance, spectral_cond
from .models import LinearModel, MlpModel
from .oja import OjaSchedule, warmup
from .optimizer import (FsgdConfig, OjaPolicy, RunRecord, SgdSchedule,
                        read_records, record_steps, run_fsgd, sgd_eta,
                        write_records)

METHODS = ("fsgd", "fsgd_frozen", "oracle", "vanilla", "randomproj", "ppca",
           "persistence", "prevailing_mean")
# §-variant tags intentionally unimplemented (concatenated-input PCA and a
# jointly trained projection); reserved so plans fail loudly, not silently.
RESERVED_METHODS = ("pca_a_nn", "nn_joint")
TASKS = ("linear_synth", "nn_synth", "csv_stream")
GRID_KEYS = ("method", "d", "gamma", "k_hat")

LINEAR_DEFAULTS = {
    "d": 40, "k": 3, "k_hat": 3, "m": 5, "t_max": 100_000, "gamma": 0.6,
    "sgd_c": 0.5, "oja_c": 0.1, "oja_c0": 50.0, "warmup_t0": 10,
    "warmup_eta0": 0.01, "align": False, "noise_sd": None,
    "projection_init": "warmup", "record_cap": 2000, "s_order": None,
    "model": "linear", "width": 50,
}
NN_DEFAULTS = {
    "d": 400, "k": 5, "k_hat": 5, "width": 50, "epochs": 100,
    "batch_size": 32, "n_labeled": 500, "n_unlabeled": 50, "n_valid": 150,
    "n_test": 500, "sgd_c": 0.05, "gamma": 0.3, "oja_c": 0.05,
    "oja_c0": 50.0, "warmup_steps": 200, "warmup_eta": 0.005,
    "noise_sd": None,
}
STREAM_DEFAULTS = {
    "csv_path": None, "k_hat": 3, "m": 5, "t_max": 0, "gamma": 0.6,
    "sgd_c": 0.5, "oja_c": 0.1, "oja_c0": 50.0, "warmup_t0": 10,
    "warmup_eta0": 0.01, "align": False, "model": "linear", "width": 50,
    "record_cap": 2000, "s_order": None,
}
METHOD_DEFAULTS = {
    "t1": None, "freeze_epoch": None, "refresh_every": 16, "window": 500,
    "rotate": False,
}

_INT_KEYS = {"d", "k", "k_hat", "m", "t_max", "reps", "seed_base",
             "record_cap", "s_order", "width", "epochs", "batch_size",
             "n_labeled", "n_unlabeled", "n_valid", "n_test", "t1",
             "freeze_epoch", "refresh_every", "window", "warmup_t0"}
_FLOAT_KEYS = {"gamma", "sgd_c", "oja_c", "oja_c0", "warmup_eta0",
               "warmup_eta", "noise_sd"}
_BOOL_KEYS = {"align", "rotate"}

SUMMARY_HEADER = ("plan", "method", "task", "d", "k", "k_hat", "gamma", "m",
                  "t_max", "rep", "seed", "final_train_loss", "test_loss",
                  "valid_loss", "final_rot_err_s", "final_dist_qv",
                  "cond_vq", "peak_mem_bytes", "wall_time_s",
                  "records_file", "error")


@dataclass(frozen=True)
class ExperimentPlan:
    """A fully resolved experiment: method x task, grid, repetitions."""

    name: str
    method: str
    task: str
    grid: dict
    reps: int
    seed_base: int
    out_dir: str
    run: dict
    method_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError(f"reps must be >= 1, got {self.reps}")
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        methods = self.grid.get("method", [self.method])
        for m in methods:
            _check_method(m)
        for key in self.grid:
            if key not in GRID_KEYS:
                raise ValidationError(f"key {key!r} cannot be swept; grid "
                                      f"axes are {GRID_KEYS}")
            if len(self.grid[key]) == 0:
                raise ValidationError(f"grid axis {key!r} is empty")
        # every grid point must resolve; build rep-0 jobs now and discard
        for point in expand_grid(self):
            _resolve_job(self, point, 0)


@dataclass(frozen=True)
class RunSummary:
    """One row of summary.csv: a single (grid point, rep) outcome."""

    plan: str
    method: str
    task: str
    d: int
    k: int
    k_hat: int
    gamma: float
    m: int
    t_max: int
    rep: int
    seed: int
    final_train_loss: float = math.nan
    test_loss: float = math.nan
    valid_loss: float = math.nan
    final_rot_err_s: float = math.nan
    final_dist_qv: float = math.nan
    cond_vq: float = math.nan
    peak_mem_bytes: int = 0
    wall_time_s: float = math.nan
    records_file: str = ""
    error: str = ""

    def row(self):
        out = []
        for name in SUMMARY_HEADER:
            v = getattr(self, name)
            if isinstance(v, float):
                out.append(f"{v:.17g}")
            else:
                out.append(str(v))
        return out


def _check_method(method):
    if method in RESERVED_METHODS:
        raise ValidationError(
            f"method {method!r} is reserved for a variant not implemented "
            "in this version")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}, expected one of "
                              f"{METHODS}")


# --- plan files -------------------------------------------------------------


def _cast(key, text):
    text = text.strip()
    if key in _BOOL_KEYS:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValidationError(f"key {key!r} expects true/false, "
                                  f"got {text!r}")
        return low == "true"
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError:
        raise ValidationError(f"key {key!r} has a malformed value "
                              f"{text!r}") from None
    return text


def parse_config(path):
    """Plan file -> ExperimentPlan with defaults filled.

    Syntax errors (bad lines, duplicate keys) raise ParseError with the
    line number; semantic errors (unknown key or section, bad value)
    raise ValidationError naming the offender.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such config file: {path}")
    sections = {}
    current = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key = value, "
                             f"got {raw.strip()!r}")
        if current is None:
            raise ParseError(f"line {lineno}: key outside any [section]")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"line {lineno}: empty key")
        if key in sections[current]:
            raise ParseError(f"line {lineno}: duplicate key {key!r} in "
                             f"[{current}]")
        sections[current][key] = value
    return plan_from_sections(sections, default_name=path.stem)


def plan_from_sections(sections, default_name="plan"):
    known = {"plan", "grid", "run", "method"}
    for sec in sections:
        if sec not in known:
            raise ValidationError(f"unknown section [{sec}]")

    plan_sec = dict(sections.get("plan", {}))
    for key in plan_sec:
        if key not in ("name", "method", "task", "reps", "seed_base",
                       "out_dir"):
            raise ValidationError(f"unknown key {key!r} in [plan]")
    name = plan_sec.get("name", default_name)
    method = plan_sec.get("method", "fsgd")
    task = plan_sec.get("task", "linear_synth")
    reps = _cast("reps", plan_sec.get("reps", "20"))
    seed_base = _cast("seed_base", plan_sec.get("seed_base", "0"))
    out_dir = plan_sec.get("out_dir", f"runs/{name}")

    if task == "linear_synth":
        defaults = LINEAR_DEFAULTS
    elif task == "nn_synth":
        defaults = NN_DEFAULTS
    elif task == "csv_stream":
        defaults = STREAM_DEFAULTS
    else:
        raise ValidationError(f"unknown task {task!r}")

    run = dict(defaults)
    for key, text in sections.get("run", {}).items():
        if key not in defaults:
            raise ValidationError(f"unknown key {key!r} in [run] for "
                                  f"task {task}")
        run[key] = _cast(key, text)

    method_params = dict(METHOD_DEFAULTS)
    for key, text in sections.get("method", {}).items():
        if key not in METHOD_DEFAULTS:
            raise ValidationError(f"unknown key {key!r} in [method]")
        method_params[key] = _cast(key, text)

    grid = {}
    for key, text in sections.get("grid", {}).items():
        if key not in GRID_KEYS:
            raise ValidationError(f"key {key!r} cannot be swept; grid "
                                  f"axes are {GRID_KEYS}")
        values = [v.strip() for v in text.split(",") if v.strip()]
        if not values:
            raise ValidationError(f"grid axis {key!r} is empty")
        grid[key] = [_cast(key, v) for v in values]

    return ExperimentPlan(name=name, method=method, task=task, grid=grid,
                          reps=reps, seed_base=seed_base, out_dir=out_dir,
                          run=run, method_params=method_params)


def expand_grid(plan):
    """Cartesian product of the grid axes in canonical key order."""
    keys = [k for k in GRID_KEYS if k in plan.grid]
    if not keys:
        return [{}]
    return [dict(zip(keys, combo))
            for combo in itertools.product(*(plan.grid[k] for k in keys))]


# --- job resolution ---------------------------------------------------------


def _resolve_job(plan, point, rep):
    """One executable unit: plain dict so it crosses process boundaries."""
    params = dict(plan.run)
    method = point.get("method", plan.method)
    _check_method(method)
    for key in ("d", "gamma", "k_hat"):
        if key in point:
            if key not in params:
                raise ValidationError(f"grid axis {key!r} does not apply "
                                      f"to task {plan.task}")
            params[key] = point[key]
    job = {
        "plan": plan.name,
        "task": plan.task,
        "method": method,
        "params": params,
        "method_params": dict(plan.method_params),
        "rep": rep,
        "seed": plan.seed_base + rep,
        "out_dir": plan.out_dir,
    }
    job["hash"] = _job_hash(job)
    _validate_job(job)
    return job


def _job_hash(job):
    parts = [f"plan={job['plan']}", f"task={job['task']}",
             f"method={job['method']}", f"rep={job['rep']}",
             f"seed={job['seed']}"]
    for key in sorted(job["params"]):
        parts.append(f"{key}={job['params'][key]!r}")
    for key in sorted(job["method_params"]):
        parts.append(f"{key}={job['method_params'][key]!r}")
    text = "|".join(parts)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _linear_config(job):
    p = job["params"]
    mp = job["method_params"]
    kwargs = {}
    if p["noise_sd"] is not None:
        kwargs["noise_sd"] = p["noise_sd"]
    spec = linear_spec(d=p["d"], k=p["k"], seed=job["seed"], **kwargs)
    frozen_after = None
    if job["method"] == "fsgd_frozen":
        frozen_after = mp["t1"] if mp["t1"] is not None else p["t_max"] // 2
    return FsgdConfig(
        spec=spec, k_hat=p["k_hat"], m=p["m"], t_max=p["t_max"],
        sgd=SgdSchedule(c=p["sgd_c"], gamma=p["gamma"]),
        oja=OjaSchedule.practical(c=p["oja_c"], c0=p["oja_c0"]),
        warmup_t0=p["warmup_t0"], warmup_eta0=p["warmup_eta0"],
        align=p["align"], frozen_after=frozen_after,
        projection_init=p["projection_init"], model_kind=p["model"],
        width=p["width"], record_cap=p["record_cap"], s_order=p["s_order"])


def _validate_job(job):
    task, method = job["task"], job["method"]
    p = job["params"]
    if task == "linear_synth":
        if method == "ppca":
            _ppca_config(job)
        if method == "oracle" and p["k_hat"] != p["k"]:
            raise ValidationError("oracle method needs k_hat == k")
        _linear_config(job)
    elif task == "nn_synth":
        if method in ("fsgd_frozen",) and job["method_params"]["freeze_epoch"] is None:
            raise ValidationError("fsgd_frozen on nn_synth needs "
                                  "freeze_epoch in [method]")
        if method == "oracle" and p["k_hat"] != p["k"]:
            raise ValidationError("oracle method needs k_hat == k")
        for key in ("n_labeled", "n_unlabeled", "n_valid", "n_test",
                    "batch_size"):
            if p[key] < 1:
                raise ValidationError(f"{key} must be >= 1, got {p[key]}")
        if p["epochs"] < 0:
            raise ValidationError("epochs must be >= 0")
        SgdSchedule(c=p["sgd_c"], gamma=p["gamma"])
        OjaSchedule.practical(c=p["oja_c"], c0=p["oja_c0"])
    elif task == "csv_stream":
        if method in ("oracle",):
            raise ValidationError("oracle method needs synthetic batches "
                                  "(true factors), not a csv stream")
        if p["csv_path"] is None:
            raise ValidationError("csv_stream task needs csv_path in [run]")
        SgdSchedule(c=p["sgd_c"], gamma=p["gamma"])
        OjaSchedule.practical(c=p["oja_c"], c0=p["oja_c0"])


def _ppca_config(job):
    mp = job["method_params"]
    return PpcaConfig(k_hat=job["params"]["k_hat"],
                      refresh_every=mp["refresh_every"],
                      window=mp["window"], rotate_coeffs=mp["rotate"])


def estimate_peak_memory(job):
    """Accounting model of the run's working set in bytes: parameters,
    projection frame, in-flight batch or pools, window buffer, records."""
    p = job["params"]
    method = job["method"]
    B = 8
    if job["task"] == "nn_synth":
        d, k, width = p["d"], p["k"], p["width"]
        pool_rows = (p["n_labeled"] + p["n_unlabeled"] + p["n_valid"]
                     + p["n_test"])
        total = pool_rows * (d + k + 1)
        in_dim = k if method == "oracle" else (
            d if method == "vanilla" else p["k_hat"])
        total += width * in_dim + 2 * width + 1
        total += d * p["k_hat"] * 3  # frame plus QR workspace
        total += p["batch_size"] * (d + 1)
        if method == "ppca":
            total += job["method_params"]["window"] * p["batch_size"] * d
        total += p["epochs"] * len(RunRecord.__dataclass_fields__)
        return B * total
    d = p.get("d", 0)
    k_hat = p["k_hat"]
    in_dim = d if method == "vanilla" else k_hat
    if p["model"] == "mlp":
        n_params = p["width"] * in_dim + 2 * p["width"] + 1
    else:
        n_params = in_dim
    total = n_params
    total += d * k_hat * 3
    total += p["m"] * (d + p.get("k", 0) + 1)
    if method == "ppca":
        total += job["method_params"]["window"] * p["m"] * d
    total += len(record_steps(max(p["t_max"], 1), p["record_cap"])) \
        * len(RunRecord.__dataclass_fields__)
    return B * total


# --- execution --------------------------------------------------------------


def _mse(pred, target):
    """Mean squared prediction error. A diverged model (non-finite
    predictions after parameter overflow) scores +inf, the limit of its
    loss trajectory; nan would only record where IEEE arithmetic gave up."""
    err = pred - target
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.mean(err * err))
    return val if math.isfinite(val) else math.inf


def _predictor_run(config, method):
    """History-only predictors streamed over the synthetic task: persistence
    repeats the previous response, prevailing_mean predicts the running
    mean. Loss is the batch-mean squared prediction error; the first sample
    of the stream has no history and is skipped."""
    rec_set = record_steps(config.t_max, config.record_cap)
    records = []
    last = None
    mean = 0.0
    count = 0
    loss = math.nan
    for t in range(1, config.t_max + 1):
        batch = sample_batch(config.spec, config.m, t)
        ys = batch.ys
        n = ys.shape[0]
        if method == "persistence":
            prev = np.concatenate(([math.nan if last is None else last],
                                   ys[:-1]))
            last = float(ys[-1])
        else:
            sums = mean * count + np.concatenate(([0.0], np.cumsum(ys[:-1])))
            seen = count + np.arange(n)
            with np.errstate(invalid="ignore", divide="ignore"):
                prev = np.where(seen > 0, sums / np.maximum(seen, 1),
                                math.nan)
            mean = (mean * count + float(ys.sum())) / (count + n)
            count += n
        err = prev - ys
        good = np.isfinite(err)
        if good.any():
            loss = float(np.mean(err[good] ** 2))
        if t in rec_set:
            records.append(RunRecord(t=t, eta_t=0.0, eta_oja_t=None,
                                     train_loss=loss, dist_qv=None,
                                     rot_err_s=None, theta_drift=None))
    return records, {"final_train_loss": loss, "method": method}


def _run_linear(job):
    method = job["method"]
    config = _linear_config(job)
    if method in ("fsgd", "fsgd_frozen"):
        records, _, _, meta = run_fsgd(config)
    elif method == "vanilla":
        records, _, _, meta = vanilla_run(config)
    elif method == "oracle":
        records, _, _, meta = oracle_run(config)
    elif method == "randomproj":
        records, _, _, meta = randomproj_run(config)
    elif method == "ppca":
        records, _, _, meta = ppca_run(config, _ppca_config(job))
    else:
        records, meta = _predictor_run(config, method)
    return records, {
        "final_train_loss": meta.get("final_train_loss", math.nan),
        "final_rot_err_s": meta.get("final_rot_err_s", math.nan),
        "final_dist_qv": meta.get("final_dist_qv", math.nan),
        "cond_vq": meta.get("cond_vq", math.nan),
    }


def _nn_estimator(job, steps_per_epoch):
    p = job["params"]
    mp = job["method_params"]
    method = job["method"]
    common = dict(n_components=p["k_hat"], model="mlp", width=p["width"],
                  batch_size=p["batch_size"], epochs=p["epochs"],
                  sgd_c=p["sgd_c"], sgd_gamma=p["gamma"], oja_c=p["oja_c"],
                  oja_c0=p["oja_c0"], warmup_steps=p["warmup_steps"],
                  warmup_eta=p["warmup_eta"], seed=job["seed"])
    if method == "fsgd":
        return FactorSGDRegressor(projection="oja", **common)
    if method == "fsgd_frozen":
        return FactorSGDRegressor(projection="oja",
                                  freeze_after=mp["freeze_epoch"]
                                  * steps_per_epoch, **common)
    if method == "vanilla":
        return FactorSGDRegressor(projection="identity", **common)
    if method == "oracle":
        # the oracle trains directly on the true factors as inputs
        return FactorSGDRegressor(projection="identity", **common)
    if method == "randomproj":
        return FactorSGDRegressor(projection="random", **common)
    if method == "ppca":
        return FactorSGDRegressor(projection="ppca",
                                  ppca_refresh_every=mp["refresh_every"],
                                  ppca_window=mp["window"],
                                  ppca_rotate=False, **common)
    raise ValidationError(f"method {method!r} has no nn variant")


def _run_nn(job):
    p = job["params"]
    method = job["method"]
    kwargs = {}
    if p["noise_sd"] is not None:
        kwargs["noise_sd"] = p["noise_sd"]
    spec = additive_spec(d=p["d"], k=p["k"], seed=job["seed"], **kwargs)
    labeled = sample_pool(spec, p["n_labeled"], "train")
    test = sample_pool(spec, p["n_test"], "test")
    valid = sample_pool(spec, p["n_valid"], "valid")
    clean_test = spec.response(test.fs)

    if method in ("persistence", "prevailing_mean"):
        if method == "persistence":
            pred = float(labeled.ys[-1])
        else:
            pred = float(labeled.ys.mean())
        test_loss = float(np.mean((pred - clean_test) ** 2))
        valid_loss = float(np.mean((pred - valid.ys) ** 2))
        train_loss = float(np.mean((pred - labeled.ys) ** 2))
        records = [RunRecord(t=0, eta_t=0.0, eta_oja_t=None,
                             train_loss=train_loss, dist_qv=None,
                             rot_err_s=None, theta_drift=None)]
        return records, {"final_train_loss": train_loss,
                         "test_loss": test_loss, "valid_loss": valid_loss,
                         "final_dist_qv": math.nan, "cond_vq": math.nan}

    steps_per_epoch = -(-p["n_labeled"] // p["batch_size"])
    est = _nn_estimator(job, steps_per_epoch)
    if method == "oracle":
        est.fit(labeled.fs, labeled.ys, eval_set=(test.fs, clean_test))
        test_in, valid_in = test.fs, valid.fs
    else:
        unlabeled = sample_pool(spec, p["n_unlabeled"], "warmup")
        est.fit(labeled.xs, labeled.ys, unlabeled=unlabeled.xs,
                eval_set=(test.xs, clean_test))
        test_in, valid_in = test.xs, valid.xs

    with np.errstate(over="ignore", invalid="ignore"):
        test_pred = est.predict(test_in)
        valid_pred = est.predict(valid_in)
    test_loss = _mse(test_pred, clean_test)
    valid_loss = _mse(valid_pred, valid.ys)

    dist = cond = math.nan
    q = est.policy_.q
    if method != "oracle" and q is not None and p["k_hat"] == p["k"]:
        v = oracle_subspace(spec)
        dist = fast_subspace_distance(q, v)
        cond = spectral_cond(v.T @ q)

    records = []
    for row in est.history_:
        t = (row["epoch"] + 1) * steps_per_epoch
        records.append(RunRecord(
            t=t, eta_t=sgd_eta(est._sched, t), eta_oja_t=None,
            train_loss=row["train_loss"], dist_qv=None, rot_err_s=None,
            theta_drift=None))
    final_train = records[-1].train_loss if records else math.nan
    return records, {"final_train_loss": final_train,
                     "test_loss": test_loss, "valid_loss": valid_loss,
                     "final_dist_qv": dist, "cond_vq": cond}


def _run_csv(job):
    p = job["params"]
    method = job["method"]
    if method in ("persistence", "prevailing_mean"):
        raise ValidationError(f"{method} on csv streams is not wired into "
                              "run_plan; use the predictors directly")
    batches = stream_csv(p["csv_path"], p["m"])
    state = warmup(batches, p["k_hat"], p["warmup_t0"], p["warmup_eta0"],
                   job["seed"], align=p["align"])
    frozen = job["method_params"]["t1"] if method == "fsgd_frozen" else None
    policy = OjaPolicy(replace(state, frozen_after=frozen),
                       OjaSchedule.practical(c=p["oja_c"], c0=p["oja_c0"]))

    in_dim = p["k_hat"]
    model = LinearModel(in_dim) if p["model"] == "linear" \
        else MlpModel(in_dim, p["width"])
    theta = model.init_params(rng.stream(job["seed"], rng.ROLE_MODEL_INIT))
    sched = SgdSchedule(c=p["sgd_c"], gamma=p["gamma"])

    loss = math.nan
    t = 0
    t_cap = p["t_max"] if p["t_max"] > 0 else None
    kept = []
    for batch in batches:
        if t_cap is not None and t >= t_cap:
            break
        t += 1
        fhat = policy.factors(batch)
        loss, grad = model.loss_grad(theta, fhat, batch.ys)
        theta = theta - sgd_eta(sched, t) * grad
        eta_oja = policy.update(batch)
        kept.append(RunRecord(t=t, eta_t=sgd_eta(sched, t),
                              eta_oja_t=eta_oja, train_loss=loss,
                              dist_qv=None, rot_err_s=None,
                              theta_drift=None))
    if not kept:
        raise ValidationError("csv stream yielded no training batches "
                              "after warm-up")
    rec_set = record_steps(t, p["record_cap"])
    return [r for r in kept if r.t in rec_set], {"final_train_loss": loss}


def execute_job(job):
    """Run one job, write its records and sidecar, return the summary row.
    Failures are captured as rows with an error tag; nothing propagates."""
    p = job["params"]
    is_nn = job["task"] == "nn_synth"
    base = dict(
        plan=job["plan"], method=job["method"], task=job["task"],
        d=p.get("d", 0), k=p.get("k", 0), k_hat=p["k_hat"],
        gamma=p["gamma"],
        m=p["batch_size"] if is_nn else p.get("m", 0),
        t_max=p["epochs"] if is_nn else p.get("t_max", 0),
        rep=job["rep"], seed=job["seed"],
        peak_mem_bytes=estimate_peak_memory(job))
    start = time.perf_counter()
    try:
        if job["task"] == "linear_synth":
            records, metrics = _run_linear(job)
        elif job["task"] == "nn_synth":
            records, metrics = _run_nn(job)
        else:
            records, metrics = _run_csv(job)
    except Exception as exc:
        return RunSummary(error=f"{type(exc).__name__}: {exc}", **base)
    wall = time.perf_counter() - start

    out_dir = Path(job["out_dir"])
    rec_name = f"records_{job['hash']}.csv"
    write_records(out_dir / rec_name, records)
    summary = RunSummary(wall_time_s=wall, records_file=rec_name,
                         **base, **{k: v for k, v in metrics.items()
                                    if k in RunSummary.__dataclass_fields__})
    sidecar = out_dir / f"meta_{job['hash']}.json"
    sidecar.write_text(json.dumps(
        {name: getattr(summary, name) for name in SUMMARY_HEADER},
        sort_keys=True, indent=1))
    return summary


def _reload_summary(job):
    sidecar = Path(job["out_dir"]) / f"meta_{job['hash']}.json"
    data = json.loads(sidecar.read_text())
    return RunSummary(**{k: data[k] for k in SUMMARY_HEADER})


def resolve_workers(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("FSGD_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def write_summary(path, summaries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for s in summaries:
            w.writerow(s.row())


def read_summary(path):
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such summary file: {path}")
    with open(path, "r", newline="") as fh:
        return list(csv.DictReader(fh))


def run_plan(plan, workers=None, resume=False):
    """Execute grid x reps, write per-run records plus plan-level summary.

    Results are written in job order regardless of completion order, so the
    summary is byte-identical across worker counts (wall times aside).
    With resume=True, jobs whose records and sidecar files already exist
    are reloaded instead of re-run."""
    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [_resolve_job(plan, point, rep)
            for point in expand_grid(plan)
            for rep in range(plan.reps)]

    meta = {
        "plan": plan.name, "method": plan.method, "task": plan.task,
        "reps": plan.reps, "seed_base": plan.seed_base,
        "grid": {k: list(v) for k, v in plan.grid.items()},
        "run": {k: v for k, v in sorted(plan.run.items())},
        "method_params": {k: v for k, v in sorted(plan.method_params.items())},
        "sgd_decay": "per mini-batch step, global counter",
        "oja_schedule": "per-sample rates, batches apply m * eta_t",
        "seed_rule": "seed_base + rep_index, shared across grid points",
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True,
                                                  indent=1))

    results = [None] * len(jobs)
    todo = []
    for i, job in enumerate(jobs):
        rec = out_dir / f"records_{job['hash']}.csv"
        sidecar = out_dir / f"meta_{job['hash']}.json"
        if resume and rec.exists() and sidecar.exists():
            results[i] = _reload_summary(job)
        else:
            todo.append(i)

    n_workers = resolve_workers(workers)
    if n_workers <= 1 or len(todo) <= 1:
        for i in todo:
            results[i] = execute_job(jobs[i])
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = {pool.submit(execute_job, jobs[i]): i for i in todo}
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()

    write_summary(out_dir / "summary.csv", results)
    return results


def nn_experiment(plan, workers=None, resume=False):
    """run_plan specialized to the epoch-trained comparison task."""
    if plan.task != "nn_synth":
        raise ValidationError(f"nn_experiment needs task=nn_synth, "
                              f"got {plan.task}")
    return run_plan(plan, workers=workers, resume=resume)


# --- analysis ---------------------------------------------------------------


def fit_loglog_slope(series):
    """OLS of ln y on ln x. Returns (slope, intercept, r2)."""
    pts = [(float(x), float(y)) for x, y in series]
    if len(pts) < 3:
        raise ValidationError(f"need at least 3 points, got {len(pts)}")
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ValidationError("log-log fit needs positive pairs")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    if float(lx.max() - lx.min()) == 0.0:
        raise RankDeficientError("all x equal, slope is undefined")
    mx, my = lx.mean(), ly.mean()
    sxx = float(((lx - mx) ** 2).sum())
    sxy = float(((lx - mx) * (ly - my)).sum())
    slope = sxy / sxx
    intercept = my - slope * mx
    resid = ly - (slope * lx + intercept)
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((ly - my) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def _fnum(text):
    if text is None or text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        return math.nan


def _headline_metric(task):
    if task == "nn_synth":
        return "test_loss"
    return "final_rot_err_s"


def report(summary_path, out_dir=None):
    """Aggregate a summary into per-grid-point statistics.

    Writes aggregate.csv (n, median, mean, sd of the headline metric per
    grid point), slope.csv (log-log slope of median vs d when a method has
    three or more d values), and curves.csv (per-method median train-loss
    trajectories, only when the plan varies nothing but the method).
    Returns the dict of written paths."""
    summary_path = Path(summary_path)
    rows = read_summary(summary_path)
    if not rows:
        raise ParseError(f"{summary_path}: empty summary")
    out_dir = Path(out_dir) if out_dir is not None else summary_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    raw_groups = {}
    for row in rows:
        if row.get("error"):
            continue
        key = (row["task"], row["method"], row["d"], row["k_hat"],
               row["gamma"])
        raw_groups.setdefault(key, []).append(row)

    # One metric per grid point: the task's headline metric when any rep
    # measured it finitely, else the train loss (methods without rotation
    # diagnostics). Diverged reps (inf) are excluded from the table stats;
    # summary.csv keeps the full picture.
    groups = {}
    for key, grp in raw_groups.items():
        metric = _headline_metric(key[0])
        vals = [v for v in (_fnum(r.get(metric)) for r in grp)
                if math.isfinite(v)]
        if not vals:
            metric = "final_train_loss"
            vals = [v for v in (_fnum(r.get(metric)) for r in grp)
                    if math.isfinite(v)]
        if vals:
            groups[key] = {"metric": metric, "values": vals}

    agg_path = out_dir / "aggregate.csv"
    with open(agg_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("task", "method", "d", "k_hat", "gamma", "metric", "n",
                    "median", "mean", "sd"))
        for key in sorted(groups):
            task, method, d, k_hat, gamma = key
            vals = np.asarray(groups[key]["values"], dtype=float)
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else math.nan
            w.writerow((task, method, d, k_hat, gamma,
                        groups[key]["metric"], vals.size,
                        f"{float(np.median(vals)):.17g}",
                        f"{float(np.mean(vals)):.17g}", f"{sd:.17g}"))
    written["aggregate"] = agg_path

    by_method = {}
    for (task, method, d, k_hat, gamma), g in groups.items():
        if not g["values"]:
            continue
        by_method.setdefault((task, method, k_hat, gamma), []).append(
            (float(d), float(np.median(np.asarray(g["values"])))))
    slope_rows = []
    for (task, method, k_hat, gamma), pts in sorted(by_method.items()):
        xs = {x for x, _ in pts}
        if len(xs) >= 3 and all(y > 0 for _, y in pts):
            slope, intercept, r2 = fit_loglog_slope(sorted(pts))
            slope_rows.append((task, method, k_hat, gamma, "d", len(pts),
                               f"{slope:.17g}", f"{intercept:.17g}",
                               f"{r2:.17g}"))
    if slope_rows:
        slope_path = out_dir / "slope.csv"
        with open(slope_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("task", "method", "k_hat", "gamma", "x", "n_points",
                        "slope", "intercept", "r2"))
            w.writerows(slope_rows)
        written["slope"] = slope_path

    points = {(r["d"], r["gamma"], r["k_hat"]) for r in rows
              if not r.get("error")}
    methods = sorted({r["method"] for r in rows if not r.get("error")})
    if len(points) == 1 and len(methods) >= 1:
        curves = {}
        ok = True
        for row in rows:
            if row.get("error") or not row.get("records_file"):
                continue
            rec_path = summary_path.parent / row["records_file"]
            if not rec_path.exists():
                ok = False
                break
            for rec in read_records(rec_path):
                curves.setdefault(rec.t, {}).setdefault(
                    row["method"], []).append(rec.train_loss)
        if ok and curves:
            curves_path = out_dir / "curves.csv"
            with open(curves_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t"] + methods)
                for t in sorted(curves):
                    row_out = [t]
                    for method in methods:
                        vals = curves[t].get(method)
                        row_out.append(
                            f"{float(np.median(vals)):.17g}" if vals
                            else "nan")
                    w.writerow(row_out)
            written["curves"] = curves_path
    return written


# --- built-in plans ---------------------------------------------------------


def builtin_plan(name, out_dir=None, reps=None, seed=None):
    """The desk-scale plans behind the sweep-d, sweep-gamma, and nn-compare
    subcommands. Paper-scale variants ship as config files instead."""
    if name == "sweep-d":
        sections = {
            "plan": {"name": "sweep-d", "method": "fsgd",
                     "task": "linear_synth"},
            "grid": {"d": "10, 40, 160"},
            "run": {"gamma": "0.6"},
        }
    elif name == "sweep-gamma":
        sections = {
            "plan": {"name": "sweep-gamma", "method": "fsgd",
                     "task": "linear_synth"},
            "grid": {"gamma": "0.1, 0.67, 0.9"},
            "run": {"d": "100"},
        }
    elif name == "nn-compare":
        sections = {
            "plan": {"name": "nn-compare", "task": "nn_synth",
                     "reps": "10"},
            "grid": {"method": "fsgd, vanilla, oracle, ppca"},
        }
    else:
        raise ValidationError(f"unknown built-in plan {name!r}")
    plan = plan_from_sections(sections)
    changes = {}
    if out_dir is not None:
        changes["out_dir"] = str(out_dir)
    if reps is not None:
        changes["reps"] = reps
    if seed is not None:
        changes["seed_base"] = seed
    if changes:
        plan = replace(plan, **changes)
    return plan


# --- invariant suite (the `check` subcommand) -------------------------------


def self_check(tmp_dir=None):
    """Curated fast invariants, each (name, ok, detail). Exercises the
    numerics, the property contracts, and plan determinism end to end."""
    import tempfile

    from . import linalg, models, oja as oja_mod
    checks = []
    g = np.random.default_rng(7)

    a = g.normal(size=(64, 8))
    q, r = linalg.thin_qr(a)
    checks.append(("qr reconstruction",
                   float(np.abs(q @ r - a).max()) < 1e-10,
                   f"max err {float(np.abs(q @ r - a).max()):.2e}"))
    checks.append(("qr orthonormal",
                   float(np.abs(q.T @ q - np.eye(8)).max()) < 1e-10, ""))

    b = g.normal(size=(6, 6))
    u, s, v = linalg.svd_small(b)
    err = float(np.abs(u @ np.diag(s) @ v.T - b).max())
    checks.append(("svd reconstruction", err < 1e-9, f"max err {err:.2e}"))

    spec = linear_spec(d=24, k=3, seed=5)
    st_plain = warmup(spec, 3, 40, 0.01, 11, m=5)
    st_align = warmup(spec, 3, 40, 0.01, 11, m=5, align=True)
    gap = linalg.subspace_distance(st_plain.q, st_align.q)
    checks.append(("alignment span-neutral", gap < 1e-10, f"{gap:.2e}"))

    mlp = models.MlpModel(4, 6)
    params = mlp.init_params(rng.stream(3, rng.ROLE_MODEL_INIT))
    xs = g.normal(size=(7, 4))
    ys = g.normal(size=7)
    _, grad = mlp.loss_grad(params, xs, ys)
    eps = 1e-6
    worst = 0.0
    for i in range(0, mlp.n_params, 7):
        e = np.zeros(mlp.n_params)
        e[i] = eps
        lp, _ = mlp.loss_grad(params + e, xs, ys)
        lm, _ = mlp.loss_grad(params - e, xs, ys)
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), 1e-12))
    checks.append(("mlp gradient vs fd", worst < 1e-5, f"rel {worst:.2e}"))

    tmp = Path(tmp_dir) if tmp_dir else Path(tempfile.mkdtemp(prefix="fsgd_"))
    plan = plan_from_sections({
        "plan": {"name": "check", "reps": "2",
                 "out_dir": str(tmp / "w1")},
        "run": {"d": "8", "t_max": "300", "m": "4"},
    })
    run_plan(plan, workers=1)
    run_plan(replace(plan, out_dir=str(tmp / "w2")), workers=2)

    def _strip(path):
        rows = [r.strip().split(",") for r in
                Path(path).read_text().splitlines()]
        drop = [rows[0].index("wall_time_s")]
        return [[c for j, c in enumerate(r) if j not in drop] for r in rows]

    same = _strip(tmp / "w1" / "summary.csv") == _strip(tmp / "w2"
                                                        / "summary.csv")
    checks.append(("plan determinism across workers", same, ""))

    s = builtin_plan("sweep-d")
    checks.append(("builtin plans resolve",
                   s.reps == 20 and s.grid["d"] == [10, 40, 160], ""))

    slope, _, r2 = fit_loglog_slope([(1, 1), (2, 2), (4, 4)])
    checks.append(("loglog slope exact", abs(slope - 1) < 1e-12
                   and abs(r2 - 1) < 1e-12, ""))
    return checks
