"""Multi-trial experiment runner and command line.

A run is described by a flat key=value config (JSON object with the same
keys also accepted, so an emitted config echo can be fed straight back).
Trials are independent: trial k draws from stream (base_seed, k), so a run
is reproducible and parallelism cannot change results; the aggregate is
sorted by trial index and serialized with stable formatting, making output
bytes a pure function of the config.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .concentration import (
    gradient_error_certificate,
    partial_sum_tail_sweep,
    wilson_interval,
)
from .data_ingest import IdxError, load_idx_dataset, make_gaussian_blobs
from .errors import (
    ConfigurationError,
    DivergenceError,
    NumericError,
    ParameterError,
    UnsupportedProblemError,
)
from .optimizers import (
    ScheduleParams,
    compute_alpha_complexity,
    compute_alpha_sc,
    compute_complexity_constants,
    compute_prr_certificate,
    compute_prr_params,
    decayed_schedule,
    grad_mean_square_bound,
    run_prr,
    run_rr,
    run_rr_sc,
    run_sgd,
    solve_T_sc,
    t_sc_certificate,
)
from .problems import (
    compute_variance_constants,
    make_logistic,
    make_mean_quadratic,
    make_quartic_saddle,
    make_tanh_mlp,
)
from .samplers import RngStream
from .stationarity import classify

SCHEMA_VERSION = 1

CSV_HEADER = ("trial", "epoch", "f", "grad_norm", "g_norm", "e_norm", "step", "mode")

_ALGORITHMS = ("rr", "rr-sc", "p-rr", "sgd")
_SCHEDULE_MODES = ("formula", "constant", "decayed")
_CURVE_KEYS = ("f", "g_norm", "grad_norm", "accuracy")

_PROBLEM_KEYS = {
    "mean_quadratic": {"anchors": "str"},
    "quartic_saddle": {"n": "int", "bias_scale": "float", "seed": "int"},
    "logistic_blobs": {
        "per_class": "int",
        "dim": "int",
        "separation": "float",
        "seed": "int",
        "l2": "float",
    },
    "blobs_mlp": {
        "layers": "str",
        "batch": "int",
        "seed": "int",
        "classes": "int",
        "per_class": "int",
        "dim": "int",
        "separation": "float",
        "data_seed": "int",
    },
    "idx_mlp": {
        "layers": "str",
        "batch": "int",
        "seed": "int",
        "images": "str",
        "labels": "str",
        "limit": "int",
        "classes": "int",
    },
}

_PROBLEM_REQUIRED = {
    "mean_quadratic": ("anchors",),
    "quartic_saddle": ("n",),
    "logistic_blobs": ("per_class", "dim", "separation"),
    "blobs_mlp": ("layers", "batch", "classes", "per_class", "dim", "separation"),
    "idx_mlp": ("layers", "batch", "images", "labels"),
}

_SCHEDULE_KEYS = {
    "mode": "str",
    "alpha": "float",
    "decay": "float",
    "T": "int",
    "T_sc": "int",
    "beta": "float",
    "r_p": "float",
    "r_d": "float",
    "T_e": "int",
}


def _as_int(key, value):
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 10)
        except ValueError:
            raise ConfigurationError(f"{key} must be an integer, got {value!r}") from None
    raise ConfigurationError(f"{key} must be an integer, got {value!r}")


def _as_float(key, value):
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ConfigurationError(f"{key} must be a number, got {value!r}") from None
    raise ConfigurationError(f"{key} must be a number, got {value!r}")


def _as_bool(key, value):
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lower = value.strip().lower()
        if lower in ("true", "yes", "1"):
            return True
        if lower in ("false", "no", "0"):
            return False
    raise ConfigurationError(f"{key} must be a boolean, got {value!r}")


def _as_str(key, value):
    if isinstance(value, str):
        return value
    raise ConfigurationError(f"{key} must be a string, got {value!r}")


_CONVERTERS = {"int": _as_int, "float": _as_float, "bool": _as_bool, "str": _as_str}


@dataclass(frozen=True)
class RunConfig:
    """Validated, canonical form of one experiment configuration."""

    algorithm: str
    trials: int = 1
    base_seed: int = 0
    parallelism: int = 1
    epsilon: float = 0.1
    delta: float = 0.1
    eta: float = 0.5
    x0: str = "default"
    problem: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    record: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict)
    out: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping):
        top = {}
        problem = {}
        schedule = {}
        record = {}
        limits = {}
        out = {}
        for key, value in mapping.items():
            if key == "algorithm":
                top["algorithm"] = _as_str(key, value)
            elif key == "trials":
                top["trials"] = _as_int(key, value)
            elif key == "base_seed":
                top["base_seed"] = _as_int(key, value)
            elif key == "parallelism":
                top["parallelism"] = _as_int(key, value)
            elif key in ("epsilon", "delta", "eta"):
                top[key] = _as_float(key, value)
            elif key == "x0":
                top["x0"] = _as_str(key, value)
            elif key == "problem.kind":
                problem["kind"] = _as_str(key, value)
            elif key.startswith("problem."):
                problem[key[len("problem.") :]] = value
            elif key.startswith("schedule."):
                sub = key[len("schedule.") :]
                if sub not in _SCHEDULE_KEYS:
                    raise ConfigurationError(f"unknown config key {key!r}")
                schedule[sub] = _CONVERTERS[_SCHEDULE_KEYS[sub]](key, value)
            elif key == "record.full_grad_every":
                record["full_grad_every"] = _as_int(key, value)
            elif key == "record.e_threshold":
                record["e_threshold"] = _as_int(key, value)
            elif key == "record.curves":
                record["curves"] = _as_str(key, value)
            elif key == "record.stationarity":
                record["stationarity"] = _as_bool(key, value)
            elif key == "limits.epoch_cap":
                limits["epoch_cap"] = _as_int(key, value)
            elif key == "out.json":
                out["json"] = _as_str(key, value)
            elif key == "out.csv":
                out["csv"] = _as_str(key, value)
            else:
                raise ConfigurationError(f"unknown config key {key!r}")

        if "algorithm" not in top:
            raise ConfigurationError("algorithm is required")
        if top["algorithm"] not in _ALGORITHMS:
            raise ConfigurationError(
                f"algorithm must be one of {', '.join(_ALGORITHMS)}"
            )
        kind = problem.get("kind")
        if kind is None:
            raise ConfigurationError("problem.kind is required")
        if kind not in _PROBLEM_KEYS:
            raise ConfigurationError(f"unknown problem.kind {kind!r}")
        typed = {"kind": kind}
        for sub, value in problem.items():
            if sub == "kind":
                continue
            if sub not in _PROBLEM_KEYS[kind]:
                raise ConfigurationError(
                    f"unknown config key 'problem.{sub}' for kind {kind!r}"
                )
            typed[sub] = _CONVERTERS[_PROBLEM_KEYS[kind][sub]](f"problem.{sub}", value)
        for sub in _PROBLEM_REQUIRED[kind]:
            if sub not in typed:
                raise ConfigurationError(
                    f"problem.{sub} is required for kind {kind!r}"
                )

        schedule.setdefault("mode", "formula")
        if schedule["mode"] not in _SCHEDULE_MODES:
            raise ConfigurationError(
                f"schedule.mode must be one of {', '.join(_SCHEDULE_MODES)}"
            )
        record.setdefault("full_grad_every", 1)
        record.setdefault("e_threshold", 200000)
        record.setdefault("curves", "")
        record.setdefault("stationarity", False)
        for curve in _split_list(record["curves"]):
            if curve not in _CURVE_KEYS:
                raise ConfigurationError(f"unknown curve {curve!r}")

        config = cls(
            problem=typed,
            schedule=schedule,
            record=record,
            limits=limits,
            out=out,
            **top,
        )
        if config.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if config.parallelism < 1:
            raise ConfigurationError("parallelism must be at least 1")
        if config.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 < config.delta < 1:
            raise ConfigurationError("delta must lie in (0,1)")
        if config.eta <= 0:
            raise ConfigurationError("eta must be positive")
        if config.record["full_grad_every"] < 0:
            raise ConfigurationError("record.full_grad_every must be nonnegative")
        return config

    def to_mapping(self):
        """Canonical flat echo; feeding it back reproduces this run's output.

        parallelism is deliberately not echoed: it cannot affect results,
        and leaving it out keeps aggregates byte-identical across worker
        counts.
        """
        mapping = {
            "algorithm": self.algorithm,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "eta": self.eta,
            "x0": self.x0,
        }
        for section, values in (
            ("problem", self.problem),
            ("schedule", self.schedule),
            ("record", self.record),
            ("limits", self.limits),
            ("out", self.out),
        ):
            for sub, value in values.items():
                mapping[f"{section}.{sub}"] = value
        return mapping


def _split_list(text):
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def parse_config_text(text):
    """Parse a config document: flat key=value lines, or a JSON object."""
    text = text.strip()
    if not text:
        return {}
    if text.startswith("{"):
        try:
            mapping = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON config: {exc}") from exc
        if not isinstance(mapping, dict):
            raise ConfigurationError("JSON config must be an object")
        return mapping
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in mapping:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value.strip()
    return mapping


def load_config(path, overrides=None):
    with open(path, "r", encoding="utf-8") as fh:
        mapping = parse_config_text(fh.read())
    if overrides:
        mapping.update(overrides)
    return RunConfig.from_mapping(mapping)


def _parse_anchors(text):
    points = []
    for tok in text.split(";"):
        tok = tok.strip()
        if not tok:
            continue
        try:
            points.append([float(c) for c in tok.split(",")])
        except ValueError:
            raise ConfigurationError(f"bad anchor {tok!r}") from None
    if not points:
        raise ConfigurationError("problem.anchors is empty")
    width = len(points[0])
    if any(len(p) != width for p in points):
        raise ConfigurationError("anchors must share one dimension")
    return points


def _parse_layers(text):
    try:
        sizes = [int(tok) for tok in _split_list(text)]
    except ValueError:
        raise ConfigurationError(f"bad layer sizes {text!r}") from None
    if not sizes:
        raise ConfigurationError("problem.layers is empty")
    return sizes


def build_problem(problem_cfg):
    """Instantiate the configured FiniteSumProblem."""
    kind = problem_cfg["kind"]
    if kind == "mean_quadratic":
        return make_mean_quadratic(_parse_anchors(problem_cfg["anchors"]))
    if kind == "quartic_saddle":
        return make_quartic_saddle(
            problem_cfg["n"],
            bias_scale=problem_cfg.get("bias_scale", 0.0),
            seed=problem_cfg.get("seed", 0),
        )
    if kind == "logistic_blobs":
        data = make_gaussian_blobs(
            2,
            problem_cfg["per_class"],
            problem_cfg["dim"],
            problem_cfg["separation"],
            seed=problem_cfg.get("seed", 0),
        )
        return make_logistic(
            data.features,
            2.0 * data.labels - 1.0,
            l2=problem_cfg.get("l2", 0.0),
        )
    if kind == "blobs_mlp":
        data = make_gaussian_blobs(
            problem_cfg["classes"],
            problem_cfg["per_class"],
            problem_cfg["dim"],
            problem_cfg["separation"],
            seed=problem_cfg.get("data_seed", 0),
        )
        return make_tanh_mlp(
            _parse_layers(problem_cfg["layers"]),
            data,
            problem_cfg["batch"],
            seed=problem_cfg.get("seed", 0),
        )
    if kind == "idx_mlp":
        data = load_idx_dataset(
            problem_cfg["images"],
            problem_cfg["labels"],
            limit=problem_cfg.get("limit"),
            classes=problem_cfg.get("classes"),
        )
        return make_tanh_mlp(
            _parse_layers(problem_cfg["layers"]),
            data,
            problem_cfg["batch"],
            seed=problem_cfg.get("seed", 0),
        )
    raise ConfigurationError(f"unknown problem.kind {kind!r}")


def _resolve_x0(config, problem, rng):
    spec = config.x0
    if spec == "default":
        if problem.default_x0 is None:
            raise ConfigurationError("problem has no default start point")
        return np.array(problem.default_x0, dtype=np.float64)
    if spec == "per-trial":
        if problem.sample_x0 is None:
            raise ConfigurationError("problem cannot sample start points")
        return np.asarray(problem.sample_x0(rng.generator), dtype=np.float64)
    try:
        return np.array([float(tok) for tok in spec.split(",")], dtype=np.float64)
    except ValueError:
        raise ConfigurationError(f"bad x0 {spec!r}") from None


def _resolve_schedule(config, problem, x0):
    """Build (ScheduleParams, per-epoch step function or None) for one trial."""
    scfg = config.schedule
    mode = scfg["mode"]
    common = {
        "epsilon": config.epsilon,
        "delta": config.delta,
        "eta": config.eta,
    }
    overrides = {
        key: scfg[key]
        for key in ("alpha", "T", "T_sc", "beta", "r_p", "r_d", "T_e")
        if key in scfg
    }
    if mode == "constant":
        return ScheduleParams(**common, **overrides), None
    if mode == "decayed":
        if config.algorithm not in ("rr", "sgd"):
            raise ConfigurationError("decayed schedules apply to rr and sgd only")
        if "alpha" not in scfg or "decay" not in scfg:
            raise ConfigurationError("decayed mode needs schedule.alpha and schedule.decay")
        step_fn = decayed_schedule(scfg["alpha"], scfg["decay"])
        return ScheduleParams(**common, **overrides), step_fn

    consts = compute_variance_constants(problem, x0)
    L = problem.lipschitz_gradient
    n = problem.n
    if config.algorithm in ("rr", "sgd"):
        if "T" not in scfg:
            raise ConfigurationError("formula mode needs schedule.T for rr and sgd")
        T = scfg["T"]
        fields = dict(common, T=T)
        if "alpha" in scfg:
            fields["alpha"] = scfg["alpha"]
        else:
            fields["alpha"] = compute_alpha_complexity(n, L, consts.A, T, config.delta)
            C1, C2, G = compute_complexity_constants(
                n, L, consts.A, consts.F, T, config.delta, B=consts.B
            )
            fields.update(C1=C1, C2=C2, G=G)
        return ScheduleParams(**fields), None
    if config.algorithm == "rr-sc":
        T_sc = scfg.get("T_sc")
        if T_sc is None:
            T_sc = solve_T_sc(
                n, L, consts.A, consts.F, config.eta, config.epsilon, config.delta
            )
        alpha = scfg.get("alpha")
        if alpha is None:
            alpha = compute_alpha_sc(
                n, L, consts.A, consts.F, config.eta, config.epsilon, T_sc, config.delta
            )
        fields = dict(common, alpha=alpha, T_sc=T_sc)
        if "T" in scfg:
            fields["T"] = scfg["T"]
        return ScheduleParams(**fields), None
    # p-rr
    rho = problem.lipschitz_hessian
    if rho is None or rho <= 0:
        raise ConfigurationError("p-rr formula mode needs a Hessian constant")
    params = compute_prr_params(
        n, L, consts.A, consts.F, rho, config.epsilon, config.delta, problem.d,
        B=consts.B,
    )
    T_sc = scfg.get("T_sc")
    if T_sc is None:
        T_sc = solve_T_sc(
            n, L, consts.A, consts.F, config.eta, config.epsilon, config.delta
        )
    alpha = scfg.get("alpha")
    if alpha is None:
        alpha = compute_alpha_sc(
            n, L, consts.A, consts.F, config.eta, config.epsilon, T_sc, config.delta
        )
    fields = dataclasses.asdict(params)
    fields.update(alpha=alpha, T_sc=T_sc, eta=config.eta)
    for key in ("beta", "r_p", "r_d", "T_e", "T"):
        if key in scfg:
            fields[key] = scfg[key]
    return ScheduleParams(**fields), None


@dataclass
class TrialResult:
    """Summary of one trial; heavyweight traces live in the CSV, not here."""

    trial: int
    seed: int
    tau: Optional[int] = None
    stopped: bool = False
    grad_norm_last: Optional[float] = None
    f_last: Optional[float] = None
    epochs_run: int = 0
    escape_events: int = 0
    cap_flag: bool = False
    diverged: bool = False
    stationarity: Optional[dict] = None
    trace_ref: Optional[str] = None
    events: dict = field(default_factory=dict)
    curves: Optional[dict] = None


def _run_trial(mapping, trial):
    """Execute one trial; top-level so worker processes can import it."""
    config = RunConfig.from_mapping(mapping)
    problem = build_problem(config.problem)
    rng = RngStream(config.base_seed, trial)
    x0 = _resolve_x0(config, problem, rng)
    params, step_fn = _resolve_schedule(config, problem, x0)

    want_rows = bool(config.out.get("csv"))
    wanted_curves = _split_list(config.record["curves"])
    if "accuracy" in wanted_curves and problem.accuracy is None:
        raise ConfigurationError("problem does not report accuracy")
    gate_open = problem.n * problem.d <= config.record["e_threshold"]
    full_grad_every = config.record["full_grad_every"] if gate_open else 0

    L = problem.lipschitz_gradient
    cert_consts = None
    if L is not None:
        cert_consts = compute_variance_constants(problem, x0)
        cert_log_sq = math.log(8.0 * problem.n / config.delta) ** 2

    rows = []
    curves = {key: [] for key in wanted_curves}
    state = {
        "epochs": 0,
        "last_x": x0,
        "prev_f": None,
        "descent_ok": True,
        "grad_sq_sum": 0.0,
        "grad_sq_count": 0,
        "cert_checked": 0,
        "cert_violations": 0,
    }
    if params.alpha is not None and config.eta is not None:
        descent_drop = (
            params.alpha * problem.n / 4.0 * (config.eta * config.epsilon) ** 2
        )
    else:
        descent_drop = None

    def on_epoch(rec):
        state["epochs"] += 1
        state["last_x"] = rec.x_end
        g_norm = float(np.linalg.norm(rec.g))
        if want_rows:
            e_norm = float(np.linalg.norm(rec.e)) if rec.e is not None else None
            rows.append(
                (
                    trial,
                    rec.t,
                    rec.f_start,
                    rec.grad_norm_start,
                    g_norm,
                    e_norm,
                    rec.step,
                    rec.mode,
                )
            )
        for key in wanted_curves:
            if key == "f":
                curves[key].append(rec.f_start)
            elif key == "g_norm":
                curves[key].append(g_norm)
            elif key == "grad_norm":
                curves[key].append(rec.grad_norm_start)
            elif key == "accuracy":
                curves[key].append(problem.accuracy(rec.x_start))
        if rec.grad_norm_start is not None:
            state["grad_sq_sum"] += rec.grad_norm_start**2
            state["grad_sq_count"] += 1
            if cert_consts is not None and rec.e is not None:
                if 4.0 * rec.step * problem.n * L <= 1.0 + 1e-12:
                    a_sq = rec.step**2
                    f_gap = rec.f_start - cert_consts.f_lower
                    rhs = (
                        2.0 * a_sq * problem.n**2 * L**2 * rec.grad_norm_start**2
                        + 32.0
                        * a_sq
                        * problem.n
                        * L**2
                        * (cert_consts.A * f_gap + cert_consts.B)
                        * cert_log_sq
                    )
                    state["cert_checked"] += 1
                    state["cert_violations"] += int(float(rec.e @ rec.e) > rhs)
        if descent_drop is not None and state["prev_f"] is not None:
            if rec.f_start > state["prev_f"] - descent_drop:
                state["descent_ok"] = False
        state["prev_f"] = rec.f_start

    result = TrialResult(trial=trial, seed=config.base_seed)
    loop_kwargs = {
        "full_grad_every": full_grad_every,
        "record_trace": False,
        "on_epoch": on_epoch,
    }
    x_last = x0
    try:
        if config.algorithm == "rr":
            run_rr(problem, x0, params, rng, step_fn=step_fn, **loop_kwargs)
            x_last = state["last_x"]
        elif config.algorithm == "sgd":
            if params.T is None:
                raise ConfigurationError("sgd needs schedule.T")
            run_sgd(
                problem, x0, params.T * problem.n, params, rng,
                step_fn=step_fn, **loop_kwargs,
            )
            x_last = state["last_x"]
        elif config.algorithm == "rr-sc":
            _, tau, x_tau = run_rr_sc(problem, x0, params, rng, **loop_kwargs)
            result.tau = tau
            result.stopped = tau is not None
            result.cap_flag = tau is None
            x_last = x_tau
        else:  # p-rr
            _, x_returned, events = run_prr(
                problem, x0, params, rng,
                epoch_cap=config.limits.get("epoch_cap"), **loop_kwargs,
            )
            x_last = x_returned
            perturbations = sum(1 for e in events if e["event"] == "perturbation")
            escapes = sum(1 for e in events if e["event"] == "escape")
            returned = [e for e in events if e["event"] == "return"]
            result.escape_events = escapes
            result.cap_flag = any(e["event"] == "cap-exhausted" for e in events)
            if returned:
                result.tau = returned[0]["epoch"]
            result.events["returned"] = bool(returned)
            result.events["perturbed"] = perturbations > 0
    except DivergenceError:
        result.diverged = True
        result.epochs_run = state["epochs"]
        return result, rows, _trial_cert(state)

    result.epochs_run = state["epochs"]
    full_grad = problem.full_gradient(x_last)
    result.grad_norm_last = float(np.linalg.norm(full_grad))
    result.f_last = float(problem.full_value(x_last))

    want_report = config.record["stationarity"] or config.algorithm == "p-rr"
    report = None
    if want_report and problem.lipschitz_hessian and problem.dense_hessian is not None:
        report = classify(problem, x_last, config.epsilon)
        result.stationarity = dataclasses.asdict(report)

    if config.algorithm == "rr":
        if params.G is not None and state["grad_sq_count"] == params.T and params.T:
            bound = grad_mean_square_bound(
                problem.n, L, cert_consts.A, cert_consts.F, params.T, config.delta
            )
            mean_sq = state["grad_sq_sum"] / state["grad_sq_count"]
            result.events["grad_bound_satisfied"] = bool(mean_sq <= bound)
    elif config.algorithm == "rr-sc":
        result.events["strict_descent"] = bool(state["descent_ok"])
        if result.stopped:
            result.events["last_iterate_within_epsilon"] = bool(
                result.grad_norm_last <= config.epsilon
            )
    elif config.algorithm == "p-rr":
        result.events["escape_success"] = bool(
            result.events.get("perturbed")
            and result.escape_events > 0
            and result.events.get("returned")
            and report is not None
            and report.classification == "second-order-stationary"
        )

    if want_rows:
        result.trace_ref = config.out.get("csv")
    if curves:
        result.curves = curves
    return result, rows, _trial_cert(state)


def _trial_cert(state):
    return {
        "checked": state["cert_checked"],
        "violations": state["cert_violations"],
    }


def _worker_count(config):
    cap = config.trials
    env = os.environ.get("RESHUFFLE_OPT_THREADS")
    if env is not None:
        try:
            env_cap = int(env)
        except ValueError:
            raise ConfigurationError(
                f"RESHUFFLE_OPT_THREADS must be an integer, got {env!r}"
            ) from None
        if env_cap >= 1:
            cap = min(cap, env_cap)
    return max(1, min(config.parallelism, cap))


def _freq_entry(count, draws):
    center, halfwidth = wilson_interval(count, draws)
    return {
        "count": count,
        "draws": draws,
        "frequency": count / draws,
        "wilson_center": center,
        "wilson_halfwidth": halfwidth,
    }


def run_experiment(config):
    """Run all trials, aggregate, and write any configured outputs.

    The aggregate is {schema_version, config, trials, quantiles,
    frequencies, certificates}; identical for any worker count because
    trials are independent streams and results are sorted by index.
    """
    mapping = config.to_mapping()
    workers = _worker_count(config)
    if workers == 1:
        outputs = [_run_trial(mapping, t) for t in range(config.trials)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(
                pool.map(_run_trial, [mapping] * config.trials, range(config.trials))
            )
    outputs.sort(key=lambda item: item[0].trial)
    results = [item[0] for item in outputs]
    rows = [row for item in outputs for row in item[1]]

    finals = [r.grad_norm_last for r in results if r.grad_norm_last is not None]
    if finals:
        qs = np.percentile(np.asarray(finals), [0, 25, 50, 75, 100])
        quantiles = {
            "grad_norm_last": {
                "min": float(qs[0]),
                "q25": float(qs[1]),
                "median": float(qs[2]),
                "q75": float(qs[3]),
                "max": float(qs[4]),
            }
        }
    else:
        quantiles = {"grad_norm_last": None}

    frequencies = {
        "diverged": _freq_entry(sum(r.diverged for r in results), len(results)),
        "stopped": _freq_entry(sum(r.stopped for r in results), len(results)),
        "cap_exhausted": _freq_entry(sum(r.cap_flag for r in results), len(results)),
    }
    event_keys = sorted({key for r in results for key in r.events})
    for key in event_keys:
        present = [r.events[key] for r in results if key in r.events]
        frequencies[key] = _freq_entry(sum(present), len(present))

    checked = sum(item[2]["checked"] for item in outputs)
    violations = sum(item[2]["violations"] for item in outputs)
    certificates = {}
    if checked:
        center, halfwidth = wilson_interval(violations, checked)
        certificates["epoch_error"] = {
            "delta": config.delta,
            "epochs_checked": checked,
            "violations": violations,
            "violation_rate": violations / checked,
            "wilson_center": center,
            "wilson_halfwidth": halfwidth,
        }

    aggregate = {
        "schema_version": SCHEMA_VERSION,
        "config": mapping,
        "trials": [dataclasses.asdict(r) for r in results],
        "quantiles": quantiles,
        "frequencies": frequencies,
        "certificates": certificates,
    }
    if config.out.get("json"):
        write_json(aggregate, config.out["json"])
    if config.out.get("csv"):
        emit_csv(rows, config.out["csv"])
    return aggregate


def _jsonable(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if value is None or isinstance(value, str):
        return value
    if dataclasses.is_dataclass(value):
        return _jsonable(dataclasses.asdict(value))
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(obj, path):
    """Stable JSON: sorted keys, two-space indent, trailing newline."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def emit_csv(rows_or_trace, path):
    """Write per-epoch rows; accepts raw tuples or a trace of EpochRecord."""
    rows = []
    for item in rows_or_trace:
        if isinstance(item, tuple):
            rows.append(item)
        else:
            e_norm = float(np.linalg.norm(item.e)) if item.e is not None else None
            rows.append(
                (
                    0,
                    item.t,
                    item.f_start,
                    item.grad_norm_start,
                    float(np.linalg.norm(item.g)),
                    e_norm,
                    item.step,
                    item.mode,
                )
            )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def compare_rr_sgd(config_a, config_b):
    """Run two configs sharing problem, trials, seeds, and epoch budget;
    report paired last-iterate gradient norms and median curves."""
    if config_a.problem != config_b.problem:
        raise ConfigurationError("compared configs must share the problem")
    if config_a.trials != config_b.trials:
        raise ConfigurationError("compared configs must share trials")
    if config_a.base_seed != config_b.base_seed:
        raise ConfigurationError("compared configs must share base_seed")
    if config_a.x0 != config_b.x0:
        raise ConfigurationError("compared configs must share x0")
    if config_a.schedule.get("T") != config_b.schedule.get("T"):
        raise ConfigurationError("compared configs must share the epoch budget")
    agg_a = run_experiment(config_a)
    agg_b = run_experiment(config_b)

    def _stats(aggregate):
        q = aggregate["quantiles"]["grad_norm_last"]
        if q is None:
            return None, None
        return q["median"], q["q75"] - q["q25"]

    med_a, iqr_a = _stats(agg_a)
    med_b, iqr_b = _stats(agg_b)
    per_trial = []
    for ta, tb in zip(agg_a["trials"], agg_b["trials"]):
        per_trial.append(
            {
                "trial": ta["trial"],
                "left": ta["grad_norm_last"],
                "right": tb["grad_norm_last"],
            }
        )

    def _median_curves(aggregate):
        curve_sets = [t["curves"] for t in aggregate["trials"] if t.get("curves")]
        if not curve_sets:
            return None
        medians = {}
        for key in curve_sets[0]:
            series = [c[key] for c in curve_sets if key in c]
            if not series or any(len(s) != len(series[0]) for s in series):
                continue
            if any(v is None for s in series for v in s):
                continue
            arr = np.array(series, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                continue
            medians[key] = [float(v) for v in np.median(arr, axis=0)]
        return medians or None

    return {
        "schema_version": SCHEMA_VERSION,
        "left": agg_a,
        "right": agg_b,
        "paired": {
            "left_median": med_a,
            "right_median": med_b,
            "left_iqr": iqr_a,
            "right_iqr": iqr_b,
            "per_trial": per_trial,
            "left_curves": _median_curves(agg_a),
            "right_curves": _median_curves(agg_b),
        },
    }


def _print_summary(aggregate, stream=None):
    stream = stream or sys.stdout
    trials = aggregate["trials"]
    diverged = aggregate["frequencies"]["diverged"]["count"]
    print(f"trials={len(trials)} diverged={diverged}", file=stream)
    q = aggregate["quantiles"]["grad_norm_last"]
    if q is not None:
        print(
            "grad_norm_last: min={min:.6g} q25={q25:.6g} median={median:.6g} "
            "q75={q75:.6g} max={max:.6g}".format(**q),
            file=stream,
        )
    for key, entry in sorted(aggregate["frequencies"].items()):
        if key == "diverged":
            continue
        print(
            f"{key}: {entry['count']}/{entry['draws']} "
            f"(wilson {entry['wilson_center']:.4f} +- {entry['wilson_halfwidth']:.4f})",
            file=stream,
        )
    cert = aggregate["certificates"].get("epoch_error")
    if cert:
        print(
            f"epoch_error: {cert['violations']}/{cert['epochs_checked']} violations "
            f"(delta={cert['delta']})",
            file=stream,
        )


def _cmd_run(args):
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.delta is not None:
        overrides["delta"] = args.delta
    if args.out is not None:
        overrides["out.json"] = args.out
    if args.csv is not None:
        overrides["out.csv"] = args.csv
    config = load_config(args.config, overrides)
    aggregate = run_experiment(config)
    _print_summary(aggregate)
    return 0


def _cmd_compare(args):
    config_a = load_config(args.config_a)
    config_b = load_config(args.config_b)
    if args.full:
        config_a = dataclasses.replace(config_a, trials=100)
        config_b = dataclasses.replace(config_b, trials=100)
    report = compare_rr_sgd(config_a, config_b)
    paired = report["paired"]
    print(
        f"left: median={paired['left_median']:.6g} iqr={paired['left_iqr']:.6g}"
    )
    print(
        f"right: median={paired['right_median']:.6g} iqr={paired['right_iqr']:.6g}"
    )
    if args.out:
        write_json(report, args.out)
    return 0


def _cmd_params(args):
    config = load_config(args.config)
    problem = build_problem(config.problem)
    rng = RngStream(config.base_seed, 0)
    x0 = _resolve_x0(config, problem, rng)
    consts = compute_variance_constants(problem, x0)
    L = problem.lipschitz_gradient
    n = problem.n
    lines = [
        ("n", n),
        ("d", problem.d),
        ("L", L),
        ("rho", problem.lipschitz_hessian),
        ("A", consts.A),
        ("B", consts.B),
        ("f_lower", consts.f_lower),
        ("F", consts.F),
    ]
    T = config.schedule.get("T")
    if T is not None:
        C1, C2, G = compute_complexity_constants(
            n, L, consts.A, consts.F, T, config.delta, B=consts.B
        )
        lines += [
            ("T", T),
            ("alpha_complexity", compute_alpha_complexity(n, L, consts.A, T, config.delta)),
            ("C1", C1),
            ("C2", C2),
            ("G", G),
        ]
    T_sc = config.schedule.get("T_sc")
    if T_sc is None:
        T_sc = solve_T_sc(
            n, L, consts.A, consts.F, config.eta, config.epsilon, config.delta
        )
    cert = t_sc_certificate(
        n, L, consts.A, consts.F, config.eta, config.epsilon, config.delta, T_sc
    )
    lines += [
        ("T_sc", T_sc),
        ("alpha_sc", compute_alpha_sc(
            n, L, consts.A, consts.F, config.eta, config.epsilon, T_sc, config.delta
        )),
        ("T_sc_lhs", cert["lhs"]),
        ("T_sc_rhs", cert["rhs"]),
        ("T_sc_feasible", cert["feasible"]),
    ]
    rho = problem.lipschitz_hessian
    if rho:
        try:
            params = compute_prr_params(
                n, L, consts.A, consts.F, rho, config.epsilon, config.delta,
                problem.d, B=consts.B,
            )
        except ParameterError as exc:
            lines.append(("prr_params", f"unavailable ({exc})"))
        else:
            prr_cert = compute_prr_certificate(
                params, n, L, consts.A, consts.F, rho, config.epsilon,
                config.delta, problem.d, B=consts.B,
            )
            lines += [
                ("R", params.R),
                ("beta", params.beta),
                ("r_p", params.r_p),
                ("r_d", params.r_d),
                ("T_e", params.T_e),
                ("eta", params.eta),
                ("beta_feasible", prr_cert["beta_feasible"]),
                ("beta_tight", prr_cert["beta_tight"]),
                ("four_beta_n_L", prr_cert["four_beta_n_L"]),
            ]
    for key, value in lines:
        print(f"{key}={value}")
    return 0


def _verify_concentration(draws, seed):
    """Bound-dominance sweep plus prefix-deviation certificates.

    Returns (report dict, list of (name, passed) checks).
    """
    rng = RngStream(seed, 0)
    vectors = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    grid = [float(s) for s in np.linspace(0.1, 2.0, 20)]
    sweep = partial_sum_tail_sweep(vectors, 2, grid, draws, rng)
    checks = []
    dominance = all(est.exact_tail <= est.bound_value + 1e-15 for est in sweep)
    checks.append(("exact_tail_below_bound", dominance))
    agreement = all(
        abs(est.empirical_tail - est.exact_tail) <= est.wilson_halfwidth
        for est in sweep
    )
    checks.append(("mc_within_wilson_of_exact", agreement))

    cert_specs = [
        ("mean_quadratic_at_0", build_problem(
            {"kind": "mean_quadratic", "anchors": "1;-1"}), [0.0]),
        ("quartic_at_half", build_problem(
            {"kind": "quartic_saddle", "n": 4, "bias_scale": 0.1, "seed": 7}),
            [0.5, 0.5]),
    ]
    cert_report = {}
    for label, problem, x in cert_specs:
        for delta in (0.05, 0.1):
            estimates = gradient_error_certificate(
                problem, np.array(x), delta, max(draws // 10, 1), rng
            )
            ok = all(
                est.empirical_tail <= delta + 3.0 * est.wilson_halfwidth
                for est in estimates
            )
            checks.append((f"{label}_delta_{delta}", ok))
            cert_report[f"{label}_delta_{delta}"] = [
                dataclasses.asdict(est) for est in estimates
            ]
    report = {
        "schema_version": SCHEMA_VERSION,
        "sweep": [dataclasses.asdict(est) for est in sweep],
        "certificates": cert_report,
        "checks": {name: ok for name, ok in checks},
    }
    return report, checks


def _cmd_verify_concentration(args):
    report, checks = _verify_concentration(args.draws, args.seed)
    for name, ok in checks:
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    if args.out:
        write_json(report, args.out)
    if args.check and not all(ok for _, ok in checks):
        return 2
    return 0


ESCAPE_DEMO_SCHEDULE = ScheduleParams(
    epsilon=0.01,
    delta=0.1,
    eta=0.5,
    alpha=2e-3,
    beta=2e-3,
    r_p=1e-3,
    r_d=0.05,
    T_e=1500,
)
ESCAPE_DEMO_CAP = 20000


def escape_demo(trials, seed):
    """Saddle-escape contrast on the unbiased quartic started at its saddle.

    The control shows plain reshuffling is stuck by symmetry (every
    component gradient vanishes at the origin, so iterates stay there
    bitwise); the perturbed variant must leave, descend, and certify a
    second-order stationary point. Returns (control max displacement,
    success count, per-trial detail list).
    """
    problem = build_problem({"kind": "quartic_saddle", "n": 4, "bias_scale": 0.0})
    x0 = np.zeros(2)
    control_schedule = ScheduleParams(alpha=ESCAPE_DEMO_SCHEDULE.alpha, T=50)
    control = run_rr(problem, x0, control_schedule, RngStream(seed, 10**6))
    control_moved = max(float(np.abs(rec.x_end).max()) for rec in control)

    details = []
    successes = 0
    for trial in range(trials):
        rng = RngStream(seed, trial)
        _, x_returned, events = run_prr(
            problem, x0, ESCAPE_DEMO_SCHEDULE, rng,
            epoch_cap=ESCAPE_DEMO_CAP, full_grad_every=0, record_trace=False,
        )
        perturbed = any(e["event"] == "perturbation" for e in events)
        escaped = any(e["event"] == "escape" for e in events)
        returned = any(e["event"] == "return" for e in events)
        report = classify(problem, x_returned, ESCAPE_DEMO_SCHEDULE.epsilon)
        ok = (
            perturbed
            and escaped
            and returned
            and report.classification == "second-order-stationary"
        )
        successes += int(ok)
        details.append(
            {
                "trial": trial,
                "perturbed": perturbed,
                "escaped": escaped,
                "returned": returned,
                "classification": report.classification,
                "grad_norm": report.grad_norm,
                "min_eig": report.min_eig,
                "success": ok,
            }
        )
    return control_moved, successes, details


def _cmd_escape_demo(args):
    control_moved, successes, details = escape_demo(args.trials, args.seed)
    print(f"control_max_displacement={control_moved!r}")
    center, halfwidth = wilson_interval(successes, len(details))
    print(
        f"escape_success: {successes}/{len(details)} "
        f"(wilson {center:.4f} +- {halfwidth:.4f})"
    )
    for det in details:
        if not det["success"]:
            print(
                f"trial {det['trial']}: perturbed={det['perturbed']} "
                f"escaped={det['escaped']} returned={det['returned']} "
                f"class={det['classification']}"
            )
    if args.check:
        passed = control_moved == 0.0 and successes / len(details) >= 0.9
        return 0 if passed else 2
    return 0


def cli_main(argv):
    parser = argparse.ArgumentParser(
        prog="reshuffle-opt",
        description="Run reshuffling-based optimization experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--trials", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--epsilon", type=float)
    p_run.add_argument("--delta", type=float)
    p_run.add_argument("--out", help="aggregate JSON path")
    p_run.add_argument("--csv", help="per-epoch CSV path")

    p_cmp = sub.add_parser("compare", help="run two configs and pair results")
    p_cmp.add_argument("config_a")
    p_cmp.add_argument("config_b")
    p_cmp.add_argument("--out", help="comparison JSON path")
    p_cmp.add_argument(
        "--full",
        action="store_true",
        help="override both configs to the full 100-trial comparison",
    )

    p_ver = sub.add_parser(
        "verify-concentration", help="tail-bound sweeps and certificates"
    )
    p_ver.add_argument("--draws", type=int, default=100000)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", help="report JSON path")
    p_ver.add_argument("--check", action="store_true")

    p_esc = sub.add_parser("escape-demo", help="saddle-escape contrast run")
    p_esc.add_argument("--trials", type=int, default=50)
    p_esc.add_argument("--seed", type=int, default=0)
    p_esc.add_argument("--check", action="store_true")

    p_par = sub.add_parser("params", help="print derived constants for a config")
    p_par.add_argument("config")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "verify-concentration": _cmd_verify_concentration,
        "escape-demo": _cmd_escape_demo,
        "params": _cmd_params,
    }
    try:
        return handlers[args.command](args)
    except (
        ConfigurationError,
        ParameterError,
        UnsupportedProblemError,
        NumericError,
        IdxError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
