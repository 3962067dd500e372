"""Deterministic figure rendering for experiment outputs.

Every renderer is a pure function of its input files: fixed style, no
clock, no RNG. Rendering the same spec twice produces byte-identical
PNGs, and each file carries a source hash in its metadata so a figure
can be traced back to the exact inputs that produced it.

Inputs are the experiment runner's artifacts: aggregate JSON (single
run or paired comparison), per-epoch CSV traces, and the concentration
verification report. Only documents with a supported schema_version
are accepted.
"""

import csv
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from matplotlib import rc_context
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

SUPPORTED_SCHEMA = 1

FIGURE_KINDS = ("last-iterate-box", "loss-accuracy", "gt-vs-grad", "tail-vs-bound")

TRACE_HEADER = ["trial", "epoch", "f", "grad_norm", "g_norm", "e_norm", "step", "mode"]

# pinned so figures do not depend on the user's matplotlibrc
_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
}

_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


class PlotError(Exception):
    """A figure spec or its input data failed validation."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: what to draw, from which file, to which path."""

    kind: str
    input: str
    output: str
    log_y: Optional[bool] = None
    title: Optional[str] = None
    trial: int = 0
    eta: Optional[float] = None
    epsilon: Optional[float] = None

    @classmethod
    def from_mapping(cls, mapping):
        fields = {}
        for key, value in mapping.items():
            if key in ("kind", "input", "output", "title"):
                fields[key] = _as_str(key, value)
            elif key == "log_y":
                fields[key] = _as_bool(key, value)
            elif key == "trial":
                fields[key] = _as_int(key, value)
            elif key in ("eta", "epsilon"):
                fields[key] = _as_float(key, value)
            else:
                raise PlotError(f"unknown spec key {key!r}")
        for required in ("kind", "input", "output"):
            if required not in fields:
                raise PlotError(f"{required} is required")
        spec = cls(**fields)
        if spec.kind not in FIGURE_KINDS:
            raise PlotError(f"kind must be one of {', '.join(FIGURE_KINDS)}")
        if spec.trial < 0:
            raise PlotError("trial must be nonnegative")
        if spec.kind == "gt-vs-grad":
            if spec.eta is None or spec.epsilon is None:
                raise PlotError("gt-vs-grad needs eta and epsilon for the stop line")
            if spec.eta <= 0 or spec.epsilon <= 0:
                raise PlotError("eta and epsilon must be positive")
        return spec

    @property
    def y_log(self):
        # empirical tails span orders of magnitude; default them to log
        if self.log_y is None:
            return self.kind == "tail-vs-bound"
        return self.log_y


def _as_str(key, value):
    if isinstance(value, str):
        return value
    raise PlotError(f"{key} must be a string, got {value!r}")


def _as_int(key, value):
    if isinstance(value, bool):
        raise PlotError(f"{key} must be an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 10)
        except ValueError:
            raise PlotError(f"{key} must be an integer, got {value!r}") from None
    raise PlotError(f"{key} must be an integer, got {value!r}")


def _as_float(key, value):
    if isinstance(value, bool):
        raise PlotError(f"{key} must be a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise PlotError(f"{key} must be a number, got {value!r}") from None
    raise PlotError(f"{key} must be a number, got {value!r}")


def _as_bool(key, value):
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lower = value.strip().lower()
        if lower in ("true", "yes", "1"):
            return True
        if lower in ("false", "no", "0"):
            return False
    raise PlotError(f"{key} must be a boolean, got {value!r}")


def parse_spec_text(text):
    """Parse a figure spec document: flat key=value lines, or a JSON object."""
    text = text.strip()
    if not text:
        return {}
    if text.startswith("{"):
        try:
            mapping = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PlotError(f"invalid JSON spec: {exc}") from exc
        if not isinstance(mapping, dict):
            raise PlotError("JSON spec must be an object")
        return mapping
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PlotError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise PlotError(f"line {lineno}: empty key")
        if key in mapping:
            raise PlotError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value.strip()
    return mapping


def _load_document(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PlotError(f"invalid JSON input {path!r}: {exc}") from exc
    if not isinstance(document, dict):
        raise PlotError(f"input {path!r} must hold a JSON object")
    version = document.get("schema_version")
    if version != SUPPORTED_SCHEMA:
        raise PlotError(
            f"unsupported schema_version {version!r}; this tool reads "
            f"version {SUPPORTED_SCHEMA}"
        )
    return document


def _aggregates(document):
    """Split a document into labeled run aggregates.

    A run aggregate contributes one group; a paired comparison report
    contributes its left and right runs.
    """
    if "trials" in document:
        label = document.get("config", {}).get("algorithm", "run")
        return [(label, document)]
    if "left" in document and "right" in document:
        groups = []
        for side in ("left", "right"):
            aggregate = document[side]
            if not isinstance(aggregate, dict) or "trials" not in aggregate:
                raise PlotError(f"comparison report has no {side} trials")
            label = aggregate.get("config", {}).get("algorithm", side)
            groups.append((label, aggregate))
        if groups[0][0] == groups[1][0]:
            groups = [(f"left {groups[0][0]}", groups[0][1]),
                      (f"right {groups[1][0]}", groups[1][1])]
        return groups
    raise PlotError("input is neither a run aggregate nor a comparison report")


def _last_iterate_values(label, aggregate):
    trials = aggregate.get("trials")
    if not trials:
        raise PlotError(f"{label}: aggregate has no trials")
    values = [
        t.get("grad_norm_last")
        for t in trials
        if t.get("grad_norm_last") is not None
    ]
    if not values:
        raise PlotError(f"{label}: no finite last-iterate gradient norms")
    return values


def _median_curve(label, aggregate, key):
    trials = aggregate.get("trials")
    if not trials:
        raise PlotError(f"{label}: aggregate has no trials")
    series = [t["curves"][key] for t in trials if t.get("curves") and key in t["curves"]]
    if not series:
        return None
    if any(len(s) != len(series[0]) for s in series):
        raise PlotError(f"{label}: trials disagree on the {key} curve length")
    if any(v is None for s in series for v in s):
        raise PlotError(f"{label}: the {key} curve has missing values")
    return np.median(np.asarray(series, dtype=np.float64), axis=0)


def _read_trace(path, trial):
    epochs, g_norms, grad_norms = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise PlotError(f"unexpected trace header in {path!r}")
        for row in reader:
            if len(row) != len(TRACE_HEADER):
                raise PlotError(f"malformed trace row in {path!r}")
            if int(row[0]) != trial:
                continue
            epochs.append(int(row[1]))
            g_norms.append(float(row[4]))
            grad_norms.append(float(row[3]) if row[3] else None)
    if not epochs:
        raise PlotError(f"trace has no rows for trial {trial}")
    return epochs, g_norms, grad_norms


def first_epoch_at_or_below(epochs, values, threshold):
    """Earliest epoch whose value is at or below the threshold, else None."""
    for epoch, value in zip(epochs, values):
        if value <= threshold:
            return epoch
    return None


def _source_hash(config, raw_bytes):
    """Hash the config echo when the input carries one, else the raw file."""
    if config is not None:
        payload = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    else:
        payload = raw_bytes
    return hashlib.sha256(payload).hexdigest()[:16]


def _new_axes():
    fig = Figure(layout="constrained")
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot()


def _build_last_iterate_box(spec):
    document = _load_document(spec.input)
    groups = _aggregates(document)
    data = [_last_iterate_values(label, agg) for label, agg in groups]
    config = {label: agg.get("config") for label, agg in groups}
    fig, ax = _new_axes()
    ax.boxplot(data, whis=(0.0, 100.0))
    ax.set_xticks(range(1, len(groups) + 1))
    ax.set_xticklabels([label for label, _ in groups])
    ax.set_ylabel(r"$\|\nabla f(x_T)\|$")
    ax.set_title(spec.title or "last-iterate gradient norm")
    if spec.y_log:
        ax.set_yscale("log")
    return fig, _source_hash(config, None)


def _build_loss_accuracy(spec):
    document = _load_document(spec.input)
    groups = _aggregates(document)
    config = {label: agg.get("config") for label, agg in groups}
    fig, ax = _new_axes()
    acc_ax = None
    drew = False
    for idx, (label, aggregate) in enumerate(groups):
        color = _SERIES_COLORS[idx % len(_SERIES_COLORS)]
        loss = _median_curve(label, aggregate, "f")
        if loss is not None:
            ax.plot(range(len(loss)), loss, color=color, label=f"{label} loss")
            drew = True
        accuracy = _median_curve(label, aggregate, "accuracy")
        if accuracy is not None:
            if acc_ax is None:
                acc_ax = ax.twinx()
                acc_ax.grid(False)
                acc_ax.set_ylabel("accuracy")
            acc_ax.plot(
                range(len(accuracy)),
                accuracy,
                color=color,
                linestyle="--",
                label=f"{label} accuracy",
            )
            drew = True
    if not drew:
        raise PlotError("no f or accuracy curves recorded; rerun with record.curves")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(spec.title or "median loss and accuracy")
    if spec.y_log:
        ax.set_yscale("log")
    handles, labels = ax.get_legend_handles_labels()
    if acc_ax is not None:
        more_handles, more_labels = acc_ax.get_legend_handles_labels()
        handles += more_handles
        labels += more_labels
    ax.legend(handles, labels, loc="best")
    return fig, _source_hash(config, None)


def _build_gt_vs_grad(spec):
    with open(spec.input, "rb") as fh:
        raw = fh.read()
    epochs, g_norms, grad_norms = _read_trace(spec.input, spec.trial)
    threshold = spec.eta * spec.epsilon
    fig, ax = _new_axes()
    ax.plot(epochs, g_norms, color=_SERIES_COLORS[0], label=r"$\|g_t\|$")
    known = [(t, v) for t, v in zip(epochs, grad_norms) if v is not None]
    if known:
        ax.plot(
            [t for t, _ in known],
            [v for _, v in known],
            color=_SERIES_COLORS[1],
            label=r"$\|\nabla f(x_t)\|$",
        )
    ax.axhline(
        threshold, color="0.3", linestyle=":", label=r"$\eta\varepsilon$"
    )
    stop = first_epoch_at_or_below(epochs, g_norms, threshold)
    if stop is not None:
        ax.axvline(stop, color="0.3", linestyle="--", label=f"stop at {stop}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("norm")
    ax.set_title(spec.title or f"gradient estimates, trial {spec.trial}")
    if spec.y_log:
        ax.set_yscale("log")
    ax.legend(loc="best")
    return fig, _source_hash(None, raw)


def _build_tail_vs_bound(spec):
    with open(spec.input, "rb") as fh:
        raw = fh.read()
    document = _load_document(spec.input)
    sweep = document.get("sweep")
    if not sweep:
        raise PlotError("report has no tail sweep")
    thresholds = [entry["threshold_s"] for entry in sweep]
    series = [
        ("bound", [entry["bound_value"] for entry in sweep], "-"),
        ("exact tail", [entry.get("exact_tail") for entry in sweep], "--"),
        ("empirical tail", [entry["empirical_tail"] for entry in sweep], ""),
    ]
    fig, ax = _new_axes()
    for idx, (label, values, style) in enumerate(series):
        # keep log axes clean: drop missing entries and exact zeros
        points = [
            (s, v)
            for s, v in zip(thresholds, values)
            if v is not None and (not spec.y_log or v > 0.0)
        ]
        if not points:
            continue
        ax.plot(
            [s for s, _ in points],
            [v for _, v in points],
            linestyle=style or "none",
            marker="o" if not style else None,
            markersize=4,
            color=_SERIES_COLORS[idx % len(_SERIES_COLORS)],
            label=label,
        )
    ax.set_xlabel("threshold s")
    ax.set_ylabel("tail probability")
    ax.set_title(spec.title or "partial-sum deviation tails")
    if spec.y_log:
        ax.set_yscale("log")
    ax.legend(loc="best")
    return fig, _source_hash(None, raw)


_BUILDERS = {
    "last-iterate-box": _build_last_iterate_box,
    "loss-accuracy": _build_loss_accuracy,
    "gt-vs-grad": _build_gt_vs_grad,
    "tail-vs-bound": _build_tail_vs_bound,
}


def build_figure(spec):
    """Validate inputs and build the figure; returns (figure, source hash).

    Raises PlotError before anything is drawn when the spec or its
    input data is unusable, so callers can rely on no partial output.
    """
    with rc_context(_STYLE):
        return _BUILDERS[spec.kind](spec)


def render(spec):
    """Render one figure to spec.output; returns the output path."""
    with rc_context(_STYLE):
        fig, source_hash = _BUILDERS[spec.kind](spec)
        fig.savefig(
            spec.output,
            format="png",
            metadata={"Software": "reshuffle-plots", "Source-Hash": source_hash},
        )
    return spec.output
