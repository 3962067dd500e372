"""Finite-sum test problems with analytic smoothness metadata.

Every problem is f(x) = (1/n) sum_i f_i(x) exposed through component oracles
(indices run 1..n), an exact full gradient, and the constants the step-size
schedules need: the gradient Lipschitz constant L certified on a stated trust
region, optionally the Hessian Lipschitz constant rho, and per-component
lower bounds.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigurationError, UnsupportedProblemError
from .samplers import RngStream


@dataclass(frozen=True)
class FiniteSumProblem:
    """Oracle bundle for one finite-sum objective."""

    n: int
    d: int
    component_value: Callable
    component_gradient: Callable
    full_gradient: Callable
    full_value: Callable
    component_lower_bounds: np.ndarray
    trust_region_radius: float
    lipschitz_gradient: Optional[float] = None
    lipschitz_hessian: Optional[float] = None
    dense_hessian: Optional[Callable] = None
    f_lower: Optional[float] = None
    default_x0: Optional[np.ndarray] = None
    sample_x0: Optional[Callable] = None
    accuracy: Optional[Callable] = None
    name: str = ""


@dataclass(frozen=True)
class VarianceConstants:
    """Constants of the per-component gradient variance bound.

    The mean squared deviation (1/n) sum_i ||grad f_i(x) - grad f(x)||^2 is
    bounded by A*(f(x) - f_lower) + B with A = 2L and
    B = (A/n) sum_i (f_lower - f_lower_i). F = 3*(f(x0) - f_lower) + 3B/A is
    the start-point constant the step-size schedules consume.
    """

    A: float
    B: float
    f_lower: float
    F: float


def _check_index(i, n):
    if not 1 <= i <= n:
        raise IndexError(f"component index {i} out of range 1..{n}")


def make_mean_quadratic(anchors):
    """Mean of squared distances to fixed anchors: f_i(x) = ||x - a_i||^2 / 2.

    A flat anchor sequence is read as n scalar anchors. The full objective is
    an exact quadratic bowl with identity Hessian, minimized at the anchor
    mean; every component infimum is zero, so L = 1 and rho = 0 globally.
    """
    arr = np.asarray(anchors, dtype=np.float64)
    if arr.size == 0:
        raise ConfigurationError("at least one anchor is required")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigurationError("anchors must be a sequence of points")
    n, d = arr.shape
    center = arr.mean(axis=0)
    f_floor = 0.5 * float(np.mean(np.sum((arr - center) ** 2, axis=1)))

    def component_value(i, x):
        _check_index(i, n)
        diff = np.asarray(x, dtype=np.float64) - arr[i - 1]
        return 0.5 * float(diff @ diff)

    def component_gradient(i, x):
        _check_index(i, n)
        return np.asarray(x, dtype=np.float64) - arr[i - 1]

    def full_value(x):
        diff = np.asarray(x, dtype=np.float64) - arr
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))

    def full_gradient(x):
        return np.asarray(x, dtype=np.float64) - center

    def dense_hessian(x):
        return np.eye(d)

    return FiniteSumProblem(
        n=n,
        d=d,
        component_value=component_value,
        component_gradient=component_gradient,
        full_gradient=full_gradient,
        full_value=full_value,
        component_lower_bounds=np.zeros(n),
        trust_region_radius=math.inf,
        lipschitz_gradient=1.0,
        lipschitz_hessian=0.0,
        dense_hessian=dense_hessian,
        f_lower=f_floor,
        default_x0=np.zeros(d),
        name="mean_quadratic",
    )


def _quartic_1d_min(b1):
    # min over x of x^4/4 - x^2/2 + b1*x via the real roots of x^3 - x + b1
    roots = np.roots([1.0, 0.0, -1.0, b1])
    real = roots[np.abs(roots.imag) < 1e-9].real
    vals = real**4 / 4.0 - real**2 / 2.0 + b1 * real
    return float(vals.min())


def make_quartic_saddle(n, bias_scale=0.0, seed=0):
    """Two-dimensional quartic whose origin is a strict saddle.

    Mean objective x^4/4 - x^2/2 + y^2/2: stationary at (0,0) with curvature
    (-1, 1), minimized at (+-1, 0) with value -1/4. Components add linear
    biases b_i with zero mean (to roundoff), drawn from `seed`, centered, and
    rescaled so the largest bias norm equals `bias_scale`. Constants are
    certified on the ball of radius 2, where |3x^2 - 1| <= 11 and |6x| <= 12.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    if bias_scale < 0:
        raise ConfigurationError("bias_scale must be nonnegative")
    if bias_scale == 0.0 or n == 1:
        bias = np.zeros((n, 2))
    else:
        raw = RngStream(seed).generator.standard_normal((n, 2))
        raw -= raw.mean(axis=0)
        top = float(np.linalg.norm(raw, axis=1).max())
        bias = raw * (bias_scale / top) if top > 0 else np.zeros((n, 2))
    bias_mean = bias.mean(axis=0)
    lower_bounds = np.array(
        [_quartic_1d_min(b[0]) - 0.5 * b[1] ** 2 for b in bias]
    )
    f_floor = _quartic_1d_min(bias_mean[0]) - 0.5 * bias_mean[1] ** 2

    def _base_value(x):
        return x[0] ** 4 / 4.0 - x[0] ** 2 / 2.0 + x[1] ** 2 / 2.0

    def _base_gradient(x):
        return np.array([x[0] ** 3 - x[0], x[1]])

    def component_value(i, x):
        _check_index(i, n)
        x = np.asarray(x, dtype=np.float64)
        return float(_base_value(x) + bias[i - 1] @ x)

    def component_gradient(i, x):
        _check_index(i, n)
        x = np.asarray(x, dtype=np.float64)
        return _base_gradient(x) + bias[i - 1]

    def full_value(x):
        x = np.asarray(x, dtype=np.float64)
        return float(_base_value(x) + bias_mean @ x)

    def full_gradient(x):
        x = np.asarray(x, dtype=np.float64)
        return _base_gradient(x) + bias_mean

    def dense_hessian(x):
        x = np.asarray(x, dtype=np.float64)
        return np.array([[3.0 * x[0] ** 2 - 1.0, 0.0], [0.0, 1.0]])

    return FiniteSumProblem(
        n=n,
        d=2,
        component_value=component_value,
        component_gradient=component_gradient,
        full_gradient=full_gradient,
        full_value=full_value,
        component_lower_bounds=lower_bounds,
        trust_region_radius=2.0,
        lipschitz_gradient=11.0,
        lipschitz_hessian=12.0,
        dense_hessian=dense_hessian,
        f_lower=f_floor,
        default_x0=np.zeros(2),
        name="quartic_saddle",
    )


def make_logistic(features, labels, l2=0.0):
    """Binary logistic loss with an optional ridge term.

    f_i(x) = log(1 + exp(-y_i z_i.x)) + (l2/2)||x||^2 with labels in {-1,+1}.
    L = max_i ||z_i||^2 / 4 + l2 holds globally; every component is bounded
    below by zero, which is the exact infimum when l2 = 0.
    """
    Z = np.asarray(features, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    y = np.asarray(labels, dtype=np.float64).ravel()
    if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
        raise ConfigurationError("feature rows must match the label count")
    if Z.shape[0] == 0:
        raise ConfigurationError("at least one sample is required")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ConfigurationError("labels must be -1 or +1")
    if l2 < 0:
        raise ConfigurationError("l2 must be nonnegative")
    n, d = Z.shape
    yz = Z * y[:, None]
    lip = float(np.max(np.sum(Z * Z, axis=1)) / 4.0 + l2)

    def component_value(i, x):
        _check_index(i, n)
        x = np.asarray(x, dtype=np.float64)
        margin = yz[i - 1] @ x
        return float(np.logaddexp(0.0, -margin) + 0.5 * l2 * (x @ x))

    def component_gradient(i, x):
        _check_index(i, n)
        x = np.asarray(x, dtype=np.float64)
        row = yz[i - 1]
        return (-float(expit(-(row @ x)))) * row + l2 * x

    def full_value(x):
        x = np.asarray(x, dtype=np.float64)
        margins = yz @ x
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * l2 * (x @ x))

    def full_gradient(x):
        x = np.asarray(x, dtype=np.float64)
        margins = yz @ x
        return -(yz.T @ expit(-margins)) / n + l2 * x

    def dense_hessian(x):
        x = np.asarray(x, dtype=np.float64)
        s = expit(-(yz @ x))
        w = s * (1.0 - s)
        return (Z.T * w) @ Z / n + l2 * np.eye(d)

    return FiniteSumProblem(
        n=n,
        d=d,
        component_value=component_value,
        component_gradient=component_gradient,
        full_gradient=full_gradient,
        full_value=full_value,
        component_lower_bounds=np.zeros(n),
        trust_region_radius=math.inf,
        lipschitz_gradient=lip,
        dense_hessian=dense_hessian,
        default_x0=np.zeros(d),
        name="logistic",
    )


def make_tanh_mlp(layer_sizes, dataset, batch, seed=0):
    """Multilayer perceptron: tanh hidden layers, softmax cross-entropy head.

    Components are minibatches: f_i is the mean cross-entropy over minibatch
    i of `batch` consecutive samples (the last batch keeps the remainder), so
    n = ceil(samples / batch). Gradients are exact reverse-mode backprop
    implemented here; no Hessian or smoothness constants are certified, so
    runs on this problem need explicit step schedules.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigurationError("layer_sizes needs at least input and output sizes")
    if any(s < 1 for s in sizes):
        raise ConfigurationError("layer sizes must be positive")
    if dataset.samples == 0:
        raise ConfigurationError("dataset is empty")
    if sizes[0] != dataset.feature_dim:
        raise ConfigurationError(
            f"input size {sizes[0]} does not match feature dim {dataset.feature_dim}"
        )
    if sizes[-1] != dataset.classes:
        raise ConfigurationError(
            f"output size {sizes[-1]} does not match class count {dataset.classes}"
        )
    if batch < 1:
        raise ConfigurationError("batch must be positive")

    feats = dataset.features
    labels = dataset.labels
    samples = dataset.samples
    n = -(-samples // batch)
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    dim = sum(int(np.prod(s)) for s in shapes)

    def _unpack(x):
        params = []
        offset = 0
        for w_shape, b_shape in zip(shapes[0::2], shapes[1::2]):
            w_size = w_shape[0] * w_shape[1]
            W = x[offset : offset + w_size].reshape(w_shape)
            offset += w_size
            b = x[offset : offset + b_shape[0]]
            offset += b_shape[0]
            params.append((W, b))
        return params

    def _forward(params, a):
        acts = [a]
        for W, b in params[:-1]:
            acts.append(np.tanh(acts[-1] @ W + b))
        W, b = params[-1]
        return acts, acts[-1] @ W + b

    def _value_rows(x, rows):
        params = _unpack(np.asarray(x, dtype=np.float64))
        _, logits = _forward(params, feats[rows])
        lse = logsumexp(logits, axis=1)
        return lse - logits[np.arange(len(rows)), labels[rows]]

    def _grad_rows(x, rows, sample_weights):
        params = _unpack(np.asarray(x, dtype=np.float64))
        acts, logits = _forward(params, feats[rows])
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        delta = p
        delta[np.arange(len(rows)), labels[rows]] -= 1.0
        delta = delta * sample_weights[:, None]
        pieces = [None] * len(params)
        for layer in range(len(params) - 1, -1, -1):
            pieces[layer] = (acts[layer].T @ delta, delta.sum(axis=0))
            if layer > 0:
                delta = (delta @ params[layer][0].T) * (1.0 - acts[layer] ** 2)
        return np.concatenate([np.concatenate((gW.ravel(), gb)) for gW, gb in pieces])

    def _batch_rows(i):
        start = (i - 1) * batch
        return np.arange(start, min(start + batch, samples))

    # every sample weighted by 1/(n * batch size of its own minibatch), so a
    # single pass reproduces (1/n) sum_i grad f_i exactly even when the last
    # minibatch is short
    full_weights = np.empty(samples)
    for i in range(1, n + 1):
        rows = _batch_rows(i)
        full_weights[rows] = 1.0 / (n * len(rows))
    all_rows = np.arange(samples)

    def component_value(i, x):
        _check_index(i, n)
        return float(np.mean(_value_rows(x, _batch_rows(i))))

    def component_gradient(i, x):
        _check_index(i, n)
        rows = _batch_rows(i)
        w = np.full(len(rows), 1.0 / len(rows))
        return _grad_rows(x, rows, w)

    def full_value(x):
        return float(full_weights @ _value_rows(x, all_rows))

    def full_gradient(x):
        return _grad_rows(x, all_rows, full_weights)

    def accuracy(x):
        params = _unpack(np.asarray(x, dtype=np.float64))
        _, logits = _forward(params, feats)
        return float(np.mean(np.argmax(logits, axis=1) == labels))

    def _init(generator):
        pieces = []
        for w_shape, b_shape in zip(shapes[0::2], shapes[1::2]):
            lim = 1.0 / math.sqrt(w_shape[0])
            pieces.append(generator.uniform(-lim, lim, w_shape[0] * w_shape[1]))
            pieces.append(generator.uniform(-lim, lim, b_shape[0]))
        return np.concatenate(pieces)

    return FiniteSumProblem(
        n=n,
        d=dim,
        component_value=component_value,
        component_gradient=component_gradient,
        full_gradient=full_gradient,
        full_value=full_value,
        component_lower_bounds=np.zeros(n),
        trust_region_radius=math.inf,
        default_x0=_init(RngStream(seed).generator),
        sample_x0=_init,
        accuracy=accuracy,
        name="tanh_mlp",
    )


def compute_variance_constants(problem, x0):
    """Constants A, B, F of the variance bound, anchored at a start point.

    A = 2L; B averages the gaps between the objective's infimum and the
    component infima; F = 3*(f(x0) - f_lower) + 3B/A. Uses the problem's
    analytic infimum when it certifies one, else the smallest component
    lower bound. The bound value A*(f - f_lower) + B (and hence F) is
    invariant to that substitution; only the split between the two terms
    moves.
    """
    L = problem.lipschitz_gradient
    if L is None:
        raise UnsupportedProblemError(
            "problem does not certify a gradient Lipschitz constant"
        )
    A = 2.0 * L
    lows = np.asarray(problem.component_lower_bounds, dtype=np.float64)
    f_bar = problem.f_lower if problem.f_lower is not None else float(lows.min())
    B = A * float(np.mean(f_bar - lows))
    f0 = problem.full_value(np.asarray(x0, dtype=np.float64))
    F = 3.0 * (f0 - f_bar) + (3.0 * B / A if A > 0 else 0.0)
    return VarianceConstants(A=A, B=B, f_lower=f_bar, F=F)
