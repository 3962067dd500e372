"""Monte-Carlo verification of without-replacement concentration bounds.

Three layers: a Bernstein-style tail bound for norms of partial sums drawn
without replacement, permutation-sampled (and, for n <= 8, exhaustively
enumerated) empirical tails to compare against it, and certificates that the
per-prefix gradient deviation bound and the per-epoch error bound hold at
their stated failure probabilities. All binomial estimates carry Wilson
score intervals, which stay honest near zero where tails live.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .problems import compute_variance_constants
from .samplers import sample_permutations

WILSON_Z = 1.959963984540054  # two-sided 95%

_ENUMERATION_LIMIT = 8  # 8! = 40320 permutations keeps the exact path sub-second
_MC_CHUNK = 20000


def wilson_interval(successes, draws, z=WILSON_Z):
    """Wilson score interval for a binomial proportion: (center, halfwidth)."""
    if draws < 1:
        raise ConfigurationError("draws must be at least 1")
    if not 0 <= successes <= draws:
        raise ConfigurationError("successes must lie in [0, draws]")
    p_hat = successes / draws
    denom = 1.0 + z**2 / draws
    center = (p_hat + z**2 / (2.0 * draws)) / denom
    halfwidth = (
        z / denom * math.sqrt(p_hat * (1.0 - p_hat) / draws + z**2 / (4.0 * draws**2))
    )
    return center, halfwidth


def bernstein_bound(s, m, n, b, lam, d_tilde):
    """Tail bound 4*d_tilde*exp(-(s^2/2)/(lam*m/n + b*s/3)), clamped to [0,1].

    lam is the operator norm of the summed squared terms, b the per-term
    norm bound, d_tilde the intrinsic dimension (>= 1), m <= n the number of
    terms drawn without replacement.
    """
    if s <= 0:
        raise ConfigurationError("s must be positive")
    if not 1 <= m <= n:
        raise ConfigurationError("m must lie in 1..n")
    if d_tilde < 1:
        raise ConfigurationError("d_tilde must be at least 1")
    if b < 0 or lam < 0:
        raise ConfigurationError("b and lam must be nonnegative")
    denom = lam * m / n + b * s / 3.0
    if denom == 0.0:
        return 0.0
    return min(4.0 * d_tilde * math.exp(-(s**2 / 2.0) / denom), 1.0)


@dataclass(frozen=True)
class TailEstimate:
    """One threshold's empirical tail next to its theoretical bound."""

    threshold_s: float
    empirical_tail: float
    mc_draws: int
    bound_value: float
    wilson_halfwidth: float
    exact_tail: Optional[float] = None


def _check_centered(vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ConfigurationError("vectors must be a nonempty sequence of points")
    if float(np.abs(vectors.sum(axis=0)).max()) > 1e-10:
        raise ConfigurationError("vectors must sum to zero")
    return vectors


def _mc_prefix_norms(vectors, m, draws, rng):
    """Norms of m-prefix sums over `draws` sampled permutations."""
    n = vectors.shape[0]
    out = np.empty(draws)
    done = 0
    while done < draws:
        k = min(_MC_CHUNK, draws - done)
        perms = sample_permutations(rng, n, k) - 1
        sums = vectors[perms[:, :m]].sum(axis=1)
        out[done : done + k] = np.linalg.norm(sums, axis=1)
        done += k
    return out


def _exact_prefix_norms(vectors, m):
    """Norms of m-prefix sums over all n! permutations (n <= 8 only)."""
    n = vectors.shape[0]
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    sums = vectors[perms[:, :m]].sum(axis=1)
    return np.linalg.norm(sums, axis=1)


def empirical_partial_sum_tail(vectors, m, s, draws, rng):
    """Estimate P[||sum of m without-replacement draws|| >= s].

    The vectors must be centered (sum zero). The bound column uses
    b = sqrt(lam) with lam = sum of squared norms, and intrinsic dimension 2
    (the symmetric dilation of a vector family). Exact enumeration is added
    for n <= 8.
    """
    return partial_sum_tail_sweep(vectors, m, [s], draws, rng)[0]


def partial_sum_tail_sweep(vectors, m, s_values, draws, rng):
    """empirical_partial_sum_tail across thresholds, sharing one draw batch.

    Sharing the batch makes the sweep draws times faster but statistically
    couples neighboring thresholds; fine for bound-dominance checks.
    """
    vectors = _check_centered(vectors)
    n = vectors.shape[0]
    if not 1 <= m <= n:
        raise ConfigurationError("m must lie in 1..n")
    if draws < 1:
        raise ConfigurationError("draws must be at least 1")
    s_values = [float(s) for s in s_values]
    if any(s <= 0 for s in s_values):
        raise ConfigurationError("thresholds must be positive")
    lam = float(np.sum(vectors * vectors))
    b = math.sqrt(lam)
    mc_norms = _mc_prefix_norms(vectors, m, draws, rng)
    exact_norms = _exact_prefix_norms(vectors, m) if n <= _ENUMERATION_LIMIT else None
    estimates = []
    for s in s_values:
        hits = int(np.count_nonzero(mc_norms >= s))
        _, halfwidth = wilson_interval(hits, draws)
        exact = (
            float(np.count_nonzero(exact_norms >= s) / exact_norms.size)
            if exact_norms is not None
            else None
        )
        estimates.append(
            TailEstimate(
                threshold_s=s,
                empirical_tail=hits / draws,
                mc_draws=draws,
                bound_value=bernstein_bound(s, m, n, b, lam, 2.0),
                wilson_halfwidth=halfwidth,
                exact_tail=exact,
            )
        )
    return estimates


def gradient_error_certificate(problem, x, delta, draws, rng):
    """Violation frequency of the prefix deviation bound, per prefix length.

    The bound: for a uniform permutation, every prefix sum of the centered
    component-gradient deviations at x has squared norm at most
    4n(A(f(x) - f_lower) + B) log^2(8/delta), except with probability delta.
    Returns one TailEstimate per prefix i = 1..n whose empirical_tail is the
    violation frequency and whose bound_value is delta itself.
    """
    if not 0 < delta < 1:
        raise ConfigurationError("delta must lie in (0,1)")
    if draws < 1:
        raise ConfigurationError("draws must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    consts = compute_variance_constants(problem, x)
    full = problem.full_gradient(x)
    devs = np.stack(
        [problem.component_gradient(i, x) - full for i in range(1, problem.n + 1)]
    )
    n = problem.n
    f_gap = problem.full_value(x) - consts.f_lower
    rhs = 4.0 * n * (consts.A * f_gap + consts.B) * math.log(8.0 / delta) ** 2
    s = math.sqrt(max(rhs, 0.0))
    counts = np.zeros(n, dtype=np.int64)
    done = 0
    while done < draws:
        k = min(_MC_CHUNK, draws - done)
        perms = sample_permutations(rng, n, k) - 1
        prefixes = np.cumsum(devs[perms], axis=1)
        norms = np.linalg.norm(prefixes, axis=2)
        counts += np.count_nonzero(norms > s, axis=0)
        done += k
    exact_rates = None
    if n <= _ENUMERATION_LIMIT:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        norms = np.linalg.norm(np.cumsum(devs[perms], axis=1), axis=2)
        exact_rates = np.count_nonzero(norms > s, axis=0) / perms.shape[0]
    estimates = []
    for i in range(n):
        _, halfwidth = wilson_interval(int(counts[i]), draws)
        estimates.append(
            TailEstimate(
                threshold_s=s,
                empirical_tail=int(counts[i]) / draws,
                mc_draws=draws,
                bound_value=delta,
                wilson_halfwidth=halfwidth,
                exact_tail=float(exact_rates[i]) if exact_rates is not None else None,
            )
        )
    return estimates


def epoch_error_certificate(trace, schedule, problem):
    """Check the per-epoch error bound over a trace with e_t logged.

    For each record carrying e and grad_norm_start, tests
    ||e||^2 <= 2 a^2 n^2 L^2 ||grad f(x_t)||^2
              + 32 a^2 n L^2 (A(f(x_t) - f_lower) + B) log^2(8n/delta)
    with a the record's step. Records without e are skipped and counted.
    Requires 4*a*n*L <= 1 for every checked record.
    """
    if schedule.delta is None:
        raise ConfigurationError("schedule.delta is required")
    delta = schedule.delta
    L = problem.lipschitz_gradient
    if L is None:
        raise ConfigurationError("problem must certify a Lipschitz constant")
    n = problem.n
    trace = list(trace)
    if not trace:
        return {
            "epochs_checked": 0,
            "epochs_skipped": 0,
            "violations": 0,
            "violation_rate": 0.0,
            "delta": delta,
            "per_epoch": [],
        }
    consts = compute_variance_constants(problem, trace[0].x_start)
    log_sq = math.log(8.0 * n / delta) ** 2
    checked = 0
    skipped = 0
    violations = 0
    per_epoch = []
    for rec in trace:
        if rec.e is None or rec.grad_norm_start is None:
            skipped += 1
            continue
        if 4.0 * rec.step * n * L > 1.0 + 1e-12:
            raise ConfigurationError("step violates 4*step*n*L <= 1")
        a_sq = rec.step**2
        f_gap = rec.f_start - consts.f_lower
        rhs = (
            2.0 * a_sq * n**2 * L**2 * rec.grad_norm_start**2
            + 32.0 * a_sq * n * L**2 * (consts.A * f_gap + consts.B) * log_sq
        )
        lhs = float(rec.e @ rec.e)
        violated = lhs > rhs
        checked += 1
        violations += int(violated)
        per_epoch.append((rec.t, bool(violated)))
    return {
        "epochs_checked": checked,
        "epochs_skipped": skipped,
        "violations": violations,
        "violation_rate": violations / checked if checked else 0.0,
        "delta": delta,
        "per_epoch": per_epoch,
    }
