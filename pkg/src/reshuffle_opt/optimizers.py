"""Shuffling-based optimization loops and their step-size calculators.

Three epoch-structured methods over a FiniteSumProblem: random reshuffling
(fresh uniform permutation per epoch), the same loop with a stopping
criterion on the averaged epoch gradient, and a perturbed variant that
escapes strict saddles by injecting a small random jump whenever the
criterion triggers. A with-replacement SGD baseline logs at epoch
granularity for comparability. The calculators resolve every step size,
epoch bound, and escape radius from the problem constants (n, L, A, B, F,
rho), iterating to a fixed point where a quantity appears inside its own
logarithm.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, NumericError, ParameterError
from .samplers import permutation_digest, sample_ball, sample_permutation, sample_with_replacement


@dataclass(frozen=True)
class EpochRecord:
    """One epoch of any loop: endpoints, averaged gradient, diagnostics.

    g is the average of the n stochastic gradients actually applied during
    the epoch, so x_end = x_start - step*n*g exactly (up to roundoff). e is
    the deviation g - full_gradient(x_start), filled only when the full
    gradient was evaluated this epoch; grad_norm_start likewise.
    """

    t: int
    x_start: np.ndarray
    x_end: np.ndarray
    g: np.ndarray
    f_start: float
    permutation_digest: str
    step: float
    e: Optional[np.ndarray] = None
    grad_norm_start: Optional[float] = None
    mode: str = "normal"


@dataclass(frozen=True)
class ScheduleParams:
    """Run parameters; unset fields are simply absent for a given method.

    alpha is the plain/stopping-criterion step, beta the escape step, T a
    hard epoch budget, T_sc the stopping-criterion epoch bound, (r_p, r_d,
    T_e, R) the escape geometry, and (C1, C2, G) the derived constants
    behind the complexity-optimal step.
    """

    epsilon: Optional[float] = None
    delta: Optional[float] = None
    eta: Optional[float] = None
    T: Optional[int] = None
    alpha: Optional[float] = None
    T_sc: Optional[int] = None
    beta: Optional[float] = None
    r_p: Optional[float] = None
    r_d: Optional[float] = None
    T_e: Optional[int] = None
    R: Optional[float] = None
    C1: Optional[float] = None
    C2: Optional[float] = None
    G: Optional[float] = None


@dataclass
class PrrState:
    """Escape automaton state: normal (t_e = -1) or escaping (1..T_e)."""

    mode: str = "normal"
    x_s: Optional[np.ndarray] = None
    t_e: int = -1
    perturbation: Optional[np.ndarray] = None


def _epoch_pass(problem, x, step, permutation):
    """Run one inner loop; returns (x_end, g) with g the applied-gradient mean."""
    grad_sum = np.zeros(problem.d)
    # overflow is detected from the result, not from warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for i in permutation:
            g_i = problem.component_gradient(int(i), x)
            grad_sum = grad_sum + g_i
            x = x - step * g_i
    return x, grad_sum / problem.n


def _localize_divergence(problem, x, step, permutation, t):
    """Replay a bad epoch with per-step checks to pin the first blow-up."""
    with np.errstate(over="ignore", invalid="ignore"):
        for pos, i in enumerate(permutation, start=1):
            g_i = problem.component_gradient(int(i), x)
            if not np.all(np.isfinite(g_i)):
                raise DivergenceError(
                    f"non-finite gradient at epoch {t}, inner step {pos}",
                    epoch=t,
                    step_index=pos,
                )
            x = x - step * g_i
            if not np.all(np.isfinite(x)):
                raise DivergenceError(
                    f"non-finite iterate at epoch {t}, inner step {pos}",
                    epoch=t,
                    step_index=pos,
                )
    raise DivergenceError(f"non-finite value at epoch {t}", epoch=t, step_index=None)


def _run_epoch(problem, t, x, step, permutation, with_error, mode="normal"):
    with np.errstate(over="ignore", invalid="ignore"):
        f_start = problem.full_value(x)
    x_end, g = _epoch_pass(problem, x, step, permutation)
    if not (np.all(np.isfinite(x_end)) and np.all(np.isfinite(g))):
        _localize_divergence(problem, x, step, permutation, t)
    e = None
    grad_norm = None
    if with_error:
        full_grad = problem.full_gradient(x)
        e = g - full_grad
        grad_norm = float(np.linalg.norm(full_grad))
    return EpochRecord(
        t=t,
        x_start=x,
        x_end=x_end,
        g=g,
        f_start=f_start,
        permutation_digest=permutation_digest(permutation),
        step=step,
        e=e,
        grad_norm_start=grad_norm,
        mode=mode,
    )


def _check_x0(problem, x0):
    x = np.array(x0, dtype=np.float64).ravel()
    if x.shape != (problem.d,):
        raise ConfigurationError(f"x0 must have dimension {problem.d}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("x0 must be finite")
    return x


def rr_epoch(problem, x, step, permutation, t=0, with_error=True):
    """One validated reshuffling epoch with an explicit permutation.

    The permutation must be a bijection on {1..n}; the step must be
    positive. Returns the full EpochRecord including e.
    """
    if step <= 0:
        raise ConfigurationError("step must be positive")
    perm = np.asarray(permutation, dtype=np.int64).ravel()
    if perm.shape != (problem.n,) or not np.array_equal(
        np.sort(perm), np.arange(1, problem.n + 1)
    ):
        raise ConfigurationError("permutation must be a bijection on 1..n")
    return _run_epoch(problem, t, _check_x0(problem, x), step, perm, with_error)


def run_rr(
    problem,
    x0,
    schedule,
    rng,
    *,
    step_fn=None,
    full_grad_every=1,
    record_trace=True,
    on_epoch=None,
):
    """Random reshuffling for schedule.T epochs with constant step alpha.

    A per-epoch step override (e.g. from decayed_schedule) replaces alpha.
    full_grad_every gates the optional full-gradient diagnostics (0 turns
    them off); on_epoch receives each EpochRecord as it is produced, and
    record_trace=False drops the returned list for long memory-bound runs.
    """
    if schedule.T is None:
        raise ConfigurationError("schedule.T is required")
    if step_fn is None:
        if schedule.alpha is None or schedule.alpha <= 0:
            raise ConfigurationError("schedule.alpha must be positive")
    x = _check_x0(problem, x0)
    trace = []
    for t in range(schedule.T):
        step = schedule.alpha if step_fn is None else step_fn(t)
        perm = sample_permutation(rng, problem.n)
        with_error = full_grad_every > 0 and t % full_grad_every == 0
        record = _run_epoch(problem, t, x, step, perm, with_error)
        if record_trace:
            trace.append(record)
        if on_epoch is not None:
            on_epoch(record)
        x = record.x_end
    return trace


def run_sgd(
    problem,
    x0,
    steps,
    schedule,
    rng,
    *,
    step_fn=None,
    full_grad_every=1,
    record_trace=True,
    on_epoch=None,
):
    """With-replacement SGD baseline, logged in blocks of n steps.

    Each block of n i.i.d. component draws is recorded as one EpochRecord
    (g is the block mean, the digest hashes the drawn index sequence), so
    traces line up epoch-for-epoch with the reshuffling loops. steps must
    be a multiple of n; step_fn, if given, is called per block.
    """
    if steps < 0 or steps % problem.n != 0:
        raise ConfigurationError("steps must be a nonnegative multiple of n")
    if step_fn is None:
        if schedule.alpha is None or schedule.alpha < 0:
            raise ConfigurationError("schedule.alpha must be nonnegative")
    x = _check_x0(problem, x0)
    trace = []
    for t in range(steps // problem.n):
        step = schedule.alpha if step_fn is None else step_fn(t)
        idx = sample_with_replacement(rng, problem.n, problem.n)
        with_error = full_grad_every > 0 and t % full_grad_every == 0
        record = _run_epoch(problem, t, x, step, idx, with_error, mode="sgd")
        if record_trace:
            trace.append(record)
        if on_epoch is not None:
            on_epoch(record)
        x = record.x_end
    return trace


def run_rr_sc(
    problem,
    x0,
    schedule,
    rng,
    *,
    full_grad_every=1,
    record_trace=True,
    on_epoch=None,
):
    """Reshuffling with the averaged-gradient stopping criterion.

    After each epoch, stops once ||g_t|| <= eta*epsilon and returns
    (trace, tau, x_tau) where x_tau is that epoch's starting iterate (the
    epoch's end point stays available as trace[-1].x_end). Runs at most
    min(T_sc, T) epochs over the set fields; if the criterion never fires,
    tau is None and x_tau is the final iterate.
    """
    if schedule.alpha is None or schedule.alpha <= 0:
        raise ConfigurationError("schedule.alpha must be positive")
    if schedule.eta is None or schedule.epsilon is None:
        raise ConfigurationError("schedule.eta and schedule.epsilon are required")
    caps = [v for v in (schedule.T_sc, schedule.T) if v is not None]
    if not caps:
        raise ConfigurationError("schedule.T_sc or schedule.T is required")
    cap = min(caps)
    threshold = schedule.eta * schedule.epsilon
    x = _check_x0(problem, x0)
    trace = []
    for t in range(cap):
        perm = sample_permutation(rng, problem.n)
        with_error = full_grad_every > 0 and t % full_grad_every == 0
        record = _run_epoch(problem, t, x, schedule.alpha, perm, with_error)
        if record_trace:
            trace.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if float(np.linalg.norm(record.g)) <= threshold:
            return trace, t, record.x_start
        x = record.x_end
    return trace, None, x


def default_prr_epoch_cap(n, epsilon):
    """Hard epoch budget: 10x the gradient-evaluation guarantee, per epoch."""
    evals = 10.0 * max(math.sqrt(n) / epsilon**3, n / epsilon**2.5)
    return max(1, math.ceil(evals / n))


def run_prr(
    problem,
    x0,
    schedule,
    rng,
    *,
    epoch_cap=None,
    full_grad_every=1,
    record_trace=True,
    on_epoch=None,
):
    """Perturbed reshuffling: escape automaton around the stopping criterion.

    Normal mode runs with step alpha. When ||g_t|| <= eta*epsilon fires in
    normal mode, the epoch's starting iterate is anchored as x_s, the step
    switches to beta, and the next iterate is x_s plus a uniform draw from
    the r_p-ball. While escaping, leaving the r_d-ball around x_s resets to
    normal mode; surviving T_e consecutive escaping epochs inside the ball
    returns x_s as the second-order stationary candidate. Returns (trace,
    x_returned, event_log); event_log carries one dict per transition
    (perturbation / escape / return / cap-exhausted) with epoch stamps.
    Trace rows always hold the inner-loop endpoint, so the telescoping
    identity is preserved; a perturbed point appears as the next row's
    x_start.
    """
    for name in ("alpha", "beta", "r_p", "r_d", "T_e", "eta", "epsilon"):
        if getattr(schedule, name) is None:
            raise ConfigurationError(f"schedule.{name} is required")
    if schedule.alpha <= 0 or schedule.beta <= 0:
        raise ConfigurationError("alpha and beta must be positive")
    if epoch_cap is None:
        epoch_cap = schedule.T
    if epoch_cap is None:
        epoch_cap = default_prr_epoch_cap(problem.n, schedule.epsilon)
    threshold = schedule.eta * schedule.epsilon
    x = _check_x0(problem, x0)
    state = PrrState()
    step = schedule.alpha
    trace = []
    events = []
    x_returned = None
    for t in range(epoch_cap):
        with_error = full_grad_every > 0 and t % full_grad_every == 0
        perm = sample_permutation(rng, problem.n)
        record = _run_epoch(problem, t, x, step, perm, with_error, mode=state.mode)
        if record_trace:
            trace.append(record)
        if on_epoch is not None:
            on_epoch(record)
        x_next = record.x_end
        if float(np.linalg.norm(record.g)) <= threshold and state.t_e == -1:
            p = sample_ball(rng, problem.d, schedule.r_p)
            x_next = record.x_start + p
            state.mode = "escaping"
            state.x_s = record.x_start
            state.t_e = 1
            state.perturbation = p
            step = schedule.beta
            events.append(
                {
                    "event": "perturbation",
                    "epoch": t,
                    "g_norm": float(np.linalg.norm(record.g)),
                    "perturbation_norm": float(np.linalg.norm(p)),
                }
            )
        elif 1 <= state.t_e <= schedule.T_e:
            displacement = float(np.linalg.norm(x_next - state.x_s))
            if displacement >= schedule.r_d:
                events.append(
                    {"event": "escape", "epoch": t, "displacement": displacement}
                )
                state.mode = "normal"
                state.t_e = -1
                state.perturbation = None
                step = schedule.alpha
            else:
                state.t_e += 1
        if state.t_e == schedule.T_e + 1:
            events.append({"event": "return", "epoch": t})
            x_returned = state.x_s
            break
        x = x_next
    else:
        events.append({"event": "cap-exhausted", "epoch": epoch_cap})
        x_returned = x
    return trace, x_returned, events


def compute_complexity_constants(n, L, A, F, T, delta, B=0.0):
    """Constants (C1, C2, G) behind the complexity-optimal step size."""
    log_term = math.log(8.0 * n * T / delta)
    C1 = 32.0 * L**2 * A * log_term**2
    C2 = 32.0 * L**2 * B * log_term**2
    return C1, C2, C1 * F + C2


def compute_alpha_complexity(n, L, A, T, delta):
    """Step size min{1/(4nL), (C1 n^2 T)^(-1/3)} for a fixed epoch budget."""
    C1 = 32.0 * L**2 * A * math.log(8.0 * n * T / delta) ** 2
    return min(1.0 / (4.0 * n * L), (C1 * n**2 * T) ** (-1.0 / 3.0))


def compute_alpha_sc(n, L, A, F, eta, epsilon, T_sc, delta):
    """Step size for the stopping-criterion loop.

    min{1/(4nL), eta*epsilon / (8 sqrt(nAF) L log(8 n T_sc / delta))}. The
    degenerate F = 0 (start point already optimal with zero variance floor)
    collapses to the first branch.
    """
    if F < 0:
        raise ParameterError("F must be nonnegative")
    first = 1.0 / (4.0 * n * L)
    if F == 0.0:
        return first
    second = (
        eta
        * epsilon
        / (8.0 * math.sqrt(n * A * F) * L * math.log(8.0 * n * T_sc / delta))
    )
    return min(first, second)


def _t_sc_required(n, L, A, F, eta, epsilon, delta, T):
    """Right-hand side of the implicit bound on n*T_sc, at a candidate T."""
    base = 6.0 * F / (eta * epsilon) ** 2
    log_term = math.log(8.0 * n * T / delta)
    return base * max(
        n * L, 2.0 * math.sqrt(n * A * F) * L * log_term / (eta * epsilon)
    )


def solve_T_sc(n, L, A, F, eta, epsilon, delta):
    """Smallest integer epoch bound satisfying the implicit self-referencing
    inequality n*T >= 6F(eta*eps)^-2 max{nL, 2 sqrt(nAF) L log(8nT/delta)/(eta*eps)}.

    Ascending fixed-point iteration from the log-free branch value, which
    lower-bounds every feasible T; the right side is nondecreasing in T, so
    the first feasible iterate is the minimum.
    """
    if F < 0:
        raise ParameterError("F must be nonnegative")
    if F == 0.0:
        return 1
    T = max(1, math.ceil(6.0 * F * L / (eta * epsilon) ** 2))
    iterates = [T]
    for _ in range(100):
        required = _t_sc_required(n, L, A, F, eta, epsilon, delta, T)
        if n * T >= required:
            return T
        T = math.ceil(required / n)
        iterates.append(T)
    raise NumericError("epoch-bound fixed point did not converge", iterates=iterates)


def t_sc_certificate(n, L, A, F, eta, epsilon, delta, T_sc):
    """Substitution check of the implicit epoch bound at a candidate value.

    Reports both sides at T_sc and at T_sc - 1; a minimal solution is
    feasible at T_sc and infeasible one step below.
    """
    rhs = _t_sc_required(n, L, A, F, eta, epsilon, delta, T_sc)
    cert = {
        "T_sc": T_sc,
        "lhs": n * T_sc,
        "rhs": rhs,
        "feasible": n * T_sc >= rhs,
    }
    if T_sc > 1:
        rhs_prev = _t_sc_required(n, L, A, F, eta, epsilon, delta, T_sc - 1)
        cert["lhs_prev"] = n * (T_sc - 1)
        cert["rhs_prev"] = rhs_prev
        cert["prev_feasible"] = n * (T_sc - 1) >= rhs_prev
    return cert


def _prr_radius_ratio(R, L, rho, epsilon):
    # r_d / r_p with both radii expanded; the max mirrors the min in r_p
    return max(8.0 * R**4, 2.0 * math.sqrt(L) * R / (rho * epsilon) ** 0.25)


def _prr_beta_branches(R, n, L, A, F, rho, epsilon, log_term):
    sr = math.sqrt(rho * epsilon)
    return (
        1.0 / (4.0 * n * L),
        sr / (R**2 * L**2 * n),
        (rho * epsilon) ** 0.25 / (R * L * math.sqrt(A * n) * log_term),
        math.sqrt(epsilon)
        / (8.0 * math.sqrt(2.0) * R**2 * math.sqrt(rho) * math.sqrt(A * F * n) * log_term),
        1.0 / (4.0 * R**2 * math.sqrt(rho) * n * math.sqrt(epsilon)),
        epsilon / (2.0 * R**4 * L * math.sqrt(A * F * n) * log_term),
    )


def compute_prr_params(n, L, A, F, rho, epsilon, delta, d, B=0.0):
    """Escape-phase parameters (R, beta, r_p, r_d, T_e) plus eta = 1/2.

    R must dominate 32, a term in the start-point gap F - B/A, and
    2*log(4 sqrt(d)/(sqrt(pi) delta) * r_d/r_p); since r_d/r_p depends on R,
    R is resolved by fixed point (contractive: the log flattens the R^4
    growth). beta is the minimum of six branches, three of which contain
    log(8R/(delta sqrt(rho*eps) beta)); the same fixed-point treatment
    applies, seeded at the log-free branches. The caller still needs the
    normal-mode alpha from compute_alpha_sc.
    """
    gap = F - (B / A if A > 0 else 0.0)
    if gap <= 0:
        raise ParameterError(
            "start-point constant equals its variance floor; perturb x0"
        )
    base_terms = (32.0, (3.0 * epsilon**1.5 / (4.0 * math.sqrt(rho) * gap)) ** (1.0 / 6.0))
    R = max(base_terms)
    iterates = [R]
    converged = False
    for _ in range(100):
        ratio = _prr_radius_ratio(R, L, rho, epsilon)
        log_arg = 4.0 * math.sqrt(d) / (math.sqrt(math.pi) * delta) * ratio
        R_next = max(*base_terms, 2.0 * math.log(log_arg))
        iterates.append(R_next)
        if abs(R_next - R) <= 1e-12 * max(1.0, R):
            R = R_next
            converged = True
            break
        R = R_next
    if not converged:
        raise NumericError("R fixed point did not converge", iterates=iterates)

    sr = math.sqrt(rho * epsilon)
    r_d = math.sqrt(epsilon) / (math.sqrt(rho) * R**2)
    r_p = min(
        math.sqrt(epsilon) / (8.0 * math.sqrt(rho) * R**6),
        epsilon**0.75 / (2.0 * rho**0.25 * R**3 * math.sqrt(L)),
    )

    # seed at the log-free branches; the log-bearing ones need beta itself
    free = _prr_beta_branches(R, n, L, A, F, rho, epsilon, 1.0)
    beta = min(free[0], free[1], free[4])
    iterates = [beta]
    converged = False
    for _ in range(100):
        log_term = math.log(8.0 * R / (delta * sr * beta))
        if log_term <= 0:
            raise ParameterError("escape step too large for its own log term")
        beta_next = min(_prr_beta_branches(R, n, L, A, F, rho, epsilon, log_term))
        iterates.append(beta_next)
        if abs(beta_next - beta) <= 1e-12 * beta:
            beta = beta_next
            converged = True
            break
        beta = beta_next
    if not converged:
        raise NumericError("beta fixed point did not converge", iterates=iterates)

    T_e = math.ceil(R / (sr * n * beta))
    return ScheduleParams(
        epsilon=epsilon,
        delta=delta,
        eta=0.5,
        beta=beta,
        r_p=r_p,
        r_d=r_d,
        T_e=T_e,
        R=R,
    )


def compute_prr_certificate(params, n, L, A, F, rho, epsilon, delta, d, B=0.0):
    """Substitution check of returned escape parameters against every branch."""
    R = params.R
    beta = params.beta
    sr = math.sqrt(rho * epsilon)
    log_term = math.log(8.0 * R / (delta * sr * beta))
    branches = _prr_beta_branches(R, n, L, A, F, rho, epsilon, log_term)
    gap = F - (B / A if A > 0 else 0.0)
    ratio = _prr_radius_ratio(R, L, rho, epsilon)
    r_terms = (
        32.0,
        (3.0 * epsilon**1.5 / (4.0 * math.sqrt(rho) * gap)) ** (1.0 / 6.0),
        2.0 * math.log(4.0 * math.sqrt(d) / (math.sqrt(math.pi) * delta) * ratio),
    )
    return {
        "R": R,
        "R_terms": r_terms,
        "R_feasible": all(R >= term - 1e-12 * max(1.0, term) for term in r_terms),
        "beta": beta,
        "beta_branches": branches,
        "beta_feasible": all(beta <= b * (1.0 + 1e-12) for b in branches),
        "beta_tight": abs(beta - min(branches)) <= 1e-12 * beta,
        "four_beta_n_L": 4.0 * beta * n * L,
        "r_d": params.r_d,
        "r_p": params.r_p,
        "T_e": params.T_e,
        "T_e_exact": R / (sr * n * beta),
    }


def grad_mean_square_bound(n, L, A, F, T, delta):
    """High-probability bound on the mean squared gradient norm over T epochs
    under the complexity-optimal step."""
    log_term = math.log(8.0 * n * T / delta)
    return max(
        45.0 * L * F / T,
        35.0 * L ** (2.0 / 3.0) * A ** (1.0 / 3.0) * F * log_term ** (2.0 / 3.0)
        / (n ** (1.0 / 3.0) * T ** (2.0 / 3.0)),
    )


def decayed_schedule(initial, factor):
    """Per-epoch geometric decay: step(t) = initial * factor**t."""
    if initial <= 0:
        raise ConfigurationError("initial step must be positive")
    if not 0 < factor <= 1:
        raise ConfigurationError("factor must be in (0, 1]")

    def step(t):
        return initial * factor**t

    return step
