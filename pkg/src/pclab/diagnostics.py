"""Numerical verification tools and measurement protocols.

This module provides the independent oracles (finite differences, a
brute-force proximal minimizer, a damped regularized Newton step) used to
check the analytic gradients and the optimization-theoretic properties of
inference learning, together with the measurement protocols for error
propagation, proximal tracing, update-magnitude statistics, and compute
accounting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from pclab.linalg import apply_act, augment_ones, mse
from pclab.network import (
    ActivityState,
    GammaSchedule,
    Params,
    activity_grads,
    forward,
    refresh_errors,
)
from pclab.inference import (
    InferenceConfig,
    proximal_gammas,
    run_inference,
)
from pclab.optim import as_alpha_list, bp_grads, il_weight_grads, sgd_step


class DiagnosticError(RuntimeError):
    """A diagnostic procedure could not produce a result."""


class OracleConvergenceError(DiagnosticError):
    """The proximal minimizer did not reach the requested gradient norm."""


# ---------------------------------------------------------------------------
# finite differences

def finite_diff_grad(fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for i in range(point.size):
        step = np.zeros_like(point)
        step[i] = h
        grad[i] = (fn(point + step) - fn(point - step)) / (2.0 * h)
    return grad


def finite_diff_hessian(grad_fn, point: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Hessian from central differences of a gradient function, symmetrized."""
    point = np.asarray(point, dtype=np.float64)
    n = point.size
    H = np.zeros((n, n))
    for j in range(n):
        step = np.zeros_like(point)
        step[j] = h
        H[:, j] = (np.asarray(grad_fn(point + step)) - np.asarray(grad_fn(point - step))) / (
            2.0 * h
        )
    return 0.5 * (H + H.T)


def flatten_params(params: Params) -> np.ndarray:
    return np.concatenate([W.ravel() for W in params.weights])


def unflatten_params(template: Params, vec: np.ndarray) -> Params:
    weights = []
    offset = 0
    for W in template.weights:
        weights.append(np.asarray(vec[offset : offset + W.size]).reshape(W.shape).copy())
        offset += W.size
    return Params(template.spec, weights)


def flatten_grads(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


def unflatten_grads(template: Params, vec: np.ndarray) -> list[np.ndarray]:
    out = []
    offset = 0
    for W in template.weights:
        out.append(np.asarray(vec[offset : offset + W.size]).reshape(W.shape).copy())
        offset += W.size
    return out


# ---------------------------------------------------------------------------
# proximal objective and its brute-force minimizer

def prox_objective(theta_new: Params, theta_old: Params, x, y, beta: float) -> float:
    """Loss at theta_new plus the squared distance from theta_old.

    value = L(y, forward(theta_new, x)) + (1/2 beta) sum_l ||W_l^new - W_l^old||^2
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = forward(theta_new, x, apply_output=True)[-1]
    loss = mse(y, pred)
    reg = 0.0
    for Wn, Wo in zip(theta_new.weights, theta_old.weights):
        d = Wn - Wo
        reg += float(np.sum(d * d))
    return loss + reg / (2.0 * beta)


def implicit_sgd_oracle(
    params: Params,
    x,
    y,
    beta: float,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> Params:
    """Minimize the proximal objective by full-gradient descent.

    Runs backtracking (Armijo) gradient descent on
    L(theta) + ||theta - theta_old||^2 / (2 beta) until the objective's
    gradient norm drops below `tol`.  This is the brute-force reference for
    the implicit update; it is independent of the inference machinery.
    Batch size 1 only.  Raises OracleConvergenceError on failure.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] != 1:
        raise ValueError("the implicit-update oracle is defined for batch size 1")
    theta0 = flatten_params(params)
    theta = theta0.copy()

    def value(v: np.ndarray) -> float:
        return prox_objective(unflatten_params(params, v), params, x, y, beta)

    def grad(v: np.ndarray) -> np.ndarray:
        g = flatten_grads(bp_grads(unflatten_params(params, v), x, y))
        return g + (v - theta0) / beta

    step = beta
    current = value(theta)
    for _ in range(max_iter):
        g = grad(theta)
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return unflatten_params(params, theta)
        # backtracking (Armijo) line search with mild growth on acceptance
        t = step
        for _bt in range(60):
            candidate = theta - t * g
            cand_val = value(candidate)
            if cand_val <= current - 1e-4 * t * gnorm * gnorm:
                break
            t *= 0.5
        else:
            raise OracleConvergenceError(
                f"line search stalled at gradient norm {gnorm:.3e} (tol {tol:.1e})"
            )
        theta = candidate
        current = cand_val
        step = min(t * 1.5, 1e3)
    raise OracleConvergenceError(
        f"no convergence within {max_iter} iterations; gradient norm {gnorm:.3e} > {tol:.1e}"
    )


def newton_update(params: Params, x, y, beta: float, h: float = 1e-4) -> list[np.ndarray]:
    """Damped regularized Newton step -(I + beta H)^{-1} beta g.

    g is the exact loss gradient and H its Hessian obtained by central
    finite differences of `bp_grads`; the linear system is solved densely,
    so this is restricted to small parameter counts.  Batch size 1.
    Returns the step as one matrix per weight.
    """
    n_params = params.n_parameters()
    if n_params > 500:
        raise ValueError(f"dense Newton step limited to small nets; got {n_params} parameters")
    theta = flatten_params(params)
    g = flatten_grads(bp_grads(params, x, y))

    def grad_fn(v: np.ndarray) -> np.ndarray:
        return flatten_grads(bp_grads(unflatten_params(params, v), x, y))

    H = finite_diff_hessian(grad_fn, theta, h=h)
    A = np.eye(n_params) + beta * H
    try:
        delta = np.linalg.solve(A, -beta * g)
    except np.linalg.LinAlgError as exc:
        raise DiagnosticError(f"Newton system is singular: {exc}") from exc
    return unflatten_grads(params, delta)


# ---------------------------------------------------------------------------
# proximal trace during inference

@dataclass
class ProxTrace:
    """Proximal-objective value per inference iteration (t = 0 included)."""

    beta: float
    values: list[float]


def prox_trace_during_inference(
    params: Params,
    x,
    y,
    cfg: InferenceConfig,
    gammas,
    beta: float,
    step_fn=None,
    alphas=None,
) -> ProxTrace:
    """Measure the proximal objective of the tentative update at every iteration.

    At t = 0 and after each inference iteration, the weight update implied
    by the current state is computed, the proximal objective is evaluated
    at the tentatively updated parameters, and the update is discarded
    before inference continues.  `step_fn(params, grads) -> Params` applies
    the run's optimizer; by default a fixed-rate step with `alphas`.
    Parameters and the inference trajectory are left untouched.
    """
    if step_fn is None:
        if alphas is None:
            raise ValueError("need either step_fn or alphas")
        rates = as_alpha_list(alphas, params.n_weights)

        def step_fn(p, g):
            return sgd_step(p, g, rates)

    values: list[float] = []

    def hook(state: ActivityState, t: int) -> None:
        tentative = step_fn(params, il_weight_grads(state))
        values.append(prox_objective(tentative, params, x, y, beta))

    run_inference(params, x, y, cfg, gammas, on_iteration=hook)
    return ProxTrace(beta=beta, values=values)


# ---------------------------------------------------------------------------
# alignment of energy and proximal gradients over activities

@dataclass
class AlignmentReport:
    """Per-coordinate ratio of proximal to energy activity gradients."""

    layer: int
    ratios: np.ndarray
    spread: float
    proportionality: float
    conclusive: bool


def prox_energy_alignment(
    params: Params,
    state: ActivityState,
    alphas,
    beta: float,
    l: int,
    h: float = 1e-6,
) -> AlignmentReport:
    """Check that the proximal objective and the energy descend the same way.

    Numerically differentiates the proximal regularizer
    R(hhat) = sum_k ||alpha_k e_{k+1} [f(hhat_k), 1]^T||^2 / (2 beta)
    through the dependence of the weight updates on hhat_l, and compares
    against the analytic energy gradient under the proximal gamma schedule.
    With exact arithmetic the two are parallel with ratio 1/beta at every
    hidden layer.  Output errors are taken linear (the regime in which the
    schedule is derived).  Batch size 1.

    Coordinates with near-zero analytic gradient are excluded; if nothing
    usable remains the report is flagged inconclusive.
    """
    if state.batch_size != 1:
        raise ValueError("alignment check is defined for batch size 1")
    L = state.n_layers
    if not 1 <= l <= L - 1:
        raise ValueError(f"hidden layer index must be in 1..{L - 1}, got {l}")
    rates = as_alpha_list(alphas, params.n_weights)

    # work on a linear-output copy so stored errors match the analysis
    base = state.copy()
    base.clamp = "soft"
    refresh_errors(params, base)
    with warnings.catch_warnings():
        # the output-clamp weight plays no role at hidden layers
        warnings.simplefilter("ignore")
        schedule = proximal_gammas(params, base, rates, beta)
    analytic = activity_grads(params, base, schedule)[l].ravel()

    f = base.hidden_act

    def regularizer(v: np.ndarray) -> float:
        probe = base.copy()
        probe.hhat[l] = v.reshape(base.hhat[l].shape)
        refresh_errors(params, probe)
        total = 0.0
        for k in range(L):
            dw = rates[k] * np.outer(
                probe.err[k + 1][0], augment_ones(apply_act(f, probe.hhat[k]))[0]
            )
            total += float(np.sum(dw * dw))
        return total / (2.0 * beta)

    numeric = finite_diff_grad(regularizer, base.hhat[l].ravel().copy(), h=h)

    scale = float(np.max(np.abs(analytic))) if analytic.size else 0.0
    if scale <= 0.0:
        return AlignmentReport(l, np.array([]), np.inf, np.nan, conclusive=False)
    usable = np.abs(analytic) > 1e-9 * scale
    if int(np.sum(usable)) < 2:
        return AlignmentReport(l, np.array([]), np.inf, np.nan, conclusive=False)
    ratios = numeric[usable] / analytic[usable]
    mean_ratio = float(np.mean(ratios))
    if mean_ratio == 0.0:
        return AlignmentReport(l, ratios, np.inf, 0.0, conclusive=False)
    spread = float((np.max(ratios) - np.min(ratios)) / abs(mean_ratio))
    return AlignmentReport(l, ratios, spread, mean_ratio, conclusive=True)


# ---------------------------------------------------------------------------
# error propagation trace

@dataclass
class ErrorTrace:
    """Mean squared local error per layer (columns 1..L) per iteration (rows)."""

    schedule: str
    table: np.ndarray  # shape (T + 1, L); row t, column l-1

    def layer(self, l: int) -> np.ndarray:
        return self.table[:, l - 1]


def error_trace(params: Params, x, y, cfg: InferenceConfig, gammas=None) -> ErrorTrace:
    """Record mean(e_l^2) for every layer at every inference iteration.

    Row 0 reflects the initialized state (hidden errors exactly zero);
    row t the stored errors after iteration t.
    """
    if gammas is None:
        gammas = GammaSchedule.standard(params.n_weights)
    rows: list[list[float]] = []

    def hook(state: ActivityState, t: int) -> None:
        rows.append([float(np.mean(state.err[l] ** 2)) for l in range(1, state.n_layers + 1)])

    run_inference(params, x, y, cfg, gammas, on_iteration=hook)
    return ErrorTrace(schedule=cfg.schedule, table=np.array(rows))


# ---------------------------------------------------------------------------
# update-magnitude statistics and compute accounting

def update_magnitude_stats(updates, warmup: int = 0) -> np.ndarray:
    """Per-matrix mean absolute update over recorded iterations.

    `updates` is a sequence over iterations; each entry is a sequence with
    one update matrix (or a precomputed mean-|update| scalar) per weight
    matrix.  The first `warmup` iterations are skipped.
    """
    rows = []
    for entry in list(updates)[warmup:]:
        rows.append([float(np.mean(np.abs(np.asarray(m)))) for m in entry])
    if not rows:
        raise ValueError("no recorded updates after warm-up")
    return np.asarray(rows).mean(axis=0)


@dataclass(frozen=True)
class OpCount:
    """Matrix multiplies per training iteration for one algorithm."""

    algorithm: str
    L: int
    T: int
    matmuls: int


def matmul_count(algorithm: str, L: int, T: int | None = None) -> OpCount:
    """Closed-form matrix-multiply count per training iteration.

    bp: 3L - 1 (forward L, feedback L - 1, weight updates L).
    il/seqil: T(2L - 1) + L (per iteration L predictions and L - 1
    feedbacks, plus L weight-update products).  The accounting treats the
    initialization forward pass as seeding the first iteration's
    predictions, so it is not double-counted; the runtime counter in
    `pclab.training` reports the same regions.
    """
    if L < 2:
        raise ValueError("need at least two weight matrices")
    if algorithm == "bp":
        return OpCount("bp", L, 0, 3 * L - 1)
    if algorithm in ("il", "seqil"):
        if T is None or T < 1:
            raise ValueError("inference algorithms need T >= 1")
        return OpCount(algorithm, L, T, T * (2 * L - 1) + L)
    raise ValueError(f"unknown algorithm {algorithm!r}")
