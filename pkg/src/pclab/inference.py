"""The inference phase: output clamping and activity-update schedules.

Two schedules are provided.  Simultaneous inference updates every hidden
layer from errors stored at the start of the iteration, so error needs one
iteration per layer to travel down the network.  Sequential inference sweeps
top-down, recomputing the errors a layer reads immediately before updating
it, which propagates error to every layer within a single sweep.

Matmul accounting: one inference iteration of either schedule performs
2L - 1 products (L predictions, L - 1 feedbacks).  The initialization
forward pass seeds the first iteration's predictions and errors and is
reported separately by the training step; see `pclab.diagnostics.matmul_count`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from pclab.linalg import ShapeError, affine, apply_act, as_batch, augment_ones
from pclab.network import (
    ActivityState,
    GammaSchedule,
    Params,
    apply_output_nl,
    forward,
    layer_activity_grad,
    refresh_errors,
)

SCHEDULES = ("simultaneous", "sequential")


@dataclass
class InferenceConfig:
    """Iteration count, activity step size, schedule, and clamp mode."""

    T: int = 15
    epsilon: float = 0.1
    schedule: str = "simultaneous"
    clamp: str = "full"

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("iteration count T must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("activity step size epsilon must be > 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.clamp not in ("full", "soft"):
            raise ValueError(f"unknown clamp mode {self.clamp!r}")


def clamp_output_full(state: ActivityState, y) -> ActivityState:
    """Pin the output activities to the target; they stay fixed thereafter."""
    y = as_batch(y)
    L = state.n_layers
    if y.shape != state.hhat[L].shape:
        raise ShapeError(f"target shape {y.shape} != output shape {state.hhat[L].shape}")
    state.hhat[L] = y.copy()
    state.target = y.copy()
    state.clamp = "full"
    if state.pred[L] is not None:
        state.set_err(L, state.hhat[L] - apply_output_nl(state.output_nl, state.pred[L]))
    return state


def clamp_output_soft(state: ActivityState, gamma_l: float) -> ActivityState:
    """Set the output to the stationary mix of target and current prediction.

    hhat_L = y / (1 + gamma_L) + gamma_L p_L / (1 + gamma_L), using the
    stored linear prediction.  Afterwards gamma_L e_L + (hhat_L - y) = 0, so
    the output-layer energy gradient vanishes.  gamma_L = 0 recovers the
    full clamp's value; very large gamma_L leaves the prediction in place.
    """
    if gamma_l < 0:
        warnings.warn("soft clamp weight is negative", stacklevel=2)
    L = state.n_layers
    p = state.pred[L]
    if p is None:
        raise ValueError("no stored output prediction; refresh or initialize first")
    state.hhat[L] = (state.target + gamma_l * p) / (1.0 + gamma_l)
    state.clamp = "soft"
    state.clamp_gamma = float(gamma_l)
    state.set_err(L, state.hhat[L] - p)
    return state


def init_state(
    params: Params,
    x,
    y,
    clamp: str = "full",
    clamp_gamma: float = 1.0,
) -> ActivityState:
    """Initialize activities to feed-forward values and clamp the output.

    hhat_0 = x, hhat_{l+1} = W_l [f(hhat_l), 1] with a linear output, then
    the output layer is clamped.  Hidden errors start exactly zero.
    """
    h = forward(params, x, apply_output=False)
    state = ActivityState(
        h,
        as_batch(y),
        clamp=clamp,
        clamp_gamma=clamp_gamma,
        hidden_act=params.spec.hidden_act,
        output_nl=params.spec.output_nl,
    )
    L = state.n_layers
    for l in range(1, L + 1):
        state.pred[l] = h[l].copy()
    for l in range(1, L):
        state.set_err(l, np.zeros_like(h[l]))
    if clamp == "full":
        clamp_output_full(state, y)
    else:
        clamp_output_soft(state, clamp_gamma)
    return state


def activity_step(
    params: Params,
    state: ActivityState,
    l: int,
    epsilon: float,
    gammas: GammaSchedule,
) -> ActivityState:
    """One gradient update of hidden layer l using the stored errors.

    hhat_l <- hhat_l + epsilon (gamma_{l+1} f'(hhat_l) * (W_l^T e_{l+1})
                                - gamma_l e_l
                                - gamma_decay_l f'(hhat_l) * f(hhat_l))
    """
    g = layer_activity_grad(params, state, l, gammas)
    state.hhat[l] = state.hhat[l] - epsilon * g
    return state


def proximal_gammas(
    params: Params, state: ActivityState, alphas, beta: float
) -> GammaSchedule:
    """Energy weights under which inference descent tracks the proximal objective.

    With per-matrix step sizes alpha_l and global rate beta, and writing
    ft_l = [f(hhat_l), 1] for the bias-augmented activation (weight updates
    are outer products with ft), the schedule is

        gamma_l       = alpha_{l-1}^2 ||ft_{l-1}||^2          l = 1..L
        gamma_decay_l = alpha_l^2 ||e_{l+1}||^2               l = 1..L-1
        clamp_gamma   = alpha_{L-1} (1/beta + ||ft_{L-1}||^2) - 1

    gamma[L] keeps the same form as the hidden entries (it weights the
    feedback into layer L-1); the separate clamp_gamma drives the soft
    output clamp, where the global rate enters.  Requires batch size 1 and
    current errors; recompute once per inference iteration.
    """
    if state.batch_size != 1:
        raise ValueError("proximal schedule is defined for batch size 1")
    L = state.n_layers
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim == 0:
        alphas = np.full(L, float(alphas))
    if len(alphas) != L:
        raise ShapeError(f"need {L} step sizes, got {len(alphas)}")
    f = state.hidden_act
    sq_aug = np.empty(L)  # ||ft_l||^2 for l = 0..L-1
    for l in range(L):
        ft = augment_ones(apply_act(f, state.hhat[l]))
        sq_aug[l] = float(np.sum(ft * ft))
    gamma = np.zeros(L + 1)
    decay = np.zeros(L + 1)
    for l in range(1, L + 1):
        gamma[l] = alphas[l - 1] ** 2 * sq_aug[l - 1]
    for l in range(1, L):
        if state.err[l + 1] is None:
            raise ValueError("errors not refreshed; call refresh_errors first")
        decay[l] = alphas[l] ** 2 * float(np.sum(state.err[l + 1] ** 2))
    clamp_gamma = alphas[L - 1] * (1.0 / beta + sq_aug[L - 1]) - 1.0
    if clamp_gamma < 0:
        # static message so repeated schedule recomputation warns once
        warnings.warn(
            "proximal output clamp weight is negative; the soft clamp remains defined",
            stacklevel=2,
        )
    return GammaSchedule("theorem1", gamma, decay, clamp_gamma=clamp_gamma)


def proximal_gamma_fn(params: Params, alphas, beta: float):
    """Schedule provider that recomputes the proximal weights each iteration."""

    def provider(state: ActivityState) -> GammaSchedule:
        return proximal_gammas(params, state, alphas, beta)

    return provider


def _resolve_gammas(gammas, state: ActivityState) -> GammaSchedule:
    return gammas(state) if callable(gammas) else gammas


def infer_simultaneous(
    params: Params,
    state: ActivityState,
    cfg: InferenceConfig,
    gammas,
    on_iteration=None,
    event_log: list | None = None,
) -> ActivityState:
    """Run T simultaneous inference iterations.

    Each iteration updates every hidden layer from the errors stored at the
    iteration's start, then refreshes all predictions and errors (and, under
    a soft clamp, re-clamps the output against the fresh prediction).  On
    return the stored errors reflect the final activities.

    `gammas` may be a GammaSchedule or a callable(state) -> GammaSchedule
    re-evaluated each iteration.  `on_iteration(state, t)` is called at
    t = 0 (after initialization) and after each iteration; `event_log`, if
    given, collects ("read", t, l, stamp) / ("write", t, l, stamp) tuples
    for the error buffers each update consumed and each refresh produced.
    """
    L = state.n_layers
    if on_iteration is not None:
        on_iteration(state, 0)
    for t in range(1, cfg.T + 1):
        gam = _resolve_gammas(gammas, state)
        for l in range(1, L):
            if event_log is not None:
                event_log.append(("read", t, l, state.err_stamp[l]))
                event_log.append(("read", t, l + 1, state.err_stamp[l + 1]))
            activity_step(params, state, l, cfg.epsilon, gam)
        refresh_errors(params, state)
        if state.clamp == "soft":
            clamp_output_soft(state, gam.clamp_gamma)
        if event_log is not None:
            for l in range(1, L + 1):
                event_log.append(("write", t, l, state.err_stamp[l]))
        if on_iteration is not None:
            on_iteration(state, t)
    return state


def infer_sequential(
    params: Params,
    state: ActivityState,
    cfg: InferenceConfig,
    gammas,
    on_iteration=None,
    event_log: list | None = None,
) -> ActivityState:
    """Run T sequential inference sweeps.

    Each sweep visits l = L-1 down to 1.  The errors a layer reads are
    recomputed within the sweep from the current activities: e_{l+1} was
    rewritten right after hhat_{l+1} moved, and e_l is computed against a
    fresh prediction immediately before the update (and rewritten after it,
    which costs no product since the prediction is unchanged).  A single
    sweep therefore propagates nonzero error to every hidden layer.
    """
    L = state.n_layers
    W = params.weights
    f = state.hidden_act
    if on_iteration is not None:
        on_iteration(state, 0)
    for t in range(1, cfg.T + 1):
        gam = _resolve_gammas(gammas, state)
        state.pred[L] = affine(W[L - 1], apply_act(f, state.hhat[L - 1]))
        if state.clamp == "soft":
            clamp_output_soft(state, gam.clamp_gamma)
        else:
            state.set_err(L, state.hhat[L] - apply_output_nl(state.output_nl, state.pred[L]))
        if event_log is not None:
            event_log.append(("write", t, L, state.err_stamp[L]))
        for l in range(L - 1, 0, -1):
            state.pred[l] = affine(W[l - 1], apply_act(f, state.hhat[l - 1]))
            state.set_err(l, state.hhat[l] - state.pred[l])
            if event_log is not None:
                event_log.append(("write", t, l, state.err_stamp[l]))
                event_log.append(("read", t, l, state.err_stamp[l]))
                event_log.append(("read", t, l + 1, state.err_stamp[l + 1]))
            activity_step(params, state, l, cfg.epsilon, gam)
            state.set_err(l, state.hhat[l] - state.pred[l])
            if event_log is not None:
                event_log.append(("write", t, l, state.err_stamp[l]))
        if on_iteration is not None:
            on_iteration(state, t)
    return state


def run_inference(
    params: Params,
    x,
    y,
    cfg: InferenceConfig,
    gammas,
    on_iteration=None,
    event_log: list | None = None,
) -> ActivityState:
    """Initialize a state for (x, y) and run the configured schedule."""
    if callable(gammas):
        # a schedule provider needs an initialized state; clamp at the
        # target first, then re-clamp softly once the schedule is known
        state = init_state(params, x, y, clamp=cfg.clamp, clamp_gamma=0.0)
        if cfg.clamp == "soft":
            clamp_output_soft(state, gammas(state).clamp_gamma)
    else:
        state = init_state(params, x, y, clamp=cfg.clamp, clamp_gamma=gammas.clamp_gamma)
    runner = infer_simultaneous if cfg.schedule == "simultaneous" else infer_sequential
    return runner(params, state, cfg, gammas, on_iteration=on_iteration, event_log=event_log)
