"""Weight gradients for inference learning and backprop, plus optimizers.

The local learning rule updates each matrix from its layer's error and
presynaptic activity; backprop computes the exact gradient of the output
loss.  Three optimizers consume either gradient set: plain SGD, Adam, and
MQ, a per-matrix adaptive rate that divides a constant step by a running
average of the gradient magnitude so update sizes stay comparable across
matrices without per-parameter state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pclab.linalg import (
    ShapeError,
    apply_act,
    apply_act_deriv,
    as_batch,
    feedback,
    mse,
    outer_accum,
)
from pclab.network import (
    ActivityState,
    Params,
    apply_output_nl,
    forward,
    output_jacobian_t,
)


def as_alpha_list(alpha, n_weights: int) -> list[float]:
    """Expand a scalar step size to one value per weight matrix."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0:
        return [float(a)] * n_weights
    if a.ndim == 1 and len(a) == n_weights:
        return [float(v) for v in a]
    raise ShapeError(f"need a scalar or {n_weights} step sizes, got shape {a.shape}")


def il_weight_grads(state: ActivityState) -> list[np.ndarray]:
    """Local energy gradients of the weight matrices from stored errors.

    dF/dW_l = -(1/N) sum_n e_{l+1,n} [f(hhat_{l,n}), 1]^T.  The mean over
    samples matches the batch-mean energy, so step sizes transfer across
    batch sizes; the bias-column gradient is -mean(e_{l+1}).  Errors must be
    current for the activities the update should use.
    """
    L = state.n_layers
    n = state.batch_size
    grads = []
    for l in range(L):
        e = state.err[l + 1]
        if e is None:
            raise ValueError("errors not refreshed; run inference or refresh_errors")
        a = apply_act(state.hidden_act, state.hhat[l])
        grads.append(-outer_accum(e, a) / n)
    return grads


def bp_grads_with_loss(params: Params, x, y) -> tuple[list[np.ndarray], float]:
    """Backprop gradients of the mean squared-error loss, plus the loss.

    The loss is (1/N) sum_n 0.5 ||y_n - sigma(p_{L,n})||^2 with sigma the
    configured output nonlinearity; its exact Jacobian is used at the top.
    """
    y = as_batch(y)
    h = forward(params, x, apply_output=False)
    L = params.n_weights
    n = y.shape[0]
    f = params.spec.hidden_act
    pred = apply_output_nl(params.spec.output_nl, h[L])
    if pred.shape != y.shape:
        raise ShapeError(f"target shape {y.shape} != output shape {pred.shape}")
    loss = mse(y, pred)
    delta = output_jacobian_t(params.spec.output_nl, h[L], pred - y)
    grads: list[np.ndarray | None] = [None] * L
    grads[L - 1] = outer_accum(delta, apply_act(f, h[L - 1])) / n
    for l in range(L - 2, -1, -1):
        delta = apply_act_deriv(f, h[l + 1]) * feedback(params.weights[l + 1], delta)
        grads[l] = outer_accum(delta, apply_act(f, h[l])) / n
    return grads, loss


def bp_grads(params: Params, x, y) -> list[np.ndarray]:
    """Exact gradient of the mean squared-error loss w.r.t. every weight matrix."""
    return bp_grads_with_loss(params, x, y)[0]


def sgd_step(params: Params, grads: list[np.ndarray], alphas) -> Params:
    """W_l <- W_l - alpha_l grad_l.  Returns new parameters."""
    alist = as_alpha_list(alphas, params.n_weights)
    if len(grads) != params.n_weights:
        raise ShapeError(f"expected {params.n_weights} gradients, got {len(grads)}")
    new = [W - a * g for W, g, a in zip(params.weights, grads, alist)]
    return Params(params.spec, new)


@dataclass
class MQState:
    """Per-matrix adaptive-rate state for the MQ optimizer.

    alpha_l are constant per-matrix rates, v_l tracks a running average of
    the mean absolute gradient of matrix l, and b counts training
    iterations.  v is initialized to alpha, which behaves well in practice.
    """

    alpha: list[float]
    alpha_min: float = 0.001
    r: float = 1e-6
    rho: float = 0.9999
    v: list[float] = field(default_factory=list)
    b: int = 0

    def __post_init__(self):
        if any(a <= 0 for a in self.alpha):
            raise ValueError("MQ step sizes alpha_l must be positive")
        if self.r <= 0:
            raise ValueError("MQ stabilizer r must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("MQ averaging constant rho must be in (0, 1)")
        if not self.v:
            self.v = list(self.alpha)

    @classmethod
    def create(
        cls,
        alphas,
        n_weights: int,
        alpha_min: float = 0.001,
        r: float = 1e-6,
        rho: float = 0.9999,
    ) -> "MQState":
        return cls(as_alpha_list(alphas, n_weights), alpha_min=alpha_min, r=r, rho=rho)


def mq_v_update(mq: MQState, grads: list[np.ndarray]) -> MQState:
    """Fold this iteration's gradient magnitudes into the running averages.

    rho* = min(rho, 1/(b + 2)) weights the new observation, which removes
    the bias toward the initial v early in training:

        v_l <- (1 - rho*) v_l + rho* mean|grad_l|

    b increments once per call (one call per training iteration).
    """
    rho_star = min(mq.rho, 1.0 / (mq.b + 2))
    mq.v = [
        (1.0 - rho_star) * v + rho_star * float(np.mean(np.abs(g)))
        for v, g in zip(mq.v, grads)
    ]
    mq.b += 1
    return mq


def mq_step(params: Params, grads: list[np.ndarray], mq: MQState) -> Params:
    """W_l <- W_l - (alpha_l / (v_l + r) + alpha_min) grad_l.

    The alpha_min floor keeps every matrix learning; update v first via
    `mq_v_update`.  Returns new parameters.
    """
    if len(grads) != params.n_weights or len(mq.v) != params.n_weights:
        raise ShapeError("gradient/state length does not match the parameter count")
    new = []
    for W, g, a, v in zip(params.weights, grads, mq.alpha, mq.v):
        rate = a / (v + mq.r) + mq.alpha_min
        new.append(W - rate * g)
    return Params(params.spec, new)


@dataclass
class AdamState:
    """Standard Adam moments with bias correction (memory-heavy baseline)."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def create(cls, params: Params, lr: float = 0.001, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m=[np.zeros_like(W) for W in params.weights],
            v=[np.zeros_like(W) for W in params.weights],
        )


def adam_step(params: Params, grads: list[np.ndarray], adam: AdamState) -> Params:
    """Canonical Adam update with bias-corrected moments; mutates the state."""
    if not adam.m:
        adam.m = [np.zeros_like(W) for W in params.weights]
        adam.v = [np.zeros_like(W) for W in params.weights]
    adam.t += 1
    new = []
    for i, (W, g) in enumerate(zip(params.weights, grads)):
        adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * g
        adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * g * g
        m_hat = adam.m[i] / (1.0 - adam.beta1 ** adam.t)
        v_hat = adam.v[i] / (1.0 - adam.beta2 ** adam.t)
        new.append(W - adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps))
    return Params(params.spec, new)
