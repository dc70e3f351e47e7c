"""Network definition, feed-forward pass, activity state, and free energy.

A network with weight matrices W_0..W_{L-1} relates layer activities by
p_l = W_{l-1} [f(hhat_{l-1}), 1]; local errors are e_l = hhat_l - p_l and
the free energy is the weighted sum of squared errors plus an optional
activity-decay term and, under a soft output clamp, the output loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pclab.linalg import (
    ACTIVATIONS,
    ShapeError,
    affine,
    apply_act,
    apply_act_deriv,
    as_batch,
    feedback,
    outer_accum,
    softmax,
)

OUTPUT_NONLINEARITIES = ("softmax", "sigmoid", "identity")
CLAMP_MODES = ("full", "soft")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture: layer sizes d_0..d_L plus activation choices."""

    layer_dims: tuple[int, ...]
    hidden_act: str = "relu"
    output_nl: str = "softmax"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 3:
            raise ValueError("need at least two weight matrices (one hidden layer)")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"all layer dims must be >= 1, got {self.layer_dims}")
        if self.hidden_act not in ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_act!r}")
        if self.output_nl not in OUTPUT_NONLINEARITIES:
            raise ValueError(f"unknown output nonlinearity {self.output_nl!r}")

    @property
    def n_weights(self) -> int:
        """Number of weight matrices, L."""
        return len(self.layer_dims) - 1

    def weight_shape(self, l: int) -> tuple[int, int]:
        return (self.layer_dims[l + 1], self.layer_dims[l] + 1)


@dataclass
class Params:
    """Weight matrices of a network; weights[l] has shape (d_{l+1}, d_l + 1)."""

    spec: NetworkSpec
    weights: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        if len(self.weights) != self.spec.n_weights:
            raise ShapeError(
                f"expected {self.spec.n_weights} weight matrices, got {len(self.weights)}"
            )
        for l, W in enumerate(self.weights):
            if W.shape != self.spec.weight_shape(l):
                raise ShapeError(
                    f"weights[{l}] has shape {W.shape}, expected {self.spec.weight_shape(l)}"
                )

    @property
    def n_weights(self) -> int:
        return len(self.weights)

    def n_parameters(self) -> int:
        return int(sum(W.size for W in self.weights))

    def copy(self) -> "Params":
        return Params(self.spec, [W.copy() for W in self.weights])


@dataclass
class GammaSchedule:
    """Weighting terms of the free energy.

    gamma[l] weights 0.5 ||e_l||^2 for l = 1..L (index 0 unused) and
    gamma_decay[l] weights 0.5 ||f(hhat_l)||^2 for l = 1..L-1.  clamp_gamma
    is the mixing weight used by the soft output clamp; it is kept separate
    from gamma[L] because the proximal schedule assigns them different
    values (see `pclab.inference.proximal_gammas`).
    """

    mode: str
    gamma: np.ndarray
    gamma_decay: np.ndarray
    clamp_gamma: float = 1.0

    @classmethod
    def standard(cls, n_weights: int, output_gamma: float = 1.0) -> "GammaSchedule":
        """Unit error weights, no decay; the common practical setting."""
        gamma = np.ones(n_weights + 1)
        gamma[0] = 0.0
        gamma[n_weights] = output_gamma
        decay = np.zeros(n_weights + 1)
        return cls("standard", gamma, decay, clamp_gamma=output_gamma)

    @property
    def n_weights(self) -> int:
        return len(self.gamma) - 1


class ActivityState:
    """Per-layer activity, prediction, and error buffers for one mini-batch.

    hhat[0] is the clamped input and is never modified by inference.
    pred[l] always stores the linear prediction W_{l-1} [f(hhat_{l-1}), 1];
    under a full clamp the stored output error applies the output
    nonlinearity, e_L = hhat_L - sigma(pred_L), while under a soft clamp it
    stays linear.  Error writes bump per-layer stamps so schedules can be
    audited for which errors they read.
    """

    def __init__(
        self,
        hhat: list[np.ndarray],
        target: np.ndarray,
        clamp: str = "full",
        clamp_gamma: float = 1.0,
        hidden_act: str = "relu",
        output_nl: str = "softmax",
    ) -> None:
        if clamp not in CLAMP_MODES:
            raise ValueError(f"unknown clamp mode {clamp!r}")
        self.hhat = [as_batch(h) for h in hhat]
        self.target = as_batch(target)
        self.clamp = clamp
        self.clamp_gamma = float(clamp_gamma)
        self.hidden_act = hidden_act
        self.output_nl = output_nl
        L = len(self.hhat) - 1
        self.pred: list[np.ndarray | None] = [None] * (L + 1)
        self.err: list[np.ndarray | None] = [None] * (L + 1)
        self.err_stamp = [0] * (L + 1)
        self._clock = 0

    @property
    def n_layers(self) -> int:
        """Number of weight matrices, L (activity layers run 0..L)."""
        return len(self.hhat) - 1

    @property
    def batch_size(self) -> int:
        return self.hhat[0].shape[0]

    def set_err(self, l: int, value: np.ndarray) -> None:
        self._clock += 1
        self.err[l] = value
        self.err_stamp[l] = self._clock

    def copy(self) -> "ActivityState":
        out = ActivityState(
            [h.copy() for h in self.hhat],
            self.target.copy(),
            clamp=self.clamp,
            clamp_gamma=self.clamp_gamma,
            hidden_act=self.hidden_act,
            output_nl=self.output_nl,
        )
        out.pred = [None if p is None else p.copy() for p in self.pred]
        out.err = [None if e is None else e.copy() for e in self.err]
        out.err_stamp = list(self.err_stamp)
        out._clock = self._clock
        return out


def apply_output_nl(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "softmax":
        return softmax(x)
    if kind == "sigmoid":
        return apply_act("sigmoid", x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown output nonlinearity {kind!r}")


def output_jacobian_t(kind: str, p_linear: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-row product of the output nonlinearity's transposed Jacobian with v."""
    if kind == "identity":
        return v
    if kind == "sigmoid":
        return apply_act_deriv("sigmoid", p_linear) * v
    if kind == "softmax":
        s = softmax(p_linear)
        return s * (v - np.sum(s * v, axis=1, keepdims=True))
    raise ValueError(f"unknown output nonlinearity {kind!r}")


def forward_weights(
    weights: list[np.ndarray],
    x,
    hidden_act: str = "relu",
    output_nl: str = "identity",
    apply_output: bool = False,
) -> list[np.ndarray]:
    """Feed-forward pass over raw weight matrices; returns [h_0, ..., h_L]."""
    h = [as_batch(x)]
    for W in weights:
        h.append(affine(W, apply_act(hidden_act, h[-1])))
    if apply_output:
        h[-1] = apply_output_nl(output_nl, h[-1])
    return h


def forward(params: Params, x, apply_output: bool = True) -> list[np.ndarray]:
    """Feed-forward activities h_0..h_L.

    h_{l+1} = W_l [f(h_l), 1].  With `apply_output` the final layer passes
    through the configured output nonlinearity (the BP prediction path);
    without it h_L stays linear (the inference initialization path).
    """
    x = as_batch(x)
    if x.shape[1] != params.spec.layer_dims[0]:
        raise ShapeError(
            f"input dim {x.shape[1]} != network input dim {params.spec.layer_dims[0]}"
        )
    return forward_weights(
        params.weights,
        x,
        hidden_act=params.spec.hidden_act,
        output_nl=params.spec.output_nl,
        apply_output=apply_output,
    )


def refresh_errors(params: Params, state: ActivityState) -> ActivityState:
    """Recompute all predictions and errors from the current activities."""
    L = state.n_layers
    f = state.hidden_act
    for l in range(1, L + 1):
        state.pred[l] = affine(params.weights[l - 1], apply_act(f, state.hhat[l - 1]))
    for l in range(1, L):
        state.set_err(l, state.hhat[l] - state.pred[l])
    if state.clamp == "full":
        state.set_err(L, state.hhat[L] - apply_output_nl(state.output_nl, state.pred[L]))
    else:
        state.set_err(L, state.hhat[L] - state.pred[L])
    return state


def free_energy(params: Params, state: ActivityState, gammas: GammaSchedule) -> float:
    """Mean over samples of the weighted error energy.

    F = (1/N) [ sum_l gamma_l 0.5 ||e_l||^2
              + sum_{l<L} gamma_decay_l 0.5 ||f(hhat_l)||^2 ]
    plus, under a soft clamp only, the output loss (1/N) 0.5 ||y - hhat_L||^2;
    a full clamp folds the loss into e_L.  Errors must be current.
    """
    L = state.n_layers
    if gammas.n_weights != L:
        raise ShapeError("gamma schedule does not match network depth")
    total = 0.0
    for l in range(1, L + 1):
        if state.err[l] is None:
            raise ValueError("errors not refreshed; call refresh_errors first")
        total += gammas.gamma[l] * 0.5 * float(np.sum(state.err[l] ** 2))
    for l in range(1, L):
        g = gammas.gamma_decay[l]
        if g != 0.0:
            fh = apply_act(state.hidden_act, state.hhat[l])
            total += g * 0.5 * float(np.sum(fh * fh))
    if state.clamp == "soft":
        d = state.target - state.hhat[L]
        total += 0.5 * float(np.sum(d * d))
    return total / state.batch_size


def layer_activity_grad(
    params: Params,
    state: ActivityState,
    l: int,
    gammas: GammaSchedule,
    through_output_jacobian: bool = False,
) -> np.ndarray:
    """Per-sample energy gradient for hidden layer l.

    dF/dhhat_l = gamma_l e_l
               - gamma_{l+1} f'(hhat_l) * (W_l^T e_{l+1})   (bias column dropped)
               + gamma_decay_l f'(hhat_l) * f(hhat_l)

    This is the gradient of the per-sample energy; the recurrent circuit
    descends it directly.  With `through_output_jacobian` the feedback from
    the output layer is routed through the output nonlinearity's exact
    Jacobian (a full clamp stores e_L past the nonlinearity); the plain
    form matches the circuit, the exact form matches finite differences of
    `free_energy` in every configuration.
    """
    L = state.n_layers
    if not 1 <= l <= L - 1:
        raise ValueError(f"hidden layer index must be in 1..{L - 1}, got {l}")
    f = state.hidden_act
    e_next = state.err[l + 1]
    if (
        through_output_jacobian
        and l == L - 1
        and state.clamp == "full"
        and state.output_nl != "identity"
    ):
        e_next = output_jacobian_t(state.output_nl, state.pred[L], e_next)
    fprime = apply_act_deriv(f, state.hhat[l])
    g = gammas.gamma[l] * state.err[l] - gammas.gamma[l + 1] * fprime * feedback(
        params.weights[l], e_next
    )
    if gammas.gamma_decay[l] != 0.0:
        g = g + gammas.gamma_decay[l] * fprime * apply_act(f, state.hhat[l])
    return g


def activity_grads(
    params: Params,
    state: ActivityState,
    gammas: GammaSchedule,
    through_output_jacobian: bool = False,
) -> list[np.ndarray | None]:
    """Per-sample energy gradients for every activity layer.

    Entries 1..L-1 hold hidden-layer gradients; entry L holds the output
    gradient gamma_L e_L + (hhat_L - y) under a soft clamp and None under a
    full clamp (the output is pinned).  Entry 0 is always None.
    """
    L = state.n_layers
    out: list[np.ndarray | None] = [None] * (L + 1)
    for l in range(1, L):
        out[l] = layer_activity_grad(params, state, l, gammas, through_output_jacobian)
    if state.clamp == "soft":
        out[L] = gammas.gamma[L] * state.err[L] + (state.hhat[L] - state.target)
    return out


def free_energy_weight_grads(
    params: Params, state: ActivityState, gammas: GammaSchedule
) -> list[np.ndarray]:
    """Exact gradient of `free_energy` with respect to each weight matrix.

    dF/dW_l = -(gamma_{l+1}/N) sum_n e_{l+1,n} [f(hhat_{l,n}), 1]^T, with the
    output error routed through the output nonlinearity's Jacobian when a
    full clamp stores it past the nonlinearity.  Under the standard schedule
    (gamma = 1) and a linear output error this coincides with the local
    learning rule in `pclab.optim.il_weight_grads`.
    """
    L = state.n_layers
    n = state.batch_size
    f = state.hidden_act
    grads = []
    for l in range(L):
        e = state.err[l + 1]
        if e is None:
            raise ValueError("errors not refreshed; call refresh_errors first")
        if l == L - 1 and state.clamp == "full" and state.output_nl != "identity":
            e = output_jacobian_t(state.output_nl, state.pred[L], e)
        scale = -gammas.gamma[l + 1] / n
        grads.append(scale * outer_accum(e, apply_act(f, state.hhat[l])))
    return grads
