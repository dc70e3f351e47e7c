"""Desk-scale laboratory for training predictive-coding networks.

The package splits into a small numerical core (`linalg`), the network and
free-energy definitions (`network`), the inference phase (`inference`),
weight gradients and optimizers (`optim`), numerical verification tools
(`diagnostics`), and an experiment harness (`data`, `config`, `training`,
`figures`, `cli`).
"""

__version__ = "0.1.0"

from pclab.linalg import (
    ShapeError,
    affine,
    apply_act,
    apply_act_deriv,
    feedback,
    matmul_counter,
    mse,
    outer_accum,
    softmax,
)
from pclab.network import (
    ActivityState,
    GammaSchedule,
    NetworkSpec,
    Params,
    activity_grads,
    free_energy,
    free_energy_weight_grads,
    forward,
    refresh_errors,
)
from pclab.inference import (
    InferenceConfig,
    activity_step,
    clamp_output_full,
    clamp_output_soft,
    infer_sequential,
    infer_simultaneous,
    init_state,
    proximal_gammas,
    run_inference,
)
from pclab.optim import (
    AdamState,
    MQState,
    adam_step,
    bp_grads,
    bp_grads_with_loss,
    il_weight_grads,
    mq_step,
    mq_v_update,
    sgd_step,
)

__all__ = [
    "ShapeError",
    "affine",
    "apply_act",
    "apply_act_deriv",
    "feedback",
    "matmul_counter",
    "mse",
    "outer_accum",
    "softmax",
    "ActivityState",
    "GammaSchedule",
    "NetworkSpec",
    "Params",
    "activity_grads",
    "free_energy",
    "free_energy_weight_grads",
    "forward",
    "refresh_errors",
    "InferenceConfig",
    "activity_step",
    "clamp_output_full",
    "clamp_output_soft",
    "infer_sequential",
    "infer_simultaneous",
    "init_state",
    "proximal_gammas",
    "run_inference",
    "AdamState",
    "MQState",
    "adam_step",
    "bp_grads",
    "bp_grads_with_loss",
    "il_weight_grads",
    "mq_step",
    "mq_v_update",
    "sgd_step",
]
