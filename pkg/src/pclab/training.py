"""Parameter initialization, training steps, the training loop, and metrics.

A training step for the inference algorithms follows the two-phase recipe:
initialize activities feed-forward, clamp the output, run the configured
inference schedule, then update weights from the settled local errors.  The
backprop baseline computes exact loss gradients instead.  Each step reports
per-phase matrix-multiply counts; the inference-plus-update region matches
the closed forms in `pclab.diagnostics.matmul_count` (the initialization
pass seeds the first iteration's predictions and is reported separately).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pclab.config import ConfigError, ExperimentConfig
from pclab.data import Dataset, load_csv, load_idx, synth_blobs, synth_teacher, train_test_split
from pclab.linalg import matmul_counter, mse
from pclab.network import GammaSchedule, NetworkSpec, Params, apply_output_nl, forward
from pclab.inference import InferenceConfig, infer_sequential, infer_simultaneous, init_state
from pclab.optim import (
    AdamState,
    MQState,
    adam_step,
    bp_grads_with_loss,
    il_weight_grads,
    mq_step,
    mq_v_update,
    sgd_step,
)


def init_params(spec: NetworkSpec, seed: int) -> Params:
    """Seeded uniform(-s, s) weights with s = 1/sqrt(fan_in); zero bias column."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    weights = []
    for l in range(spec.n_weights):
        m, n1 = spec.weight_shape(l)
        fan_in = n1 - 1
        s = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-s, s, (m, n1))
        W[:, -1] = 0.0
        weights.append(W)
    return Params(spec, weights)


class FixedRateOptimizer:
    """Plain SGD with per-matrix step sizes."""

    def __init__(self, alphas):
        self.alphas = list(alphas)

    def step(self, params: Params, grads) -> Params:
        return sgd_step(params, grads, self.alphas)


class MQOptimizer:
    """Matrix-wise adaptive rates; carries an MQState across iterations."""

    def __init__(self, alphas, n_weights, alpha_min=0.001, r=1e-6, rho=0.9999):
        self.state = MQState.create(alphas, n_weights, alpha_min=alpha_min, r=r, rho=rho)

    def step(self, params: Params, grads) -> Params:
        mq_v_update(self.state, grads)
        return mq_step(params, grads, self.state)


class AdamOptimizer:
    """Adam baseline; carries moment tensors across iterations."""

    def __init__(self, params: Params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = AdamState.create(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, params: Params, grads) -> Params:
        return adam_step(params, grads, self.state)


def make_optimizer(cfg: ExperimentConfig, params: Params):
    alphas = cfg.alphas()
    if cfg.optimizer == "sgd":
        return FixedRateOptimizer(alphas)
    if cfg.optimizer == "mq":
        return MQOptimizer(
            alphas, params.n_weights, alpha_min=cfg.alpha_min, r=cfg.mq_r, rho=cfg.rho
        )
    if cfg.optimizer == "adam":
        return AdamOptimizer(params, lr=alphas[0], beta1=cfg.adam_beta1,
                             beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


@dataclass
class StepReport:
    """One training step: loss before the update, update sizes, matmul counts."""

    loss: float
    update_means: list[float]
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def algorithm_matmuls(self) -> int:
        """Products attributed to the algorithm by the closed-form accounting."""
        return self.counts.get("inference", 0) + self.counts.get("forward_backward", 0) + \
            self.counts.get("weight_update", 0)


def il_train_step(
    params: Params,
    x,
    y,
    infer_cfg: InferenceConfig,
    gammas,
    optimizer,
) -> tuple[Params, StepReport]:
    """One inference-learning step on a mini-batch.

    Initializes activities (seeding pass), runs the configured schedule,
    computes the local weight gradients from the settled errors, and applies
    the optimizer.  The reported loss is the output loss of the seeding
    forward pass, before any update.
    """
    c0 = matmul_counter.count
    state = init_state(params, x, y, clamp=infer_cfg.clamp,
                       clamp_gamma=gammas.clamp_gamma if not callable(gammas) else 1.0)
    pred = apply_output_nl(params.spec.output_nl, state.pred[state.n_layers])
    loss = mse(state.target, pred)
    c1 = matmul_counter.count
    runner = infer_simultaneous if infer_cfg.schedule == "simultaneous" else infer_sequential
    runner(params, state, infer_cfg, gammas)
    c2 = matmul_counter.count
    grads = il_weight_grads(state)
    c3 = matmul_counter.count
    new_params = optimizer.step(params, grads)
    update_means = [
        float(np.mean(np.abs(Wn - Wo))) for Wn, Wo in zip(new_params.weights, params.weights)
    ]
    report = StepReport(
        loss=loss,
        update_means=update_means,
        counts={"init": c1 - c0, "inference": c2 - c1, "weight_update": c3 - c2},
    )
    return new_params, report


def bp_train_step(params: Params, x, y, optimizer) -> tuple[Params, StepReport]:
    """One backprop step on a mini-batch; loss is evaluated pre-update."""
    c0 = matmul_counter.count
    grads, loss = bp_grads_with_loss(params, x, y)
    c1 = matmul_counter.count
    new_params = optimizer.step(params, grads)
    update_means = [
        float(np.mean(np.abs(Wn - Wo))) for Wn, Wo in zip(new_params.weights, params.weights)
    ]
    report = StepReport(
        loss=loss, update_means=update_means, counts={"forward_backward": c1 - c0}
    )
    return new_params, report


@dataclass
class MetricsRecord:
    """One evaluation row of the experiment log."""

    epoch: int
    iteration: int
    train_loss: float
    test_loss: float
    test_accuracy: float | None
    update_means: list[float]
    wall_time: str = ""
    status: str = "ok"


METRICS_FIXED_COLUMNS = ["epoch", "iteration", "train_loss", "test_loss", "test_accuracy"]


def metrics_header(n_weights: int) -> list[str]:
    return (
        METRICS_FIXED_COLUMNS
        + [f"update_mean_{l}" for l in range(n_weights)]
        + ["wall_time", "status"]
    )


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_metrics_csv(path, records: list[MetricsRecord], n_weights: int) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_header(n_weights))
        for r in records:
            row = [
                str(r.epoch),
                str(r.iteration),
                _fmt(r.train_loss),
                _fmt(r.test_loss),
                "" if r.test_accuracy is None else _fmt(r.test_accuracy),
            ]
            row += [_fmt(u) for u in r.update_means]
            row += [r.wall_time, r.status]
            writer.writerow(row)


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_weights = sum(1 for h in header if h.startswith("update_mean_"))
        records = []
        for row in reader:
            records.append(
                MetricsRecord(
                    epoch=int(row[0]),
                    iteration=int(row[1]),
                    train_loss=float(row[2]),
                    test_loss=float(row[3]),
                    test_accuracy=None if row[4] == "" else float(row[4]),
                    update_means=[float(v) for v in row[5 : 5 + n_weights]],
                    wall_time=row[5 + n_weights],
                    status=row[6 + n_weights],
                )
            )
    return records


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Build the train/test pair a config describes."""
    if cfg.dataset == "synthetic-blobs":
        full = synth_blobs(
            cfg.seed,
            cfg.n_samples,
            cfg.input_dim,
            cfg.classes,
            spread=cfg.blob_spread,
            pixel_like=cfg.pixel_like,
        )
        return train_test_split(full, cfg.test_fraction, cfg.seed)
    if cfg.dataset == "synthetic-teacher":
        dims = cfg.teacher_dims if cfg.teacher_dims else (cfg.layer_dims[0], 16, cfg.layer_dims[-1])
        full = synth_teacher(cfg.seed, cfg.n_samples, dims)
        return train_test_split(full, cfg.test_fraction, cfg.seed)
    if cfg.dataset == "csv":
        if not cfg.csv_path:
            raise ConfigError("dataset = csv needs csv_path")
        full = load_csv(cfg.csv_path, task=cfg.task)
        if cfg.csv_test_path:
            return full, load_csv(cfg.csv_test_path, task=cfg.task)
        return train_test_split(full, cfg.test_fraction, cfg.seed)
    if cfg.dataset == "idx-pair":
        if not (cfg.train_images and cfg.train_labels):
            raise ConfigError("dataset = idx-pair needs train_images and train_labels")
        full = load_idx(cfg.train_images, cfg.train_labels)
        if cfg.test_images and cfg.test_labels:
            return full, load_idx(cfg.test_images, cfg.test_labels)
        return train_test_split(full, cfg.test_fraction, cfg.seed)
    raise ConfigError(f"unknown dataset {cfg.dataset!r}")


def _targets_for_task(cfg: ExperimentConfig, ds: Dataset) -> Dataset:
    if cfg.task == "autoencode":
        return Dataset(ds.x, ds.x.copy())
    return ds


def evaluate(params: Params, ds: Dataset, task: str) -> tuple[float, float | None]:
    """Test loss and, for classification, argmax accuracy."""
    pred = forward(params, ds.x, apply_output=True)[-1]
    loss = mse(ds.y, pred)
    if task != "classify":
        return loss, None
    acc = float(np.mean(np.argmax(pred, axis=1) == np.argmax(ds.y, axis=1)))
    return loss, acc


@dataclass
class TrainResult:
    params: Params
    records: list[MetricsRecord]
    aborted: bool = False
    abort_reason: str = ""


def run_training(
    params: Params,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: ExperimentConfig,
    n_iterations: int | None = None,
    record_updates: list | None = None,
) -> TrainResult:
    """Mini-batch training loop over a prepared dataset.

    Shuffles with a stream derived from the config seed, evaluates on the
    held-out split once per epoch, and aborts with a flagged final record if
    the loss stops being finite.  `n_iterations` caps the total number of
    mini-batch steps (useful for fixed-iteration protocols);
    `record_updates`, if supplied, collects per-iteration per-matrix update
    magnitudes.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5C0F]))
    optimizer = make_optimizer(cfg, params)
    infer_cfg = None
    gammas = GammaSchedule.standard(params.n_weights, output_gamma=cfg.clamp_gamma)
    if cfg.algorithm in ("il", "seqil"):
        infer_cfg = InferenceConfig(
            T=cfg.T,
            epsilon=cfg.epsilon,
            schedule="simultaneous" if cfg.algorithm == "il" else "sequential",
            clamp=cfg.clamp,
        )
    records: list[MetricsRecord] = []
    start = time.perf_counter()
    n = len(train_ds)
    iteration = 0
    done = False
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_losses: list[float] = []
        epoch_updates: list[list[float]] = []
        for lo in range(0, n, cfg.batch_size):
            if n_iterations is not None and iteration >= n_iterations:
                done = True
                break
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = train_ds.x[idx], train_ds.y[idx]
            if cfg.algorithm == "bp":
                params, report = bp_train_step(params, xb, yb, optimizer)
            else:
                params, report = il_train_step(params, xb, yb, infer_cfg, gammas, optimizer)
            iteration += 1
            epoch_losses.append(report.loss)
            epoch_updates.append(report.update_means)
            if record_updates is not None:
                record_updates.append(report.update_means)
            if not np.isfinite(report.loss) or any(
                not np.all(np.isfinite(W)) for W in params.weights
            ):
                records.append(
                    MetricsRecord(
                        epoch=epoch,
                        iteration=iteration,
                        train_loss=report.loss,
                        test_loss=float("nan"),
                        test_accuracy=None,
                        update_means=report.update_means,
                        wall_time=f"{time.perf_counter() - start:.3f}",
                        status=f"nan_abort@{iteration}",
                    )
                )
                return TrainResult(params, records, aborted=True,
                                   abort_reason=f"non-finite loss at iteration {iteration}")
        test_loss, test_acc = evaluate(params, test_ds, cfg.task)
        records.append(
            MetricsRecord(
                epoch=epoch,
                iteration=iteration,
                train_loss=float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
                test_loss=test_loss,
                test_accuracy=test_acc,
                update_means=list(np.mean(epoch_updates, axis=0)) if epoch_updates else [],
                wall_time=f"{time.perf_counter() - start:.3f}",
                status="ok",
            )
        )
        if done:
            break
    return TrainResult(params, records)


def train(cfg: ExperimentConfig, write_csv: bool = True) -> TrainResult:
    """End-to-end: build data, initialize, train, and write the metrics CSV."""
    train_raw, test_raw = load_dataset(cfg)
    train_ds = _targets_for_task(cfg, train_raw)
    test_ds = _targets_for_task(cfg, test_raw)
    if train_ds.x.shape[1] != cfg.layer_dims[0]:
        raise ConfigError(
            f"data dim {train_ds.x.shape[1]} != layer_dims[0] = {cfg.layer_dims[0]}"
        )
    if train_ds.y.shape[1] != cfg.layer_dims[-1]:
        raise ConfigError(
            f"target dim {train_ds.y.shape[1]} != layer_dims[-1] = {cfg.layer_dims[-1]}"
        )
    spec = NetworkSpec(cfg.layer_dims, hidden_act=cfg.hidden_act, output_nl=cfg.output_nl)
    params = init_params(spec, cfg.seed)
    result = run_training(params, train_ds, test_ds, cfg)
    if write_csv:
        write_metrics_csv(cfg.out, result.records, params.n_weights)
    return result
