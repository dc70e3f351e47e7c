"""Command-line interface.

Subcommands:

* ``train <config>`` runs a training experiment and writes the metrics CSV
  (plus a loss-curve figure).
* ``diagnose prox|lemma1|theorem2|error-trace <config>`` runs one of the
  measurement protocols and writes a CSV report plus a figure.
* ``count-ops --algorithm A --layers L [--T n]`` prints the closed-form
  matrix-multiply count per training iteration.
* ``gradcheck <config>`` verifies analytic gradients against central finite
  differences on the configured architecture.

Every subcommand accepts ``--seed`` (overrides the config seed) and ``--out``
(overrides the CSV path); ``--no-figures`` skips figure rendering.  Exit
status is 0 on success and nonzero with a message on any error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from pclab.config import ConfigError, ExperimentConfig, parse_config_file
from pclab.data import IdxFormatError
from pclab.linalg import ShapeError
from pclab.network import GammaSchedule, NetworkSpec, Params, refresh_errors
from pclab.inference import InferenceConfig, init_state
from pclab.optim import mq_step, sgd_step
from pclab.diagnostics import (
    DiagnosticError,
    error_trace,
    finite_diff_grad,
    flatten_grads,
    flatten_params,
    implicit_sgd_oracle,
    matmul_count,
    newton_update,
    prox_energy_alignment,
    prox_trace_during_inference,
    unflatten_params,
)
from pclab.training import (
    MQOptimizer,
    evaluate,
    init_params,
    load_dataset,
    make_optimizer,
    run_training,
    train,
)

_ERRORS = (ConfigError, DiagnosticError, IdxFormatError, ShapeError, ValueError, OSError)


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def _fig_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = train(cfg)
    if not args.no_figures and result.records:
        from pclab.figures import save_training_curves

        save_training_curves(result.records, _fig_path(cfg.out),
                             title=f"{cfg.algorithm}-{cfg.optimizer} on {cfg.dataset}")
    last = result.records[-1] if result.records else None
    if result.aborted:
        print(f"aborted: {result.abort_reason}; metrics in {cfg.out}", file=sys.stderr)
        return 1
    if last is not None:
        acc = "" if last.test_accuracy is None else f", test accuracy {last.test_accuracy:.4f}"
        print(f"done: {len(result.records)} evaluations, final test loss "
              f"{last.test_loss:.6g}{acc}; metrics in {cfg.out}")
    return 0


def _measurement_batch(cfg: ExperimentConfig, cap: int = 1000):
    train_ds, test_ds = load_dataset(cfg)
    ds = test_ds if len(test_ds) > 0 else train_ds
    k = min(len(ds), cap)
    if cfg.task == "autoencode":
        return ds.x[:k], ds.x[:k].copy()
    return ds.x[:k], ds.y[:k]


def cmd_diagnose_prox(args) -> int:
    cfg = _load_config(args)
    if cfg.algorithm == "bp":
        print("diagnose prox needs an inference algorithm (il or seqil)", file=sys.stderr)
        return 1
    if cfg.optimizer == "adam":
        print("diagnose prox supports sgd or mq step rules", file=sys.stderr)
        return 1
    train_ds, test_ds = load_dataset(cfg)
    spec = NetworkSpec(cfg.layer_dims, cfg.hidden_act, cfg.output_nl)
    params = init_params(spec, cfg.seed)
    optimizer = make_optimizer(cfg, params)
    pre = run_training(params, train_ds, test_ds, cfg, n_iterations=cfg.pretrain_iterations)
    params = pre.params
    if isinstance(optimizer, MQOptimizer):
        mq = optimizer.state
        step_fn = lambda p, g: mq_step(p, g, mq)
    else:
        alphas = cfg.alphas()
        step_fn = lambda p, g: sgd_step(p, g, alphas)
    x, y = _measurement_batch(cfg)
    infer_cfg = InferenceConfig(T=cfg.T, epsilon=cfg.epsilon,
                                schedule="simultaneous" if cfg.algorithm == "il" else "sequential",
                                clamp=cfg.clamp)
    gam = GammaSchedule.standard(params.n_weights, output_gamma=cfg.clamp_gamma)
    trace = prox_trace_during_inference(params, x, y, infer_cfg, gam, beta=args.beta,
                                        step_fn=step_fn)
    out = args.out or "prox_trace.csv"
    _write_csv(out, ["iteration", "prox_objective"],
               [(t, f"{v:.17g}") for t, v in enumerate(trace.values)])
    if not args.no_figures:
        from pclab.figures import save_prox_trace

        save_prox_trace({f"{cfg.algorithm}-{cfg.optimizer} (rate {args.beta:g})": trace},
                        _fig_path(out))
    drop = trace.values[0] - trace.values[-1]
    print(f"prox objective: start {trace.values[0]:.6g}, end {trace.values[-1]:.6g} "
          f"({'reduced' if drop > 0 else 'NOT reduced'}); report in {out}")
    return 0


def _random_inference_state(cfg: ExperimentConfig, params: Params, spread: float = 0.3):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11]))
    x = rng.uniform(-1.0, 1.0, (1, cfg.layer_dims[0]))
    y = rng.uniform(-1.0, 1.0, (1, cfg.layer_dims[-1]))
    state = init_state(params, x, y, clamp="soft", clamp_gamma=cfg.clamp_gamma)
    for l in range(1, state.n_layers):
        state.hhat[l] = state.hhat[l] + rng.uniform(-spread, spread, state.hhat[l].shape)
    refresh_errors(params, state)
    return state, x, y


def cmd_diagnose_lemma1(args) -> int:
    cfg = _load_config(args)
    spec = NetworkSpec(cfg.layer_dims, cfg.hidden_act, cfg.output_nl)
    params = init_params(spec, cfg.seed)
    state, _, _ = _random_inference_state(cfg, params)
    alphas = cfg.alphas()
    reports = []
    rows = []
    for l in range(1, params.n_weights):
        rep = prox_energy_alignment(params, state, alphas, args.beta, l)
        reports.append(rep)
        rows.append((l, f"{rep.proportionality:.17g}", f"{rep.spread:.17g}", rep.conclusive))
        print(f"layer {l}: ratio {rep.proportionality:.6g} "
              f"(expected {1.0 / args.beta:.6g}), spread {rep.spread:.3g}, "
              f"{'conclusive' if rep.conclusive else 'inconclusive'}")
    out = args.out or "alignment.csv"
    _write_csv(out, ["layer", "ratio", "spread", "conclusive"], rows)
    if not args.no_figures:
        from pclab.figures import save_alignment_report

        save_alignment_report(reports, _fig_path(out))
    worst = max((r.spread for r in reports if r.conclusive), default=float("inf"))
    print(f"worst conclusive spread: {worst:.3g}; report in {out}")
    return 0 if worst < 1e-4 else 1


def cmd_diagnose_theorem2(args) -> int:
    cfg = _load_config(args)
    spec = NetworkSpec(cfg.layer_dims, cfg.hidden_act, cfg.output_nl)
    params = init_params(spec, cfg.seed)
    if params.n_parameters() > 500:
        print(f"theorem2 needs a tiny net (<= 500 parameters); "
              f"this architecture has {params.n_parameters()}", file=sys.stderr)
        return 1
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E2]))
    x = rng.uniform(-1.0, 1.0, (1, cfg.layer_dims[0]))
    y = rng.uniform(-1.0, 1.0, (1, cfg.layer_dims[-1]))
    betas, errors = [], []
    beta = args.beta0
    for _ in range(args.halvings + 1):
        star = implicit_sgd_oracle(params, x, y, beta=beta, tol=2e-7)
        ostep = flatten_params(star) - flatten_params(params)
        nstep = flatten_grads(newton_update(params, x, y, beta))
        betas.append(beta)
        errors.append(float(np.linalg.norm(ostep - nstep)) / beta)
        beta /= 2.0
    rows = []
    for i, (b, e) in enumerate(zip(betas, errors)):
        ratio = "" if i == 0 else f"{errors[i] / errors[i - 1]:.17g}"
        rows.append((f"{b:.17g}", f"{e:.17g}", ratio))
        print(f"rate {b:<10.5g} discrepancy/rate {e:.6g}"
              + (f"  ratio {errors[i] / errors[i - 1]:.3f}" if i else ""))
    out = args.out or "newton_scaling.csv"
    _write_csv(out, ["beta", "discrepancy_per_rate", "ratio"], rows)
    if not args.no_figures:
        from pclab.figures import save_beta_scaling

        save_beta_scaling(betas, errors, _fig_path(out))
    print(f"report in {out}")
    return 0


def cmd_diagnose_error_trace(args) -> int:
    cfg = _load_config(args)
    spec = NetworkSpec(cfg.layer_dims, cfg.hidden_act, cfg.output_nl)
    params = init_params(spec, cfg.seed)
    x, y = _measurement_batch(cfg, cap=cfg.batch_size)
    schedule = "sequential" if cfg.algorithm == "seqil" else "simultaneous"
    infer_cfg = InferenceConfig(T=cfg.T, epsilon=cfg.epsilon, schedule=schedule, clamp=cfg.clamp)
    trace = error_trace(params, x, y, infer_cfg)
    out = args.out or "error_trace.csv"
    header = ["iteration"] + [f"layer_{l}" for l in range(1, params.n_weights + 1)]
    rows = [
        [t] + [f"{v:.17g}" for v in trace.table[t]]
        for t in range(trace.table.shape[0])
    ]
    _write_csv(out, header, rows)
    if not args.no_figures:
        from pclab.figures import save_error_trace

        save_error_trace(trace, _fig_path(out))
    print(f"{schedule} inference over {infer_cfg.T} iterations; report in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from pclab.network import activity_grads, free_energy, free_energy_weight_grads

    cfg = _load_config(args)
    spec = NetworkSpec(cfg.layer_dims, cfg.hidden_act, cfg.output_nl)
    params = init_params(spec, cfg.seed)
    if params.n_parameters() > 2000:
        print(f"gradcheck on {params.n_parameters()} parameters would be slow; "
              "use a smaller architecture", file=sys.stderr)
        return 1
    state, _, _ = _random_inference_state(cfg, params)
    gam = GammaSchedule.standard(params.n_weights, output_gamma=cfg.clamp_gamma)
    worst_act = 0.0
    grads = activity_grads(params, state, gam, through_output_jacobian=True)
    for l in range(1, state.n_layers):
        def fe(v, l=l):
            probe = state.copy()
            probe.hhat[l] = v.reshape(state.hhat[l].shape)
            refresh_errors(params, probe)
            return free_energy(params, probe, gam)

        fd = finite_diff_grad(fe, state.hhat[l].ravel().copy(), 1e-6)
        rel = np.linalg.norm(grads[l].ravel() - fd) / max(np.linalg.norm(fd), 1e-15)
        worst_act = max(worst_act, rel)

    wg = flatten_grads(free_energy_weight_grads(params, state, gam))

    def fe_w(v):
        probe_params = unflatten_params(params, v)
        probe = state.copy()
        refresh_errors(probe_params, probe)
        return free_energy(probe_params, probe, gam)

    fd_w = finite_diff_grad(fe_w, flatten_params(params), 1e-6)
    worst_w = float(np.linalg.norm(wg - fd_w) / max(np.linalg.norm(fd_w), 1e-15))
    print(f"activity gradients: worst relative error {worst_act:.3g}")
    print(f"weight gradients:   relative error {worst_w:.3g}")
    ok = worst_act < args.tol and worst_w < args.tol
    print("gradcheck PASS" if ok else f"gradcheck FAIL (tolerance {args.tol:g})")
    return 0 if ok else 1


def cmd_count_ops(args) -> int:
    count = matmul_count(args.algorithm, args.layers, args.T)
    print(count.matmuls)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pclab",
        description="Train predictive-coding networks and verify their optimization behavior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the CSV output path")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_train = sub.add_parser("train", help="run a training experiment")
    add_common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_diag = sub.add_parser("diagnose", help="run a measurement protocol")
    diag_sub = p_diag.add_subparsers(dest="protocol", required=True)

    p_prox = diag_sub.add_parser("prox", help="proximal objective during inference")
    add_common(p_prox)
    p_prox.add_argument("--beta", type=float, default=100.0, help="global rate in the objective")
    p_prox.set_defaults(fn=cmd_diagnose_prox)

    p_lem = diag_sub.add_parser("lemma1", help="energy/proximal gradient alignment")
    add_common(p_lem)
    p_lem.add_argument("--beta", type=float, default=1.0, help="global rate in the objective")
    p_lem.set_defaults(fn=cmd_diagnose_lemma1)

    p_t2 = diag_sub.add_parser("theorem2", help="implicit step vs damped Newton step")
    add_common(p_t2)
    p_t2.add_argument("--beta0", type=float, default=0.1, help="starting global rate")
    p_t2.add_argument("--halvings", type=int, default=3, help="number of rate halvings")
    p_t2.set_defaults(fn=cmd_diagnose_theorem2)

    p_et = diag_sub.add_parser("error-trace", help="per-layer error propagation")
    add_common(p_et)
    p_et.set_defaults(fn=cmd_diagnose_error_trace)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    add_common(p_gc)
    p_gc.add_argument("--tol", type=float, default=1e-5, help="relative error tolerance")
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_ops = sub.add_parser("count-ops", help="matrix multiplies per training iteration")
    p_ops.add_argument("--algorithm", required=True, choices=["bp", "il", "seqil"])
    p_ops.add_argument("--layers", required=True, type=int, help="number of weight matrices")
    p_ops.add_argument("--T", type=int, default=None, help="inference iterations (il/seqil)")
    p_ops.set_defaults(fn=cmd_count_ops)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
