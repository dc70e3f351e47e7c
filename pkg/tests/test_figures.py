import numpy as np

from pclab.diagnostics import AlignmentReport, ErrorTrace, ProxTrace
from pclab.figures import (
    save_alignment_report,
    save_beta_scaling,
    save_error_trace,
    save_prox_trace,
    save_training_curves,
    save_update_magnitudes,
)
from pclab.training import MetricsRecord


def test_training_curves(tmp_path):
    records = [
        MetricsRecord(1, 10, 0.5, 0.55, 0.6, [0.01, 0.02], "1.0", "ok"),
        MetricsRecord(2, 20, 0.3, 0.35, 0.8, [0.01, 0.02], "2.0", "ok"),
    ]
    out = save_training_curves(records, tmp_path / "curves.png")
    assert out.exists() and out.stat().st_size > 0


def test_error_trace_figure(tmp_path):
    trace = ErrorTrace(schedule="simultaneous", table=np.array([[0.0, 0.1], [0.05, 0.2]]))
    out = save_error_trace(trace, tmp_path / "trace.png")
    assert out.exists() and out.stat().st_size > 0


def test_prox_trace_figure(tmp_path):
    traces = {
        "il": ProxTrace(beta=100.0, values=[1.0, 0.9, 0.8]),
        "seqil": ProxTrace(beta=100.0, values=[1.0, 0.7, 0.6]),
    }
    out = save_prox_trace(traces, tmp_path / "prox.png")
    assert out.exists() and out.stat().st_size > 0


def test_update_magnitudes_figure(tmp_path):
    out = save_update_magnitudes(
        {"fixed": [1e-4, 1e-3, 1e-2], "adaptive": [5e-3, 6e-3, 7e-3]},
        tmp_path / "mags.png",
    )
    assert out.exists() and out.stat().st_size > 0


def test_beta_scaling_figure(tmp_path):
    out = save_beta_scaling([0.1, 0.05, 0.025], [1e-2, 2.5e-3, 6e-4], tmp_path / "b.png")
    assert out.exists() and out.stat().st_size > 0


def test_alignment_figure(tmp_path):
    reports = [
        AlignmentReport(1, np.array([1.0, 1.0]), 1e-9, 1.0, True),
        AlignmentReport(2, np.array([1.0, 1.0]), 2e-9, 1.0, True),
    ]
    out = save_alignment_report(reports, tmp_path / "al.png")
    assert out.exists() and out.stat().st_size > 0
