from .metrics import eval_lm, eval_span, lm_metrics, span_f1, span_scores
from .optim import Adam, AdamState, adam_step
from .report import emit_report, render_csv, render_markdown
from .train import RunConfig, TrainReport, param_audit, spec_for_task, train_run

__all__ = [
    "Adam",
    "AdamState",
    "RunConfig",
    "TrainReport",
    "adam_step",
    "emit_report",
    "eval_lm",
    "eval_span",
    "lm_metrics",
    "param_audit",
    "render_csv",
    "render_markdown",
    "span_f1",
    "span_scores",
    "spec_for_task",
    "train_run",
]
