"""Tabular reports laid out like the parameter / time / quality comparison tables."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from .train import TrainReport

METRICS = {"HRED": ("ppl", "err_rate"), "RNET": ("EM", "F1")}
CSV_COLUMNS = ["model", "variant", "params", "secs_per_epoch", "epochs", "ppl", "err_rate", "EM", "F1"]
TIMING_COLUMNS = ("secs_per_epoch",)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _ratio_rows(reports: Sequence[TrainReport]) -> list[dict]:
    rows = []
    for family in dict.fromkeys(r.family for r in reports):
        base = [r for r in reports if r.family == family and r.variant == "baseline"]
        simp = [r for r in reports if r.family == family and r.variant == "simplified"]
        if base and simp:
            b, s = base[0], simp[0]
            rows.append({
                "model": family,
                "variant": "ratio (simplified/baseline)",
                "params": _fmt(s.trainable_params / b.trainable_params),
                "secs_per_epoch": _fmt(s.median_secs / b.median_secs) if b.secs_per_epoch and s.secs_per_epoch else "",
            })
    return rows


def report_rows(reports: Sequence[TrainReport]) -> list[dict]:
    rows = []
    for r in reports:
        row = {
            "model": r.family,
            "variant": r.variant,
            "params": str(r.trainable_params),
            "secs_per_epoch": _fmt(r.median_secs) if r.secs_per_epoch else "",
            "epochs": str(r.epochs_run),
        }
        for k in METRICS[r.family]:
            if k in r.final:
                row[k] = _fmt(r.final[k])
        rows.append(row)
    return rows + _ratio_rows(reports)


def render_csv(reports: Sequence[TrainReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, restval="", lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(reports))
    return buf.getvalue()


def render_markdown(reports: Sequence[TrainReport]) -> str:
    lines = [
        "| Model | Variant | Trainable Parameters | Training Time (secs * epochs) | Performance |",
        "|---|---|---|---|---|",
    ]
    for row in report_rows(reports):
        fam = row["model"]
        if row["variant"].startswith("ratio"):
            lines.append(f"| {fam} | {row['variant']} | {row['params']} | {row['secs_per_epoch']} | |")
            continue
        perf = ", ".join(f"{k} {row[k]}" for k in METRICS[fam] if k in row)
        time_cell = f"{row['secs_per_epoch']} * {row['epochs']}" if row["secs_per_epoch"] else f"- * {row['epochs']}"
        lines.append(f"| {fam} | {row['variant']} | {int(row['params']):,} | {time_cell} | {perf} |")
    return "\n".join(lines) + "\n"


def emit_report(reports: Sequence[TrainReport], path, fmt: str = "csv") -> Path:
    """Write one row per run plus a simplified/baseline ratio row per family."""
    if not reports:
        raise ValueError("emit_report needs at least one report")
    text = render_csv(reports) if fmt == "csv" else render_markdown(reports)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
