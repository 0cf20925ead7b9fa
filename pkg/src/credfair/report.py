"""Render metrics and fairness JSON into the two result tables (CSV) and a markdown summary."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

ACCURACY_COLUMNS = ("Model", "DK Type", "ML model", "Pre", "Rec", "F1", "FP Cost", "FN Cost")
DISPARITY_COLUMNS = ("clf", "E[TPR]_M", "E[TPR]_F", "Δ", "reject H0")
METRIC_KEYS = ("precision", "recall", "f1", "fp_cost", "fn_cost")
# the classical average leaves out the coin-flip row; the prompt average leaves out the no-dk prompt
EXCLUDED_FROM_AVG = {"random", "prompt-0"}


class ReportInputMissing(FileNotFoundError):
    def __init__(self, missing: list[str]):
        self.missing = missing
        super().__init__(f"cannot emit report, missing: {', '.join(missing)}")


def fmt_metric(x: float) -> str:
    return f"{x:.4f}"


def fmt_cost(x: float) -> str:
    return f"{x:.1f}"


def _row(model: str, dk_type: str, ml_model: str, values) -> list[str]:
    p, r, f, fp, fn = values
    return [model, dk_type, ml_model, fmt_metric(p), fmt_metric(r), fmt_metric(f), fmt_cost(fp), fmt_cost(fn)]


def _section(entries: list[dict], dk_of, ml_of) -> list[list[str]]:
    rows = [_row(e["model"], dk_of(e), ml_of(e), [e["metrics"][k] for k in METRIC_KEYS]) for e in entries]
    pooled = [[e["metrics"][k] for k in METRIC_KEYS] for e in entries if e["model"] not in EXCLUDED_FROM_AVG]
    if pooled:
        rows.append(_row("Avg", "-", "-", np.mean(pooled, axis=0)))
    return rows


def accuracy_rows(metrics_json: dict) -> list[list[str]]:
    rows = _section(metrics_json.get("classical", []), lambda e: "-", lambda e: "-")
    rows += _section(metrics_json.get("prompts", []), lambda e: e["dk_type"],
                     lambda e: e["ml_model"] if e["ml_model"] != "Ensemble" else "ensemble")
    return rows


def disparity_rows(fairness_json: dict) -> list[list[str]]:
    rows = []
    for r in fairness_json.get("results", []):
        if "error" in r:
            rows.append([r["clf"], "n/a", "n/a", "n/a", "n/a"])
        else:
            rows.append([r["clf"], fmt_metric(r["e_tpr_m"]), fmt_metric(r["e_tpr_f"]),
                         fmt_metric(r["delta"]), str(bool(r["reject_h0"]))])
    return rows


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _markdown_table(columns, rows) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def emit_report(run_dir: str | Path) -> dict[str, Path]:
    """Write ``accuracy.csv``, ``disparity.csv`` and ``report.md`` next to the JSON inputs."""
    run_dir = Path(run_dir)
    missing = [name for name in ("metrics.json", "fairness.json") if not (run_dir / name).exists()]
    if missing:
        raise ReportInputMissing(missing)
    m = json.loads((run_dir / "metrics.json").read_text())
    f = json.loads((run_dir / "fairness.json").read_text())
    acc, disp = accuracy_rows(m), disparity_rows(f)

    out = {"accuracy": run_dir / "accuracy.csv", "disparity": run_dir / "disparity.csv", "report": run_dir / "report.md"}
    out["accuracy"].write_text(_csv(ACCURACY_COLUMNS, acc))
    out["disparity"].write_text(_csv(DISPARITY_COLUMNS, disp))

    notes = []
    for e in m.get("prompts", []):
        if e.get("n_unparseable"):
            notes.append(f"- {e['model']}: {e['n_unparseable']} unparseable completions ({e['policy']} policy)")
    for r in f.get("results", []):
        if "error" in r:
            notes.append(f"- {r['clf']}: fairness test not computed ({r['error']})")
    md = [
        "# Credit-risk experiment report", "",
        "## Accuracy and cost", "",
        "Averages exclude the random baseline (classical section) and prompt-0 (prompt section).", "",
        _markdown_table(ACCURACY_COLUMNS, acc), "",
        "## TPR disparity by sex", "",
        f"Test: {f.get('test')}, alpha = {f.get('alpha')}, resamples = {f.get('n_resamples')}.", "",
        _markdown_table(DISPARITY_COLUMNS, disp), "",
    ]
    if notes:
        md += ["## Notes", "", *notes, ""]
    out["report"].write_text("\n".join(md))
    return out
