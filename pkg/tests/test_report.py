import csv
import json

import pytest

from credfair.report import ACCURACY_COLUMNS, DISPARITY_COLUMNS, ReportInputMissing, emit_report


def _metrics(p, r, f, fp, fn):
    return {"precision": p, "recall": r, "f1": f, "fp_cost": fp, "fn_cost": fn}


def _write(run_dir, metrics, fairness):
    (run_dir / "metrics.json").write_text(json.dumps(metrics))
    (run_dir / "fairness.json").write_text(json.dumps(fairness))


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


FAIR = {"test": "bootstrap", "alpha": 0.05, "n_resamples": 1000, "seed": 0, "results": []}


def test_one_model_one_row_four_decimals(tmp_path):
    m = {"classical": [{"model": "RF", "kind": "random_forest", "metrics": _metrics(0.81534, 0.9078, 0.85913, 145, 13)}],
         "prompts": []}
    _write(tmp_path, m, FAIR)
    out = emit_report(tmp_path)
    rows = _rows(out["accuracy"])
    assert tuple(rows[0]) == ACCURACY_COLUMNS
    assert rows[1] == ["RF", "-", "-", "0.8153", "0.9078", "0.8591", "145.0", "13.0"]
    # the average row repeats the single model
    assert rows[2][0] == "Avg" and rows[2][3:] == rows[1][3:]


def test_delta_rendering(tmp_path):
    fair = dict(FAIR, results=[{"clf": "RF", "e_tpr_m": 0.6611, "e_tpr_f": 0.6325, "delta": 0.6611 - 0.6325,
                                "reject_h0": True, "ci_low": 0.01, "ci_high": 0.05}])
    _write(tmp_path, {"classical": [], "prompts": []}, fair)
    rows = _rows(emit_report(tmp_path)["disparity"])
    assert tuple(rows[0]) == DISPARITY_COLUMNS
    assert rows[1] == ["RF", "0.6611", "0.6325", "0.0286", "True"]


def test_classical_average_excludes_random(tmp_path):
    m = {"classical": [
        {"model": "RF", "kind": "random_forest", "metrics": _metrics(0.8, 0.9, 0.85, 100, 10)},
        {"model": "LR", "kind": "logistic_regression", "metrics": _metrics(0.7, 0.8, 0.75, 150, 20)},
        {"model": "random", "kind": "random", "metrics": _metrics(0.1, 0.1, 0.1, 900, 90)},
    ], "prompts": []}
    _write(tmp_path, m, FAIR)
    rows = _rows(emit_report(tmp_path)["accuracy"])
    assert [r[0] for r in rows[1:]] == ["RF", "LR", "random", "Avg"]
    assert rows[-1][3:] == ["0.7500", "0.8500", "0.8000", "125.0", "15.0"]


def test_prompt_section_average_excludes_prompt_zero(tmp_path):
    m = {"classical": [], "prompts": [
        {"model": "prompt-0", "index": 0, "dk_type": "No dk", "ml_model": "-", "n_unparseable": 0,
         "policy": "strict", "metrics": _metrics(0, 0, 0, 0, 0)},
        {"model": "prompt-9", "index": 9, "dk_type": "MLFI", "ml_model": "Ensemble", "n_unparseable": 2,
         "policy": "strict", "metrics": _metrics(0.5, 0.5, 0.5, 50, 5)},
    ]}
    _write(tmp_path, m, FAIR)
    out = emit_report(tmp_path)
    rows = _rows(out["accuracy"])
    assert rows[2][:3] == ["prompt-9", "MLFI", "ensemble"]
    assert rows[3] == ["Avg", "-", "-", "0.5000", "0.5000", "0.5000", "50.0", "5.0"]
    assert "2 unparseable" in out["report"].read_text()


def test_markdown_embeds_both_tables(tmp_path):
    _write(tmp_path, {"classical": [], "prompts": []}, dict(FAIR, results=[{"clf": "KNN", "error": "tpr undefined"}]))
    md = emit_report(tmp_path)["report"].read_text()
    assert "| " + " | ".join(ACCURACY_COLUMNS) + " |" in md
    assert "| KNN | n/a | n/a | n/a | n/a |" in md
    assert "not computed" in md


def test_missing_inputs_are_listed(tmp_path):
    with pytest.raises(ReportInputMissing) as err:
        emit_report(tmp_path)
    assert err.value.missing == ["metrics.json", "fairness.json"]
    (tmp_path / "metrics.json").write_text("{}")
    with pytest.raises(ReportInputMissing, match="fairness.json"):
        emit_report(tmp_path)
