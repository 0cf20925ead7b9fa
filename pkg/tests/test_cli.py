import json

import pytest
import yaml

from credfair.cli import build_parser, main
from credfair.config import apply_overrides, load_config
from credfair.pipeline import STAGES, read_manifest


def _config_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({
        "models": ["random"],
        "search": {"iters": 2, "folds": 2},
        "prompts": {"indices": [0], "incontext_n": 2},
        "fairness": {"n_resamples": 100},
    }))
    return path


def test_subcommands_cover_every_stage():
    parser = build_parser()
    for cmd in (*STAGES, "run"):
        assert parser.parse_args([cmd]).command == cmd
    with pytest.raises(SystemExit):
        parser.parse_args(["explain"])


def test_list_flags():
    args = build_parser().parse_args(["run", "--prompts", "0,3,9", "--models", "RF, LR"])
    assert args.prompts == [0, 3, 9] and args.models == ["RF", "LR"]
    assert build_parser().parse_args(["run", "--prompts", "none"]).prompts == []


def test_flags_override_file_values(tmp_path):
    cfg = apply_overrides(load_config(_config_file(tmp_path)), seed=7, backend="mock", mock_rule="coin",
                          prompts=[1, 2], test="permutation", out=tmp_path / "o")
    assert cfg.models == ["random"] and cfg.search.iters == 2
    assert (cfg.dataset.split_seed, cfg.search.seed, cfg.fairness.seed, cfg.backend.mock_seed) == (7, 7, 7, 7)
    assert cfg.prompts.indices == [1, 2] and cfg.fairness.test == "permutation"
    assert cfg.backend.mock_rule == "coin" and cfg.output_dir == str(tmp_path / "o")


def test_run_then_resume(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", "--config", str(_config_file(tmp_path)), "--out", str(out), "--mock-rule", "always-bad"]) == 0
    printed = capsys.readouterr().out.splitlines()
    run_dir = out / printed[0].rsplit("/", 1)[-1]
    assert printed[1].startswith("Model,DK Type,ML model")
    assert read_manifest(run_dir)["stages"] == list(STAGES)
    assert json.loads((run_dir / "config.json").read_text())["backend"]["mock_rule"] == "always-bad"
    before = {p: p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}
    assert main(["run", "--resume", "--run-dir", str(run_dir)]) == 0
    assert {p: p.read_bytes() for p in run_dir.rglob("*") if p.is_file()} == before


def test_stage_subcommand_stops_early(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["ingest", "--config", str(_config_file(tmp_path)), "--out", str(out)]) == 0
    run_dir = capsys.readouterr().out.strip().splitlines()[0]
    assert read_manifest(run_dir)["stages"] == ["ingest"]
    assert main(["tune", "--resume", "--run-dir", run_dir]) == 0
    assert read_manifest(run_dir)["stages"] == ["ingest", "tune"]


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path), "--prompts", "12"]) == 1
    assert "prompt indices" in capsys.readouterr().err
    assert main(["run", "--resume", "--run-dir", str(tmp_path / "missing")]) == 1
