"""Command line tests driven through main(argv): exit codes, artifact
paths, and the threshold-degenerate negative control for verify."""

import json

import numpy as np
import pytest

from haarweight import ExperimentConfig, WeightFamily, WeightSpec, make_weight, save_weight
from haarweight.cli import main
from haarweight.config import config_to_dict


def write_config(tmp_path, **over):
    base = dict(
        experiments=("haar", "reducing"),
        seed=3,
        ps=(2.0,),
        count=5,
        grids=((1, 1, 3),),
        weights=(
            WeightSpec("wa", family="power", d=1, n=1, level=4,
                       params={"alpha": -0.5}),
            WeightSpec("wb", family="rotating", d=1, n=2, level=3,
                       params={"alpha": 0.4}, seed=2),
        ),
        sweep_alphas=(0.5, -0.5, -0.8),
        sweep_level=5,
        out_dir=str(tmp_path / "out"),
    )
    base.update(over)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_to_dict(ExperimentConfig(**base))))
    return path


def test_run_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--workers", "2"]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert any(line.endswith("manifest.json") for line in printed)
    assert (tmp_path / "out" / "haar_checks.csv").exists()


def test_run_single_experiment(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "only"
    assert main(["run", "--config", str(cfg), "--experiment", "haar",
                 "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"haar_checks.csv", "manifest.json"}


def test_run_reports_cell_failures(tmp_path, capsys):
    w = make_weight(WeightFamily("constant", 1, 2, 2, params={"matrix": np.eye(2)}))
    path = save_weight(w, tmp_path / "w.csv")
    lines = path.read_text().splitlines()
    lines[2] = "-1.0,0.0,-1.0"
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    cfg = write_config(
        tmp_path,
        experiments=("reducing",),
        weights=(
            WeightSpec("good", family="power", d=1, n=1, level=3,
                       params={"alpha": 0.3}),
            WeightSpec("broken", file=str(tmp_path / "bad.csv")),
        ),
    )
    assert main(["run", "--config", str(cfg)]) == 1
    assert "failures.csv" in capsys.readouterr().err
    assert (tmp_path / "out" / "failures.csv").exists()


def test_bad_config_is_exit_2(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text("{broken")
    assert main(["run", "--config", str(p)]) == 2
    assert "error:" in capsys.readouterr().err
    p.write_text(json.dumps({"schema_version": 99}))
    assert main(["run", "--config", str(p)]) == 2


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--experiment", "mystery"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_calibrate_prints_table(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["calibrate", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "lambda1" in out.splitlines()[0]
    assert "wa" in out and "wb" in out


def test_dump_weight(tmp_path):
    cfg = write_config(tmp_path)
    target = tmp_path / "wa.csv"
    assert main(["dump-weight", "wa", "--config", str(cfg),
                 "--out", str(target)]) == 0
    assert target.read_text().startswith("# haarweight matrix-weight v1")
    assert main(["dump-weight", "missing", "--config", str(cfg)]) == 2


def test_dump_stopping(tmp_path):
    cfg = write_config(tmp_path)
    target = tmp_path / "tree.json"
    assert main(["dump-stopping", "wa", "--p", "2", "--config", str(cfg),
                 "--out", str(target)]) == 0
    tree = json.loads(target.read_text())
    assert tree["p"] == 2.0 and tree["generation_count"] >= 1


def test_verify_negative_control(tmp_path, capsys):
    # thresholds barely above 1 stop everywhere, breaking geometric decay
    cfg = write_config(tmp_path, stopping_lambda1=1.0001,
                       stopping_lambda2=1.0001)
    assert main(["verify", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "stopping-decay: FAIL" in out
    assert "failing:" in out
