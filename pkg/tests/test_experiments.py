"""Experiment runner tests: artifact layout, manifests, determinism,
per-cell failure isolation, and worker-pool configuration."""

import json
from pathlib import Path

import numpy as np
import pytest

from haarweight import (
    ConfigError,
    ExperimentConfig,
    RunContext,
    WeightFamily,
    WeightSpec,
    alpha_sweep_report,
    make_weight,
    run_experiments,
    save_weight,
)
from haarweight.experiments import default_workers
from haarweight.serialization import sha256_file


def tiny_config(out_dir, **over):
    base = dict(
        experiments=("haar", "reducing", "stopping", "multiplier",
                     "equivalence", "sharpness"),
        seed=3,
        ps=(2.0,),
        count=6,
        grids=((1, 1, 3), (1, 2, 2)),
        weights=(
            WeightSpec("wa", family="power", d=1, n=1, level=4,
                       params={"alpha": -0.5}),
            WeightSpec("wb", family="rotating", d=1, n=2, level=3,
                       params={"alpha": 0.4}, seed=2),
        ),
        sweep_alphas=(0.5, -0.5, -0.8),
        sweep_level=5,
        out_dir=str(out_dir),
    )
    base.update(over)
    return ExperimentConfig(**base)


def test_run_writes_expected_artifacts(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    result = run_experiments(cfg, workers=2)
    assert result.ok
    names = {p.name for p in result.files}
    assert {
        "haar_checks.csv", "reducing_scan.csv", "stopping_decay.csv",
        "multiplier_bounds.csv", "equivalence_summary.csv",
        "equivalence_ratios.csv", "sharpness_sweep.csv",
        "sharpness_report.json", "manifest.json",
    } <= names
    assert "equivalence_wa_p2.json" in names and "equivalence_wb_p2.json" in names


def test_manifest_covers_every_file(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    result = run_experiments(cfg, workers=1)
    manifest = json.loads((result.out_dir / "manifest.json").read_text())
    listed = set(manifest["files"])
    on_disk = {p.name for p in result.out_dir.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for name, digest in manifest["files"].items():
        assert sha256_file(result.out_dir / name) == digest


def test_byte_identical_reruns(tmp_path):
    cfg = tiny_config(tmp_path / "a")
    r1 = run_experiments(cfg, workers=3)
    r2 = run_experiments(cfg, out_dir=tmp_path / "b", workers=1)
    for f1 in r1.files:
        if f1.suffix == ".csv" or f1.name == "sharpness_report.json":
            f2 = Path(tmp_path / "b" / f1.name)
            assert f1.read_bytes() == f2.read_bytes(), f1.name
    # manifests agree on content hashes (timestamps may differ)
    m1 = json.loads((tmp_path / "a" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert m1["files"] == m2["files"]
    assert m1["config_sha256"] == m2["config_sha256"]


def test_seed_changes_outputs(tmp_path):
    r1 = run_experiments(
        tiny_config(tmp_path / "a", experiments=("equivalence",)), workers=2)
    r2 = run_experiments(
        tiny_config(tmp_path / "b", experiments=("equivalence",), seed=4),
        workers=2)
    a = (tmp_path / "a" / "equivalence_ratios.csv").read_bytes()
    b = (tmp_path / "b" / "equivalence_ratios.csv").read_bytes()
    assert a != b


def test_cell_failure_isolation(tmp_path):
    w = make_weight(WeightFamily("constant", 1, 2, 2, params={"matrix": np.eye(2)}))
    path = save_weight(w, tmp_path / "w.csv")
    lines = path.read_text().splitlines()
    lines[2] = "-1.0,0.0,-1.0"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    cfg = tiny_config(
        tmp_path / "out",
        experiments=("reducing",),
        weights=(
            WeightSpec("good", family="power", d=1, n=1, level=3,
                       params={"alpha": 0.3}),
            WeightSpec("broken", file=str(bad)),
        ),
    )
    result = run_experiments(cfg, workers=2)
    assert not result.ok
    assert any(f.cell == "('broken', 2.0)" for f in result.failures)
    scan = (result.out_dir / "reducing_scan.csv").read_text()
    assert "good" in scan  # the healthy cell still ran
    failures = (result.out_dir / "failures.csv").read_text()
    assert "MatrixDomainError" in failures


def test_experiment_selection(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    result = run_experiments(cfg, experiment="haar", workers=1)
    assert {p.name for p in result.files} == {"haar_checks.csv", "manifest.json"}
    result = run_experiments(cfg, experiment=["haar", "reducing"],
                             out_dir=tmp_path / "out2", workers=1)
    assert {p.name for p in result.files} == {
        "haar_checks.csv", "reducing_scan.csv", "manifest.json"}
    with pytest.raises(ConfigError, match="unknown experiment"):
        run_experiments(cfg, experiment="mystery")


def test_stopping_dump_per_weight(tmp_path):
    cfg = tiny_config(tmp_path / "out", experiments=("stopping",))
    result = run_experiments(cfg, dump_stopping=True, workers=1)
    names = {p.name for p in result.files}
    assert "stopping_wa_p2.json" in names and "stopping_wb_p2.json" in names
    tree = json.loads((result.out_dir / "stopping_wa_p2.json").read_text())
    assert tree["generation_count"] >= 1


def test_lambda_overrides_reach_trees(tmp_path):
    cfg = tiny_config(tmp_path / "out", stopping_lambda1=1.0001,
                      stopping_lambda2=1.0001)
    ctx = RunContext(cfg)
    sc = ctx.stopping_config("wa", 2.0)
    assert sc.lambda1 == 1.0001 and sc.lambda2 == 1.0001
    # degenerate thresholds fire far more generations than calibrated ones
    assert ctx.tree("wa", 2.0).generation_count() >= 3


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("HAARWEIGHT_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("HAARWEIGHT_WORKERS", "0")
    with pytest.raises(ConfigError):
        default_workers()
    monkeypatch.setenv("HAARWEIGHT_WORKERS", "many")
    with pytest.raises(ConfigError):
        default_workers()
    monkeypatch.delenv("HAARWEIGHT_WORKERS")
    assert default_workers() >= 1


def test_run_context_caches():
    ctx = RunContext(tiny_config("unused"))
    assert ctx.weight("wa") is ctx.weight("wa")
    assert ctx.family("wb", 2.0) is ctx.family("wb", 2.0)
    with pytest.raises(ConfigError, match="no weight named"):
        ctx.weight("nope")


def test_alpha_sweep_report_shape():
    rep = alpha_sweep_report((0.5, -0.5, -0.8), level=5, count=5, seed=1)
    assert not rep["failed"]
    assert {r["alpha"] for r in rep["rows"]} == {0.5, -0.5, -0.8}
    chars = [r["char"] for r in rep["rows"]]
    assert chars == sorted(chars)  # rows come back ordered by characteristic
    for key in ("eq_ratio_slope", "eq_inverse_slope",
                "probe_ratio_slope", "probe_inverse_slope"):
        assert np.isfinite(rep[key]["slope"])
    assert rep["char_decades"] == pytest.approx(
        np.log10(max(chars) / min(chars)))
