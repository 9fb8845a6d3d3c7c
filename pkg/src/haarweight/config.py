"""Experiment configuration: versioned JSON schema, desk-scale defaults.

A config fully determines a run: weight grid, exponents, function counts,
seeds, calibration target, and output directory. Unknown keys are rejected
with the offending path so typos cannot silently change an experiment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .weights import MatrixWeight, WeightFamily, make_weight

__all__ = [
    "SCHEMA_VERSION",
    "EXPERIMENT_IDS",
    "WeightSpec",
    "ExperimentConfig",
    "config_to_dict",
    "load_config",
    "default_config",
]

SCHEMA_VERSION = 1

# run-able experiment ids; the registry in experiments.py must match
EXPERIMENT_IDS = (
    "haar",
    "reducing",
    "stopping",
    "multiplier",
    "equivalence",
    "sharpness",
)

_SPECTRUM_NAMES = ("flat", "geometric", "spike")


@dataclass(frozen=True)
class WeightSpec:
    """One weight in the grid: either a generated family or a file to load."""

    name: str
    family: str = "constant"
    d: int = 1
    n: int = 1
    level: int = 4
    seed: int = 7
    params: dict = field(default_factory=dict)
    file: str | None = None

    def realize(self) -> MatrixWeight:
        if self.file is not None:
            from .serialization import load_weight

            return load_weight(self.file)
        return make_weight(
            WeightFamily(
                family=self.family,
                d=self.d,
                n=self.n,
                level=self.level,
                params=dict(self.params),
                seed=self.seed,
            )
        )


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    experiments: tuple = EXPERIMENT_IDS
    seed: int = 7
    ps: tuple = (2.0, 3.0)
    spectra: tuple = _SPECTRUM_NAMES
    count: int = 50
    calibration_target: float = 0.5
    grids: tuple = ((1, 1, 6), (1, 2, 5), (2, 1, 4))  # (d, n, L) transform checks
    weights: tuple = ()
    sweep_alphas: tuple = ()
    sweep_level: int = 10
    stopping_lambda1: float | None = None  # override: skip calibration when set
    stopping_lambda2: float | None = None
    out_dir: str = "out"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version {self.schema_version} unsupported "
                f"(this library reads version {SCHEMA_VERSION})"
            )
        unknown = set(self.experiments) - set(EXPERIMENT_IDS)
        if unknown:
            raise ConfigError(
                f"unknown experiment ids {sorted(unknown)}; known: {EXPERIMENT_IDS}"
            )
        for p in self.ps:
            if not 1.0 < p:
                raise ConfigError(f"exponents must exceed 1, got {p}")
        bad = set(self.spectra) - set(_SPECTRUM_NAMES)
        if bad:
            raise ConfigError(
                f"unknown spectra {sorted(bad)}; known: {_SPECTRUM_NAMES}"
            )
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if not 0.0 < self.calibration_target < 1.0:
            raise ConfigError(
                f"calibration_target must lie in (0, 1), got {self.calibration_target}"
            )
        for g in self.grids:
            if len(g) != 3 or g[0] < 1 or g[1] < 1 or g[2] < 0:
                raise ConfigError(f"grids entries are (d, n, L) triples, got {g!r}")
        names = [w.name for w in self.weights]
        if len(names) != len(set(names)):
            raise ConfigError(f"duplicate weight names in config: {names}")
        lams = (self.stopping_lambda1, self.stopping_lambda2)
        if (lams[0] is None) != (lams[1] is None):
            raise ConfigError("stopping_lambda1 and stopping_lambda2 come as a pair")
        if lams[0] is not None and (lams[0] <= 1.0 or lams[1] <= 1.0):
            raise ConfigError(f"stopping threshold overrides must exceed 1, got {lams}")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name == "weights":
            val = [
                {k: getattr(w, k) for k in (
                    "name", "family", "d", "n", "level", "seed", "params", "file"
                )}
                for w in val
            ]
        elif isinstance(val, tuple):
            val = [list(v) if isinstance(v, tuple) else v for v in val]
        out[f.name] = val
    return out


def _check_keys(given: dict, allowed, where: str):
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown config key(s) {sorted(unknown)} at {where}; "
            f"allowed: {sorted(allowed)}"
        )


def _config_from_dict(raw: dict) -> ExperimentConfig:
    field_names = [f.name for f in fields(ExperimentConfig)]
    _check_keys(raw, field_names, "top level")
    kw = dict(raw)
    if "weights" in kw:
        spec_names = [f.name for f in fields(WeightSpec)]
        specs = []
        for i, w in enumerate(kw["weights"]):
            if not isinstance(w, dict) or "name" not in w:
                raise ConfigError(f"weights[{i}] must be an object with a 'name'")
            _check_keys(w, spec_names, f"weights[{i}] ({w.get('name', '?')})")
            specs.append(WeightSpec(**w))
        kw["weights"] = tuple(specs)
    for key in ("experiments", "ps", "spectra", "sweep_alphas"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if "grids" in kw:
        kw["grids"] = tuple(tuple(g) for g in kw["grids"])
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return _config_from_dict(raw)


# ---------------------------------------------------------------------------
# desk-scale defaults: the acceptance weight suite and the alpha sweep


def suite_weight_specs() -> tuple:
    """Nine weights covering d in {1,2}, n in {1,2,3}, all four families."""
    return (
        WeightSpec("id2-const", "constant", 1, 2, 8, params={"matrix": [[1.0, 0.0], [0.0, 1.0]]}),
        WeightSpec("pow-a03", "power", 1, 1, 10, params={"alpha": 0.3}),
        WeightSpec("pow-am08", "power", 1, 1, 10, params={"alpha": -0.8}),
        WeightSpec("pow2-a06", "power", 1, 2, 7, params={"alpha": 0.6}),
        WeightSpec("rot-a06", "rotating", 1, 2, 7, params={"alpha": 0.6}),
        WeightSpec("logb3-s04", "logbrownian", 1, 3, 6, params={"sigma": 0.4}),
        WeightSpec("const-diag19", "constant", 1, 2, 6, params={"matrix": [[1.0, 0.0], [0.0, 9.0]]}),
        WeightSpec("pow2d-a05", "power", 2, 1, 5, params={"alpha": 0.5}),
        WeightSpec("rot2d-a05", "rotating", 2, 2, 4, params={"alpha": 0.5}),
    )


def sweep_alpha_grid() -> tuple:
    """In-range power exponents whose characteristic spans > 2 decades at L=10.

    The singular branch alpha -> -1 tracks 1/(1 - alpha^2) on the dyadic grid;
    the flat point 0.5 anchors the low end.
    """
    return (0.5, -0.5, -0.75, -0.875, -0.9375, -0.96875,
            -0.984375, -0.9921875, -0.99609375, -0.998046875)


def default_config(out_dir: str = "out") -> ExperimentConfig:
    return ExperimentConfig(
        weights=suite_weight_specs(),
        sweep_alphas=sweep_alpha_grid(),
        out_dir=out_dir,
    )
