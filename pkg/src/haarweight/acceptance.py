"""The thirteen acceptance checks, one function per criterion.

Each check returns a CriterionResult with the measured quantities in its
details string; run_all prints one pass/fail line per criterion. Empirical
caps are frozen here with the measurements that motivated them; they are
reported, never tuned per weight.
"""

from __future__ import annotations

import math
import tempfile
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import (
    block_partition_constant,
    cross_term_rate,
    dual_square_norm,
    equivalence_ratios,
    random_mean_zero_coefficients,
)
from .config import ExperimentConfig, default_config
from .dyadic import GridFunction, haar_reconstruct, haar_transform, lp_norm
from .errors import HaarweightError
from .experiments import RunContext, alpha_sweep_report, run_experiments
from .multipliers import t_blocks, t_operator
from .reducing import build_reducing_family, conjugate_exponent, duality_check
from .stopping import (
    StoppingConfig,
    build_generations,
    calibrate_lambdas,
    decay_ratio,
    restrict_coefficients,
)
from .weights import (
    MatrixWeight,
    WeightFamily,
    make_weight,
    spd_power_stack,
    weighted_lp_norm,
)

__all__ = ["CriterionResult", "AcceptanceContext", "CRITERIA", "run_all"]

# frozen empirical caps (suite measurements in parentheses)
_C7_CAP = 2.0  # block partition constant: measured max 1.002 over the suite
_C10_CAP = 4.0  # normalized equivalence constants: measured max 1.13
_C12_CAP = 10.0  # dual square bound: measured max 1.09; documented anchor 10
_SHARP_RATIO_WINDOW = (0.35, 0.65)  # scalar sharp 1/2 +- 0.15
_SHARP_INVERSE_WINDOW = (0.85, 1.15)  # scalar sharp 1 +- 0.15


@dataclass(frozen=True)
class CriterionResult:
    cid: int
    name: str
    passed: bool
    details: str

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"criterion {self.cid:02d} {self.name}: {mark} ({self.details})"


class AcceptanceContext(RunContext):
    """RunContext plus the alpha sweep and cached negative-control trees."""

    def __init__(self, config: ExperimentConfig | None = None):
        super().__init__(config or default_config())
        self._sweep = None

    def sweep(self) -> dict:
        if self._sweep is None:
            self._sweep = alpha_sweep_report(
                self.config.sweep_alphas,
                level=self.config.sweep_level,
                count=self.config.count,
                seed=self.config.seed,
            )
        return self._sweep

    def cells(self):
        return [(w.name, p) for w in self.config.weights for p in self.config.ps]


def _blocks(cells: np.ndarray, d: int, l: int, big: int) -> np.ndarray:
    """(2^big,)*d + tail -> (cubes at level l, cells per cube) + tail."""
    h, b = 1 << l, 1 << (big - l)
    tail = cells.shape[d:]
    arr = cells.reshape(sum(([h, b] for _ in range(d)), []) + list(tail))
    order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    order += [2 * d + i for i in range(len(tail))]
    return arr.transpose(order).reshape((h**d, b**d) + tail)


# ---------------------------------------------------------------------------
# criteria


def c01_haar_exactness(ctx: AcceptanceContext) -> CriterionResult:
    """Round-trip and Parseval errors <= 1e-10, 100 functions per (d, L)."""
    worst_rt = worst_pv = 0.0
    grids = [(1, level) for level in range(1, 11)] + [(2, level) for level in range(1, 7)]
    for d, level in grids:
        for i in range(100):
            n = (i % 3) + 1
            rng = np.random.default_rng([ctx.config.seed, 1, d, level, i])
            f = GridFunction(
                d, n, level, rng.standard_normal(((1 << level),) * d + (n,))
            )
            coeffs = haar_transform(f)
            back = haar_reconstruct(coeffs)
            worst_rt = max(worst_rt, float(np.abs(back.values - f.values).max()))
            energy = math.sqrt(
                float(np.dot(coeffs.root_scaling, coeffs.root_scaling))
                + coeffs.detail_l2() ** 2
            )
            worst_pv = max(worst_pv, abs(lp_norm(f, 2.0) - energy))
    passed = worst_rt <= 1e-10 and worst_pv <= 1e-10
    return CriterionResult(
        1, "haar-exactness", passed,
        f"max roundtrip {worst_rt:.2e}, max parseval {worst_pv:.2e}, "
        f"{len(grids)} (d,L) cells x 100 fn",
    )


def c02_p2_oracle(ctx: AcceptanceContext) -> CriterionResult:
    """p=2 operators equal exact square roots of cube averages everywhere."""
    worst = 0.0
    for w in ctx.config.weights:
        weight = ctx.weight(w.name)
        fam = ctx.family(w.name, 2.0)
        for sign, stack in ((1.0, fam.v), (-1.0, fam.v_dual)):
            cells = weight.power_cells(sign)
            for l in range(fam.max_depth + 1):
                avg = _blocks(cells, weight.d, l, weight.level).mean(axis=1)
                want = spd_power_stack(avg, 0.5)
                got = stack[l].reshape(want.shape)
                worst = max(worst, float(np.abs(got - want).max()))
    return CriterionResult(
        2, "p2-reducing-oracle", worst <= 1e-10,
        f"max |V - (m_I W)^(1/2)| = {worst:.2e} over every cube, both sides",
    )


def c03_john_sandwich(ctx: AcceptanceContext) -> CriterionResult:
    """p=3 sandwich on 1000 fresh directions per cube, slack 1 + 1e-3."""
    p, m, slack = 3.0, 1000, 1.0 + 1e-3
    worst_lo = worst_hi = 0.0  # max violations of the two inequalities
    for w in ctx.config.weights:
        weight = ctx.weight(w.name)
        fam = ctx.family(w.name, p)
        wp = weight.power_cells(1.0 / p)
        sqrt_n = math.sqrt(weight.n)
        for l in range(fam.max_depth + 1):
            blocks = _blocks(wp, weight.d, l, weight.level)
            cubes = blocks.shape[0]
            tag = zlib.crc32(w.name.encode())
            rng = np.random.default_rng([ctx.config.seed, 3, tag, l])
            dirs = rng.standard_normal((cubes, m, weight.n))
            dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
            x = np.einsum("kcij,kmj->kcmi", blocks, dirs)
            rho = (np.linalg.norm(x, axis=-1) ** p).mean(axis=1) ** (1.0 / p)
            v = fam.v[l].reshape(cubes, weight.n, weight.n)
            ve = np.linalg.norm(np.einsum("kij,kmj->kmi", v, dirs), axis=-1)
            worst_lo = max(worst_lo, float((rho / (ve * slack)).max()))
            worst_hi = max(worst_hi, float((ve / (sqrt_n * rho * slack)).max()))
    passed = worst_lo <= 1.0 and worst_hi <= 1.0
    return CriterionResult(
        3, "john-sandwich-p3", passed,
        f"max rho/(|Ve|(1+1e-3)) = {worst_lo:.6f}, "
        f"max |Ve|/(sqrt(n) rho (1+1e-3)) = {worst_hi:.6f}",
    )


def c04_pair_lower_bound(ctx: AcceptanceContext) -> CriterionResult:
    worst = math.inf
    for name, p in ctx.cells():
        worst = min(worst, ctx.family(name, p).min_pair_norm())
    return CriterionResult(
        4, "pair-lower-bound", worst >= 1.0 - 1e-8,
        f"min ||V_I V'_I|| = {worst:.12f} over all cubes, weights, exponents",
    )


def c05_duality(ctx: AcceptanceContext) -> CriterionResult:
    worst_gap = worst_margin = 0.0
    ok = True
    for name, p in ctx.cells():
        rep = duality_check(ctx.weight(name), p, family=ctx.family(name, p))
        ok = ok and rep.passed
        worst_gap = max(worst_gap, rep.log_gap)
        worst_margin = max(worst_margin, rep.log_gap - rep.log_bound)
    return CriterionResult(
        5, "characteristic-duality", ok,
        f"max |log gap| = {worst_gap:.2e}, max excess over log(kappa^4) = "
        f"{worst_margin:.2e}",
    )


def c06_stopping_decay(ctx: AcceptanceContext) -> CriterionResult:
    worst = ("", 0, 0.0)
    ok = True
    for name, p in ctx.cells():
        tree = ctx.tree(name, p)
        for j in range(1, 6):
            ratio = decay_ratio(tree, j)
            if ratio > 2.0 ** (-j) * 1.05:
                ok = False
            if ratio * 2.0**j > worst[2] * 2.0 ** worst[1]:
                worst = (f"{name} p={p:g}", j, ratio)
    # negative control: thresholds barely above 1 must break the bound
    violated = False
    for w in ctx.config.weights:
        cfg = StoppingConfig(p=2.0, lambda1=1.0 + 1e-6, lambda2=1.0 + 1e-6)
        tree = build_generations(ctx.family(w.name, 2.0), cfg)
        if any(
            decay_ratio(tree, j) > 2.0 ** (-j) * 1.05 for j in range(1, 6)
        ):
            violated = True
            break
    return CriterionResult(
        6, "stopping-decay", ok and violated,
        f"worst decay {worst[2]:.4f} at j={worst[1]} ({worst[0]}), "
        f"bound {2.0 ** -max(worst[1], 1) * 1.05:.4f}; negative control "
        f"violates: {violated}",
    )


def c07_block_partition(ctx: AcceptanceContext) -> CriterionResult:
    caps = {}
    for seed_tag in (0, 1):
        for name, p in ctx.cells():
            w = ctx.weight(name)
            tree = ctx.tree(name, p)
            worst = 0.0
            for i in range(100):
                rng = np.random.default_rng([ctx.config.seed + seed_tag, 7, i])
                f = random_mean_zero_coefficients(w.d, w.n, w.level, rng)
                worst = max(worst, block_partition_constant(f, tree, p))
            caps.setdefault((p, seed_tag), 0.0)
            caps[(p, seed_tag)] = max(caps[(p, seed_tag)], worst)
    ok = True
    parts = []
    for p in ctx.config.ps:
        a, b = caps[(p, 0)], caps[(p, 1)]
        drift = abs(b - a) / a
        ok = ok and a <= _C7_CAP and drift <= 0.20
        parts.append(f"p={p:g}: C_emp={a:.4f} (reseed {b:.4f}, drift {drift:.2%})")
    return CriterionResult(
        7, "block-partition-bound", ok,
        "; ".join(parts) + f"; cap {_C7_CAP}",
    )


def c08_block_identities(ctx: AcceptanceContext) -> CriterionResult:
    worst_sum = worst_restrict = 0.0
    for name, p in ctx.cells():
        w = ctx.weight(name)
        fam = ctx.family(name, p)
        tree = ctx.tree(name, p)
        for i in range(10):
            rng = np.random.default_rng([ctx.config.seed, 8, i])
            f = random_mean_zero_coefficients(w.d, w.n, w.level, rng)
            blocks = t_blocks(w, fam, f, tree, p)
            total = np.sum([b.values for b in blocks], axis=0)
            tf = t_operator(w, fam, f, p)
            worst_sum = max(worst_sum, float(np.abs(total - tf.values).max()))
            for j in range(1, tree.generation_count() + 1):
                fj = restrict_coefficients(f, tree, j)
                bj = t_blocks(w, fam, fj, tree, p)[j - 1]
                worst_restrict = max(
                    worst_restrict,
                    float(np.abs(bj.values - blocks[j - 1].values).max()),
                )
    passed = worst_sum <= 1e-9 and worst_restrict <= 1e-10
    return CriterionResult(
        8, "block-identities", passed,
        f"max |sum T_j f - Tf| = {worst_sum:.2e}, "
        f"max |T_j f - T_j Delta_j f| = {worst_restrict:.2e}",
    )


def c09_cross_term_decay(ctx: AcceptanceContext) -> CriterionResult:
    ok = True
    parts = []
    for alpha in (0.3, 0.6):
        w = make_weight(
            WeightFamily("power", 1, 1, 10, params={"alpha": alpha},
                         seed=ctx.config.seed)
        )
        for p in ctx.config.ps:
            fam = build_reducing_family(w, p)
            cal = calibrate_lambdas([(f"a{alpha}", w, fam)],
                                    target=ctx.config.calibration_target)
            q = conjugate_exponent(p)
            cfg = StoppingConfig(
                p=p,
                lambda1=max(cal.c1_hat, 1.0 + 1e-9),
                lambda2=max(cal.c2_hat * cal.chars[f"a{alpha}"] ** (q / p),
                            1.0 + 1e-9),
            )
            tree = build_generations(fam, cfg)
            rep = cross_term_rate(w, fam, tree, p, count=50, seed=ctx.config.seed)
            ok = ok and rep.passed
            parts.append(
                f"alpha={alpha} p={p:g}: rate {rep.rate:.3f} ci95 {rep.rate_ci95:.3f}"
            )
    return CriterionResult(
        9, "cross-term-decay", ok, "; ".join(parts),
    )


def c10_equivalence_uniform(ctx: AcceptanceContext) -> CriterionResult:
    ok = True
    parts = []
    for p in ctx.config.ps:
        c1 = c2 = 0.0
        for w in ctx.config.weights:
            rep = equivalence_ratios(
                ctx.weight(w.name), ctx.family(w.name, p), p,
                count=50, seed=ctx.config.seed,
            )
            c1 = max(c1, rep.c1_emp)
            c2 = max(c2, rep.c2_emp)
        ok = ok and c1 <= _C10_CAP and c2 <= _C10_CAP
        parts.append(f"p={p:g}: C1_emp={c1:.4f} C2_emp={c2:.4f}")
    # Parseval case: identity weight at p=2 has ratio exactly 1
    ident = make_weight(
        WeightFamily("constant", 1, 2, 6, params={"matrix": np.eye(2)})
    )
    idrep = equivalence_ratios(
        ident, build_reducing_family(ident, 2.0), 2.0,
        count=50, seed=ctx.config.seed,
    )
    parseval = float(np.abs(idrep.ratios - 1.0).max())
    ok = ok and parseval <= 1e-10
    return CriterionResult(
        10, "equivalence-uniform", ok,
        "; ".join(parts) + f"; cap {_C10_CAP}; Id p=2 max|r-1| = {parseval:.2e}",
    )


def c11_slopes_and_sharpness(ctx: AcceptanceContext) -> CriterionResult:
    """Sweep slope upper bounds, then the scalar sharpness windows.

    The probe solves the extremal problem exactly, so the measured slopes
    are facts about the weight family at this depth, not about the search:
    the max-ratio direction is capped at sqrt(L+1) uniformly in the weight
    (triangle inequality across levels), and the power family's inverse
    direction grows like char^(1/2). Neither window is reachable on a
    two-decade sweep at L=10; the result records the measurements.
    """
    rep = ctx.sweep()
    decades = rep["char_decades"]
    eq1 = rep["eq_ratio_slope"]["slope"]
    eq2 = rep["eq_inverse_slope"]["slope"]
    pr1 = rep["probe_ratio_slope"]["slope"]
    pr2 = rep["probe_inverse_slope"]["slope"]
    span_ok = decades >= 2.0
    upper_ok = eq1 <= 1.5 + 0.1 and eq2 <= 2.0 + 0.1
    sharp1 = _SHARP_RATIO_WINDOW[0] <= pr1 <= _SHARP_RATIO_WINDOW[1]
    sharp2 = _SHARP_INVERSE_WINDOW[0] <= pr2 <= _SHARP_INVERSE_WINDOW[1]
    details = (
        f"span {decades:.2f} decades; eq slopes {eq1:.3f} <= 1.6, "
        f"{eq2:.3f} <= 2.1; probe slopes {pr1:.3f} vs window "
        f"{_SHARP_RATIO_WINDOW}, {pr2:.3f} vs window {_SHARP_INVERSE_WINDOW}"
    )
    if not (sharp1 and sharp2):
        low = rep.get("probe_ratio_slope_lowchar")
        details += (
            "; sharpness windows unreachable at this depth: max-ratio is capped at "
            f"sqrt(levels) (local low-char slope "
            f"{low['slope'] if low else float('nan'):.3f} shows the sqrt "
            "mechanism), and the power family's inverse direction is an exact "
            f"char^(1/2) law (eigenvalue-level slope "
            f"{rep['probe_eigen_inverse_slope']:.3f})"
        )
    return CriterionResult(
        11, "slope-and-sharpness",
        span_ok and upper_ok and sharp1 and sharp2, details,
    )


def c12_dual_square_bound(ctx: AcceptanceContext) -> CriterionResult:
    ok = True
    parts = []
    for p in ctx.config.ps:
        q = conjugate_exponent(p)
        cap = 0.0
        for w in ctx.config.weights:
            weight = ctx.weight(w.name)
            fam = ctx.family(w.name, p)
            dual = MatrixWeight(
                weight.d, weight.n, weight.level,
                spd_power_stack(weight.cells, 1.0 - q),
                {"family": "derived", "exponent": 1.0 - q},
            )
            for i in range(50):
                rng = np.random.default_rng([ctx.config.seed, 12, i])
                f = random_mean_zero_coefficients(weight.d, weight.n, weight.level, rng)
                rhs = weighted_lp_norm(haar_reconstruct(f), dual, q)
                cap = max(cap, dual_square_norm(f, fam, p) / rhs)
        ok = ok and cap <= _C12_CAP
        parts.append(f"p={p:g}: C_emp={cap:.4f}")
    return CriterionResult(
        12, "dual-square-bound", ok, "; ".join(parts) + f"; cap {_C12_CAP}",
    )


def c13_determinism(ctx: AcceptanceContext) -> CriterionResult:
    # two cheapest weights keep the double run quick; any would do
    chosen = sorted(ctx.config.weights, key=lambda w: (w.d, w.level))[:2]
    cfg = replace(
        ctx.config,
        weights=tuple(chosen),
        experiments=("stopping", "equivalence"),
        count=20,
    )
    bodies = []
    with tempfile.TemporaryDirectory() as tmp:
        for tag in ("a", "b"):
            run_experiments(cfg, out_dir=Path(tmp) / tag, workers=2)
            csvs = sorted(Path(tmp, tag).glob("*.csv"))
            bodies.append({f.name: f.read_bytes() for f in csvs})
    same = set(bodies[0]) == set(bodies[1]) and all(
        bodies[0][k] == bodies[1][k] for k in bodies[0]
    )
    return CriterionResult(
        13, "determinism", same,
        f"{len(bodies[0])} CSV bodies compared byte for byte: "
        + ("identical" if same else "MISMATCH"),
    )


CRITERIA = (
    c01_haar_exactness,
    c02_p2_oracle,
    c03_john_sandwich,
    c04_pair_lower_bound,
    c05_duality,
    c06_stopping_decay,
    c07_block_partition,
    c08_block_identities,
    c09_cross_term_decay,
    c10_equivalence_uniform,
    c11_slopes_and_sharpness,
    c12_dual_square_bound,
    c13_determinism,
)


def run_all(ctx: AcceptanceContext | None = None, printer=print) -> list:
    ctx = ctx or AcceptanceContext()
    results = []
    for crit in CRITERIA:
        try:
            res = crit(ctx)
        except HaarweightError as exc:  # a criterion crash is a failure, not an abort
            res = CriterionResult(
                len(results) + 1,
                crit.__name__[4:].replace("_", "-"),
                False,
                f"raised {exc!r}",
            )
        results.append(res)
        printer(res.line())
    return results
