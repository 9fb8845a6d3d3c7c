"""Stopping-time decomposition of the dyadic tree driven by reducing operators.

Inside a block rooted at I, a descendant J is a stopping cube when the
reducing operators drift too far apart:

    ||V_J V_I^{-1}||^p  > lambda1    (test 1: the weight grew)
    ||V_J^{-1} V_I||^p' > lambda2    (test 2: the weight shrank)

The maximal such J (first hit on the way down) form the next generation of
block roots; the cubes visited before any hit form the block F(I). Blocks
partition the tree down to floor_level; cubes at the floor may fire but are
never split further, and every generation whose frontier reaches the floor is
flagged, since its subtree was truncated rather than exhausted.

Thresholds are calibrated by bisection against the measured per-cube decay of
the fired region, separately per test (each to half the target, so the union
meets the target), then returned with a 4x margin; lambda2 additionally
scales with the characteristic to the power p'/p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import (
    DyadicCube,
    GridFunction,
    HaarCoefficients,
    coarsen_sum,
    haar_reconstruct,
    refine_to_cells,
)
from .errors import CalibrationError, CoverageError, ParameterError, ShapeError
from .reducing import ReducingFamily, ap_characteristic, conjugate_exponent, op_norm_stack

__all__ = [
    "StoppingConfig",
    "GenerationRecord",
    "GenerationTree",
    "stopping_children",
    "build_generations",
    "decay_ratio",
    "generation_mask",
    "restrict_coefficients",
    "delta_projection",
    "calibrate_lambdas",
    "CalibrationResult",
]


@dataclass(frozen=True)
class StoppingConfig:
    """Thresholds and tree bounds for one decomposition."""

    p: float
    lambda1: float
    lambda2: float
    floor_level: int | None = None  # default: the family's grid level
    max_generations: int = 64

    def __post_init__(self):
        if not 1.0 < self.p < math.inf:
            raise ParameterError(f"exponent must satisfy 1 < p < inf, got {self.p}")
        if self.lambda1 <= 1.0 or self.lambda2 <= 1.0:
            raise ParameterError(
                f"thresholds must exceed 1, got {self.lambda1}, {self.lambda2}"
            )
        if self.max_generations < 1:
            raise ParameterError("max_generations must be positive")


@dataclass(eq=False)
class GenerationRecord:
    """One block generation: its roots, and the cubes that fired inside it."""

    index: int  # 1-based
    roots: list
    stopping: list  # (cube, info) pairs; info holds test values and reasons
    floor_hit: bool

    @property
    def stopping_cubes(self) -> list:
        return [c for c, _ in self.stopping]

    def stopping_measure(self) -> float:
        return float(sum(c.measure for c in self.stopping_cubes))


@dataclass(eq=False)
class GenerationTree:
    """Full decomposition below one root cube."""

    config: StoppingConfig
    d: int
    level: int
    floor_level: int
    root: DyadicCube
    generations: list
    gen_label: list  # per level 0..floor: int arrays, 0 = outside the tree

    def generation_count(self) -> int:
        return len(self.generations)

    def labels_at(self, lvl: int) -> np.ndarray:
        if not 0 <= lvl <= self.floor_level:
            raise CoverageError(f"no labels at level {lvl} (floor {self.floor_level})")
        return self.gen_label[lvl]


class _PairTables:
    """Cached ancestor/descendant test values over full level grids.

    t(mode, li, lj)[J-grid] = ||V_J V_I^{-1}||^p (mode 1) or
    ||V_J^{-1} V_I||^{p'} (mode 2) with I = the level-li ancestor of J.
    """

    def __init__(self, family: ReducingFamily):
        self.family = family
        self.p = family.p
        self.q = conjugate_exponent(family.p)
        self._cache: dict = {}

    def _ancestor_gather(self, arr: np.ndarray, li: int, lj: int) -> np.ndarray:
        shift = lj - li
        idx = np.indices(((1 << lj),) * self.family.d)
        return arr[tuple(ix >> shift for ix in idx)]

    def t(self, mode: int, li: int, lj: int) -> np.ndarray:
        key = (mode, li, lj)
        if key not in self._cache:
            fam = self.family
            if mode == 1:
                anc = self._ancestor_gather(fam.v_inv[li], li, lj)
                val = op_norm_stack(fam.v[lj] @ anc) ** self.p
            else:
                anc = self._ancestor_gather(fam.v[li], li, lj)
                val = op_norm_stack(fam.v_inv[lj] @ anc) ** self.q
            val.flags.writeable = False
            self._cache[key] = val
        return self._cache[key]


def _tables_for(family: ReducingFamily) -> _PairTables:
    tab = getattr(family, "_pair_tables", None)
    if tab is None:
        tab = _PairTables(family)
        family._pair_tables = tab
    return tab


def _resolve_floor(family: ReducingFamily, cfg: StoppingConfig) -> int:
    floor = family.level if cfg.floor_level is None else cfg.floor_level
    if not 0 <= floor <= family.level:
        raise ParameterError(f"floor_level {floor} outside [0, {family.level}]")
    if floor > family.max_depth:
        raise CoverageError(
            f"floor_level {floor} beyond family depth {family.max_depth}"
        )
    return floor


def _scan_block(family, cfg, root: DyadicCube, floor: int, tables: _PairTables):
    """First-hit scan below one block root.

    Returns (fired, kept): fired is a list of (cube, info); kept is a list of
    (level, boolean grid mask) of the cubes that stayed in the block.
    """
    d = family.d
    fired = []
    kept = []
    if root.level >= floor:
        return fired, kept, False
    alive = np.zeros(((1 << (root.level + 1)),) * d, dtype=bool)
    alive[root.cell_slices(root.level + 1)] = True
    floor_hit = False
    for lj in range(root.level + 1, floor + 1):
        t1 = tables.t(1, root.level, lj)
        t2 = tables.t(2, root.level, lj)
        hit = (t1 > cfg.lambda1) | (t2 > cfg.lambda2)
        fire_mask = alive & hit
        keep_mask = alive & ~hit
        if fire_mask.any():
            for idx in np.argwhere(fire_mask):
                idx = tuple(int(i) for i in idx)
                v1, v2 = float(t1[idx]), float(t2[idx])
                fired.append(
                    (
                        DyadicCube(lj, idx),
                        {
                            "test1": v1,
                            "test2": v2,
                            "fired1": v1 > cfg.lambda1,
                            "fired2": v2 > cfg.lambda2,
                        },
                    )
                )
        kept.append((lj, keep_mask))
        if lj == floor:
            floor_hit = bool(keep_mask.any())
        else:
            alive = refine_to_cells(keep_mask, d, 1)
    return fired, kept, floor_hit


def stopping_children(
    family: ReducingFamily, cfg: StoppingConfig, cube: DyadicCube
) -> list:
    """Maximal stopping descendants of one cube, with firing diagnostics."""
    if cfg.p != family.p:
        raise ParameterError(f"config exponent {cfg.p} != family exponent {family.p}")
    floor = _resolve_floor(family, cfg)
    if cube.level > floor:
        raise CoverageError(f"cube level {cube.level} below floor {floor}")
    tables = _tables_for(family)
    fired, _, _ = _scan_block(family, cfg, cube, floor, tables)
    return fired


def build_generations(family: ReducingFamily, cfg: StoppingConfig) -> GenerationTree:
    """Iterate blocks until no cube fires; every tree cube gets a block label."""
    if cfg.p != family.p:
        raise ParameterError(f"config exponent {cfg.p} != family exponent {family.p}")
    floor = _resolve_floor(family, cfg)
    d = family.d
    root = DyadicCube.root(d)
    tables = _tables_for(family)
    gen_label = [np.zeros(((1 << l),) * d, dtype=np.int32) for l in range(floor + 1)]
    generations = []
    roots = [root]
    j = 0
    while roots:
        j += 1
        if j > cfg.max_generations:
            raise CoverageError(
                f"stopping tree not exhausted after {cfg.max_generations} generations"
            )
        stopping = []
        floor_hit = False
        for r in roots:
            gen_label[r.level][r.index] = j
            fired, kept, fh = _scan_block(family, cfg, r, floor, tables)
            stopping.extend(fired)
            floor_hit = floor_hit or fh or r.level == floor
            for lvl, mask in kept:
                gen_label[lvl][mask] = j
        generations.append(
            GenerationRecord(index=j, roots=roots, stopping=stopping, floor_hit=floor_hit)
        )
        roots = [c for c, _ in stopping]
    return GenerationTree(
        config=cfg,
        d=d,
        level=family.level,
        floor_level=floor,
        root=root,
        generations=generations,
        gen_label=gen_label,
    )


def decay_ratio(tree: GenerationTree, j: int) -> float:
    """Relative measure of the union of generation-j stopping cubes."""
    if j < 1:
        raise ParameterError(f"generation index must be >= 1, got {j}")
    if j > len(tree.generations):
        return 0.0
    return tree.generations[j - 1].stopping_measure() / tree.root.measure


def generation_mask(tree: GenerationTree, j: int, detail_levels: int) -> list:
    """Boolean cube masks of block j for detail levels 0..detail_levels-1."""
    if j < 1:
        raise ParameterError(f"generation index must be >= 1, got {j}")
    masks = []
    for lvl in range(detail_levels):
        if lvl <= tree.floor_level:
            masks.append(tree.gen_label[lvl] == j)
        else:
            masks.append(np.zeros(((1 << lvl),) * tree.d, dtype=bool))
    return masks


def restrict_coefficients(
    coeffs: HaarCoefficients, tree: GenerationTree, j: int
) -> HaarCoefficients:
    """Keep only detail coefficients on cubes of block j; zero root scaling."""
    if coeffs.d != tree.d:
        raise ShapeError("coefficients and tree dimension mismatch")
    masks = generation_mask(tree, j, coeffs.level)
    detail = [
        arr * m[..., None, None] for arr, m in zip(coeffs.detail, masks)
    ]
    return HaarCoefficients(coeffs.d, coeffs.n, coeffs.level, np.zeros(coeffs.n), detail)


def delta_projection(
    coeffs: HaarCoefficients, tree: GenerationTree, j: int
) -> GridFunction:
    """The block-j piece of f: details on F^j cubes, no scaling term.

    Summing over all generations recovers f minus its mean whenever the floor
    is at least L-1 (every detail cube then carries exactly one label).
    """
    return haar_reconstruct(restrict_coefficients(coeffs, tree, j))


# ---------------------------------------------------------------------------
# threshold calibration


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated thresholds: lambda1 fixed, lambda2 scales with the weight."""

    p: float
    target: float
    c1_hat: float
    c2_hat: float
    lambda1: float
    floor_level: int
    chars: dict
    lambda2_by_weight: dict
    achieved: dict  # weight name -> measured combined sup decay at the margins

    def lambda2_for(self, char: float) -> float:
        q = conjugate_exponent(self.p)
        return 4.0 * self.c2_hat * char ** (q / self.p)


def _mode_sup_decay(tables: _PairTables, floor: int, mode: int, lam: float) -> float:
    """sup over cubes I of |union of maximal mode-fired subcubes| / |I|."""
    d = tables.family.d
    worst = 0.0
    for li in range(floor):
        acc = np.zeros(((1 << li),) * d)
        alive = np.ones(((1 << (li + 1)),) * d, dtype=bool)
        for lj in range(li + 1, floor + 1):
            hit = tables.t(mode, li, lj) > lam
            fire = alive & hit
            acc += coarsen_sum(fire.astype(float), d, lj - li) * 2.0 ** (-lj * d)
            if lj < floor:
                alive = refine_to_cells(alive & ~hit, d, 1)
        worst = max(worst, float(acc.max()) * 2.0 ** (li * d))
    return worst


def _combined_sup_decay(
    tables: _PairTables, floor: int, lam1: float, lam2: float
) -> float:
    d = tables.family.d
    worst = 0.0
    for li in range(floor):
        acc = np.zeros(((1 << li),) * d)
        alive = np.ones(((1 << (li + 1)),) * d, dtype=bool)
        for lj in range(li + 1, floor + 1):
            hit = (tables.t(1, li, lj) > lam1) | (tables.t(2, li, lj) > lam2)
            fire = alive & hit
            acc += coarsen_sum(fire.astype(float), d, lj - li) * 2.0 ** (-lj * d)
            if lj < floor:
                alive = refine_to_cells(alive & ~hit, d, 1)
        worst = max(worst, float(acc.max()) * 2.0 ** (li * d))
    return worst


def _bisect_threshold(predicate, lo: float, hi: float, steps: int = 60) -> float:
    """Smallest lam in [lo, hi] with predicate(lam) True (monotone), log scale."""
    if predicate(lo):
        return lo
    if not predicate(hi):
        raise CalibrationError(
            f"calibration bracket [{lo:g}, {hi:g}] cannot reach the decay target"
        )
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(steps):
        mid = 0.5 * (llo + lhi)
        if predicate(math.exp(mid)):
            lhi = mid
        else:
            llo = mid
    return math.exp(lhi)


def calibrate_lambdas(
    weights_and_families: list,
    target: float = 0.5,
    floor_level: int | None = None,
    bracket_hi: float = 1e6,
) -> CalibrationResult:
    """Calibrate (lambda1, lambda2) so every weight's stopping tree decays.

    weights_and_families: list of (name, weight, family) with a common
    exponent. Each test is bisected to per-cube sup decay <= target/2 (the
    union of the two fired regions then stays <= target), and the returned
    thresholds carry a 4x margin; by monotonicity the measured decay at the
    margins can only shrink. lambda2 is per weight: 4 c2 char^{p'/p}.
    """
    if not weights_and_families:
        raise ParameterError("need at least one weight to calibrate")
    ps = {fam.p for _, _, fam in weights_and_families}
    if len(ps) != 1:
        raise ParameterError(f"mixed exponents in calibration suite: {sorted(ps)}")
    p = ps.pop()
    q = conjugate_exponent(p)
    if not 0.0 < target < 1.0:
        raise ParameterError(f"target decay must lie in (0,1), got {target}")
    entries = []
    for name, weight, fam in weights_and_families:
        floor = fam.level if floor_level is None else floor_level
        if floor > fam.max_depth:
            raise CoverageError(
                f"floor {floor} beyond family depth {fam.max_depth} for {name}"
            )
        char = ap_characteristic(weight, p, family=fam)
        entries.append((name, fam, _tables_for(fam), floor, char))

    def pred1(lam):
        return all(
            _mode_sup_decay(tab, floor, 1, lam) <= target / 2
            for _, _, tab, floor, _ in entries
        )

    def pred2(c):
        return all(
            _mode_sup_decay(tab, floor, 2, c * char ** (q / p)) <= target / 2
            for _, _, tab, floor, char in entries
        )

    c1 = _bisect_threshold(pred1, 1.0, bracket_hi)
    c2 = _bisect_threshold(pred2, 1.0, bracket_hi)
    lambda1 = 4.0 * c1
    chars = {name: char for name, _, _, _, char in entries}
    lambda2s = {
        name: 4.0 * c2 * char ** (q / p) for name, _, _, _, char in entries
    }
    achieved = {
        name: _combined_sup_decay(tab, floor, lambda1, lambda2s[name])
        for name, _, tab, floor, _ in entries
    }
    floor_out = entries[0][3] if floor_level is None else floor_level
    return CalibrationResult(
        p=p,
        target=target,
        c1_hat=c1,
        c2_hat=c2,
        lambda1=lambda1,
        floor_level=floor_out,
        chars=chars,
        lambda2_by_weight=lambda2s,
        achieved=achieved,
    )
