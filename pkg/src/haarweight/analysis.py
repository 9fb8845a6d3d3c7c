"""Square functions and the norm-equivalence experiments built on them.

The square function aggregates reduced detail coefficients pointwise,

    S f(x) = (sum_{I contains x, eps} |V_I f_I^eps|^2 / |I| chi_I(x))^{1/2},

and its L^p norm is compared against the weighted norm ||f||_{L^p(W)} over
batches of random mean-zero test functions. Ratios are normalized by powers
of the measured characteristic with exponents (1+ceil(p))/p and
(2+ceil(p'))/p; at p = 2 the extremal ratios over all f are generalized
eigenvalues and are solved densely.

Root scaling terms never enter: every sum below runs over detail cubes only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from .dyadic import (
    GridFunction,
    HaarCoefficients,
    haar_reconstruct,
    lp_norm,
    refine_to_cells,
)
from .errors import CoverageError, ParameterError, ShapeError
from .reducing import ReducingFamily, ap_characteristic, conjugate_exponent
from .stopping import GenerationTree, delta_projection
from .multipliers import t_blocks
from .weights import MatrixWeight, spd_power_stack, weighted_lp_norm

__all__ = [
    "SPECTRA",
    "random_mean_zero_coefficients",
    "square_function",
    "square_norm",
    "dual_square_norm",
    "p2_sequence_norm",
    "EquivalenceReport",
    "equivalence_ratios",
    "block_partition_constant",
    "block_bound_quotients",
    "CrossTermReport",
    "cross_term_rate",
    "SharpnessProbe",
    "sharpness_probe",
    "loglog_slope",
]

SPECTRA = ("flat", "geometric", "spike")


def random_mean_zero_coefficients(
    d: int, n: int, level: int, rng: np.random.Generator, spectrum: str = "flat"
) -> HaarCoefficients:
    """Random detail coefficients, zero root scaling.

    flat: iid normal at every slot. geometric: level l scaled by 2^{-l}.
    spike: a single random slot (one cube, one signature).
    """
    c = HaarCoefficients.zeros(d, n, level)
    if spectrum == "flat":
        for l in range(level):
            c.detail[l][...] = rng.standard_normal(c.detail[l].shape)
    elif spectrum == "geometric":
        for l in range(level):
            c.detail[l][...] = rng.standard_normal(c.detail[l].shape) * 2.0 ** (-l)
    elif spectrum == "spike":
        l = int(rng.integers(level))
        flat = c.detail[l].reshape(-1, n)
        flat[int(rng.integers(flat.shape[0]))] = rng.standard_normal(n)
    else:
        raise ParameterError(f"unknown spectrum {spectrum!r}, options {SPECTRA}")
    return c


def _check_pair(f: HaarCoefficients, family: ReducingFamily):
    if (f.d, f.n) != (family.d, family.n):
        raise ShapeError(
            f"coefficients (d={f.d}, n={f.n}) do not match family "
            f"(d={family.d}, n={family.n})"
        )
    if f.level - 1 > family.max_depth:
        raise CoverageError(
            f"coefficients need operators to level {f.level - 1}, "
            f"family has {family.max_depth}"
        )


def _aggregate_squares(symbols: list, f: HaarCoefficients) -> np.ndarray:
    """Cellwise sum of |S_I f_I^eps|^2 / |I| over all detail cubes."""
    d, L = f.d, f.level
    acc = np.zeros(((1 << L),) * d)
    for l in range(L):
        y = np.einsum("...ij,...ej->...ei", symbols[l], f.detail[l])
        s = np.sum(y * y, axis=(-1, -2)) * 2.0 ** (l * d)
        acc += refine_to_cells(s, d, L - l)
    return acc


def square_function(f: HaarCoefficients, family: ReducingFamily) -> GridFunction:
    """Pointwise square function with the family's V_I symbols, exact on cells."""
    _check_pair(f, family)
    vals = np.sqrt(_aggregate_squares(family.v, f))
    return GridFunction(f.d, 1, f.level, vals[..., None])


def square_norm(f: HaarCoefficients, family: ReducingFamily, p: float) -> float:
    return lp_norm(square_function(f, family), p)


def dual_square_norm(f: HaarCoefficients, family: ReducingFamily, p: float) -> float:
    """Square norm with inverse symbols V_I^{-1}, measured at the conjugate
    exponent p'."""
    _check_pair(f, family)
    q = conjugate_exponent(p)
    vals = np.sqrt(_aggregate_squares(family.v_inv, f))
    return lp_norm(GridFunction(f.d, 1, f.level, vals[..., None]), q)


def p2_sequence_norm(f: HaarCoefficients, weight: MatrixWeight) -> float:
    """(sum_{I,eps} |(m_I W)^{1/2} f_I^eps|^2)^{1/2}, the discrete p=2 form."""
    if (f.d, f.n) != (weight.d, weight.n) or f.level > weight.level:
        raise ShapeError("coefficients do not fit the weight grid")
    pyr = weight.mean_pyramid_of(1.0)
    total = 0.0
    for l in range(f.level):
        v = spd_power_stack(pyr[l], 0.5)
        y = np.einsum("...ij,...ej->...ei", v, f.detail[l])
        total += float(np.sum(y * y))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# equivalence-ratio experiments


@dataclass(eq=False)
class EquivalenceReport:
    """Ratios r(f) = ||f||_{L^p(W)} / ||Sf||_p over a batch of random f."""

    p: float
    char: float
    count: int
    seed: int
    spectra: tuple
    ratios: np.ndarray
    spectrum_of: list
    skipped: int
    weight_meta: dict = field(default_factory=dict)

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def max_inverse_ratio(self) -> float:
        return float((1.0 / self.ratios).max())

    @property
    def exponent_upper(self) -> float:
        return (1.0 + math.ceil(self.p)) / self.p

    @property
    def exponent_lower(self) -> float:
        return (2.0 + math.ceil(conjugate_exponent(self.p))) / self.p

    @property
    def c1_emp(self) -> float:
        """max r(f) normalized by char^{(1+ceil p)/p}."""
        return self.max_ratio / self.char**self.exponent_upper

    @property
    def c2_emp(self) -> float:
        """max 1/r(f) normalized by char^{(2+ceil p')/p}."""
        return self.max_inverse_ratio / self.char**self.exponent_lower

    def quantiles(self) -> dict:
        qs = (0.0, 0.25, 0.5, 0.75, 1.0)
        vals = np.quantile(self.ratios, qs)
        return {f"q{int(100 * q)}": float(v) for q, v in zip(qs, vals)}


def equivalence_ratios(
    weight: MatrixWeight,
    family: ReducingFamily,
    p: float,
    count: int,
    seed: int = 0,
    spectra: tuple = SPECTRA,
) -> EquivalenceReport:
    """Measure r(f) over count random mean-zero f, spectra cycled.

    Each function draws from its own generator seeded by (seed, index), so
    reports are reproducible regardless of evaluation order. Degenerate draws
    (zero norm on either side) are skipped and counted.
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    if p != family.p:
        raise ParameterError(f"exponent {p} does not match family exponent {family.p}")
    char = ap_characteristic(weight, p, family=family)
    ratios, spectrum_of, skipped = [], [], 0
    for i in range(count):
        spectrum = spectra[i % len(spectra)]
        rng = np.random.default_rng([seed & 0xFFFFFFFF, i])
        f = random_mean_zero_coefficients(weight.d, weight.n, weight.level, rng, spectrum)
        wn = weighted_lp_norm(haar_reconstruct(f), weight, p)
        sn = square_norm(f, family, p)
        if wn == 0.0 or sn == 0.0:
            skipped += 1
            continue
        ratios.append(wn / sn)
        spectrum_of.append(spectrum)
    if not ratios:
        raise ParameterError("all test functions degenerated to zero")
    return EquivalenceReport(
        p=p,
        char=char,
        count=count,
        seed=seed,
        spectra=tuple(spectra),
        ratios=np.asarray(ratios),
        spectrum_of=spectrum_of,
        skipped=skipped,
        weight_meta=dict(weight.meta),
    )


def block_partition_constant(
    f: HaarCoefficients, tree: GenerationTree, p: float
) -> float:
    """sum_j ||Delta_j f||_p^p / ||f||_p^p for mean-zero f."""
    g = haar_reconstruct(f)
    denom = lp_norm(g, p) ** p
    if denom == 0.0:
        raise ParameterError("zero function has no partition constant")
    num = sum(
        lp_norm(delta_projection(f, tree, j), p) ** p
        for j in range(1, tree.generation_count() + 1)
    )
    return num / denom


def block_bound_quotients(
    weight: MatrixWeight,
    family: ReducingFamily,
    f: HaarCoefficients,
    tree: GenerationTree,
    p: float,
) -> np.ndarray:
    """Per-generation ||T_j f||_p^p / ||Delta_j f||_p^p (nan when the block
    carries none of f)."""
    out = []
    blocks = t_blocks(weight, family, f, tree, p)
    for j, tj in enumerate(blocks, start=1):
        dn = lp_norm(delta_projection(f, tree, j), p) ** p
        tn = lp_norm(tj, p) ** p
        out.append(tn / dn if dn > 0.0 else math.nan)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# cross-term geometric rate


@dataclass(frozen=True)
class CrossTermReport:
    """Pooled log-linear fit of normalized cross terms against |j - k|."""

    p: float
    count: int
    seed: int
    slope: float
    stderr: float
    rate: float
    rate_ci95: float
    intercept: float
    n_points: int
    max_separation: int

    @property
    def passed(self) -> bool:
        return self.rate_ci95 < 1.0


def cross_term_rate(
    weight: MatrixWeight,
    family: ReducingFamily,
    tree: GenerationTree,
    p: float,
    count: int,
    seed: int = 0,
    spectra: tuple = SPECTRA,
) -> CrossTermReport:
    """Fit log of diagonal-normalized cross terms vs generation separation.

    For each random f the blocks T_j f are formed once; off-diagonal terms
    int |T_j|^{p/2}|T_k|^{p/2} are divided by the diagonal geometric mean, so
    the j = k value is exactly 1 and the pooled regression needs no per-f
    scale. Requires at least two populated generations.
    """
    xs, ys = [], []
    max_sep = 0
    for i in range(count):
        spectrum = spectra[i % len(spectra)]
        rng = np.random.default_rng([seed & 0xFFFFFFFF, i])
        f = random_mean_zero_coefficients(weight.d, weight.n, weight.level, rng, spectrum)
        blocks = t_blocks(weight, family, f, tree, p)
        norms = [np.linalg.norm(b.values, axis=-1) for b in blocks]
        diag = [float(np.mean(nb**p)) for nb in norms]
        for j in range(len(blocks)):
            if diag[j] == 0.0:
                continue
            for k in range(j + 1, len(blocks)):
                if diag[k] == 0.0:
                    continue
                raw = float(np.mean((norms[j] * norms[k]) ** (p / 2.0)))
                if raw == 0.0:
                    continue
                sep = k - j
                xs.append(sep)
                ys.append(math.log(raw / math.sqrt(diag[j] * diag[k])))
                max_sep = max(max_sep, sep)
    if len(set(xs)) < 2:
        raise ParameterError(
            "cross-term fit needs at least two distinct generation separations"
        )
    fit = scipy.stats.linregress(xs, ys)
    return CrossTermReport(
        p=p,
        count=count,
        seed=seed,
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        rate=math.exp(fit.slope),
        rate_ci95=math.exp(fit.slope + 1.96 * fit.stderr),
        intercept=float(fit.intercept),
        n_points=len(xs),
        max_separation=max_sep,
    )


# ---------------------------------------------------------------------------
# p=2 extremal ratios (dense generalized eigensolve)


@dataclass(frozen=True)
class SharpnessProbe:
    """Extremal p=2 ratios for one weight: exact over all mean-zero f."""

    char: float
    max_ratio: float
    max_inverse_ratio: float
    size: int


def _synthesis_matrix(d: int, level: int) -> np.ndarray:
    """Cells x detail-coefficients scalar Haar synthesis, columns ordered
    (level, cube, signature)."""
    cells = (1 << level) ** d
    cols = []
    for l in range(level):
        f = HaarCoefficients.zeros(d, 1, level)
        block = f.detail[l]
        flat = block.reshape(-1)
        for idx in range(flat.size):
            flat[idx] = 1.0
            cols.append(haar_reconstruct(f).values.reshape(cells))
            flat[idx] = 0.0
    return np.stack(cols, axis=1)


def sharpness_probe(
    weight: MatrixWeight, p: float = 2.0, level: int | None = None
) -> SharpnessProbe:
    """Solve the p=2 generalized Rayleigh problem exactly.

    With G the Gram matrix of ||f||_{L^2(W)}^2 in coefficient coordinates and
    B the block diagonal of m_I W (the exact V_I^2), the extreme eigenvalues
    of (G, B) are the squared extremal ratios in both directions.
    """
    if p != 2.0:
        raise ParameterError(f"extremal eigensolve is a p=2 construction, got p={p}")
    L = weight.level if level is None else level
    if L > weight.level:
        raise ShapeError(f"level {L} exceeds weight grid level {weight.level}")
    d, n = weight.d, weight.n
    if L * d > 12:
        raise ParameterError("dense eigensolve beyond 4096 cells is not supported")
    h = _synthesis_matrix(d, L)
    cells, m = h.shape
    wc = weight.mean_pyramid_of(1.0)[L].reshape(cells, n, n)
    # G[(a i),(b j)] = 2^{-Ld} sum_c H[c,a] H[c,b] Wc[i,j], one dgemm per (i,j)
    g = np.empty((m, n, m, n))
    for i in range(n):
        for j in range(i, n):
            gij = (h * wc[:, i, j][:, None]).T @ h / cells
            g[:, i, :, j] = gij
            g[:, j, :, i] = gij
    g = g.reshape(m * n, m * n)

    b = np.zeros((m, n, m, n))
    col = 0
    pyr = weight.mean_pyramid_of(1.0)
    nsig = (1 << d) - 1
    for l in range(L):
        flat = pyr[l].reshape(-1, n, n)
        for cube in range(flat.shape[0]):
            for _ in range(nsig):
                b[col, :, col, :] = flat[cube]
                col += 1
    b = b.reshape(m * n, m * n)

    vals = scipy.linalg.eigh(g, b, eigvals_only=True)
    char = ap_characteristic(weight, 2.0)
    return SharpnessProbe(
        char=char,
        max_ratio=math.sqrt(float(vals[-1])),
        max_inverse_ratio=1.0 / math.sqrt(float(vals[0])),
        size=m * n,
    )


def loglog_slope(chars, values) -> dict:
    """Least-squares slope of log(values) against log(chars)."""
    chars = np.asarray(chars, dtype=float)
    values = np.asarray(values, dtype=float)
    if chars.shape != values.shape or chars.size < 3:
        raise ParameterError("slope fit needs at least three (char, value) pairs")
    fit = scipy.stats.linregress(np.log(chars), np.log(values))
    return {
        "slope": float(fit.slope),
        "stderr": float(fit.stderr),
        "intercept": float(fit.intercept),
        "rvalue": float(fit.rvalue),
        "n_points": int(chars.size),
    }
