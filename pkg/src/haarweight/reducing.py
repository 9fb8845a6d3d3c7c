"""Reducing operators and matrix Muckenhoupt characteristics.

For a weight W, exponent p, and cube I, the direction norm

    rho_I(e) = ( |I|^{-1} int_I |W(x)^{1/p} e|^p dx )^{1/p}

is a norm on R^n. A reducing operator V_I is a single SPD matrix with
rho_I(e) <= |V_I e| <= kappa * rho_I(e): the ellipsoid {|V_I e| <= 1} squeezed
between the norm ball and its John dilate. The dual operator V'_I plays the
same role for rho'_I built from W^{-1/p} at the conjugate exponent. At p = 2
both are exact matrix square roots of cube averages (kappa = 1); otherwise
they come from a Khachiyan-type minimum-volume-ellipsoid fit on a
deterministic direction set, batched over all cubes of a level.

The characteristic sup_I ||V_I V'_I||^p is the operator-weight analogue of the
scalar A_p product <w>_I <w^{1-p'}>_I^{p-1}; it is >= 1 up to fit slack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import DyadicCube, mean_pyramid
from .errors import (
    CoverageError,
    EllipsoidFitError,
    ParameterError,
    ShapeError,
)
from .weights import MatrixWeight, spd_power_stack

__all__ = [
    "FitConfig",
    "ReducingFamily",
    "METHOD_NAMES",
    "quasi_uniform_directions",
    "random_directions",
    "direction_norm",
    "reducing_operator",
    "dual_reducing_operator",
    "build_reducing_family",
    "ap_characteristic",
    "scalar_ap_characteristic",
    "duality_check",
    "DualityReport",
    "op_norm_stack",
    "conjugate_exponent",
]

METHOD_NAMES = ("exact-p2", "exact-constant", "exact-scalar", "ellipsoid")
_M_P2, _M_CONST, _M_SCALAR, _M_ELL = range(4)

_GOLDEN = 0.6180339887498949


def conjugate_exponent(p: float) -> float:
    if not 1.0 < p < math.inf:
        raise ParameterError(f"exponent must satisfy 1 < p < inf, got {p}")
    return p / (p - 1.0)


@dataclass(frozen=True)
class FitConfig:
    """Ellipsoid fit controls. tol is the relative KKT residual at exit."""

    tol: float = 1e-6
    max_iter: int = 200_000
    directions: int = 0  # 0 = auto: max(500, 50 n^2)
    cal_factor: int = 4  # extra calibration directions, multiple of fit count

    def fit_count(self, n: int) -> int:
        if self.directions > 0:
            return self.directions
        return max(500, 50 * n * n)


def quasi_uniform_directions(n: int, m: int, offset: float = 0.0) -> np.ndarray:
    """m deterministic well-spread unit directions (up to sign) in R^n."""
    if n == 1:
        return np.ones((1, 1))
    if m < 2 * n:
        raise ParameterError(f"need at least {2 * n} directions, got {m}")
    if n == 2:
        th = (np.arange(m) + 0.5 + offset) * np.pi / m
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if n == 3:
        k = np.arange(m)
        z = (k + 0.5 + offset) / m
        phi = 2.0 * np.pi * (k * _GOLDEN + offset)
        r = np.sqrt(1.0 - z**2)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng([n, m, int(offset * 1e6) & 0xFFFFFFFF])
    v = rng.standard_normal((m, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_directions(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((m, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def op_norm_stack(mats: np.ndarray) -> np.ndarray:
    """Spectral norms of a (..., n, n) stack."""
    if mats.shape[-1] == 1:
        return np.abs(mats[..., 0, 0])
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


# ---------------------------------------------------------------------------
# direction norms


def _rho_block(wp_cells: np.ndarray, p: float, dirs: np.ndarray, d: int) -> np.ndarray:
    """rho over one cube: wp_cells are the W^{1/p} cells inside it."""
    x = np.einsum("...ij,mj->...mi", wp_cells, dirs)
    g = np.linalg.norm(x, axis=-1) ** p
    return g.mean(axis=tuple(range(d))) ** (1.0 / p)


def direction_norm(
    weight: MatrixWeight, cube: DyadicCube, p: float, e, dual: bool = False
) -> float:
    """rho_I(e), or the dual norm rho'_I(e) (W^{-1/p}, conjugate exponent)."""
    if not 1.0 < p < math.inf:
        raise ParameterError(f"exponent must satisfy 1 < p < inf, got {p}")
    e = np.asarray(e, dtype=float).reshape(1, -1)
    if e.shape[1] != weight.n:
        raise ShapeError(f"direction has {e.shape[1]} components, weight n={weight.n}")
    if dual:
        cells = weight.power_cells(-1.0 / p)[cube.cell_slices(weight.level)]
        q = conjugate_exponent(p)
    else:
        cells = weight.power_cells(1.0 / p)[cube.cell_slices(weight.level)]
        q = p
    return float(_rho_block(cells, q, e, weight.d)[0])


def _rho_pyramid(
    weight: MatrixWeight, p: float, dirs: np.ndarray, dual: bool, chunk: int = 256
) -> list:
    """Per-level rho arrays (2^l,)*d + (M,) for all directions at once."""
    s = -1.0 / p if dual else 1.0 / p
    q = conjugate_exponent(p) if dual else p
    wp = weight.power_cells(s)
    parts = []
    for k in range(0, dirs.shape[0], chunk):
        sub = dirs[k : k + chunk]
        x = np.einsum("...ij,mj->...mi", wp, sub)
        parts.append(np.linalg.norm(x, axis=-1) ** q)
    g = np.concatenate(parts, axis=-1)
    return [a ** (1.0 / q) for a in mean_pyramid(g, weight.d)]


# ---------------------------------------------------------------------------
# ellipsoid fit (Khachiyan multiplicative updates, batched over cubes)


def _mvee_batch(rho: np.ndarray, dirs: np.ndarray, tol: float, max_iter: int):
    """Minimum-volume ellipsoids around the symmetric point sets {dirs_m / rho_bm}.

    Solves, batched over cubes b,

        minimize -log det A   s.t.   x_m^T A x_m <= 1,  x_m = dirs_m / rho_bm,

    by primal log-barrier Newton path following (the constraints are linear in
    A and the objective is self-concordant, so a handful of Newton steps per
    barrier stage reaches high accuracy; multiplicative-update schemes are far
    too slow at this tolerance). The returned A are strictly feasible (all
    points inside {x : x^T A x <= 1}) and carry the John-type certificate
    A^{-1} = sum_m c_m x_m x_m^T with c_m >= 0 and sum c_m <= n (1 + tol).
    max_iter caps the total Newton iteration count.
    """
    b, m = rho.shape
    n = dirs.shape[1]
    q = n * n
    gm = np.exp(np.mean(np.log(rho), axis=1))  # conditioning rescale, undone at exit
    invr2 = (gm[:, None] / rho) ** 2
    pe = (dirs[:, :, None] * dirs[:, None, :]).reshape(m, q)
    eye_flat = np.eye(n).reshape(q)

    def g_of(a_flat):
        return (a_flat @ pe.T) * invr2

    # strictly feasible isotropic start
    a = np.outer(0.5 / invr2.max(axis=1), eye_flat)
    t = 1.0
    t_final = 2.0 * m / (n * tol)
    iters = 0
    decrement = np.full(b, np.inf)
    while True:
        # Newton steps at this barrier parameter until all rows are centered.
        # Work with the t-normalized objective -logdet A - (1/t) sum ln(1-g):
        # same center and same Newton step, but O(1) gradients at large t.
        # Damped steps 1/(1+lambda) need no line search (self-concordance).
        for _ in range(80):
            if iters >= max_iter:
                raise EllipsoidFitError(
                    f"ellipsoid fit exceeded {max_iter} Newton iterations",
                    residual=float(np.max(decrement)),
                )
            iters += 1
            amat = a.reshape(-1, n, n)
            ainv = np.linalg.inv(amat)
            g = g_of(a)
            slack = 1.0 - g
            grad = -ainv.reshape(-1, q) + ((invr2 / slack) @ pe) / t
            h2w = (invr2 / slack) ** 2
            hess = np.einsum("bik,bjl->bijkl", ainv, ainv).reshape(-1, q, q)
            hess += np.einsum("bm,mi,mj->bij", h2w, pe, pe) / t
            delta = np.linalg.solve(hess, -grad[..., None])[..., 0]
            delta = 0.5 * (
                delta.reshape(-1, n, n) + delta.reshape(-1, n, n).swapaxes(1, 2)
            ).reshape(-1, q)
            # Newton decrement of the un-normalized barrier: sqrt(t) * phi-decrement
            decrement = np.sqrt(
                t * np.maximum(-np.sum(grad * delta, axis=1), 0.0)
            )
            if decrement.max() <= 1e-7:
                break
            alpha = 1.0 / (1.0 + decrement)
            # explicit feasibility caps guard against rounding: linear
            # constraint slack, then SPD of A + alpha * delta
            dg = (delta @ pe.T) * invr2
            with np.errstate(divide="ignore"):
                ratios = np.where(dg > 0.0, slack / dg, np.inf)
            alpha = np.minimum(alpha, 0.98 * ratios.min(axis=1))
            ai_half = spd_power_stack(amat, -0.5)
            pencil = ai_half @ delta.reshape(-1, n, n) @ ai_half
            lam_min = np.linalg.eigvalsh(pencil)[:, 0]
            with np.errstate(divide="ignore"):
                alpha = np.minimum(
                    alpha, np.where(lam_min < 0.0, -0.98 / lam_min, np.inf)
                )
            a = a + alpha[:, None] * delta
        if decrement.max() > 1e-4:
            raise EllipsoidFitError(
                "ellipsoid fit: Newton centering stalled",
                residual=float(np.max(decrement)),
            )
        if t >= t_final:
            break
        # modest multiplier keeps the post-update decrement in Newton's
        # fast region; larger jumps stall the damped phase for many steps
        t = min(t * 4.0, t_final)
    g_final = g_of(a)
    a = a.reshape(b, n, n) * (gm**2)[:, None, None]
    return a, g_final


def _fit_operators(rho_fit, rho_all, dirs_fit, dirs_all, fit: FitConfig):
    """V = c A^{1/2} from the MVEE shape A, rescaled so |V e| >= rho on the
    calibration set; kappa = guaranteed upper slack on that set."""
    a, _ = _mvee_batch(rho_fit, dirs_fit, fit.tol, fit.max_iter)
    a_half = spd_power_stack(a, 0.5)
    y = np.linalg.norm(a_half @ dirs_all.T, axis=1)  # |A^{1/2} e_m|, (B, M_all)
    g = rho_all / y
    c = g.max(axis=1)
    kappa = c / g.min(axis=1)
    v = a_half * c[:, None, None]
    return v, kappa


# ---------------------------------------------------------------------------
# reducing family over the dyadic tree


@dataclass(eq=False)
class ReducingFamily:
    """Reducing operators V_I, V'_I for every cube of level <= max_depth.

    Arrays are per level: v[l] has shape (2^l,)*d + (n, n); kappa and method
    are (2^l,)*d. Method codes index METHOD_NAMES.
    """

    p: float
    d: int
    n: int
    level: int
    max_depth: int
    v: list
    v_dual: list
    kappa: list
    kappa_dual: list
    method: list
    method_dual: list
    fit: FitConfig
    weight_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._v_inv = None
        self._v_dual_inv = None

    def _check(self, cube: DyadicCube):
        if cube.d != self.d:
            raise ShapeError(f"cube dimension {cube.d}, family dimension {self.d}")
        if cube.level > self.max_depth:
            raise CoverageError(
                f"cube level {cube.level} beyond family depth {self.max_depth}"
            )

    def v_at(self, cube: DyadicCube) -> np.ndarray:
        self._check(cube)
        return self.v[cube.level][cube.index]

    def v_dual_at(self, cube: DyadicCube) -> np.ndarray:
        self._check(cube)
        return self.v_dual[cube.level][cube.index]

    def kappa_at(self, cube: DyadicCube) -> float:
        self._check(cube)
        return float(self.kappa[cube.level][cube.index])

    def method_at(self, cube: DyadicCube, dual: bool = False) -> str:
        self._check(cube)
        codes = self.method_dual if dual else self.method
        return METHOD_NAMES[int(codes[cube.level][cube.index])]

    @property
    def v_inv(self) -> list:
        if self._v_inv is None:
            self._v_inv = [spd_power_stack(a, -1.0) for a in self.v]
        return self._v_inv

    @property
    def v_dual_inv(self) -> list:
        if self._v_dual_inv is None:
            self._v_dual_inv = [spd_power_stack(a, -1.0) for a in self.v_dual]
        return self._v_dual_inv

    def max_kappa(self, depth: int | None = None) -> float:
        depth = self.max_depth if depth is None else min(depth, self.max_depth)
        vals = [self.kappa[l].max() for l in range(depth + 1)]
        vals += [self.kappa_dual[l].max() for l in range(depth + 1)]
        return float(max(vals))

    def pair_norms(self, level: int) -> np.ndarray:
        """||V_I V'_I|| for all cubes of one level."""
        return op_norm_stack(self.v[level] @ self.v_dual[level])

    def min_pair_norm(self, depth: int | None = None) -> float:
        depth = self.max_depth if depth is None else min(depth, self.max_depth)
        return float(min(self.pair_norms(l).min() for l in range(depth + 1)))


def _build_side(weight: MatrixWeight, p: float, dual: bool, max_depth: int, fit: FitConfig):
    """One side (primal or dual) of the family: per-level V, kappa, method."""
    d, n = weight.d, weight.n
    s_exp = -1.0 / p if dual else 1.0 / p
    vs, kappas, methods = [], [], []
    if p == 2.0:
        pyr = weight.mean_pyramid_of(-1.0 if dual else 1.0)
        for lvl in range(max_depth + 1):
            vs.append(spd_power_stack(pyr[lvl], 0.5))
            kappas.append(np.ones(((1 << lvl),) * d))
            methods.append(np.full(((1 << lvl),) * d, _M_P2, dtype=np.int8))
        return vs, kappas, methods

    const = weight.constancy_pyramid()
    m_fit = fit.fit_count(n)
    dirs_fit = quasi_uniform_directions(n, m_fit)
    if n == 1:
        dirs_all = dirs_fit
    else:
        extra = quasi_uniform_directions(n, m_fit * fit.cal_factor, offset=0.37)
        dirs_all = np.concatenate([dirs_fit, extra], axis=0)
    rho_pyr = _rho_pyramid(weight, p, dirs_all, dual)
    for lvl in range(max_depth + 1):
        shape = ((1 << lvl),) * d
        rho_all = rho_pyr[lvl].reshape(-1, dirs_all.shape[0])
        v_l = np.empty((rho_all.shape[0], n, n))
        kappa_l = np.ones(rho_all.shape[0])
        method_l = np.full(rho_all.shape[0], _M_ELL, dtype=np.int8)
        if n == 1:
            v_l[:, 0, 0] = rho_all[:, 0]
            method_l[:] = _M_SCALAR
        else:
            flags, reps = const[lvl]
            flat_flags = flags.reshape(-1)
            flat_reps = reps.reshape(-1, n, n)
            if flat_flags.any():
                v_l[flat_flags] = spd_power_stack(flat_reps[flat_flags], s_exp)
                method_l[flat_flags] = _M_CONST
            todo = ~flat_flags
            if todo.any():
                v_fit, kap = _fit_operators(
                    rho_all[todo][:, : m_fit],
                    rho_all[todo],
                    dirs_fit,
                    dirs_all,
                    fit,
                )
                v_l[todo] = v_fit
                kappa_l[todo] = kap
        vs.append(v_l.reshape(shape + (n, n)))
        kappas.append(kappa_l.reshape(shape))
        methods.append(method_l.reshape(shape))
    return vs, kappas, methods


def build_reducing_family(
    weight: MatrixWeight,
    p: float,
    max_depth: int | None = None,
    fit: FitConfig | None = None,
) -> ReducingFamily:
    """Reducing operators for every cube of level <= max_depth (default: all)."""
    if not 1.0 < p < math.inf:
        raise ParameterError(f"exponent must satisfy 1 < p < inf, got {p}")
    fit = fit or FitConfig()
    max_depth = weight.level if max_depth is None else int(max_depth)
    if not 0 <= max_depth <= weight.level:
        raise ParameterError(
            f"max_depth {max_depth} outside [0, {weight.level}]"
        )
    v, kap, met = _build_side(weight, p, False, max_depth, fit)
    vd, kapd, metd = _build_side(weight, p, True, max_depth, fit)
    return ReducingFamily(
        p=float(p),
        d=weight.d,
        n=weight.n,
        level=weight.level,
        max_depth=max_depth,
        v=v,
        v_dual=vd,
        kappa=kap,
        kappa_dual=kapd,
        method=met,
        method_dual=metd,
        fit=fit,
        weight_meta=dict(weight.meta),
    )


def _single_cube_operator(
    weight: MatrixWeight, cube: DyadicCube, p: float, dual: bool, fit: FitConfig
) -> np.ndarray:
    if not 1.0 < p < math.inf:
        raise ParameterError(f"exponent must satisfy 1 < p < inf, got {p}")
    if cube.d != weight.d or cube.level > weight.level:
        raise ShapeError("cube does not fit the weight grid")
    n = weight.n
    sl = cube.cell_slices(weight.level)
    s_exp = -1.0 / p if dual else 1.0 / p
    if p == 2.0:
        avg = weight.power_cells(-1.0 if dual else 1.0)[sl].mean(
            axis=tuple(range(weight.d))
        )
        return spd_power_stack(avg, 0.5)
    cells = weight.cells[sl]
    if np.all(cells == cells.reshape(-1, n, n)[0]):
        return spd_power_stack(cells.reshape(-1, n, n)[0], s_exp)
    q = conjugate_exponent(p) if dual else p
    wp = weight.power_cells(s_exp)[sl]
    if n == 1:
        return _rho_block(wp, q, np.ones((1, 1)), weight.d).reshape(1, 1)
    m_fit = fit.fit_count(n)
    dirs_fit = quasi_uniform_directions(n, m_fit)
    extra = quasi_uniform_directions(n, m_fit * fit.cal_factor, offset=0.37)
    dirs_all = np.concatenate([dirs_fit, extra], axis=0)
    rho_all = _rho_block(wp, q, dirs_all, weight.d)[None, :]
    v, _ = _fit_operators(rho_all[:, :m_fit], rho_all, dirs_fit, dirs_all, fit)
    return v[0]


def reducing_operator(
    weight: MatrixWeight, cube: DyadicCube, p: float, fit: FitConfig | None = None
) -> np.ndarray:
    """The SPD matrix V_I reducing rho_I for one cube."""
    return _single_cube_operator(weight, cube, p, False, fit or FitConfig())


def dual_reducing_operator(
    weight: MatrixWeight, cube: DyadicCube, p: float, fit: FitConfig | None = None
) -> np.ndarray:
    """The SPD matrix V'_I reducing the dual norm rho'_I for one cube."""
    return _single_cube_operator(weight, cube, p, True, fit or FitConfig())


# ---------------------------------------------------------------------------
# characteristics


def _family_for(
    weight: MatrixWeight,
    p: float,
    max_depth: int | None,
    family: ReducingFamily | None,
    fit: FitConfig | None = None,
):
    depth = max(weight.level - 2, 0) if max_depth is None else int(max_depth)
    if depth > weight.level:
        raise ParameterError(f"max_depth {depth} exceeds grid level {weight.level}")
    if family is not None:
        if family.p != p:
            raise ParameterError(f"family exponent {family.p} != requested {p}")
        if family.max_depth < depth:
            raise CoverageError(
                f"family depth {family.max_depth} < requested scan depth {depth}"
            )
        return family, depth
    return build_reducing_family(weight, p, max_depth=depth, fit=fit), depth


def ap_characteristic(
    weight: MatrixWeight,
    p: float,
    max_depth: int | None = None,
    family: ReducingFamily | None = None,
    fit: FitConfig | None = None,
) -> float:
    """sup over cubes (level <= max_depth, default L-2) of ||V_I V'_I||^p."""
    fam, depth = _family_for(weight, p, max_depth, family, fit)
    best = max(float(fam.pair_norms(l).max()) for l in range(depth + 1))
    return best**p


def scalar_ap_characteristic(
    weight: MatrixWeight,
    e,
    p: float,
    max_depth: int | None = None,
) -> float:
    """Scalar characteristic of w_e(x) = |W(x)^{1/p} e|^p over the same cubes."""
    if not 1.0 < p < math.inf:
        raise ParameterError(f"exponent must satisfy 1 < p < inf, got {p}")
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.shape != (weight.n,):
        raise ShapeError(f"direction shape {e.shape}, expected ({weight.n},)")
    depth = max(weight.level - 2, 0) if max_depth is None else int(max_depth)
    x = np.einsum("...ij,j->...i", weight.power_cells(1.0 / p), e)
    w = np.linalg.norm(x, axis=-1) ** p
    if w.min() <= 0.0:
        raise ParameterError("direction lies in the kernel of some cell")
    pyr_w = mean_pyramid(w, weight.d)
    pyr_s = mean_pyramid(w ** (1.0 - conjugate_exponent(p)), weight.d)
    best = max(
        float((pyr_w[l] * pyr_s[l] ** (p - 1.0)).max()) for l in range(depth + 1)
    )
    return best


@dataclass(frozen=True)
class DualityReport:
    """Comparison of the characteristic of W at p with W^{1-p'} at p'."""

    p: float
    p_dual: float
    char: float
    char_dual: float
    predicted_dual: float
    log_gap: float
    kappa_max: float
    log_bound: float
    passed: bool


def duality_check(
    weight: MatrixWeight,
    p: float,
    max_depth: int | None = None,
    fit: FitConfig | None = None,
    family: ReducingFamily | None = None,
    dual_weight: MatrixWeight | None = None,
    dual_family: ReducingFamily | None = None,
) -> DualityReport:
    """Verify ||W^{1-p'}||_{A_p'} = ||W||_{A_p}^{p'/p} within the fit slack.

    The dual weight's family is built independently (fresh fits on W^{1-p'}),
    not reused from the primal side; agreement of the two routes within
    log(kappa_max^4) is the meaningful check.
    """
    q = conjugate_exponent(p)
    fam, depth = _family_for(weight, p, max_depth, family, fit)
    if dual_weight is None:
        cells = spd_power_stack(weight.cells, 1.0 - q)
        dual_weight = MatrixWeight(
            weight.d,
            weight.n,
            weight.level,
            cells,
            {"family": "derived", "base": dict(weight.meta), "exponent": 1.0 - q},
        )
    dfam, _ = _family_for(dual_weight, q, depth, dual_family, fit)
    char = ap_characteristic(weight, p, depth, family=fam)
    char_dual = ap_characteristic(dual_weight, q, depth, family=dfam)
    predicted = char ** (q / p)
    kappa = max(fam.max_kappa(depth), dfam.max_kappa(depth))
    log_gap = abs(math.log(char_dual) - math.log(predicted))
    log_bound = 4.0 * math.log(kappa)
    return DualityReport(
        p=float(p),
        p_dual=q,
        char=char,
        char_dual=char_dual,
        predicted_dual=predicted,
        log_gap=log_gap,
        kappa_max=kappa,
        log_bound=log_bound,
        passed=log_gap <= log_bound + 1e-9,
    )
