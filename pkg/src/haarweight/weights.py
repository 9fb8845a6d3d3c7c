"""Matrix weights on the finest dyadic grid.

A weight is one SPD n x n matrix per finest cell (the cell sample or exact
cell average, depending on the family). Coarser cube averages are always
taken over cells, so they are exact integrals of the piecewise-constant
realization. Validation is strict: symmetry to 1e-12 (relative to the largest
entry) and eigenvalues >= EIGEN_FLOOR, else MatrixDomainError; nothing is
clamped or repaired.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .dyadic import GridFunction, DyadicCube, lp_norm, mean_pyramid
from .errors import MatrixDomainError, ParameterError, ShapeError

__all__ = [
    "EIGEN_FLOOR",
    "MatrixWeight",
    "WeightFamily",
    "spd_power",
    "spd_power_stack",
    "apply_cells",
    "weight_average",
    "weighted_lp_norm",
    "make_weight",
]

EIGEN_FLOOR = 1e-12


def _check_spd_stack(mats: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.max(np.abs(mats))) if mats.size else 1.0)
    asym = float(np.max(np.abs(mats - np.swapaxes(mats, -1, -2))))
    if asym > 1e-12 * scale:
        raise MatrixDomainError(f"{what}: asymmetry {asym:.3e} exceeds tolerance")
    vals = np.linalg.eigvalsh(mats)
    lo = float(vals.min())
    if not np.isfinite(vals).all() or lo < EIGEN_FLOOR:
        raise MatrixDomainError(
            f"{what}: eigenvalue {lo:.3e} below floor {EIGEN_FLOOR:.0e}"
        )


def spd_power_stack(mats: np.ndarray, s: float) -> np.ndarray:
    """Symmetric power A^s on a (..., n, n) stack via eigendecomposition."""
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    vals, vecs = np.linalg.eigh(sym)
    powered = vals**s
    out = np.einsum("...ik,...k,...jk->...ij", vecs, powered, vecs)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def spd_power(a: np.ndarray, s: float) -> np.ndarray:
    """A^s for a single SPD matrix; rejects non-SPD input."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    _check_spd_stack(a[None], "spd_power")
    return spd_power_stack(a, s)


def apply_cells(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Cellwise matrix-vector product: (..., n, n) applied to (..., n)."""
    return np.einsum("...ij,...j->...i", mats, vecs)


@dataclass(frozen=True, eq=False)
class WeightFamily:
    """Recipe for a weight: family name, grid dims, parameters, seed."""

    family: str
    d: int
    n: int
    level: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def rng(self) -> np.random.Generator:
        tag = zlib.crc32(self.family.encode()) & 0xFFFFFFFF
        return np.random.default_rng([tag, self.seed & 0xFFFFFFFF])


@dataclass(eq=False)
class MatrixWeight:
    """SPD matrix field on the finest grid; cells shape (2^L,)*d + (n, n)."""

    d: int
    n: int
    level: int
    cells: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=float)
        want = ((1 << self.level),) * self.d + (self.n, self.n)
        if c.shape != want:
            raise ShapeError(f"weight cells shape {c.shape}, expected {want}")
        _check_spd_stack(c, "weight cells")
        c = 0.5 * (c + np.swapaxes(c, -1, -2))
        c.flags.writeable = False
        self.cells = c
        self._powers: dict = {}
        self._pyramids: dict = {}

    def power_cells(self, s: float) -> np.ndarray:
        """Cached cellwise power W^s."""
        key = round(float(s), 12)
        if key not in self._powers:
            if key == 1.0:
                out = self.cells
            else:
                out = spd_power_stack(self.cells, float(s))
                out.flags.writeable = False
            self._powers[key] = out
        return self._powers[key]

    def mean_pyramid_of(self, s: float) -> list:
        """Cached per-level averages of W^s (exact integrals)."""
        key = round(float(s), 12)
        if key not in self._pyramids:
            self._pyramids[key] = mean_pyramid(self.power_cells(s), self.d)
        return self._pyramids[key]

    def eigenvalue_range(self) -> tuple:
        vals = np.linalg.eigvalsh(self.cells)
        return float(vals.min()), float(vals.max())

    def constancy_pyramid(self) -> list:
        """Per-level mask of cubes on which the weight is exactly constant."""
        key = "const"
        if key not in self._pyramids:
            from .dyadic import _split_blocks

            L = self.level
            flags = [None] * (L + 1)
            flags[L] = np.ones(((1 << L),) * self.d, dtype=bool)
            rep = self.cells
            for lvl in range(L - 1, -1, -1):
                blocks = _split_blocks(rep, self.d)
                same = np.all(blocks == blocks[..., :1, :, :], axis=(self.d, -1, -2))
                fl = _split_blocks(flags[lvl + 1][..., None], self.d)
                flags[lvl] = np.all(fl[..., 0], axis=self.d) & same
                rep = blocks[..., 0, :, :]
            reps = mean_pyramid(self.cells, self.d)
            self._pyramids[key] = [(flags[l], reps[l]) for l in range(L + 1)]
        return self._pyramids[key]


def weight_average(weight: MatrixWeight, cube: DyadicCube) -> np.ndarray:
    """Exact average of W over a cube (mean of equal-measure cells)."""
    if cube.d != weight.d or cube.level > weight.level:
        raise ShapeError(
            f"cube (d={cube.d}, level={cube.level}) does not fit weight grid"
        )
    sub = weight.cells[cube.cell_slices(weight.level)]
    return sub.mean(axis=tuple(range(weight.d)))


def weighted_lp_norm(f: GridFunction, weight: MatrixWeight, p: float) -> float:
    """L^p norm of W^{1/p} f (the natural weighted norm)."""
    if (f.d, f.n, f.level) != (weight.d, weight.n, weight.level):
        raise ShapeError("function and weight live on different grids")
    g = apply_cells(weight.power_cells(1.0 / p), f.values)
    return lp_norm(GridFunction(f.d, f.n, f.level, g), p)


# ---------------------------------------------------------------------------
# weight families


def _axis_midpoints(level: int, oversample: int = 1) -> np.ndarray:
    h = 1 << level
    return (np.arange(h * oversample) + 0.5) / (h * oversample)


def _power_cells(fam: WeightFamily) -> np.ndarray:
    alpha = float(fam.params.get("alpha", 0.0))
    if alpha <= -1.0:
        raise ParameterError(f"power exponent alpha must exceed -1, got {alpha}")
    x0 = np.asarray(fam.params.get("x0", (0.0,) * fam.d), dtype=float)
    if x0.shape != (fam.d,):
        raise ShapeError(f"x0 shape {x0.shape}, expected ({fam.d},)")
    h = 1 << fam.level
    if fam.d == 1:
        # exact cell averages from the antiderivative of |x - x0|^alpha
        edges = np.arange(h + 1) / h - x0[0]
        anti = np.sign(edges) * np.abs(edges) ** (alpha + 1.0) / (alpha + 1.0)
        scalar = (anti[1:] - anti[:-1]) * h
    else:
        q = 16
        mids = _axis_midpoints(fam.level, q)
        grids = np.meshgrid(*[mids - x0[i] for i in range(fam.d)], indexing="ij")
        r = np.sqrt(sum(g**2 for g in grids))
        vals = r**alpha
        for axis in range(fam.d):
            vals = vals.reshape(
                vals.shape[:axis] + (h, q) + vals.shape[axis + 1 :]
            ).mean(axis=axis + 1)
        scalar = vals
    return scalar.reshape((h,) * fam.d + (1, 1)) * np.eye(fam.n)


def _rotating_cells(fam: WeightFamily) -> np.ndarray:
    if fam.n != 2:
        raise ParameterError("rotating family requires n = 2")
    alpha = float(fam.params.get("alpha", 0.5))
    omega = float(fam.params.get("omega", np.pi))
    phase = float(fam.params.get("phase", 0.0))
    default_x0 = (0.31,) if fam.d == 1 else (0.31, 0.17)
    x0 = np.asarray(fam.params.get("x0", default_x0), dtype=float)
    mids = _axis_midpoints(fam.level)
    grids = np.meshgrid(*([mids] * fam.d), indexing="ij")
    r = np.sqrt(sum((g - x0[i]) ** 2 for i, g in enumerate(grids)))
    theta = omega * grids[0] + phase
    c, s = np.cos(theta), np.sin(theta)
    lam = r**alpha
    # R(theta) diag(r^alpha, 1) R(theta)^T assembled entrywise
    w = np.empty(r.shape + (2, 2))
    w[..., 0, 0] = lam * c**2 + s**2
    w[..., 1, 1] = lam * s**2 + c**2
    w[..., 0, 1] = (lam - 1.0) * c * s
    w[..., 1, 0] = w[..., 0, 1]
    return w


def _logbrownian_cells(fam: WeightFamily) -> np.ndarray:
    sigma = float(fam.params.get("sigma", 0.3))
    rng = fam.rng()
    h = 1 << fam.level
    count = h**fam.d
    n = fam.n
    iu = np.triu_indices(n)
    incr = rng.standard_normal((count, len(iu[0]))) / np.sqrt(count)
    path = np.cumsum(incr, axis=0)
    b = np.zeros((count, n, n))
    b[:, iu[0], iu[1]] = path
    b = b + np.swapaxes(b, 1, 2)
    b[:, np.arange(n), np.arange(n)] *= 0.5
    vals, vecs = np.linalg.eigh(sigma * b)
    w = np.einsum("kij,kj,klj->kil", vecs, np.exp(vals), vecs)
    return w.reshape((h,) * fam.d + (n, n))


def _constant_cells(fam: WeightFamily) -> np.ndarray:
    if "matrix" in fam.params:
        m = np.asarray(fam.params["matrix"], dtype=float)
        if m.shape != (fam.n, fam.n):
            raise ShapeError(f"constant matrix shape {m.shape}, expected square n={fam.n}")
    else:
        # random SPD with controlled condition number
        cond = float(fam.params.get("cond", 10.0))
        rng = fam.rng()
        q, _ = np.linalg.qr(rng.standard_normal((fam.n, fam.n)))
        lam = np.exp(np.linspace(0.0, np.log(cond), fam.n))
        m = (q * lam) @ q.T
    h = 1 << fam.level
    return np.broadcast_to(m, (h,) * fam.d + (fam.n, fam.n)).copy()


_FAMILIES = {
    "power": _power_cells,
    "rotating": _rotating_cells,
    "logbrownian": _logbrownian_cells,
    "constant": _constant_cells,
}


def make_weight(fam: WeightFamily) -> MatrixWeight:
    """Realize a weight family on its grid; deterministic in (family, seed).

    Power-type exponents outside (-1, p_range - 1) are allowed (the discrete
    realization is still SPD) but flagged in meta["warning"]: continuum
    guarantees tied to the documented exponent range no longer apply.
    """
    if fam.family not in _FAMILIES:
        raise ParameterError(
            f"unknown family {fam.family!r}; known: {sorted(_FAMILIES)}"
        )
    if fam.d < 1 or fam.n < 1 or fam.level < 0:
        raise ParameterError(f"bad dims d={fam.d} n={fam.n} L={fam.level}")
    cells = _FAMILIES[fam.family](fam)
    warning = None
    if fam.family in ("power", "rotating"):
        alpha = float(fam.params.get("alpha", 0.5 if fam.family == "rotating" else 0.0))
        p_range = float(fam.params.get("p_range", 2.0))
        if not -1.0 < alpha < p_range - 1.0:
            warning = (
                f"alpha={alpha} outside the documented range (-1, {p_range - 1}) "
                f"for exponent p={p_range}"
            )
    meta = {
        "family": fam.family,
        "d": fam.d,
        "n": fam.n,
        "level": fam.level,
        "params": dict(fam.params),
        "seed": fam.seed,
        "warning": warning,
    }
    return MatrixWeight(fam.d, fam.n, fam.level, cells, meta)
