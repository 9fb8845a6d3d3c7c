"""Dyadic cubes on [0,1)^d and the tensor-product Haar system.

Functions live on the finest dyadic grid (level L): a grid function stores one
vector value per cell, understood as the cell average of an L^2 function that
is constant on cells. On that space the truncated Haar system (all cubes of
level < L) plus the unit scaling function is an orthonormal basis, and the
pyramid transform below realizes analysis/synthesis exactly (machine
precision, scalings are powers of 2).

Conventions. A cube at level l has sidelength 2^-l and index in {0..2^l-1}^d;
child gamma in {0,1}^d selects the left (0) or right (1) half per axis. A Haar
signature eps in {0,1}^d \\ {(1,..,1)} marks coordinate i as oscillating
(eps_i = 0, sign (-1)^{gamma_i}) or scaling (eps_i = 1, sign +1); the function
h_I^eps takes the values sign * 2^{l d / 2} on the children of I. For d = 1
this is |I|^{-1/2} (chi_left - chi_right).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, DomainError, ParameterError, ShapeError

__all__ = [
    "DyadicCube",
    "HaarSignature",
    "GridFunction",
    "HaarCoefficients",
    "haar_eval",
    "haar_transform",
    "haar_reconstruct",
    "lp_norm",
    "detail_signatures",
    "mean_pyramid",
    "coarsen_sum",
    "refine_to_cells",
]


# ---------------------------------------------------------------------------
# cubes and signatures


@dataclass(frozen=True, order=True)
class DyadicCube:
    """A dyadic cube [idx * 2^-l, (idx+1) * 2^-l) per axis."""

    level: int
    index: tuple

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"negative level {self.level}")
        idx = tuple(int(i) for i in self.index)
        object.__setattr__(self, "index", idx)
        if not idx:
            raise DomainError("empty index tuple")
        hi = 1 << self.level
        for i in idx:
            if not 0 <= i < hi:
                raise DomainError(f"index {idx} out of range at level {self.level}")

    @property
    def d(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def measure(self) -> float:
        return 2.0 ** (-self.level * self.d)

    @classmethod
    def root(cls, d: int) -> "DyadicCube":
        return cls(0, (0,) * d)

    def lower_corner(self) -> np.ndarray:
        return np.asarray(self.index, dtype=float) * self.side

    def child(self, gamma) -> "DyadicCube":
        idx = tuple(2 * i + g for i, g in zip(self.index, gamma))
        return DyadicCube(self.level + 1, idx)

    def children(self) -> list:
        return [self.child(g) for g in itertools.product((0, 1), repeat=self.d)]

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise DomainError("root cube has no parent")
        return DyadicCube(self.level - 1, tuple(i >> 1 for i in self.index))

    def ancestor(self, level: int) -> "DyadicCube":
        if not 0 <= level <= self.level:
            raise DomainError(f"no ancestor at level {level}")
        shift = self.level - level
        return DyadicCube(level, tuple(i >> shift for i in self.index))

    def contains_point(self, point) -> bool:
        x = np.asarray(point, dtype=float)
        lo = self.lower_corner()
        return bool(np.all(x >= lo) and np.all(x < lo + self.side))

    def contains_cube(self, other: "DyadicCube") -> bool:
        if other.d != self.d or other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def cell_slices(self, grid_level: int) -> tuple:
        """Index slices of this cube's cells in a level `grid_level` grid."""
        if grid_level < self.level:
            raise DomainError(f"cube level {self.level} below grid level {grid_level}")
        w = 1 << (grid_level - self.level)
        return tuple(slice(i * w, (i + 1) * w) for i in self.index)


def detail_signatures(d: int) -> tuple:
    """All 2^d - 1 detail signatures in lexicographic order."""
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    full = (1,) * d
    return tuple(e for e in itertools.product((0, 1), repeat=d) if e != full)


@dataclass(frozen=True)
class HaarSignature:
    """Signature eps of a tensor Haar function; eps_i = 0 oscillates in axis i."""

    eps: tuple

    def __post_init__(self):
        eps = tuple(int(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        if not eps or any(e not in (0, 1) for e in eps):
            raise ParameterError(f"signature entries must be 0/1, got {eps}")
        if all(e == 1 for e in eps):
            raise ParameterError("the all-ones signature is not a detail signature")

    @property
    def d(self) -> int:
        return len(self.eps)

    @property
    def position(self) -> int:
        """Index of this signature in detail_signatures(d)."""
        return detail_signatures(self.d).index(self.eps)

    @classmethod
    def all(cls, d: int) -> tuple:
        return tuple(cls(e) for e in detail_signatures(d))


def _sign_matrix(d: int) -> np.ndarray:
    """(2^d, 2^d) sign table; rows = detail signatures then all-ones, cols = children."""
    corners = list(itertools.product((0, 1), repeat=d))
    rows = list(detail_signatures(d)) + [(1,) * d]
    s = np.empty((len(rows), len(corners)))
    for r, eps in enumerate(rows):
        for c, gamma in enumerate(corners):
            sign = 1
            for e, g in zip(eps, gamma):
                if e == 0 and g == 1:
                    sign = -sign
            s[r, c] = sign
    return s


_SIGN_CACHE: dict = {}


def sign_matrix(d: int) -> np.ndarray:
    if d not in _SIGN_CACHE:
        m = _sign_matrix(d)
        m.flags.writeable = False
        _SIGN_CACHE[d] = m
    return _SIGN_CACHE[d]


# ---------------------------------------------------------------------------
# block reshaping helpers (shared by transforms, weights, stopping masks)


def _split_blocks(a: np.ndarray, d: int) -> np.ndarray:
    """Reshape a (2m,)*d + tail array to (m,)*d + (2^d,) + tail child blocks.

    The block axis enumerates children gamma in lexicographic order, matching
    sign_matrix columns.
    """
    m = a.shape[0] // 2
    tail = a.shape[d:]
    shape = []
    for _ in range(d):
        shape.extend((m, 2))
    a = a.reshape(*shape, *tail)
    order = (
        list(range(0, 2 * d, 2))
        + list(range(1, 2 * d, 2))
        + list(range(2 * d, a.ndim))
    )
    a = a.transpose(order)
    return a.reshape((m,) * d + (1 << d,) + tail)


def _merge_blocks(b: np.ndarray, d: int) -> np.ndarray:
    """Inverse of _split_blocks."""
    m = b.shape[0]
    tail = b.shape[d + 1 :]
    b = b.reshape((m,) * d + (2,) * d + tail)
    order = []
    for i in range(d):
        order.extend((i, d + i))
    order += list(range(2 * d, b.ndim))
    b = b.transpose(order)
    return b.reshape((2 * m,) * d + tail)


def mean_pyramid(cells: np.ndarray, d: int) -> list:
    """Per-level averages over cubes: out[l] has shape (2^l,)*d + tail.

    cells is a (2^L,)*d + tail array of finest-cell values; out[L] is cells
    itself. Averages of equal-measure cells are exact integrals.
    """
    levels = int(round(np.log2(cells.shape[0]))) if cells.shape[0] > 1 else 0
    if cells.shape[:d] != ((1 << levels),) * d:
        raise ShapeError(f"cell array shape {cells.shape} is not a dyadic {d}-grid")
    out = [None] * (levels + 1)
    out[levels] = cells
    a = cells
    for lvl in range(levels - 1, -1, -1):
        a = _split_blocks(a, d).mean(axis=d)
        out[lvl] = a
    return out


def coarsen_sum(arr: np.ndarray, d: int, k: int) -> np.ndarray:
    """Sum over 2^k x ... x 2^k blocks, reducing each axis by 2^k."""
    for _ in range(k):
        arr = _split_blocks(arr, d).sum(axis=d)
    return arr


def refine_to_cells(arr: np.ndarray, d: int, k: int) -> np.ndarray:
    """Repeat each entry over a 2^k block per axis (piecewise-constant refine)."""
    for axis in range(d):
        arr = np.repeat(arr, 1 << k, axis=axis)
    return arr


# ---------------------------------------------------------------------------
# grid functions and coefficients


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A function on [0,1)^d constant on level-L cells, with values in R^n.

    values has shape (2^L,)*d + (n,); axis j indexes coordinate x_j.
    """

    d: int
    n: int
    level: int
    values: np.ndarray

    def __post_init__(self):
        if self.d < 1 or self.n < 1 or self.level < 0:
            raise ParameterError(
                f"invalid grid function dims d={self.d} n={self.n} L={self.level}"
            )
        v = np.asarray(self.values, dtype=float)
        want = ((1 << self.level),) * self.d + (self.n,)
        if v.shape != want:
            raise ShapeError(f"values shape {v.shape}, expected {want}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("values contain non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, values, d: int, level: int) -> "GridFunction":
        v = np.asarray(values, dtype=float)
        return cls(d, v.shape[-1], level, v)

    @classmethod
    def constant(cls, vec, d: int, level: int) -> "GridFunction":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        v = np.broadcast_to(vec, ((1 << level),) * d + (vec.size,)).copy()
        return cls(d, vec.size, level, v)

    def cell_value(self, point) -> np.ndarray:
        x = np.asarray(point, dtype=float)
        if x.shape != (self.d,):
            raise ShapeError(f"point shape {x.shape}, expected ({self.d},)")
        if np.any(x < 0) or np.any(x >= 1):
            raise DomainError(f"point {x} outside [0,1)^d")
        idx = tuple((x * (1 << self.level)).astype(int))
        return self.values[idx]

    def restrict_mask(self, cube: DyadicCube) -> np.ndarray:
        """Boolean cell mask of the cube (shape (2^L,)*d)."""
        mask = np.zeros(((1 << self.level),) * self.d, dtype=bool)
        mask[cube.cell_slices(self.level)] = True
        return mask


@dataclass(eq=False)
class HaarCoefficients:
    """Haar analysis data: root scaling coefficient plus per-level details.

    detail[l] has shape (2^l,)*d + (2^d - 1, n): one block of coefficients per
    level-l cube, signature axis ordered as detail_signatures(d).
    """

    d: int
    n: int
    level: int
    root_scaling: np.ndarray
    detail: list = field(default_factory=list)

    def __post_init__(self):
        rs = np.asarray(self.root_scaling, dtype=float).reshape(-1)
        if rs.shape != (self.n,):
            raise ShapeError(f"root scaling shape {rs.shape}, expected ({self.n},)")
        self.root_scaling = rs
        if len(self.detail) != self.level:
            raise ShapeError(
                f"{len(self.detail)} detail levels for finest level {self.level}"
            )
        nsig = (1 << self.d) - 1
        clean = []
        for lvl, arr in enumerate(self.detail):
            arr = np.asarray(arr, dtype=float)
            want = ((1 << lvl),) * self.d + (nsig, self.n)
            if arr.shape != want:
                raise ShapeError(f"detail[{lvl}] shape {arr.shape}, expected {want}")
            clean.append(arr)
        self.detail = clean

    @classmethod
    def zeros(cls, d: int, n: int, level: int) -> "HaarCoefficients":
        nsig = (1 << d) - 1
        detail = [np.zeros(((1 << l),) * d + (nsig, n)) for l in range(level)]
        return cls(d, n, level, np.zeros(n), detail)

    def copy(self) -> "HaarCoefficients":
        return HaarCoefficients(
            self.d,
            self.n,
            self.level,
            self.root_scaling.copy(),
            [a.copy() for a in self.detail],
        )

    def _locate(self, cube: DyadicCube, sig: HaarSignature):
        if cube.d != self.d or sig.d != self.d:
            raise ShapeError("cube/signature dimension mismatch")
        if cube.level >= self.level:
            raise CoverageError(
                f"cube level {cube.level} not represented (finest level {self.level})"
            )
        return self.detail[cube.level], cube.index + (sig.position,)

    def get(self, cube: DyadicCube, sig: HaarSignature) -> np.ndarray:
        arr, idx = self._locate(cube, sig)
        return arr[idx].copy()

    def set(self, cube: DyadicCube, sig: HaarSignature, value):
        arr, idx = self._locate(cube, sig)
        arr[idx] = np.asarray(value, dtype=float).reshape(self.n)

    def detail_l2(self) -> float:
        """l2 norm of all detail coefficients (excludes root scaling)."""
        return float(
            np.sqrt(sum(float(np.sum(a * a)) for a in self.detail))
        )


# ---------------------------------------------------------------------------
# transforms


def haar_eval(cube: DyadicCube, sig: HaarSignature, point) -> float:
    """Pointwise value of h_cube^sig at a point of [0,1)^d (0 off the cube)."""
    x = np.asarray(point, dtype=float)
    d = cube.d
    if sig.d != d:
        raise ShapeError("cube/signature dimension mismatch")
    if x.shape != (d,):
        raise ShapeError(f"point shape {x.shape}, expected ({d},)")
    if np.any(x < 0) or np.any(x >= 1):
        raise DomainError(f"point {x} outside [0,1)^d")
    if not cube.contains_point(x):
        return 0.0
    mid = cube.lower_corner() + cube.side / 2
    sign = 1.0
    for i, e in enumerate(sig.eps):
        if e == 0 and x[i] >= mid[i]:
            sign = -sign
    return sign * 2.0 ** (cube.level * d / 2.0)


def haar_transform(f: GridFunction) -> HaarCoefficients:
    """Exact Haar analysis of a grid function via the dyadic pyramid."""
    d, L = f.d, f.level
    s = sign_matrix(d)
    a = f.values
    detail = [None] * L
    inv = 1.0 / (1 << d)
    for lvl in range(L - 1, -1, -1):
        blocks = _split_blocks(a, d)
        b = np.einsum("ec,...cn->...en", s, blocks) * inv
        detail[lvl] = np.ascontiguousarray(b[..., :-1, :]) * 2.0 ** (-lvl * d / 2.0)
        a = np.ascontiguousarray(b[..., -1, :])
    return HaarCoefficients(d, f.n, L, a.reshape(f.n), detail)


def haar_reconstruct(coeffs: HaarCoefficients) -> GridFunction:
    """Exact Haar synthesis; inverse of haar_transform."""
    d, n, L = coeffs.d, coeffs.n, coeffs.level
    s = sign_matrix(d)
    a = coeffs.root_scaling.reshape((1,) * d + (n,))
    nsig = (1 << d) - 1
    for lvl in range(L):
        b = np.empty(((1 << lvl),) * d + (nsig + 1, n))
        b[..., :-1, :] = coeffs.detail[lvl] * 2.0 ** (lvl * d / 2.0)
        b[..., -1, :] = a
        blocks = np.einsum("ec,...en->...cn", s, b)
        a = _merge_blocks(blocks, d)
    return GridFunction(d, n, L, a)


def lp_norm(f: GridFunction, p: float) -> float:
    """L^p norm of the piecewise-constant function, exact cell sum."""
    if not 1.0 < p < np.inf:
        raise ParameterError(f"exponent must satisfy 1 < p < inf, got {p}")
    mag = np.linalg.norm(f.values, axis=-1)
    return float(np.sum(mag**p) * f.values[..., 0].size ** -1.0) ** (1.0 / p)
