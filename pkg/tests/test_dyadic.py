"""Dyadic grid and Haar transform checks.

Covers: cube geometry, signature enumeration, pointwise Haar values against
hand-computed cases, exactness of the pyramid transform (round trip and
Parseval), orthonormality of the synthesized basis, and the L^p cell sums.
"""

import numpy as np
import numpy.testing as npt
import pytest

from haarweight import (
    CoverageError,
    DomainError,
    DyadicCube,
    GridFunction,
    HaarCoefficients,
    HaarSignature,
    ParameterError,
    ShapeError,
    haar_eval,
    haar_reconstruct,
    haar_transform,
    lp_norm,
)
from haarweight.dyadic import (
    coarsen_sum,
    detail_signatures,
    mean_pyramid,
    refine_to_cells,
    sign_matrix,
)


def random_grid(d, n, L, rng):
    return GridFunction(d, n, L, rng.standard_normal(((1 << L),) * d + (n,)))


# ---------------------------------------------------------------------------
# cubes and signatures


def test_cube_geometry():
    c = DyadicCube(2, (1, 3))
    assert c.d == 2
    assert c.side == 0.25
    assert c.measure == 0.0625
    npt.assert_allclose(c.lower_corner(), [0.25, 0.75])
    assert c.parent() == DyadicCube(1, (0, 1))
    assert c.ancestor(0) == DyadicCube.root(2)
    kids = c.children()
    assert len(kids) == 4
    assert kids[0] == DyadicCube(3, (2, 6))
    assert kids[-1] == DyadicCube(3, (3, 7))
    assert c.contains_point([0.3, 0.8])
    assert not c.contains_point([0.3, 0.2])
    assert c.contains_cube(kids[2])
    assert not kids[2].contains_cube(c)


def test_cube_validation():
    with pytest.raises(DomainError):
        DyadicCube(1, (2,))
    with pytest.raises(DomainError):
        DyadicCube(-1, (0,))
    with pytest.raises(DomainError):
        DyadicCube.root(1).parent()


def test_cell_slices():
    c = DyadicCube(1, (1,))
    assert c.cell_slices(3) == (slice(4, 8),)
    grid = np.arange(8)
    npt.assert_array_equal(grid[c.cell_slices(3)], [4, 5, 6, 7])


def test_signature_enumeration():
    assert detail_signatures(1) == ((0,),)
    assert detail_signatures(2) == ((0, 0), (0, 1), (1, 0))
    assert len(detail_signatures(3)) == 7
    with pytest.raises(ParameterError):
        HaarSignature((1, 1))
    with pytest.raises(ParameterError):
        HaarSignature((0, 2))
    assert HaarSignature((0, 1)).position == 1


def test_sign_matrix_hadamard():
    # rows are mutually orthogonal with squared norm 2^d: exact inversion
    for d in (1, 2, 3):
        s = sign_matrix(d)
        npt.assert_array_equal(s.T @ s, (1 << d) * np.eye(1 << d))
        npt.assert_array_equal(s @ s.T, (1 << d) * np.eye(1 << d))


# ---------------------------------------------------------------------------
# pointwise evaluation


def test_haar_eval_1d():
    root = DyadicCube.root(1)
    sig = HaarSignature((0,))
    assert haar_eval(root, sig, [0.2]) == 1.0
    assert haar_eval(root, sig, [0.5]) == -1.0
    assert haar_eval(root, sig, [0.99]) == -1.0
    half = DyadicCube(1, (1,))
    assert haar_eval(half, sig, [0.6]) == pytest.approx(np.sqrt(2.0))
    assert haar_eval(half, sig, [0.8]) == pytest.approx(-np.sqrt(2.0))
    assert haar_eval(half, sig, [0.2]) == 0.0
    with pytest.raises(DomainError):
        haar_eval(root, sig, [1.0])


def test_haar_eval_2d_mixed_signature():
    # oscillates in x1 only; (0.7, 0.2) sits in the right half in x1
    root = DyadicCube.root(2)
    assert haar_eval(root, HaarSignature((0, 1)), [0.7, 0.2]) == -1.0
    assert haar_eval(root, HaarSignature((1, 0)), [0.7, 0.2]) == 1.0
    assert haar_eval(root, HaarSignature((0, 0)), [0.7, 0.2]) == -1.0
    sub = DyadicCube(1, (1, 0))
    assert haar_eval(sub, HaarSignature((0, 0)), [0.7, 0.2]) == 2.0


def test_haar_eval_l2_normalized():
    # cell sums of h^2 equal 1 for every cube/signature at several scales
    L = 5
    for d in (1, 2):
        for lvl in range(0, 3):
            for idx in [(0,) * d, ((1 << lvl) - 1,) * d]:
                cube = DyadicCube(lvl, idx)
                for sig in HaarSignature.all(d):
                    h = 1 << L
                    pts = (np.arange(h) + 0.5) / h
                    grids = np.meshgrid(*([pts] * d), indexing="ij")
                    vals = np.zeros_like(grids[0])
                    it = np.nditer(grids[0], flags=["multi_index"])
                    for _ in it:
                        x = [g[it.multi_index] for g in grids]
                        vals[it.multi_index] = haar_eval(cube, sig, x)
                    npt.assert_allclose(np.sum(vals**2) / h**d, 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# transform exactness


def test_transform_two_cells():
    # f = (1, 3) on [0,1): mean 2, root detail <f, h> = (1-3)/2 = -1
    f = GridFunction(1, 1, 1, np.array([[1.0], [3.0]]))
    c = haar_transform(f)
    npt.assert_allclose(c.root_scaling, [2.0], atol=1e-15)
    npt.assert_allclose(c.detail[0], [[[-1.0]]], atol=1e-15)
    g = haar_reconstruct(c)
    npt.assert_allclose(g.values, f.values, atol=1e-15)


def test_transform_linear_function_root_detail():
    # cell averages of f(x) = x give root Haar coefficient exactly -1/4
    for L in (1, 3, 6, 10):
        h = 2.0**-L
        avg = (np.arange(1 << L) + 0.5) * h
        f = GridFunction(1, 1, L, avg[:, None])
        c = haar_transform(f)
        assert abs(c.detail[0][0, 0, 0] + 0.25) <= 2.0**-L
        assert abs(c.detail[0][0, 0, 0] + 0.25) <= 1e-12


def test_round_trip_and_parseval():
    rng = np.random.default_rng(7)
    cases = [(1, 1, 8), (1, 3, 6), (2, 1, 4), (2, 2, 5), (3, 2, 2)]
    for d, n, L in cases:
        for _ in range(5):
            f = random_grid(d, n, L, rng)
            c = haar_transform(f)
            g = haar_reconstruct(c)
            npt.assert_allclose(g.values, f.values, atol=1e-12)
            lhs = lp_norm(f, 2.0) ** 2
            rhs = float(np.sum(c.root_scaling**2)) + c.detail_l2() ** 2
            npt.assert_allclose(lhs, rhs, rtol=1e-12)


def test_single_coefficient_synthesis_matches_eval():
    # synthesizing one unit coefficient reproduces haar_eval on every cell
    rng = np.random.default_rng(3)
    for d, L in ((1, 4), (2, 3)):
        for _ in range(6):
            lvl = int(rng.integers(0, L))
            idx = tuple(int(rng.integers(0, 1 << lvl)) for _ in range(d))
            cube = DyadicCube(lvl, idx)
            sig = HaarSignature.all(d)[int(rng.integers(0, (1 << d) - 1))]
            c = HaarCoefficients.zeros(d, 1, L)
            c.set(cube, sig, [1.0])
            g = haar_reconstruct(c)
            h = 1 << L
            pts = (np.arange(h) + 0.5) / h
            for _ in range(20):
                cell = tuple(int(rng.integers(0, h)) for _ in range(d))
                x = [pts[i] for i in cell]
                assert g.values[cell + (0,)] == pytest.approx(
                    haar_eval(cube, sig, x), abs=1e-12
                )


def test_basis_orthonormality_gram():
    # full Gram of synthesized basis vectors (detail slots plus scaling)
    for d, L in ((1, 6), (2, 3)):
        cols = []
        c = HaarCoefficients.zeros(d, 1, L)
        c.root_scaling[0] = 1.0
        cols.append(haar_reconstruct(c).values.reshape(-1))
        for lvl in range(L):
            for idx in np.ndindex(*((1 << lvl),) * d):
                for sig in HaarSignature.all(d):
                    c = HaarCoefficients.zeros(d, 1, L)
                    c.set(DyadicCube(lvl, idx), sig, [1.0])
                    cols.append(haar_reconstruct(c).values.reshape(-1))
        h = np.stack(cols, axis=1)
        gram = h.T @ h / h.shape[0]
        npt.assert_allclose(gram, np.eye(h.shape[1]), atol=1e-12)


def test_coefficient_get_set_round_trip():
    c = HaarCoefficients.zeros(2, 3, 4)
    cube = DyadicCube(2, (1, 2))
    sig = HaarSignature((1, 0))
    c.set(cube, sig, [1.0, -2.0, 0.5])
    npt.assert_array_equal(c.get(cube, sig), [1.0, -2.0, 0.5])
    with pytest.raises(CoverageError):
        c.get(DyadicCube(4, (0, 0)), sig)
    with pytest.raises(ShapeError):
        c.get(DyadicCube(1, (0,)), sig)


# ---------------------------------------------------------------------------
# norms and pyramid helpers


def test_lp_norm_examples():
    f = GridFunction(1, 1, 1, np.array([[1.0], [3.0]]))
    assert lp_norm(f, 3.0) == pytest.approx(14.0 ** (1.0 / 3.0), rel=1e-14)
    assert lp_norm(f, 2.0) == pytest.approx(np.sqrt(5.0), rel=1e-14)
    g = GridFunction(2, 2, 1, np.full((2, 2, 2), 1.0))
    assert lp_norm(g, 2.5) == pytest.approx(np.sqrt(2.0), rel=1e-14)
    with pytest.raises(ParameterError):
        lp_norm(f, 1.0)


def test_mean_pyramid_exact():
    rng = np.random.default_rng(11)
    cells = rng.standard_normal((8, 8, 3))
    pyr = mean_pyramid(cells, 2)
    assert len(pyr) == 4
    npt.assert_allclose(pyr[0][0, 0], cells.mean(axis=(0, 1)), rtol=1e-14)
    npt.assert_allclose(pyr[2][1, 0], cells[2:4, 0:2].mean(axis=(0, 1)), rtol=1e-14)


def test_coarsen_refine():
    arr = np.arange(16, dtype=float).reshape(4, 4)
    s = coarsen_sum(arr, 2, 1)
    assert s.shape == (2, 2)
    assert s[0, 0] == arr[:2, :2].sum()
    r = refine_to_cells(np.array([[1.0, 2.0], [3.0, 4.0]]), 2, 2)
    assert r.shape == (8, 8)
    assert np.all(r[0:4, 4:8] == 2.0)


def test_grid_function_validation():
    with pytest.raises(ShapeError):
        GridFunction(1, 1, 2, np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        GridFunction(1, 1, 1, np.array([[np.nan], [0.0]]))
    g = GridFunction.constant([1.0, 2.0], 2, 3)
    assert g.n == 2 and g.values.shape == (8, 8, 2)
    npt.assert_array_equal(g.cell_value([0.99, 0.5]), [1.0, 2.0])
    with pytest.raises(DomainError):
        g.cell_value([1.0, 0.5])
