"""Weight model checks: SPD powers, cell averages, families, validation."""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.integrate
import scipy.linalg

from haarweight import DyadicCube, GridFunction, MatrixDomainError, ParameterError
from haarweight.weights import (
    EIGEN_FLOOR,
    MatrixWeight,
    WeightFamily,
    make_weight,
    spd_power,
    spd_power_stack,
    weight_average,
    weighted_lp_norm,
)


def random_spd(n, rng, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(-np.log(cond) / 2, np.log(cond) / 2, n))
    return (q * lam) @ q.T


# ---------------------------------------------------------------------------
# spd powers


def test_spd_power_diagonal():
    npt.assert_allclose(spd_power(np.diag([4.0, 9.0]), 0.5), np.diag([2.0, 3.0]))
    npt.assert_allclose(spd_power(np.diag([4.0, 9.0]), -1.0), np.diag([0.25, 1 / 9]))


def test_spd_power_against_scipy():
    rng = np.random.default_rng(5)
    for n in (1, 2, 3):
        a = random_spd(n, rng)
        npt.assert_allclose(spd_power(a, 0.5), scipy.linalg.sqrtm(a), atol=1e-11)
        npt.assert_allclose(
            spd_power(a, 1.0 / 3.0),
            scipy.linalg.fractional_matrix_power(a, 1.0 / 3.0),
            atol=1e-11,
        )


def test_spd_power_group_law():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        a = random_spd(n, rng)
        s, t = rng.uniform(-1.5, 1.5, 2)
        lhs = spd_power(a, s) @ spd_power(a, t)
        npt.assert_allclose(lhs, spd_power(a, s + t), atol=1e-10)
        npt.assert_allclose(spd_power(a, 0.0), np.eye(n), atol=1e-13)


def test_spd_power_rejects_bad_input():
    with pytest.raises(MatrixDomainError):
        spd_power(np.array([[1.0, 0.5], [0.0, 1.0]]), 0.5)
    with pytest.raises(MatrixDomainError):
        spd_power(np.diag([1.0, -0.1]), 0.5)
    with pytest.raises(MatrixDomainError):
        spd_power(np.diag([1.0, 1e-13]), 0.5)


def test_spd_power_stack_matches_loop():
    rng = np.random.default_rng(7)
    mats = np.stack([random_spd(2, rng) for _ in range(8)])
    out = spd_power_stack(mats, 0.25)
    for k in range(8):
        npt.assert_allclose(out[k], spd_power(mats[k], 0.25), atol=1e-12)


# ---------------------------------------------------------------------------
# weight container


def test_weight_validation():
    cells = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    w = MatrixWeight(1, 2, 2, cells)
    lo, hi = w.eigenvalue_range()
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    bad = cells.copy()
    bad[0] = [[1.0, 0.3], [0.0, 1.0]]
    with pytest.raises(MatrixDomainError):
        MatrixWeight(1, 2, 2, bad)
    low = cells.copy()
    low[1] = np.diag([1.0, 5e-13])
    with pytest.raises(MatrixDomainError):
        MatrixWeight(1, 2, 2, low)


def test_weight_average_two_cells():
    cells = np.array([[[1.0]], [[4.0]]])
    w = MatrixWeight(1, 1, 1, cells)
    npt.assert_allclose(weight_average(w, DyadicCube.root(1)), [[2.5]])
    npt.assert_allclose(weight_average(w, DyadicCube(1, (1,))), [[4.0]])


def test_power_cells_cache_consistency():
    rng = np.random.default_rng(8)
    cells = np.stack([random_spd(2, rng) for _ in range(4)])
    w = MatrixWeight(1, 2, 2, cells)
    half = w.power_cells(0.5)
    npt.assert_allclose(
        np.einsum("kij,kjl->kil", half, half), w.cells, atol=1e-11
    )
    assert w.power_cells(0.5) is half  # cached


def test_constancy_pyramid():
    cells = np.broadcast_to(np.eye(2), (8, 2, 2)).copy()
    cells[5] = np.diag([2.0, 1.0])
    w = MatrixWeight(1, 2, 3, cells)
    pyr = w.constancy_pyramid()
    flags1, _ = pyr[1]
    assert flags1[0] and not flags1[1]
    flags2, reps2 = pyr[2]
    assert list(flags2) == [True, True, False, True]
    npt.assert_allclose(reps2[0], np.eye(2))


def test_weighted_lp_norm_diagonal():
    w = MatrixWeight(1, 2, 1, np.broadcast_to(np.diag([1.0, 16.0]), (2, 2, 2)).copy())
    f = GridFunction.constant([0.0, 1.0], 1, 1)
    assert weighted_lp_norm(f, w, 2.0) == pytest.approx(4.0, rel=1e-14)
    assert weighted_lp_norm(f, w, 4.0) == pytest.approx(2.0, rel=1e-14)


# ---------------------------------------------------------------------------
# families


def test_power_family_exact_averages_1d():
    fam = WeightFamily("power", 1, 1, 6, {"alpha": 1.0})
    w = make_weight(fam)
    mids = (np.arange(64) + 0.5) / 64
    npt.assert_allclose(w.cells[:, 0, 0], mids, rtol=1e-13)

    fam = WeightFamily("power", 1, 1, 4, {"alpha": 0.6})
    w = make_weight(fam)
    for k in (0, 7, 15):
        val, _ = scipy.integrate.quad(
            lambda x: x**0.6, k / 16.0, (k + 1) / 16.0, epsabs=1e-14
        )
        npt.assert_allclose(w.cells[k, 0, 0], val * 16.0, rtol=1e-10)


def test_power_family_negative_alpha_integrable():
    w = make_weight(WeightFamily("power", 1, 1, 5, {"alpha": -0.5}))
    val, _ = scipy.integrate.quad(lambda x: x**-0.5, 0.0, 1 / 32.0)
    npt.assert_allclose(w.cells[0, 0, 0], val * 32.0, rtol=1e-9)
    assert w.meta["warning"] is None


def test_power_family_warning_flag():
    w = make_weight(WeightFamily("power", 1, 1, 4, {"alpha": 1.4}))
    assert "outside the documented range" in w.meta["warning"]
    w = make_weight(WeightFamily("power", 1, 1, 4, {"alpha": 1.4, "p_range": 3.0}))
    assert w.meta["warning"] is None
    with pytest.raises(ParameterError):
        make_weight(WeightFamily("power", 1, 1, 4, {"alpha": -1.0}))


def test_power_family_2d_matches_radial_average():
    w = make_weight(WeightFamily("power", 2, 2, 3, {"alpha": 0.5}))
    # oversampled reference for one off-corner cell
    q = 64
    xs = (3 * q + np.arange(q) + 0.5) / (8 * q)
    ys = (5 * q + np.arange(q) + 0.5) / (8 * q)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    ref = np.mean(np.sqrt(gx**2 + gy**2) ** 0.5)
    npt.assert_allclose(w.cells[3, 5, 0, 0], ref, rtol=1e-4)
    npt.assert_allclose(w.cells[3, 5], w.cells[3, 5, 0, 0] * np.eye(2), rtol=1e-13)


def test_rotating_family_structure():
    fam = WeightFamily("rotating", 1, 2, 4, {"alpha": 0.6, "omega": np.pi})
    w = make_weight(fam)
    x0 = 0.31
    k = 9
    x = (k + 0.5) / 16
    r = abs(x - x0)
    th = np.pi * x
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    ref = rot @ np.diag([r**0.6, 1.0]) @ rot.T
    npt.assert_allclose(w.cells[k], ref, atol=1e-13)
    vals = np.linalg.eigvalsh(w.cells)
    npt.assert_allclose(vals[:, 1], 1.0, atol=1e-12)  # larger eigenvalue is 1
    with pytest.raises(ParameterError):
        make_weight(WeightFamily("rotating", 1, 3, 2))


def test_logbrownian_family_spd_and_deterministic():
    fam = WeightFamily("logbrownian", 1, 3, 5, {"sigma": 0.4}, seed=21)
    w1 = make_weight(fam)
    w2 = make_weight(WeightFamily("logbrownian", 1, 3, 5, {"sigma": 0.4}, seed=21))
    npt.assert_array_equal(w1.cells, w2.cells)
    w3 = make_weight(WeightFamily("logbrownian", 1, 3, 5, {"sigma": 0.4}, seed=22))
    assert np.max(np.abs(w1.cells - w3.cells)) > 1e-3
    lo, hi = w1.eigenvalue_range()
    assert lo > EIGEN_FLOOR and np.isfinite(hi)


def test_constant_family():
    m = [[2.0, 0.5], [0.5, 1.0]]
    w = make_weight(WeightFamily("constant", 1, 2, 3, {"matrix": m}))
    npt.assert_allclose(w.cells[4], m)
    flags, _ = w.constancy_pyramid()[0]
    assert flags[()] or flags.all()
    with pytest.raises(ParameterError):
        make_weight(WeightFamily("nosuch", 1, 1, 2))
