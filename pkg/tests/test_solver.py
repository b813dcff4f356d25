import numpy as np
import pytest

from conftest import circle_points, rings
from filaments.currents import FilamentCurrent, GridCurrent, TestFieldDictionary, convolve
from filaments.flow import FlowState, linear_field
from filaments.geometry import CurveFamily, NonFiniteError
from filaments.kernels import ConstantKernel, GaussianRotor, MollifiedBiotSavart, ZeroKernel
from filaments.solver import (
    CurrentPath,
    NonContractionError,
    PicardConfig,
    a_priori_window,
    conserved_quantity_check,
    evolve_grid_current,
    growth_check,
    picard_solve,
    residual_order,
    simulate_filaments,
    weak_residual,
)
from filaments.experiments import boundedness_check

BS = MollifiedBiotSavart(0.5)
D3 = TestFieldDictionary.random(3, seed=0)


def three(M=16):
    return rings([(0, 0, 0), (0.3, 0.2, 0.5), (-0.2, 0.1, -0.4)], [1.0, 0.8, 1.2], M=M)


@pytest.mark.trivial
def test_zero_kernel_is_static():
    fam = three()
    path = simulate_filaments(fam, ZeroKernel(), 0.3, 0.1)
    assert all(np.array_equal(p, fam.points) for p in path.positions)


@pytest.mark.trivial
def test_duplicate_filaments_bit_exact():
    p = circle_points(32, 1.0, (0.1, 0.0, 0.2))
    q = circle_points(32, 0.7, (0.5, 0.3, 0.0))
    single = simulate_filaments(CurveFamily(np.stack([p, q]), [1.0, 0.5], True), BS, 0.2, 0.02)
    double = simulate_filaments(CurveFamily(np.stack([p, p, q]), [0.5, 0.5, 0.5], True), BS, 0.2, 0.02)
    assert np.array_equal(double.positions[:, 0], single.positions[:, 0])
    assert np.array_equal(double.positions[:, 1], single.positions[:, 0])
    assert np.array_equal(double.positions[:, 2], single.positions[:, 1])


def test_single_ring_translates_rigidly():
    fam = CurveFamily(circle_points(64)[None], [1.0], True)
    path = simulate_filaments(fam, BS, 1.0, 0.01)
    pts = path.positions[:, 0]
    center = pts.mean(axis=1)
    radial = np.linalg.norm((pts - center[:, None])[..., :2], axis=-1)
    assert np.abs(radial - 1.0).max() <= 1e-6
    assert np.abs(pts[..., 2] - center[:, None, 2]).max() <= 1e-6
    speed = convolve(BS, FilamentCurrent(fam), fam.points[0, 0], deriv=0)[0][2]
    assert np.allclose(center[:, 2], speed * path.times, rtol=0, atol=1e-9)
    assert np.abs(center[:, :2]).max() < 1e-12


def test_dimension_mismatch_rejected():
    fam = CurveFamily(circle_points(16, dim=2)[None], [1.0], True)
    with pytest.raises(ValueError):
        simulate_filaments(fam, BS, 0.1, 0.05)
    with pytest.raises(ValueError):
        simulate_filaments(three(), BS, 0.1, 0.03)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_simulation_location():
    huge = ConstantKernel(np.full((3, 3), 1e308))
    with pytest.raises(NonFiniteError) as err:
        seg = np.linspace([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 9)
        simulate_filaments(CurveFamily(seg[None], [1.0], False), huge, 0.2, 0.1)
    assert set(err.value.location) == {"t", "filament", "sample"}


def test_exchangeability_bit_identical():
    rng = np.random.default_rng(5)
    pts = np.stack([circle_points(16, rng.uniform(0.6, 1.2), rng.uniform(-1, 1, 3)) for _ in range(4)])
    w = np.full(4, 0.25)
    perm = np.array([2, 0, 3, 1])
    a = simulate_filaments(CurveFamily(pts, w, True), BS, 0.2, 0.05)
    b = simulate_filaments(CurveFamily(pts[perm], w, True), BS, 0.2, 0.05)
    assert np.array_equal(a.positions[:, perm], b.positions)
    assert np.array_equal(a.pair_values(D3), b.pair_values(D3))


@pytest.mark.trivial
def test_picard_zero_kernel_one_iteration():
    fam = three()
    res = picard_solve(FilamentCurrent(fam), ZeroKernel(), PicardConfig(0.2, 0.05, window=0.2))
    assert res.iterations == [1]
    assert all(np.array_equal(p, fam.points) for p in res.path.positions)


def test_picard_matches_direct_simulation():
    fam = three()
    direct = simulate_filaments(fam, BS, 0.1, 0.01)
    for window in (None, 0.05):
        res = picard_solve(FilamentCurrent(fam), BS, PicardConfig(0.1, 0.01, window=window, tol=1e-12))
        assert np.abs(res.path.positions - direct.positions).max() <= 1e-9


def test_picard_contraction_rate_halves_with_window():
    fam = three()
    factors = []
    for window in (0.1, 0.05):
        res = picard_solve(FilamentCurrent(fam), BS, PicardConfig(window, 0.005, window=window, tol=1e-13))
        incs = res.increments[0]
        assert all(b < a for a, b in zip(incs[:-1], incs[1:]))
        factors.append(res.contraction_factors[0][0])
    assert 0.3 <= factors[1] / factors[0] <= 0.7


def test_picard_non_contraction_aborts():
    with pytest.raises(NonContractionError):
        picard_solve(FilamentCurrent(three()), BS, PicardConfig(0.1, 0.05, window=0.1, max_iter=1, tol=1e-12))


def test_picard_halving_recovers():
    res = picard_solve(FilamentCurrent(three()), BS, PicardConfig(0.2, 0.01, window=0.2, max_iter=6, tol=1e-11))
    assert res.halvings >= 1 and sum(b - a for a, b in res.windows) == pytest.approx(0.2)


def test_picard_config_validation():
    with pytest.raises(ValueError):
        PicardConfig(1.0, 0.0)
    with pytest.raises(ValueError):
        PicardConfig(1.0, 0.1, window=0.05)
    with pytest.raises(ValueError):
        PicardConfig(1.0, 0.1, window=0.25)
    with pytest.raises(ValueError):
        PicardConfig(1.0, 0.1, tol=0.0)


def test_a_priori_window_is_conservative():
    xi = FilamentCurrent(three())
    assert 0 < a_priori_window(xi, BS) < 1e-3
    assert a_priori_window(xi, ZeroKernel()) == np.inf


@pytest.mark.trivial
def test_weak_residual_zero_kernel():
    path = simulate_filaments(three(), ZeroKernel(), 0.3, 0.05)
    rep = weak_residual(path, ZeroKernel(), D3)
    assert rep.max_abs < 1e-14


def test_weak_residual_second_order_and_negative_control():
    fam = rings([(0, 0, 0), (0.2, 0.1, 0.4)], [1.0, 0.8], M=32)
    coarse = weak_residual(simulate_filaments(fam, BS, 0.4, 0.02), BS, D3)
    fine = weak_residual(simulate_filaments(fam, BS, 0.4, 0.01), BS, D3)
    assert coarse.max_abs / fine.max_abs >= 3.5
    assert residual_order(coarse, fine) == pytest.approx(2.0, abs=0.3)
    frozen = CurrentPath(np.linspace(0, 0.4, 21), np.broadcast_to(fam.points, (21,) + fam.points.shape).copy(),
                         fam.weights, fam.closed)
    assert weak_residual(frozen, BS, D3).max_abs >= 10 * coarse.max_abs


def test_weak_residual_gaussian_2d():
    k = GaussianRotor(1.0, dim=2)
    D2 = TestFieldDictionary.random(2, seed=1)
    fam = CurveFamily(np.stack([circle_points(32, 1.0, dim=2), circle_points(32, 0.5, (0.5, 0.2), dim=2)]),
                      [1.0, 0.5], True)
    r1 = weak_residual(simulate_filaments(fam, k, 0.5, 0.05), k, D2)
    r2 = weak_residual(simulate_filaments(fam, k, 0.5, 0.025), k, D2)
    assert r1.max_abs / r2.max_abs >= 3.5


def test_growth_and_boundedness():
    path = simulate_filaments(three(), BS, 0.3, 0.05)
    assert growth_check(path, BS).ok
    assert boundedness_check(path, BS, D3)


def rotation(omega=1.0):
    return linear_field(np.array([[0.0, -omega], [omega, 0.0]]))


def bump(x):
    r2 = ((x - [1.0, 0.0]) ** 2).sum(-1)
    e = np.exp(-r2 / 0.5)
    return np.stack([e, 0.5 * e], 1)


@pytest.mark.trivial
def test_conserved_quantity_trivial_cases():
    g = GridCurrent.from_function(bump, [-3, -3], [3, 3], (33, 33))
    probes = np.array([[1.0, 0.0], [0.5, 0.5], [1.2, -0.3]])
    zero = lambda t, x, jacobian=False: (np.zeros_like(x), np.zeros(x.shape + (2,))) if jacobian else np.zeros_like(x)
    grids, states = evolve_grid_current(g, zero, [0.0, 0.5, 1.0], 0.1, probes=probes)
    rep = conserved_quantity_check(g, states, grids)
    assert np.array_equal(rep.deviation, np.zeros(3))


def test_conserved_quantity_rotation_refines():
    probes = np.array([[1.0, 0.0], [0.7, 0.4], [1.3, -0.2], [0.9, 0.3]])
    devs = []
    for n in (33, 65):
        g = GridCurrent.from_function(bump, [-3, -3], [3, 3], (n, n))
        grids, states = evolve_grid_current(g, rotation(), [0.0, 0.5], 0.05, probes=probes)
        rep = conserved_quantity_check(g, states, grids)
        assert rep.deviation[0] == 0.0
        devs.append(rep.max_deviation)
    assert devs[1] < devs[0]
