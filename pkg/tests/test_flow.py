import csv

import numpy as np
import pytest

from conftest import rings
from filaments import _accel
from filaments.flow import (
    FlowState,
    advect,
    flow_bounds_check,
    jacobian_stats,
    linear_field,
    reversed_field,
    write_trace,
)
from filaments.geometry import NonFiniteError
from filaments.kernels import MollifiedBiotSavart, ZeroKernel
from filaments.solver import simulate_filaments
from test_currents import expm_series


@pytest.mark.trivial
def test_constant_field_exact():
    c = np.array([0.5, -0.25, 2.0])
    field = lambda t, x, jacobian=False: (
        (np.broadcast_to(c, x.shape), np.zeros(x.shape + (3,))) if jacobian else np.broadcast_to(c, x.shape))
    x0 = np.array([[1.0, 2.0, 3.0], [-0.5, 0.0, 0.25]])
    out = advect(FlowState.start(x0, True), field, 0.125, 8)
    assert np.array_equal(out.points, x0 + c)
    assert np.array_equal(out.jacobians, np.tile(np.eye(3), (2, 1, 1)))


def test_linear_field_matches_matrix_exponential():
    A = np.array([[0.1, -0.7, 0.2], [0.7, 0.0, 0.3], [-0.1, 0.2, -0.3]])
    x0 = np.random.default_rng(0).normal(size=(5, 3))
    out = advect(FlowState.start(x0, True), linear_field(A), 1e-3, 1000)
    E = expm_series(A)
    assert np.abs(out.points - x0 @ E.T).max() <= 1e-10
    assert np.abs(out.jacobians - E).max() <= 1e-10
    assert out.time == pytest.approx(1.0)


def wavy(t, x, jacobian=False):
    v = np.stack([np.sin(x[:, 1] + t), np.sin(x[:, 2]) * np.cos(x[:, 0]), np.cos(x[:, 0] - t)], 1)
    if not jacobian:
        return v
    g = np.zeros(x.shape + (3,))
    g[:, 0, 1] = np.cos(x[:, 1] + t)
    g[:, 1, 0] = -np.sin(x[:, 2]) * np.sin(x[:, 0])
    g[:, 1, 2] = np.cos(x[:, 2]) * np.cos(x[:, 0])
    g[:, 2, 0] = -np.sin(x[:, 0] - t)
    return v, g


def test_rk4_order():
    x0 = np.random.default_rng(1).normal(size=(10, 3))
    ref = advect(FlowState.start(x0), wavy, 1 / 1024, 1024).points
    errs = [np.abs(advect(FlowState.start(x0), wavy, 1 / n, n).points - ref).max() for n in (16, 32)]
    order = np.log2(errs[0] / errs[1])
    assert 3.8 <= order <= 4.2


def test_time_reversibility_fourth_order():
    x0 = np.random.default_rng(2).normal(size=(10, 3))
    errs = []
    for n in (16, 32):
        fwd = advect(FlowState.start(x0), wavy, 1 / n, n)
        back = advect(FlowState.start(fwd.points), reversed_field(wavy, 1.0), 1 / n, n)
        errs.append(np.abs(back.points - x0).max())
    assert errs[1] < errs[0] / 12


def test_linear_field_saturates_gronwall():
    A = np.array([[0.6, 0.2, 0.0], [0.2, 0.4, 0.0], [0.0, 0.0, 0.1]])
    norm = np.linalg.norm(A, 2)
    out = advect(FlowState.start(np.zeros((1, 3)), True), linear_field(A), 1e-3, 1000)
    observed = jacobian_stats(out.jacobians)[0]
    assert observed == pytest.approx(np.exp(norm), rel=1e-10)
    assert observed <= 1.01 * np.exp(1.0 * norm)


def test_nonfinite_abort_reports_location():
    def bad(t, x, jacobian=False):
        v = np.zeros_like(x)
        if t > 0.22:
            v[3] = np.inf
        return v

    with pytest.raises(NonFiniteError) as err:
        advect(FlowState.start(np.zeros((5, 2))), bad, 0.1, 10)
    assert err.value.location == {"step": 2, "point": 3}


def test_advect_rejects_bad_dt():
    with pytest.raises(ValueError):
        advect(FlowState.start(np.zeros((1, 2))), linear_field(np.eye(2)), 0.0, 3)


@pytest.mark.trivial
def test_flow_bounds_zero_kernel_equality():
    path = simulate_filaments(rings([(0, 0, 0)], [1.0], M=16), ZeroKernel(), 0.2, 0.05, track_jacobians=True)
    rep = flow_bounds_check(path, ZeroKernel())
    assert rep.ok and np.array_equal(rep.max_norm, np.ones(5)) and np.array_equal(rep.bound, np.ones(5))


def test_flow_bounds_ring_run(tmp_path):
    k = MollifiedBiotSavart(0.5)
    path = simulate_filaments(rings([(0, 0, 0), (0.2, 0.1, 0.5)], [1.0, 0.7], M=32), k, 0.5, 0.01,
                              track_jacobians=True)
    rep = flow_bounds_check(path, k)
    assert rep.ok and rep.det_within(1e-6)
    write_trace(tmp_path / "trace.csv", rep)
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert rows[0] == ["step", "time", "max_norm_Dphi", "bound_rhs", "det_min", "det_max"]
    assert len(rows) == len(path) + 1


def test_determinism_across_thread_counts():
    k = MollifiedBiotSavart(0.5)
    fam = rings([(0, 0, 0), (0.3, 0.2, 0.5), (-0.2, 0.1, -0.4)], [1.0, 0.8, 1.2], M=32)
    before = _accel.get_threads()
    try:
        runs = []
        for n in (1, 8, 1):
            _accel.set_threads(n)
            p = simulate_filaments(fam, k, 0.1, 0.01, track_jacobians=True)
            runs.append((p.positions.tobytes(), p.trace["max_norm_Dphi"].tobytes()))
    finally:
        _accel.set_threads(before)
    assert runs[0] == runs[1] == runs[2]
