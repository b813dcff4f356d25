"""Filament dynamics: direct integration and Picard iteration on currents.

``simulate_filaments`` integrates the coupled curve equations
``d/dt gamma_i(s) = (K * xi_t)(gamma_i(s))`` directly.  ``picard_solve``
solves the flow equation ``xi_t = phi^{t, K * xi}_# xi_0`` by iterating
push-forwards under frozen fields, window by window.  ``weak_residual``
checks any path against the weak form of the current-valued PDE.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .currents import (
    CurrentPath,
    Diffeomorphism,
    FilamentCurrent,
    GridCurrent,
    TestFieldDictionary,
    mass_norm_upper,
    pushforward_grid,
)
from .flow import FlowState, advect, reversed_field
from .geometry import CurveFamily, NonFiniteError
from .kernels import Kernel

log = logging.getLogger(__name__)


class NonContractionError(RuntimeError):
    """Picard iteration failed to contract even on a one-step window."""


def _num_steps(T, dt):
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a positive integer multiple of dt={dt}")
    return steps


def _source_field(k: Kernel, weights, closed, order):
    """Field of the current carried by source samples ``src`` (N, M, d)."""

    def evaluate(src, x, deriv):
        cur = FilamentCurrent(CurveFamily(src, weights, closed))
        v, g, _ = k.sums(x, src, cur.weighted_tangents, weights, order, deriv)
        return v, g

    return evaluate


def simulate_filaments(family: CurveFamily, k: Kernel, T, dt, track_jacobians=False, tracers=None):
    """Integrate the N-filament system with RK4.

    Every sample of every curve moves with the velocity induced by the
    whole family.  ``tracers`` (P, d) are passive points moved by the same
    field at every RK stage.

    Returns
    -------
    CurrentPath
        With node velocities, tracer positions if requested, and a Jacobian
        trace (over all advected points) when ``track_jacobians``.
    """
    if k.dim != family.dim:
        raise ValueError(f"kernel dimension {k.dim} does not match curve dimension {family.dim}")
    steps = _num_steps(T, dt)
    N, M, d = family.points.shape
    NM = N * M
    evaluate = _source_field(k, family.weights, family.closed, family.canonical_order)

    def fld(t, x, jacobian=False):
        v, g = evaluate(x[:NM].reshape(N, M, d), x, 1 if jacobian else 0)
        return (v, g) if jacobian else v

    x0 = family.points.reshape(NM, d)
    if tracers is not None:
        x0 = np.concatenate([x0, np.asarray(tracers, dtype=float).reshape(-1, d)])
    try:
        _, traj = advect(FlowState.start(x0, track_jacobians), fld, dt, steps, record=True)
    except NonFiniteError as err:
        p = err.location["point"]
        where = dict(t=err.location["step"] * dt, filament=p // M if p < NM else None, sample=p % M)
        raise NonFiniteError(f"non-finite state at {where}", **where) from err
    path = CurrentPath(
        traj.times,
        traj.points[:, :NM].reshape(-1, N, M, d),
        family.weights,
        family.closed,
        velocities=traj.velocities[:, :NM].reshape(-1, N, M, d),
    )
    if tracers is not None:
        path.tracers = traj.points[:, NM:]
    if track_jacobians:
        path.trace = {"max_norm_Dphi": traj.max_norm, "det_min": traj.det_min, "det_max": traj.det_max}
    return path


def default_dictionary(dim, seed=0):
    return TestFieldDictionary.random(dim, L=64, features=8, freq_scale=2.0, diameter=4.0, seed=seed)


@dataclass
class PicardConfig:
    """Iteration control for :func:`picard_solve`.

    ``window`` is the contraction sub-horizon; None picks the a-priori
    window ``log 2 / (C_B (R + 1))`` with ``R = 2 * mass(xi_0)``, clamped to
    ``[dt, T]``.  ``tol`` bounds the dictionary-metric increment.
    """

    T: float
    dt: float
    window: float | None = None
    max_iter: int = 50
    tol: float = 1e-10
    dictionary: TestFieldDictionary | None = None
    track_jacobians: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and self.T >= self.dt):
            raise ValueError("need 0 < dt <= T")
        _num_steps(self.T, self.dt)
        if self.window is not None:
            if not self.dt <= self.window <= self.T * (1 + 1e-12):
                raise ValueError("need dt <= window <= T")
            _num_steps(self.window, self.dt)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class PicardResult:
    path: CurrentPath
    windows: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    halvings: int = 0

    @property
    def contraction_factors(self):
        """Ratios of successive increments, one list per window."""
        return [list(np.asarray(inc[1:]) / np.asarray(inc[:-1])) if len(inc) > 1 else []
                for inc in self.increments]


def a_priori_window(xi0: FilamentCurrent, k: Kernel):
    """Largest T with ``exp(C_B (R + 1) T) <= 2`` for ``R = 2 |xi_0|``."""
    if k.C_B == 0:
        return math.inf
    R = 2.0 * mass_norm_upper(xi0)
    return math.log(2.0) / (k.C_B * (R + 1.0))


def _hermite(p0, v0, p1, v1, f, dt):
    f2, f3 = f * f, f * f * f
    return ((2 * f3 - 3 * f2 + 1) * p0 + (f3 - 2 * f2 + f) * dt * v0
            + (-2 * f3 + 3 * f2) * p1 + (f3 - f2) * dt * v1)


def _frozen_field(evaluate, positions, velocities, t0, dt, shape):
    """Field ``B(xi_t)`` of a stored path segment.

    Between nodes the source samples follow the cubic Hermite interpolant
    of positions and node velocities.
    """
    n_last = positions.shape[0] - 1

    def fld(t, x, jacobian=False):
        s = (t - t0) / dt
        i = int(math.floor(s + 1e-9))
        frac = s - i
        if abs(frac) < 1e-9 or i >= n_last:
            src = positions[min(i, n_last)]
        else:
            src = _hermite(positions[i], velocities[i], positions[i + 1], velocities[i + 1], frac, dt)
        v, g = evaluate(src.reshape(shape), x, 1 if jacobian else 0)
        return (v, g) if jacobian else v

    return fld


def picard_solve(xi0: FilamentCurrent, k: Kernel, cfg: PicardConfig) -> PicardResult:
    """Fixed point of ``xi_t = phi^{t, K * xi}_# xi_start`` on chained windows.

    On each window the iteration starts from the constant path and pushes
    the window's initial current forward under the field of the previous
    iterate, until ``sup_t d_D`` between iterates drops below ``cfg.tol``.
    A window that does not contract is halved; failure on a single step
    raises :class:`NonContractionError`.
    """
    fam = xi0.family
    if k.dim != fam.dim:
        raise ValueError(f"kernel dimension {k.dim} does not match current dimension {fam.dim}")
    D = cfg.dictionary or default_dictionary(fam.dim)
    dt = cfg.dt
    total = _num_steps(cfg.T, dt)
    window = cfg.window if cfg.window is not None else a_priori_window(xi0, k)
    span = int(min(total, max(1, math.floor(window / dt + 1e-9))))
    N, M, d = fam.points.shape
    evaluate = _source_field(k, fam.weights, fam.closed, fam.canonical_order)

    positions = np.empty((total + 1, N, M, d))
    velocities = np.empty_like(positions)
    positions[0] = fam.points
    stats = np.empty((total + 1, 3))
    stats[0] = (1.0, 1.0, 1.0)
    J = np.tile(np.eye(d), (N * M, 1, 1)) if cfg.track_jacobians else None
    result = PicardResult(path=None)

    def node_pairs(pos):
        return np.stack([D.pair_values(FilamentCurrent(CurveFamily(p, fam.weights, fam.closed)))
                         for p in pos])

    n0 = 0
    while n0 < total:
        n = min(span, total - n0)
        t0 = n0 * dt
        start = positions[n0]
        cur_pos = np.broadcast_to(start, (n + 1,) + start.shape).copy()
        cur_vel = np.zeros_like(cur_pos)
        cur_pairs = np.tile(D.pair_values(
            FilamentCurrent(CurveFamily(start, fam.weights, fam.closed))), (n + 1, 1))
        incs = []
        converged = False
        for it in range(cfg.max_iter):
            fld = _frozen_field(evaluate, cur_pos, cur_vel, t0, dt, (N, M, d))
            state = FlowState(start.reshape(-1, d), None if J is None else J.copy(), t0)
            final, traj = advect(state, fld, dt, n, record=True)
            new_pos = traj.points.reshape(n + 1, N, M, d)
            new_pairs = node_pairs(new_pos)
            inc = float(np.abs(new_pairs - cur_pairs).max())
            incs.append(inc)
            cur_pos, cur_pairs = new_pos, new_pairs
            cur_vel = traj.velocities.reshape(n + 1, N, M, d)
            if inc < cfg.tol:
                converged = True
                break
            if it >= 2 and inc >= incs[-2]:
                break
        if not converged:
            if n == 1:
                raise NonContractionError(
                    f"no contraction on the one-step window at t={t0:.6g} "
                    f"(increments {incs[-3:]})"
                )
            span = max(1, n // 2)
            result.halvings += 1
            log.info("window at t=%g did not contract; halving to %d steps", t0, span)
            continue
        positions[n0 : n0 + n + 1] = cur_pos
        velocities[n0 : n0 + n + 1] = cur_vel
        if J is not None:
            J = final.jacobians
            stats[n0 + 1 : n0 + n + 1] = np.stack([traj.max_norm, traj.det_min, traj.det_max], 1)[1:]
        result.windows.append((t0, t0 + n * dt))
        result.iterations.append(len(incs))
        result.increments.append(incs)
        n0 += n

    path = CurrentPath(dt * np.arange(total + 1), positions, fam.weights, fam.closed,
                       velocities=velocities)
    if J is not None:
        path.trace = {"max_norm_Dphi": stats[:, 0], "det_min": stats[:, 1], "det_max": stats[:, 2]}
    result.path = path
    return result


@dataclass
class ResidualReport:
    """Weak-form residuals ``R(theta_k, t)``, shape (S+1, L)."""

    times: np.ndarray
    values: np.ndarray
    order: float | None = None

    @property
    def max_abs(self):
        return float(np.abs(self.values).max())


def weak_residual(path: CurrentPath, k: Kernel, D: TestFieldDictionary) -> ResidualReport:
    """Residual of the weak current equation along ``path``.

    ``R(theta, t) = xi_t(theta) - xi_0(theta) - int_0^t xi_s(D theta . B_s)
    + xi_s(DB_s^T theta) ds`` with ``B_s = K * xi_s``; the time integral is
    the trapezoid rule on the path grid.
    """
    from .currents import convolve

    pairs = np.empty((len(path), D.L))
    drift = np.empty_like(pairs)
    for n in range(len(path)):
        cur = path.state(n)
        shp = cur.points.shape
        v, g, _ = convolve(k, cur, cur.points.reshape(-1, shp[-1]), deriv=1)
        pairs[n] = D.pair_values(cur)
        drift[n] = D.drift_values(cur, v.reshape(shp), g.reshape(shp + (shp[-1],)))
    if len(path) > 1:
        integral = cumulative_trapezoid(drift, dx=path.dt, axis=0, initial=0.0)
    else:
        integral = np.zeros_like(drift)
    return ResidualReport(path.times.copy(), pairs - pairs[0] - integral)


def residual_order(coarse: ResidualReport, fine: ResidualReport, factor=2.0):
    """Observed convergence order between two refinement levels."""
    return math.log(coarse.max_abs / fine.max_abs) / math.log(factor)


@dataclass
class GrowthReport:
    times: np.ndarray
    mass: np.ndarray
    envelope: np.ndarray

    @property
    def ok(self):
        return bool(np.all(np.isfinite(self.mass)) and np.all(self.mass <= self.envelope))


def growth_check(path: CurrentPath, k: Kernel, slack=1.01):
    """``mass(xi_t) <= mass(xi_0) exp(C_B t (sup_s mass(xi_s) + 1))`` with slack."""
    mass = np.array([mass_norm_upper(path.state(n)) for n in range(len(path))])
    running = np.maximum.accumulate(mass)
    with np.errstate(over="ignore"):
        env = slack * mass[0] * np.exp(k.C_B * path.times * (running + 1.0))
    return GrowthReport(path.times, mass, env)


def flow_map(field, t, dt):
    """Time-``t`` flow of ``field`` as a :class:`Diffeomorphism` (RK4)."""
    steps = _num_steps(t, dt)

    def forward(x):
        return advect(FlowState.start(x), field, dt, steps).points

    def jacobian(x):
        return advect(FlowState.start(x, True), field, dt, steps).jacobians

    back = reversed_field(field, t)

    def inverse(y):
        return advect(FlowState.start(y), back, dt, steps).points

    def inverse_jacobian(y):
        return advect(FlowState.start(y, True), back, dt, steps).jacobians

    class _FlowMap(Diffeomorphism):
        def inverse_and_jacobian(self, y):
            s = advect(FlowState.start(y, True), back, dt, steps)
            return s.points, s.jacobians

    return _FlowMap(forward, jacobian, inverse, inverse_jacobian)


@dataclass
class ConservationReport:
    times: np.ndarray
    deviation: np.ndarray
    min_abs_det: float

    @property
    def max_deviation(self):
        return float(self.deviation.max())


def conserved_quantity_check(grid0: GridCurrent, states, grids):
    """Deviation of ``Dphi_t(x)^-1 xi_t(phi_t(x))`` from its t = 0 value.

    ``states[i]`` holds probe positions ``phi_t(x)`` with Jacobians at the
    time of ``grids[i]``; ``states[0]`` must be the identity state.
    """
    x0 = states[0].points
    ref = grid0.interpolate(x0)
    dev, dets = [], []
    for st, g in zip(states, grids):
        if st.jacobians is None:
            raise ValueError("probe states need Jacobians")
        det = np.linalg.det(st.jacobians)
        dets.append(np.abs(det).min())
        if np.any(np.abs(det) < 1e-12):
            raise np.linalg.LinAlgError(f"singular flow Jacobian at t={st.time}")
        q = np.linalg.solve(st.jacobians, g.interpolate(st.points)[..., None])[..., 0]
        dev.append(float(np.abs(q - ref).max()))
    return ConservationReport(np.array([s.time for s in states]), np.array(dev), float(min(dets)))


def evolve_grid_current(grid0: GridCurrent, field, times, dt, probes=None):
    """Push ``grid0`` forward by the flow of ``field`` to each of ``times``.

    Returns the grid currents and, if ``probes`` are given, the probe
    flow states (with Jacobians) at the same times.
    """
    grids, states = [], []
    for t in times:
        if t == 0:
            grids.append(grid0)
            if probes is not None:
                states.append(FlowState.start(probes, True))
            continue
        phi = flow_map(field, t, dt)
        pushed, outside = pushforward_grid(grid0, phi)
        if outside > 0:
            log.warning("%.3g of nodes have preimages outside the box at t=%g", outside, t)
        grids.append(pushed)
        if probes is not None:
            states.append(advect(FlowState.start(probes, True), field, dt, _num_steps(t, dt)))
    return (grids, states) if probes is not None else grids
