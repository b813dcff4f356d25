"""RK4 transport of point clouds, optionally with the flow Jacobian.

A velocity field is any callable ``field(t, x, jacobian=False)`` taking
points of shape (P, d).  It returns the velocities (P, d) or, when
``jacobian`` is true, the pair ``(v, Dv)`` with ``Dv[p, i, k] = d_k v_i``.
The Jacobian ``J = Dphi`` is advanced with ``dJ/dt = Db(t, phi) J`` using
the same RK4 stages as the points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import NonFiniteError


@dataclass(frozen=True, eq=False)
class FlowState:
    """Points, optional Jacobians (P, d, d), and the current time."""

    points: np.ndarray
    jacobians: np.ndarray | None = None
    time: float = 0.0

    @classmethod
    def start(cls, points, track_jacobians=False, time=0.0):
        points = np.array(points, dtype=float)
        P, d = points.shape
        J = np.tile(np.eye(d), (P, 1, 1)) if track_jacobians else None
        return cls(points, J, float(time))


@dataclass(eq=False)
class Trajectory:
    """Node values produced by :func:`advect` with ``record=True``.

    ``velocities[n]`` is the field at ``points[n]`` and ``times[n]``.
    """

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    max_norm: np.ndarray | None = None
    det_min: np.ndarray | None = None
    det_max: np.ndarray | None = None


def _check(arr, step, what):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr.reshape(arr.shape[0], -1)))[0, 0]
        raise NonFiniteError(
            f"non-finite {what} at step {step}, point {bad}", step=int(step), point=int(bad)
        )


def jacobian_stats(J):
    """(max operator 2-norm, min det, max det) over a stack of matrices."""
    return (
        float(np.linalg.norm(J, ord=2, axis=(1, 2)).max()),
        float(np.linalg.det(J).min()),
        float(np.linalg.det(J).max()),
    )


def rk4_step(field, t, x, dt, J=None):
    """One classical RK4 step; returns ``(x_new, J_new, k1)``."""
    if J is None:
        k1 = field(t, x)
        k2 = field(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = field(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = field(t + dt, x + dt * k3)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), None, k1
    k1, g1 = field(t, x, jacobian=True)
    K1 = g1 @ J
    k2, g2 = field(t + 0.5 * dt, x + 0.5 * dt * k1, jacobian=True)
    K2 = g2 @ (J + 0.5 * dt * K1)
    k3, g3 = field(t + 0.5 * dt, x + 0.5 * dt * k2, jacobian=True)
    K3 = g3 @ (J + 0.5 * dt * K2)
    k4, g4 = field(t + dt, x + dt * k3, jacobian=True)
    K4 = g4 @ (J + dt * K3)
    x_new = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    J_new = J + dt / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return x_new, J_new, k1


def advect(state: FlowState, field, dt, steps, record=False):
    """Integrate ``x' = b(t, x)`` for ``steps`` RK4 steps of size ``dt``.

    Returns the final :class:`FlowState`, plus a :class:`Trajectory` of all
    nodes when ``record`` is true.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    steps = int(steps)
    x = np.array(state.points, dtype=float)
    J = None if state.jacobians is None else np.array(state.jacobians, dtype=float)
    t0 = state.time
    if record:
        pts = np.empty((steps + 1,) + x.shape)
        vel = np.empty_like(pts)
        pts[0] = x
        stats = np.empty((steps + 1, 3)) if J is not None else None
        if J is not None:
            stats[0] = jacobian_stats(J)
    for n in range(steps):
        t = t0 + n * dt
        x, J, k1 = rk4_step(field, t, x, dt, J)
        _check(x, n, "position")
        if J is not None:
            _check(J, n, "Jacobian")
        if record:
            vel[n] = k1
            pts[n + 1] = x
            if J is not None:
                stats[n + 1] = jacobian_stats(J)
    final = FlowState(x, J, t0 + steps * dt)
    if not record:
        return final
    vel[steps] = field(final.time, x)
    traj = Trajectory(t0 + dt * np.arange(steps + 1), pts, vel)
    if stats is not None:
        traj.max_norm, traj.det_min, traj.det_max = stats.T.copy()
    return final, traj


def reversed_field(field, t_end):
    """Field whose flow from 0 to ``t_end`` inverts the flow of ``field``."""

    def back(s, x, jacobian=False):
        out = field(t_end - s, x, jacobian=jacobian)
        if jacobian:
            return -out[0], -out[1]
        return -out

    return back


def linear_field(A, c=None):
    """The field ``b(x) = A x + c`` (time independent)."""
    A = np.asarray(A, dtype=float)
    c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)

    def field(t, x, jacobian=False):
        v = x @ A.T + c
        if jacobian:
            return v, np.broadcast_to(A, (x.shape[0],) + A.shape)
        return v

    return field


@dataclass
class FlowBoundsReport:
    """Per-step comparison of ``max|Dphi|`` against the Gronwall envelope."""

    times: np.ndarray
    max_norm: np.ndarray
    bound: np.ndarray
    det_min: np.ndarray
    det_max: np.ndarray
    passed: np.ndarray
    slack: float

    @property
    def ok(self):
        return bool(self.passed.all())

    @property
    def max_ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(np.isfinite(self.bound), self.max_norm / self.bound, 0.0)
        return float(np.nanmax(r))

    def det_within(self, tol):
        return bool(np.all(self.det_min >= 1 - tol) and np.all(self.det_max <= 1 + tol))


def flow_bounds_check(path, k, trace=None, slack=1.01):
    """Check ``|Dphi_t| <= exp(C_B t (m_t + 1))`` at every step.

    ``m_t`` is the running maximum of the computable mass-norm upper bound
    along ``path``.  ``trace`` defaults to ``path.trace``.
    """
    from .currents import mass_norm_upper

    trace = path.trace if trace is None else trace
    if trace is None:
        raise ValueError("path carries no Jacobian trace; run with track_jacobians=True")
    times = np.asarray(path.times)
    mass = np.maximum.accumulate([mass_norm_upper(path.state(n)) for n in range(len(times))])
    with np.errstate(over="ignore"):
        bound = np.exp(k.C_B * times * (mass + 1.0))
    max_norm = np.asarray(trace["max_norm_Dphi"])
    passed = max_norm <= slack * bound
    return FlowBoundsReport(
        times, max_norm, bound, np.asarray(trace["det_min"]), np.asarray(trace["det_max"]),
        passed, slack,
    )


def write_trace(path, report: FlowBoundsReport):
    """CSV columns: step, time, max_norm_Dphi, bound_rhs, det_min, det_max."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "max_norm_Dphi", "bound_rhs", "det_min", "det_max"])
        for n, row in enumerate(
            zip(report.times, report.max_norm, report.bound, report.det_min, report.det_max)
        ):
            w.writerow([n] + [f"{v:.17g}" for v in row])
