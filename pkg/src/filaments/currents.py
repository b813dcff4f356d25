"""1-currents carried by filaments or by grid vector fields.

A filament current ``xi = sum_j alpha_j int delta_{gamma_j(s)} gamma_j'(s) ds``
acts on a vector field ``theta`` by ``xi(theta) = sum_j alpha_j
int <theta(gamma_j), gamma_j'> ds``.  Distances between currents are
measured against a seeded dictionary of random Fourier test fields whose
sup-norm plus Lipschitz constant is at most one, so the dictionary metric
is a lower bound for the bounded-Lipschitz dual norm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _accel
from .geometry import CurveFamily, arclength
from .kernels import Kernel


@dataclass(frozen=True, eq=False)
class FilamentCurrent:
    """The current of a weighted curve family."""

    family: CurveFamily

    @classmethod
    def from_points(cls, points, weights=1.0, closed=True):
        points = np.asarray(points, dtype=float)
        return cls(CurveFamily(points, weights, closed))

    @property
    def dim(self):
        return self.family.dim

    @property
    def points(self):
        return self.family.points

    @property
    def weights(self):
        return self.family.weights

    @cached_property
    def weighted_tangents(self):
        """Quadrature-weighted tangents ``q_s gamma'(s)``, shape (N, M, d)."""
        fam = self.family
        out = fam.tangents * fam.quadrature[..., None]
        out.setflags(write=False)
        return out

    def source_vectors(self):
        """Per-sample vectors with the filament weight folded in, (N*M, d)."""
        return (self.weighted_tangents * self.weights[:, None, None]).reshape(-1, self.dim)

    def pair(self, theta: Callable) -> float:
        fam = self.family
        vals = np.asarray(theta(fam.points.reshape(-1, fam.dim)), dtype=float)
        per_curve = np.einsum("jsd,jsd->j", vals.reshape(fam.points.shape), self.weighted_tangents)
        return float(np.sum(self.weights[fam.canonical_order] * per_curve[fam.canonical_order]))

    def translated(self, v):
        return FilamentCurrent(self.family.with_points(self.points + np.asarray(v, dtype=float)))

    def with_weights(self, weights):
        return FilamentCurrent(CurveFamily(self.points, weights, self.family.closed))


def pair(xi, theta: Callable) -> float:
    """``xi(theta)`` for a filament or grid current."""
    return xi.pair(theta)


def convolve(k: Kernel, xi: FilamentCurrent, x, deriv=2):
    """``(K * xi)(x)`` with its gradient and Hessian.

    ``(K * xi)_i(x) = xi(K_i.(x - .))``.  ``x`` may be one point (d,) or a
    batch (P, d).  Returns ``(v, Dv, D2v)`` with ``Dv[..., i, k] = d_k v_i``;
    derivatives beyond ``deriv`` are None.
    """
    if k.dim != xi.dim:
        raise ValueError(f"kernel dimension {k.dim} does not match current dimension {xi.dim}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    targets = x.reshape(-1, xi.dim)
    v, g, h = k.sums(
        targets, xi.points, xi.weighted_tangents, xi.weights, xi.family.canonical_order, deriv
    )
    if single:
        v = v[0]
        g = None if g is None else g[0]
        h = None if h is None else h[0]
    return v, g, h


def mass_norm_upper(xi: FilamentCurrent) -> float:
    """``sum_j |alpha_j| * length(gamma_j)``, an upper bound for the mass norm."""
    if xi is None:
        return 0.0
    return float(sum(abs(a) * arclength(c) for a, c in zip(xi.weights, xi.family.curves)))


@dataclass(frozen=True, eq=False)
class GridCurrent:
    """Vector-field current ``xi(theta) = int <theta, xi> dx`` on a box.

    Attributes
    ----------
    lo, hi : (d,) box corners
    values : ndarray, shape (n_1, ..., n_d, d)
        Field values at the nodes ``linspace(lo_i, hi_i, n_i)``.
    """

    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        values = np.asarray(self.values, dtype=float)
        d = lo.shape[0]
        if hi.shape != (d,) or values.ndim != d + 1 or values.shape[-1] != d:
            raise ValueError("inconsistent box and value shapes")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, f, lo, hi, shape):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, shape)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(f(X.reshape(-1, len(shape))), dtype=float).reshape(X.shape)
        return cls(lo, hi, vals)

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def shape(self):
        return self.values.shape[:-1]

    @property
    def axes(self):
        return [np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, self.shape)]

    @property
    def nodes(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def spacing(self):
        return (self.hi - self.lo) / (np.asarray(self.shape) - 1)

    def quadrature(self):
        """Tensor-product trapezoid weights, shape ``self.shape``."""
        w = np.ones(())
        for n, h in zip(self.shape, self.spacing):
            wi = np.full(n, h)
            wi[0] = wi[-1] = 0.5 * h
            w = np.multiply.outer(w, wi)
        return w

    def pair(self, theta) -> float:
        X = self.nodes.reshape(-1, self.dim)
        vals = np.asarray(theta(X), dtype=float).reshape(self.values.shape)
        return float(np.sum(self.quadrature()[..., None] * vals * self.values))

    def interpolate(self, x):
        """Multilinear interpolation; zero outside the box."""
        interp = RegularGridInterpolator(
            self.axes, self.values, method="linear", bounds_error=False, fill_value=0.0
        )
        x = np.asarray(x, dtype=float)
        return interp(x.reshape(-1, self.dim)).reshape(x.shape)

    def contains(self, x, atol=1e-12):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - atol) & (x <= self.hi + atol), axis=-1)


@dataclass(frozen=True, eq=False)
class TestFieldDictionary:
    """Random Fourier test fields with ``sup|theta| + Lip(theta) <= 1``.

    ``theta_k(x) = sum_m a_km cos<w_km, x> + b_km sin<w_km, x>``, scaled so
    that ``sum_m (|a_km| + |b_km|)(1 + |w_km|) = 1`` exactly (up to one
    rounding).  Shapes: ``omegas, a, b`` are (L, F, d).
    """

    __test__ = False  # not a pytest class

    omegas: np.ndarray
    a: np.ndarray
    b: np.ndarray
    spec: dict = field(default_factory=dict)

    @classmethod
    def random(cls, dim, L=64, features=8, freq_scale=2.0, diameter=4.0, seed=0):
        """Seeded dictionary; frequencies ``w ~ N(0, (2 pi freq_scale / diameter)^2 I)``."""
        rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
        sd = 2.0 * np.pi * freq_scale / diameter
        omegas = rng.normal(scale=sd, size=(L, features, dim))
        a = rng.normal(size=(L, features, dim))
        b = rng.normal(size=(L, features, dim))
        size = (np.linalg.norm(a, axis=-1) + np.linalg.norm(b, axis=-1)) * (
            1.0 + np.linalg.norm(omegas, axis=-1)
        )
        scale = 1.0 / (size.sum(axis=1) * (1.0 + 1e-12))
        spec = dict(dim=dim, L=L, features=features, freq_scale=freq_scale,
                    diameter=diameter, seed=int(seed))
        return cls(omegas, a * scale[:, None, None], b * scale[:, None, None], spec)

    @property
    def L(self):
        return self.omegas.shape[0]

    @property
    def dim(self):
        return self.omegas.shape[2]

    def certified_bounds(self):
        """``sum_m (|a| + |b|)(1 + |w|)`` for every field; all are <= 1."""
        size = (np.linalg.norm(self.a, axis=-1) + np.linalg.norm(self.b, axis=-1)) * (
            1.0 + np.linalg.norm(self.omegas, axis=-1)
        )
        return size.sum(axis=1)

    def values(self, x):
        """All fields at points ``x`` (P, d); shape (L, P, d)."""
        x = np.asarray(x, dtype=float)
        ph = np.einsum("lfd,pd->lpf", self.omegas, x)
        return np.einsum("lpf,lfd->lpd", np.cos(ph), self.a) + np.einsum(
            "lpf,lfd->lpd", np.sin(ph), self.b
        )

    def jacobians(self, x):
        """``D theta_k(x)[i, j] = d_j theta_k,i``; shape (L, P, d, d)."""
        x = np.asarray(x, dtype=float)
        ph = np.einsum("lfd,pd->lpf", self.omegas, x)
        coef = -np.einsum("lpf,lfi->lpfi", np.sin(ph), self.a) + np.einsum(
            "lpf,lfi->lpfi", np.cos(ph), self.b
        )
        return np.einsum("lpfi,lfj->lpij", coef, self.omegas)

    def field(self, k):
        """Field ``k`` as a callable on (P, d) arrays."""
        return lambda x: self.values(np.atleast_2d(x))[k]

    def gradient(self, k):
        return lambda x: self.jacobians(np.atleast_2d(x))[k]

    def _flat(self):
        d = self.dim
        return (
            np.ascontiguousarray(self.omegas.reshape(-1, d)),
            self.a.reshape(self.L, -1, d),
            self.b.reshape(self.L, -1, d),
        )

    def curve_values(self, xi: FilamentCurrent):
        """Unweighted per-filament pairings ``gamma_j(theta_k)``, shape (N, L)."""
        om, a, b = self._flat()
        N = xi.family.N
        C, S = _accel.curve_feature_sums(
            np.ascontiguousarray(xi.points), np.ascontiguousarray(xi.weighted_tangents), om
        )
        C = C.reshape(N, self.L, -1, self.dim)
        S = S.reshape(N, self.L, -1, self.dim)
        return np.einsum("jlfd,lfd->jl", C, a) + np.einsum("jlfd,lfd->jl", S, b)

    def pair_values(self, xi):
        """``xi(theta_k)`` for every field, shape (L,)."""
        if xi is None:
            return np.zeros(self.L)
        if isinstance(xi, GridCurrent):
            return np.array([xi.pair(self.field(k)) for k in range(self.L)])
        per = self.curve_values(xi)
        order = xi.family.canonical_order
        return np.sum(xi.weights[order, None] * per[order], axis=0)

    def drift_values(self, xi: FilamentCurrent, B, DB):
        """``xi(D theta_k . B) + xi(DB^T theta_k)`` for every field.

        ``B`` (N, M, d) and ``DB`` (N, M, d, d) are the drift and its
        gradient at the filament samples.
        """
        om, a, b = self._flat()
        W = xi.weighted_tangents * xi.weights[:, None, None]
        U = np.einsum("jsik,jsk->jsi", DB, W)
        d = self.dim
        CU, SU, CW, SW = _accel.drift_feature_sums(
            np.ascontiguousarray(xi.points.reshape(-1, d)),
            np.ascontiguousarray(U.reshape(-1, d)),
            np.ascontiguousarray(np.asarray(B, dtype=float).reshape(-1, d)),
            np.ascontiguousarray(W.reshape(-1, d)),
            om,
        )
        shp = (self.L, -1, d)
        CU, SU, CW, SW = (arr.reshape(shp) for arr in (CU, SU, CW, SW))
        return (
            np.einsum("lfd,lfd->l", CU, a)
            + np.einsum("lfd,lfd->l", SU, b)
            - np.einsum("lfd,lfd->l", SW, a)
            + np.einsum("lfd,lfd->l", CW, b)
        )


def dict_metric(xi, xi2, D: TestFieldDictionary, per_field=False):
    """``max_k |(xi - xi2)(theta_k)|``; a lower bound for the weak distance.

    Either current may be None (the zero current).  With ``per_field``
    the vector of absolute differences is returned as well.
    """
    diff = np.abs(D.pair_values(xi) - D.pair_values(xi2))
    value = float(diff.max())
    return (value, diff) if per_field else value


def write_field_values(path, values):
    """Write per-field diagnostics as CSV (field_index, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field_index", "value"])
        for k, v in enumerate(values):
            w.writerow([k, f"{v:.17g}"])


def pushforward_filament(xi: FilamentCurrent, phi: Callable) -> FilamentCurrent:
    """Advect every sample by ``phi``; tangents are re-derived from samples."""
    fam = xi.family
    moved = np.asarray(phi(fam.points.reshape(-1, fam.dim)), dtype=float).reshape(fam.points.shape)
    return FilamentCurrent(fam.with_points(moved))


def pushforward_field(theta: Callable, phi: Callable, Dphi: Callable) -> Callable:
    """``(phi# theta)(x) = Dphi(x)^T theta(phi(x))``."""

    def pushed(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.einsum("pji,pj->pi", Dphi(x), theta(phi(x)))

    return pushed


def pushforward_dual_check(xi: FilamentCurrent, phi, Dphi, theta) -> float:
    """``|(phi# xi)(theta) - xi(Dphi^T theta(phi))|``."""
    return abs(pushforward_filament(xi, phi).pair(theta) - xi.pair(pushforward_field(theta, phi, Dphi)))


@dataclass
class Diffeomorphism:
    """A map with its Jacobian and inverse, acting on (P, d) arrays.

    ``inverse_jacobian`` is optional; when missing, ``Dphi^-1(x)`` is taken
    as ``jacobian(inverse(x))^-1``.
    """

    forward: Callable
    jacobian: Callable
    inverse: Callable
    inverse_jacobian: Callable | None = None

    @classmethod
    def linear(cls, A, shift=None):
        A = np.asarray(A, dtype=float)
        c = np.zeros(A.shape[0]) if shift is None else np.asarray(shift, dtype=float)
        Ainv = np.linalg.inv(A)
        return cls(
            forward=lambda x: x @ A.T + c,
            jacobian=lambda x: np.broadcast_to(A, x.shape[:-1] + A.shape),
            inverse=lambda y: (y - c) @ Ainv.T,
            inverse_jacobian=lambda y: np.broadcast_to(Ainv, y.shape[:-1] + A.shape),
        )

    def inverse_and_jacobian(self, y):
        x = self.inverse(y)
        if self.inverse_jacobian is not None:
            Jinv = self.inverse_jacobian(y)
        else:
            Jinv = np.linalg.inv(self.jacobian(x))
        return x, np.asarray(Jinv, dtype=float)


def pushforward_grid(xi0: GridCurrent, phi: Diffeomorphism, target: GridCurrent | None = None):
    """Vector-field push-forward ``Dphi(phi^-1 x) xi0(phi^-1 x) |det Dphi^-1(x)|``.

    Evaluated at the nodes of ``target`` (defaults to ``xi0``'s grid) with
    multilinear interpolation of ``xi0``.  Nodes whose preimage leaves
    ``xi0``'s box get zero.

    Returns
    -------
    pushed : GridCurrent
    outside_fraction : float
        Fraction of target nodes whose preimage fell outside the box.
    """
    grid = xi0 if target is None else target
    y = grid.nodes.reshape(-1, grid.dim)
    x, Jinv = phi.inverse_and_jacobian(y)
    inside = xi0.contains(x)
    vals = np.linalg.solve(Jinv, xi0.interpolate(x)[..., None])[..., 0]
    vals *= np.abs(np.linalg.det(Jinv))[:, None]
    vals[~inside] = 0.0
    pushed = GridCurrent(grid.lo, grid.hi, vals.reshape(grid.values.shape))
    return pushed, float(1.0 - inside.mean())


@dataclass(eq=False)
class CurrentPath:
    """Filament currents on a uniform time grid.

    Attributes
    ----------
    times : (S+1,) array
    positions : (S+1, N, M, d) sample positions
    weights, closed : filament weights and closed flags (shared by all times)
    velocities : optional (S+1, N, M, d) sample velocities
    tracers : optional (S+1, P, d) passive points carried by the same flow
    trace : optional per-step Jacobian statistics
        Keys ``max_norm_Dphi``, ``det_min``, ``det_max``.
    """

    times: np.ndarray
    positions: np.ndarray
    weights: np.ndarray
    closed: np.ndarray
    velocities: np.ndarray | None = None
    tracers: np.ndarray | None = None
    trace: dict | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != self.positions.shape[0]:
            raise ValueError("times and positions disagree")
        if len(t) > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise ValueError("times must be uniform and strictly increasing")
        self.times = t

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)

    def state(self, n) -> FilamentCurrent:
        return FilamentCurrent(CurveFamily(self.positions[n], self.weights, self.closed))

    @property
    def states(self):
        return [self.state(n) for n in range(len(self))]

    def pair_values(self, D: TestFieldDictionary):
        """``xi_t(theta_k)`` for every time, shape (S+1, L)."""
        return np.stack([D.pair_values(self.state(n)) for n in range(len(self))])


def path_distance(path1: CurrentPath, path2: CurrentPath, D: TestFieldDictionary) -> float:
    """``sup_t d_D(xi1_t, xi2_t)`` over a shared time grid."""
    if len(path1) != len(path2):
        raise ValueError("paths are on different time grids")
    return float(np.abs(path1.pair_values(D) - path2.pair_values(D)).max())
