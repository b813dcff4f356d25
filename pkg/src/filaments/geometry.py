"""Discretized curves on a uniform parameter grid over [0, 1].

Closed curves store ``M`` samples at ``sigma = i / M`` (no duplicated
endpoint); open curves store ``M`` samples at ``sigma = i / (M - 1)``.
Closed curves are differentiated spectrally, open curves with fourth-order
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

MIN_SAMPLES = 8

VectorField = Callable[[np.ndarray], np.ndarray]


class NonFiniteError(FloatingPointError):
    """Raised when a computation produces NaN or inf.

    ``location`` is a dict describing where (step, point, ...) it happened.
    """

    def __init__(self, message, **location):
        super().__init__(message)
        self.location = location


def spectral_derivative(values, axis=0):
    """Derivative of 1-periodic samples along ``axis`` via FFT."""
    values = np.asarray(values, dtype=float)
    M = values.shape[axis]
    # shift by the first sample so constant input gives exactly zero
    base = np.take(values, [0], axis=axis)
    coeffs = np.fft.rfft(values - base, axis=axis)
    k = np.arange(coeffs.shape[axis])
    mult = 2j * np.pi * k
    if M % 2 == 0:
        mult[-1] = 0.0
    shape = [1] * values.ndim
    shape[axis] = -1
    return np.fft.irfft(coeffs * mult.reshape(shape), n=M, axis=axis)


def fd4_derivative(values, h, axis=0):
    """Fourth-order finite differences with one-sided end stencils."""
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    f = f - f[:1]
    M = f.shape[0]
    if M < 5:
        raise ValueError("fourth-order stencils need at least 5 samples")
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h)
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h)
    out[-1] = (25.0 * f[-1] - 48.0 * f[-2] + 36.0 * f[-3] - 16.0 * f[-4] + 3.0 * f[-5]) / (12.0 * h)
    out[-2] = (3.0 * f[-1] + 10.0 * f[-2] - 18.0 * f[-3] + 6.0 * f[-4] - f[-5]) / (12.0 * h)
    return np.moveaxis(out, 0, axis)


def sigma_grid(M, closed):
    if closed:
        return np.arange(M) / M
    return np.linspace(0.0, 1.0, M)


def quadrature_weights(M, closed):
    """Trapezoid weights on the sigma grid (periodic when closed)."""
    if closed:
        return np.full(M, 1.0 / M)
    w = np.full(M, 1.0 / (M - 1))
    w[0] = w[-1] = 0.5 / (M - 1)
    return w


def _tangents(points, closed, axis):
    M = points.shape[axis]
    if closed:
        return spectral_derivative(points, axis=axis)
    return fd4_derivative(points, 1.0 / (M - 1), axis=axis)


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Curve:
    """A sampled curve ``gamma: [0, 1] -> R^d``.

    Parameters
    ----------
    points : array_like, shape (M, d)
    closed : bool
        Periodic parametrization; the endpoint is not repeated.
    """

    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2:
            raise ValueError(f"points must have shape (M, d), got {pts.shape}")
        if pts.shape[0] < MIN_SAMPLES:
            raise ValueError(f"a curve needs at least {MIN_SAMPLES} samples, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("curve coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "closed", bool(self.closed))

    @property
    def M(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def sigma(self):
        return sigma_grid(self.M, self.closed)

    @property
    def weights(self):
        return quadrature_weights(self.M, self.closed)

    @cached_property
    def tangents(self):
        t = _tangents(self.points, self.closed, axis=0)
        t.setflags(write=False)
        return t

    def translated(self, v):
        return Curve(self.points + np.asarray(v, dtype=float), self.closed)

    def mapped(self, phi):
        """Curve ``phi(gamma(sigma))`` for a map acting on (M, d) arrays."""
        return Curve(phi(self.points), self.closed)


def tangent(c: Curve) -> np.ndarray:
    """``d gamma / d sigma`` at every sample, shape (M, d)."""
    t = c.tangents
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("non-finite tangent; corrupted curve samples")
    return t


def pair(c: Curve, theta: VectorField) -> float:
    """Quadrature of ``<theta(gamma), gamma'>`` over [0, 1]."""
    values = np.asarray(theta(c.points), dtype=float).reshape(c.points.shape)
    return float(np.einsum("m,md,md->", c.weights, values, c.tangents))


def arclength(c: Curve) -> float:
    return float(c.weights @ np.linalg.norm(c.tangents, axis=1))


@dataclass(frozen=True, eq=False)
class CurveFamily:
    """N curves sharing sample count M and dimension d, with weights.

    Attributes
    ----------
    points : ndarray, shape (N, M, d)
    weights : ndarray, shape (N,)
        The filament weights (circulations).
    closed : ndarray of bool, shape (N,)
    """

    points: np.ndarray
    weights: np.ndarray
    closed: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 3:
            raise ValueError(f"points must have shape (N, M, d), got {pts.shape}")
        N, M, _ = pts.shape
        weights = _frozen(np.broadcast_to(np.asarray(self.weights, dtype=float), (N,)))
        closed = np.array(np.broadcast_to(np.asarray(self.closed, dtype=bool), (N,)))
        closed.setflags(write=False)
        if N < 1:
            raise ValueError("a family needs at least one curve")
        if M < MIN_SAMPLES:
            raise ValueError(f"a curve needs at least {MIN_SAMPLES} samples, got {M}")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(weights))):
            raise ValueError("curve coordinates and weights must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "closed", closed)

    @classmethod
    def from_curves(cls, curves: Sequence[Curve], weights=None):
        curves = list(curves)
        if not curves:
            raise ValueError("a family needs at least one curve")
        if len({(c.M, c.dim) for c in curves}) != 1:
            raise ValueError("all curves in a family must share M and d")
        if weights is None:
            weights = np.ones(len(curves))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(curves),):
            raise ValueError("curves and weights must have equal length")
        return cls(np.stack([c.points for c in curves]), weights, [c.closed for c in curves])

    def with_points(self, points):
        return CurveFamily(points, self.weights, self.closed)

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def M(self):
        return self.points.shape[1]

    @property
    def dim(self):
        return self.points.shape[2]

    @property
    def total_weight(self):
        """Sum of |alpha_j|."""
        return float(np.abs(self.weights).sum())

    @property
    def curves(self):
        return [Curve(p, c) for p, c in zip(self.points, self.closed)]

    @cached_property
    def tangents(self):
        out = np.empty_like(self.points)
        for flag in (True, False):
            sel = self.closed == flag
            if sel.any():
                out[sel] = _tangents(self.points[sel], flag, axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def quadrature(self):
        """Per-sample quadrature weights, shape (N, M)."""
        q = np.array([quadrature_weights(self.M, c) for c in self.closed])
        q.setflags(write=False)
        return q

    @cached_property
    def canonical_order(self):
        """A filament order that depends only on curve data, not on indexing.

        Summing over sources in this order makes the dynamics exactly
        equivariant under relabelling of the filaments.
        """
        keys = np.concatenate(
            [self.points.reshape(self.N, -1), self.weights[:, None], self.closed[:, None]], axis=1
        )
        order = np.lexsort(keys.T[::-1])
        order.setflags(write=False)
        return order
