"""Smooth matrix-valued interaction kernels ``K: R^d -> R^{d x d}``.

Derivative tensors use trailing indices for the differentiation variables:
``jacobian(x)[..., i, j, k] = d_k K_ij(x)`` and
``hessian(x)[..., i, j, k, l] = d_k d_l K_ij(x)``.

Sup-norm bounds use the Frobenius norm of each tensor, which dominates
every operator norm built from it.
"""

from __future__ import annotations

import numpy as np

from . import _accel

LEVI_CIVITA = np.zeros((3, 3, 3))
for _a, _b, _c in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    LEVI_CIVITA[_a, _b, _c] = 1.0
    LEVI_CIVITA[_a, _c, _b] = -1.0

# safety factor applied to bounds found by dense radial search
_BOUND_MARGIN = 1.01


def _radial_sup(tensor_fn, dim, rmax, n=20001):
    """Max Frobenius norm of ``tensor_fn`` along the ray ``r e_1``.

    Valid for kernels whose tensor norms are rotation invariant.
    """
    r = np.linspace(0.0, rmax, n)
    x = np.zeros((n, dim))
    x[:, 0] = r
    vals = tensor_fn(x).reshape(n, -1)
    return float(np.sqrt((vals**2).sum(axis=1)).max()) * _BOUND_MARGIN


class Kernel:
    """Base class; subclasses provide ``eval`` and its derivatives.

    Attributes
    ----------
    dim : int
    bounds : tuple of float
        Certified ``(sup|K|, sup|DK|, sup|D^2 K|)``.
    third_bound : float
        Certified ``sup|D^3 K|``.
    divergence_free : bool
        Whether every column of K is divergence free, so that ``K * xi``
        is a divergence-free field for every current.
    """

    name = "kernel"
    dim: int
    bounds: tuple
    third_bound: float
    divergence_free: bool

    def eval(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def third(self, x):
        raise NotImplementedError

    @property
    def params(self):
        return {}

    @property
    def spec(self):
        return {"kind": self.name, **self.params}

    @property
    def C_B(self):
        """The single constant serving the drift assumptions (boundedness
        and Lipschitz continuity of ``K * xi`` and its derivative)."""
        k0, k1, k2 = self.bounds
        return max(k0 + k1, k1 + k2, k2 + self.third_bound)

    def column_divergence(self, x):
        """``sum_i d_i K_ij(x)``, shape (..., d)."""
        return np.einsum("...iji->...j", self.jacobian(x))

    def sums(self, targets, pts, vec, alpha, order=None, deriv=0):
        """Convolution sums ``sum_j alpha_j sum_s K(x - p_js) vec_js``.

        Parameters
        ----------
        targets : (P, d) evaluation points
        pts, vec : (N, M, d) source points and quadrature-weighted tangents
        alpha : (N,) filament weights
        order : (N,) int, optional
            Filament summation order.
        deriv : int
            0 returns the value only, 1 adds the gradient ``[p, i, k]``,
            2 adds the Hessian ``[p, i, k, l]``.

        Returns
        -------
        v, g, h : arrays; ``g`` and ``h`` are None when not requested.
        """
        return self.reference_sums(targets, pts, vec, alpha, order, deriv)

    def reference_sums(self, targets, pts, vec, alpha, order=None, deriv=0, chunk=64):
        """Direct numpy evaluation through ``eval``/``jacobian``/``hessian``."""
        targets = np.asarray(targets, dtype=float)
        if order is None:
            order = np.arange(pts.shape[0])
        pts = pts[order]
        vec = vec[order]
        alpha = np.asarray(alpha, dtype=float)[order]
        P, d = targets.shape
        v = np.zeros((P, d))
        g = np.zeros((P, d, d)) if deriv >= 1 else None
        h = np.zeros((P, d, d, d)) if deriv >= 2 else None
        for start in range(0, P, chunk):
            x = targets[start : start + chunk]
            R = x[:, None, None, :] - pts[None]
            v[start : start + chunk] = np.einsum("j,pjsab,jsb->pa", alpha, self.eval(R), vec)
            if deriv >= 1:
                g[start : start + chunk] = np.einsum(
                    "j,pjsabk,jsb->pak", alpha, self.jacobian(R), vec
                )
            if deriv >= 2:
                h[start : start + chunk] = np.einsum(
                    "j,pjsabkl,jsb->pakl", alpha, self.hessian(R), vec
                )
        return v, g, h

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


class MollifiedBiotSavart(Kernel):
    """``K(x) w = (x x w) / (|x|^2 + delta^2)^(3/2)`` in three dimensions.

    Odd, divergence free, and of class UC_b^3 for ``delta > 0``.  All
    derivative bounds scale as ``delta^(-2-k)``.
    """

    name = "mollified_biot_savart"

    def __init__(self, delta):
        delta = float(delta)
        if not delta > 0 or not np.isfinite(delta):
            raise ValueError(f"delta must be positive, got {delta}")
        self.delta = delta
        self.dim = 3
        self.divergence_free = True
        self.bounds = tuple(
            _radial_sup(fn, 3, 20.0 * delta) for fn in (self.eval, self.jacobian, self.hessian)
        )
        self.third_bound = _radial_sup(self.third, 3, 20.0 * delta)

    @property
    def params(self):
        return {"delta": self.delta}

    def _profile(self, x):
        q = np.einsum("...i,...i->...", x, x) + self.delta**2
        phi = q**-1.5
        return phi, -1.5 * phi / q, 3.75 * phi / q**2, -13.125 * phi / q**3

    def field(self, x):
        """``g(x) = x / (|x|^2 + delta^2)^(3/2)``."""
        x = np.asarray(x, dtype=float)
        return x * self._profile(x)[0][..., None]

    def _g_derivs(self, x, order):
        x = np.asarray(x, dtype=float)
        phi, d1, d2, d3 = self._profile(x)
        I = np.eye(3)
        if order == 1:
            return phi[..., None, None] * I + 2.0 * d1[..., None, None] * np.einsum(
                "...b,...j->...bj", x, x
            )
        if order == 2:
            sym = (
                np.einsum("bj,...k->...bjk", I, x)
                + np.einsum("bk,...j->...bjk", I, x)
                + np.einsum("jk,...b->...bjk", I, x)
            )
            cube = np.einsum("...b,...j,...k->...bjk", x, x, x)
            return 2.0 * d1[..., None, None, None] * sym + 4.0 * d2[..., None, None, None] * cube
        sym0 = (
            np.einsum("bj,kl->bjkl", I, I)
            + np.einsum("bk,jl->bjkl", I, I)
            + np.einsum("jk,bl->bjkl", I, I)
        )
        xx = np.einsum("...a,...c->...ac", x, x)
        sym2 = (
            np.einsum("bj,...kl->...bjkl", I, xx)
            + np.einsum("bk,...jl->...bjkl", I, xx)
            + np.einsum("jk,...bl->...bjkl", I, xx)
            + np.einsum("bl,...jk->...bjkl", I, xx)
            + np.einsum("jl,...bk->...bjkl", I, xx)
            + np.einsum("kl,...bj->...bjkl", I, xx)
        )
        quart = np.einsum("...bj,...kl->...bjkl", xx, xx)
        e = (None,) * 4
        return (
            2.0 * d1[(...,) + e] * sym0
            + 4.0 * d2[(...,) + e] * sym2
            + 8.0 * d3[(...,) + e] * quart
        )

    def eval(self, x):
        return np.einsum("abc,...b->...ac", LEVI_CIVITA, self.field(x))

    def jacobian(self, x):
        return np.einsum("abc,...bj->...acj", LEVI_CIVITA, self._g_derivs(x, 1))

    def hessian(self, x):
        return np.einsum("abc,...bjk->...acjk", LEVI_CIVITA, self._g_derivs(x, 2))

    def third(self, x):
        return np.einsum("abc,...bjkl->...acjkl", LEVI_CIVITA, self._g_derivs(x, 3))

    def sums(self, targets, pts, vec, alpha, order=None, deriv=0):
        if order is None:
            order = np.arange(pts.shape[0])
        v, g, h = _accel.bs_convolve(
            np.ascontiguousarray(targets, dtype=float),
            np.ascontiguousarray(pts, dtype=float),
            np.ascontiguousarray(vec, dtype=float),
            np.ascontiguousarray(alpha, dtype=float),
            np.ascontiguousarray(order, dtype=np.int64),
            self.delta**2,
            deriv,
        )
        return v, (g if deriv >= 1 else None), (h if deriv >= 2 else None)


def _default_rotor(dim):
    J = np.zeros((dim, dim))
    J[0, 1], J[1, 0] = -1.0, 1.0
    return J


class GaussianRotor(Kernel):
    """``K(x) = exp(-|x|^2 / (2 l^2)) J`` with a fixed antisymmetric J.

    Its column divergence is ``-exp(...) (J^T x) / l^2``, which vanishes
    only for ``J = 0``; the flag is set from a numerical check.
    """

    name = "gaussian_rotor"

    def __init__(self, length, dim=3, matrix=None):
        length = float(length)
        if not length > 0 or not np.isfinite(length):
            raise ValueError(f"length must be positive, got {length}")
        if dim not in (2, 3):
            raise ValueError("GaussianRotor is defined for d = 2 or 3")
        J = _default_rotor(dim) if matrix is None else np.array(matrix, dtype=float)
        if J.shape != (dim, dim) or not np.allclose(J, -J.T):
            raise ValueError("matrix must be an antisymmetric d x d array")
        self.length = length
        self.dim = dim
        self.matrix = J
        self._custom_matrix = matrix is not None
        rng = np.random.default_rng(0)
        probe = rng.normal(scale=length, size=(16, dim))
        self.divergence_free = bool(np.abs(self.column_divergence(probe)).max() < 1e-12)
        self.bounds = tuple(
            _radial_sup(fn, dim, 12.0 * length) for fn in (self.eval, self.jacobian, self.hessian)
        )
        self.third_bound = _radial_sup(self.third, dim, 12.0 * length)

    @property
    def params(self):
        p = {"length": self.length, "dim": self.dim}
        if self._custom_matrix:
            p["matrix"] = self.matrix.tolist()
        return p

    def _h(self, x):
        x = np.asarray(x, dtype=float)
        return x, np.exp(-0.5 * np.einsum("...i,...i->...", x, x) / self.length**2)

    def _h_derivs(self, x, order):
        x, h = self._h(x)
        il2 = 1.0 / self.length**2
        I = np.eye(self.dim)
        if order == 0:
            return h
        if order == 1:
            return -il2 * x * h[..., None]
        if order == 2:
            return (il2**2 * np.einsum("...k,...l->...kl", x, x) - il2 * I) * h[..., None, None]
        sym = (
            np.einsum("kl,...m->...klm", I, x)
            + np.einsum("km,...l->...klm", I, x)
            + np.einsum("lm,...k->...klm", I, x)
        )
        cube = np.einsum("...k,...l,...m->...klm", x, x, x)
        return (il2**2 * sym - il2**3 * cube) * h[..., None, None, None]

    def eval(self, x):
        return self._h_derivs(x, 0)[..., None, None] * self.matrix

    def jacobian(self, x):
        return np.einsum("ij,...k->...ijk", self.matrix, self._h_derivs(x, 1))

    def hessian(self, x):
        return np.einsum("ij,...kl->...ijkl", self.matrix, self._h_derivs(x, 2))

    def third(self, x):
        return np.einsum("ij,...klm->...ijklm", self.matrix, self._h_derivs(x, 3))

    def sums(self, targets, pts, vec, alpha, order=None, deriv=0):
        if order is None:
            order = np.arange(pts.shape[0])
        v, g, h = _accel.gauss_convolve(
            np.ascontiguousarray(targets, dtype=float),
            np.ascontiguousarray(pts, dtype=float),
            np.ascontiguousarray(vec, dtype=float),
            np.ascontiguousarray(alpha, dtype=float),
            np.ascontiguousarray(order, dtype=np.int64),
            1.0 / self.length**2,
            deriv,
        )
        J = self.matrix
        v = v @ J.T
        g = np.einsum("im,pmk->pik", J, g) if deriv >= 1 else None
        h = np.einsum("im,pmkl->pikl", J, h) if deriv >= 2 else None
        return v, g, h


class ConstantKernel(Kernel):
    """``K(x) = A`` everywhere.  Mainly a test kernel."""

    name = "constant"

    def __init__(self, matrix):
        A = np.array(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.matrix = A
        self.dim = A.shape[0]
        self.divergence_free = True
        self.bounds = (float(np.linalg.norm(A)), 0.0, 0.0)
        self.third_bound = 0.0

    @property
    def params(self):
        return {"matrix": self.matrix.tolist()}

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()

    def _zeros(self, x, extra):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * (2 + extra))

    def jacobian(self, x):
        return self._zeros(x, 1)

    def hessian(self, x):
        return self._zeros(x, 2)

    def third(self, x):
        return self._zeros(x, 3)

    def sums(self, targets, pts, vec, alpha, order=None, deriv=0):
        if order is None:
            order = np.arange(pts.shape[0])
        total = np.zeros(self.dim)
        for j in order:
            total += alpha[j] * vec[j].sum(axis=0)
        P = np.asarray(targets).shape[0]
        v = np.tile(self.matrix @ total, (P, 1))
        g = np.zeros((P, self.dim, self.dim)) if deriv >= 1 else None
        h = np.zeros((P, self.dim, self.dim, self.dim)) if deriv >= 2 else None
        return v, g, h


class ZeroKernel(ConstantKernel):
    name = "zero"

    def __init__(self, dim=3):
        super().__init__(np.zeros((int(dim), int(dim))))

    @property
    def params(self):
        return {"dim": self.dim}


KERNELS = {
    MollifiedBiotSavart.name: MollifiedBiotSavart,
    GaussianRotor.name: GaussianRotor,
    ZeroKernel.name: ZeroKernel,
    ConstantKernel.name: ConstantKernel,
}


def make_kernel(spec=None, **params) -> Kernel:
    """Build a kernel from ``{"kind": name, **params}`` or ``name, **params``.

    >>> make_kernel("mollified_biot_savart", delta=0.5).C_B > 0
    True
    """
    if isinstance(spec, Kernel):
        return spec
    if isinstance(spec, dict):
        params = {**spec, **params}
        kind = params.pop("kind")
    else:
        kind = spec
    try:
        cls = KERNELS[kind]
    except KeyError:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {sorted(KERNELS)}")
    return cls(**params)


def bl_operator_bound(k: Kernel) -> float:
    """``sup|K| + sup|DK|``: ``|(K * xi)(x)| <= ||xi|| * bound`` in the
    bounded-Lipschitz dual norm."""
    return k.bounds[0] + k.bounds[1]


def _scale(k: Kernel):
    return float(k.params.get("delta", k.params.get("length", 1.0)))


def audit_kernel(k: Kernel, n_points=10_000, step=1e-5, seed=0, fd_points=200):
    """Numerical audit of a kernel's bounds and derivatives.

    Bounds are checked at ``n_points`` (rounded up to a power of two) scrambled-Sobol points in the box
    ``[-8 s, 8 s]^d`` with ``s`` the kernel length scale.  Jacobian and
    Hessian are compared with central differences of ``eval`` and
    ``jacobian`` at the first ``fd_points`` points; errors are relative to
    ``max(|exact|, 1e-6 * bound)``.
    """
    from scipy.stats import qmc

    d = k.dim
    s = _scale(k)
    m = int(np.ceil(np.log2(n_points)))
    u = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed)).random_base2(m)
    x = (2 * u - 1) * 8 * s
    n_points = len(x)
    out = {}
    for name, fn, b in zip(("K", "DK", "D2K"), (k.eval, k.jacobian, k.hessian), k.bounds):
        vals = fn(x).reshape(n_points, -1)
        out[f"sup_{name}_sampled"] = float(np.sqrt((vals**2).sum(axis=1)).max())
        out[f"sup_{name}_bound"] = float(b)
        out[f"bound_{name}_ok"] = out[f"sup_{name}_sampled"] <= b
    xf = x[:fd_points]
    E = np.eye(d)

    def fd_error(f, df, bound):
        exact = df(xf)
        approx = np.stack(
            [(f(xf + step * E[m]) - f(xf - step * E[m])) / (2 * step) for m in range(d)], axis=-1
        )
        err = np.sqrt(((approx - exact) ** 2).reshape(len(xf), -1).sum(axis=1))
        ref = np.sqrt((exact**2).reshape(len(xf), -1).sum(axis=1))
        return float((err / np.maximum(ref, 1e-6 * max(bound, 1e-300))).max()) if bound > 0 else float(err.max())

    out["jacobian_fd_rel_error"] = fd_error(k.eval, k.jacobian, k.bounds[1])
    out["hessian_fd_rel_error"] = fd_error(k.jacobian, k.hessian, k.bounds[2])
    out["derivatives_ok"] = out["jacobian_fd_rel_error"] <= 1e-6 and out["hessian_fd_rel_error"] <= 1e-6
    div = float(np.abs(k.column_divergence(x)).max())
    out["max_column_divergence"] = div
    out["divergence_free"] = bool(k.divergence_free)
    out["divergence_ok"] = (div <= 1e-8) if k.divergence_free else True
    out["C_B"] = float(k.C_B)
    out["bl_operator_bound"] = bl_operator_bound(k)
    out["passed"] = bool(all(out[key] for key in out if key.endswith("_ok")))
    return out
