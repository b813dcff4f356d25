"""Compiled pairwise sums.

Every routine parallelizes over an output index (target point or feature)
and accumulates its own sum sequentially in a fixed source order, so the
result does not depend on the number of threads.
"""

import os

# must be in place before numba is first imported
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba  # noqa: E402
import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402


def set_threads(n):
    """Set the compiled-loop thread count; 0 means all available."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n <= 0 else min(int(n), limit)
    numba.set_num_threads(n)
    return n


def get_threads():
    return numba.get_num_threads()


@njit(parallel=True, cache=True)
def bs_convolve(targets, pts, vec, alpha, order, delta2, deriv):
    """Mollified Biot-Savart sums ``sum_j alpha_j sum_s g(x - p) x vec``.

    ``g(r) = r / (|r|^2 + delta^2)^(3/2)``.  ``vec`` already carries the
    quadrature weights.  ``deriv`` selects 0: value, 1: + gradient,
    2: + Hessian; gradients are indexed ``[p, i, k] = d_k v_i``.
    """
    P = targets.shape[0]
    N = pts.shape[0]
    M = pts.shape[1]
    v = np.zeros((P, 3))
    g = np.zeros((P if deriv >= 1 else 0, 3, 3))
    h = np.zeros((P if deriv >= 2 else 0, 3, 3, 3))
    for p in prange(P):
        x0 = targets[p, 0]
        x1 = targets[p, 1]
        x2 = targets[p, 2]
        av = np.zeros(3)
        ag = np.zeros((3, 3))
        ah = np.zeros((3, 3, 3))
        sv = np.zeros(3)
        sg = np.zeros((3, 3))
        sh = np.zeros((3, 3, 3))
        E = np.zeros((3, 3))
        r = np.zeros(3)
        c = np.zeros(3)
        for jj in range(N):
            j = order[jj]
            sv[:] = 0.0
            if deriv >= 1:
                sg[:, :] = 0.0
            if deriv >= 2:
                sh[:, :, :] = 0.0
            for s in range(M):
                r[0] = x0 - pts[j, s, 0]
                r[1] = x1 - pts[j, s, 1]
                r[2] = x2 - pts[j, s, 2]
                w0 = vec[j, s, 0]
                w1 = vec[j, s, 1]
                w2 = vec[j, s, 2]
                q = r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + delta2
                iq = 1.0 / q
                phi = iq * np.sqrt(iq)
                c[0] = r[1] * w2 - r[2] * w1
                c[1] = r[2] * w0 - r[0] * w2
                c[2] = r[0] * w1 - r[1] * w0
                sv[0] += phi * c[0]
                sv[1] += phi * c[1]
                sv[2] += phi * c[2]
                if deriv >= 1:
                    dphi = -1.5 * phi * iq
                    # E[i, k] = (e_k x w)_i
                    E[0, 0] = 0.0
                    E[0, 1] = w2
                    E[0, 2] = -w1
                    E[1, 0] = -w2
                    E[1, 1] = 0.0
                    E[1, 2] = w0
                    E[2, 0] = w1
                    E[2, 1] = -w0
                    E[2, 2] = 0.0
                    for i in range(3):
                        for k in range(3):
                            sg[i, k] += phi * E[i, k] + 2.0 * dphi * r[k] * c[i]
                    if deriv >= 2:
                        ddphi = -2.5 * dphi * iq
                        for i in range(3):
                            for k in range(3):
                                for l in range(3):
                                    val = 2.0 * dphi * (r[l] * E[i, k] + r[k] * E[i, l])
                                    val += 4.0 * ddphi * r[k] * r[l] * c[i]
                                    if k == l:
                                        val += 2.0 * dphi * c[i]
                                    sh[i, k, l] += val
            a = alpha[j]
            for i in range(3):
                av[i] += a * sv[i]
            if deriv >= 1:
                for i in range(3):
                    for k in range(3):
                        ag[i, k] += a * sg[i, k]
            if deriv >= 2:
                for i in range(3):
                    for k in range(3):
                        for l in range(3):
                            ah[i, k, l] += a * sh[i, k, l]
        for i in range(3):
            v[p, i] = av[i]
        if deriv >= 1:
            for i in range(3):
                for k in range(3):
                    g[p, i, k] = ag[i, k]
        if deriv >= 2:
            for i in range(3):
                for k in range(3):
                    for l in range(3):
                        h[p, i, k, l] = ah[i, k, l]
    return v, g, h


@njit(parallel=True, cache=True)
def gauss_convolve(targets, pts, vec, alpha, order, inv_l2, deriv):
    """Sums of ``exp(-|x - p|^2 / (2 l^2)) vec`` and their derivatives.

    The constant matrix factor of the kernel is applied by the caller.
    Gradient entries are ``[p, m, k] = sum vec_m d_k h``.
    """
    P = targets.shape[0]
    N = pts.shape[0]
    M = pts.shape[1]
    d = pts.shape[2]
    v = np.zeros((P, d))
    g = np.zeros((P if deriv >= 1 else 0, d, d))
    h = np.zeros((P if deriv >= 2 else 0, d, d, d))
    for p in prange(P):
        av = np.zeros(d)
        ag = np.zeros((d, d))
        ah = np.zeros((d, d, d))
        sv = np.zeros(d)
        sg = np.zeros((d, d))
        sh = np.zeros((d, d, d))
        r = np.zeros(d)
        for jj in range(N):
            j = order[jj]
            sv[:] = 0.0
            if deriv >= 1:
                sg[:, :] = 0.0
            if deriv >= 2:
                sh[:, :, :] = 0.0
            for s in range(M):
                rr = 0.0
                for k in range(d):
                    r[k] = targets[p, k] - pts[j, s, k]
                    rr += r[k] * r[k]
                e = np.exp(-0.5 * rr * inv_l2)
                for m in range(d):
                    sv[m] += e * vec[j, s, m]
                if deriv >= 1:
                    for m in range(d):
                        for k in range(d):
                            sg[m, k] -= vec[j, s, m] * r[k] * inv_l2 * e
                if deriv >= 2:
                    for m in range(d):
                        for k in range(d):
                            for l in range(d):
                                val = r[k] * r[l] * inv_l2 * inv_l2
                                if k == l:
                                    val -= inv_l2
                                sh[m, k, l] += vec[j, s, m] * val * e
            a = alpha[j]
            for m in range(d):
                av[m] += a * sv[m]
            if deriv >= 1:
                for m in range(d):
                    for k in range(d):
                        ag[m, k] += a * sg[m, k]
            if deriv >= 2:
                for m in range(d):
                    for k in range(d):
                        for l in range(d):
                            ah[m, k, l] += a * sh[m, k, l]
        for m in range(d):
            v[p, m] = av[m]
        if deriv >= 1:
            for m in range(d):
                for k in range(d):
                    g[p, m, k] = ag[m, k]
        if deriv >= 2:
            for m in range(d):
                for k in range(d):
                    for l in range(d):
                        h[p, m, k, l] = ah[m, k, l]
    return v, g, h


@njit(parallel=True, cache=True)
def curve_feature_sums(pts, vec, omegas):
    """Per-curve ``sum_s vec cos(w.x)`` and ``sum_s vec sin(w.x)``.

    Returns two arrays of shape (N, K, d).
    """
    N = pts.shape[0]
    M = pts.shape[1]
    d = pts.shape[2]
    K = omegas.shape[0]
    C = np.zeros((N, K, d))
    S = np.zeros((N, K, d))
    for task in prange(N * K):
        j = task // K
        k = task % K
        for s in range(M):
            ph = 0.0
            for m in range(d):
                ph += omegas[k, m] * pts[j, s, m]
            cs = np.cos(ph)
            sn = np.sin(ph)
            for m in range(d):
                C[j, k, m] += cs * vec[j, s, m]
                S[j, k, m] += sn * vec[j, s, m]
    return C, S


@njit(parallel=True, cache=True)
def drift_feature_sums(pts, U, V, W, omegas):
    """Moments for pairing ``D theta . V`` against W and ``theta`` against U.

    Returns (K, d) arrays ``sum cos U``, ``sum sin U``,
    ``sum cos (w.V) W`` and ``sum sin (w.V) W`` over all points.
    """
    P = pts.shape[0]
    d = pts.shape[1]
    K = omegas.shape[0]
    CU = np.zeros((K, d))
    SU = np.zeros((K, d))
    CW = np.zeros((K, d))
    SW = np.zeros((K, d))
    for k in prange(K):
        for p in range(P):
            ph = 0.0
            wv = 0.0
            for m in range(d):
                ph += omegas[k, m] * pts[p, m]
                wv += omegas[k, m] * V[p, m]
            cs = np.cos(ph)
            sn = np.sin(ph)
            for m in range(d):
                CU[k, m] += cs * U[p, m]
                SU[k, m] += sn * U[p, m]
                CW[k, m] += cs * wv * W[p, m]
                SW[k, m] += sn * wv * W[p, m]
    return CU, SU, CW, SW
