"""Independent reference implementations used as test oracles.

Everything here is deliberately plain-loop / brute-force and shares no code
path with the package internals it checks.
"""

from __future__ import annotations

import numpy as np


def naive_steering(M, chi, theta, alpha=None, J=None):
    """Scalar-loop steering vector, optionally with subarray mismatches."""
    out = np.empty(M, dtype=complex)
    for r in range(1, M + 1):
        val = np.exp(1j * 2.0 * chi * (r - 1) * np.cos(theta))
        if alpha is not None:
            k = (r + J - 1) // J  # ceil(r / J), 1-based subarray index
            val *= alpha[k - 1]
        out[r - 1] = val
    return out


def circular_convolution(s, h_padded):
    """O(N^2) time-domain circular convolution."""
    N = len(s)
    out = np.zeros(N, dtype=complex)
    for n in range(N):
        for m in range(N):
            out[n] += s[m] * h_padded[(n - m) % N]
    return out


def naive_frame_block(geom, alpha, chan, fd, xi, x_m, m, N, Ncp):
    """Single received block by direct termwise summation (no vectorization)."""
    L, P = chan.gains.shape
    M = geom.M
    s_m = np.sqrt(N) * np.fft.ifft(x_m)
    Y = np.zeros((N, M), dtype=complex)
    for l_tap in range(L):
        for p in range(P):
            theta = chan.aoas[l_tap, p]
            g = chan.gains[l_tap, p]
            phi = fd * np.cos(theta) + xi
            h_pad = np.zeros(N, dtype=complex)
            h_pad[l_tap] = g
            conv = circular_convolution(s_m, h_pad)
            eta = np.exp(1j * 2.0 * np.pi * phi * (m - 1) * (N + Ncp) / N)
            rot = np.exp(1j * 2.0 * np.pi * phi * np.arange(N) / N)
            a_row = naive_steering(M, geom.chi, theta, alpha, geom.J)
            Y += eta * np.outer(rot * conv, a_row)
    return Y


def direct_beamform(Y, thetas, geom, beta=None):
    """Per-branch explicit matrix products; plain (1/M) or weighted beamformer."""
    Q = len(thetas)
    N = Y.shape[0]
    Z = np.empty((Q, N), dtype=complex)
    for q, theta in enumerate(thetas):
        a = naive_steering(geom.M, geom.chi, theta)
        if beta is None:
            b = a / geom.M
        else:
            b = np.repeat(beta, geom.J) * a
        Z[q] = Y @ np.conj(b)
    return Z


def projection_cost_grid(Z, cos_thetas, P_perp, fd_grid, xi_grid):
    """Exact projection cost on a 2-D offset grid; returns the cost array.

    Vectorized for speed but mathematically a direct evaluation: rotate each
    branch by the trial CFO, project, accumulate squared norms.
    """
    Q, N = Z.shape
    n = np.arange(N)
    xi_phase = np.exp(-2j * np.pi * np.outer(xi_grid, n) / N)  # (X, N)
    out = np.empty((len(fd_grid), len(xi_grid)))
    Ppt = P_perp.T
    for i, fd in enumerate(fd_grid):
        fd_phase = np.exp(-2j * np.pi * np.outer(fd * cos_thetas, n) / N)  # (Q, N)
        zz = Z[:, None, :] * fd_phase[:, None, :] * xi_phase[None, :, :]  # (Q, X, N)
        proj = zz @ Ppt
        out[i] = np.sum(np.abs(proj) ** 2, axis=(0, 2))
    return out


def lambda_min_grid(Y, thetas, geom, P_perp, fd_grid, xi_grid):
    """Minimum eigenvalue of the calibration cost matrix on a 2-D offset grid.

    Builds the K x K matrix per grid point from scratch (per-branch products,
    no shared expansion machinery) and eigendecomposes it.
    """
    N = Y.shape[0]
    K, J = geom.K, geom.J
    n = np.arange(N)
    Vs = []
    for theta in thetas:
        a = naive_steering(geom.M, geom.chi, theta)
        V = np.zeros((geom.M, K), dtype=complex)
        for k in range(K):
            V[k * J : (k + 1) * J, k] = a[k * J : (k + 1) * J]
        Vs.append(V)
    out = np.empty((len(fd_grid), len(xi_grid)))
    for i, fd in enumerate(fd_grid):
        for j, xi in enumerate(xi_grid):
            C = np.zeros((K, K), dtype=complex)
            for q, theta in enumerate(thetas):
                phi = fd * np.cos(theta) + xi
                # G = P_perp E^H(phi) Y V*(theta); rows of W hold P_perp Y* V.
                rot = np.exp(-2j * np.pi * phi * n / N)
                G = P_perp @ (rot[:, None] * (Y @ np.conj(Vs[q])))
                C += np.conj(G.conj().T @ G)
            C = 0.5 * (C + C.conj().T)
            out[i, j] = np.linalg.eigvalsh(C)[0]
    return out


def char_poly_min_eig(C):
    """Smallest eigenvalue via Faddeev-LeVerrier characteristic polynomial
    coefficients and companion-matrix root finding (independent of eigh)."""
    K = C.shape[0]
    coeffs = np.zeros(K + 1, dtype=complex)
    coeffs[0] = 1.0
    Mk = np.zeros_like(C)
    for k in range(1, K + 1):
        Mk = C @ Mk + coeffs[k - 1] * np.eye(K)
        coeffs[k] = -np.trace(C @ Mk) / k
    roots = np.roots(coeffs)
    return float(np.min(roots.real))


def qam16_ser_awgn(snr_linear):
    """Exact SER of Gray 16-QAM in AWGN at symbol SNR Es/N0."""
    from scipy.special import erfc

    q = 0.5 * erfc(np.sqrt(snr_linear / 5.0) / np.sqrt(2.0))
    p4 = 1.5 * q
    return 1.0 - (1.0 - p4) ** 2
