"""Project the N x M received matrix onto parallel angle branches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ula import ArrayGeometry, DirectionGrid, steering_vector, subarray_response


@dataclass(frozen=True)
class BranchSignals:
    """Per-branch time-domain signals; row q belongs to grid angle theta_q."""

    z: np.ndarray  # (Q, N)
    grid: DirectionGrid

    @property
    def Q(self) -> int:
        return self.z.shape[0]

    @property
    def N(self) -> int:
        return self.z.shape[1]


def beamform_plain(Y: np.ndarray, grid: DirectionGrid, geom: ArrayGeometry) -> BranchSignals:
    """Steering-vector beamformer z(theta_q) = Y @ conj(a(theta_q)) / M.

    When the grid carries FFT bin indices the projection runs as one
    length-M FFT per received row (the beamformers are inverse-DFT columns
    after a half-spectrum shift); otherwise it falls back to the explicit
    matrix product.  Both paths agree to machine precision.
    """
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] != geom.M:
        raise ValueError(f"Y must be N x M with M={geom.M}, got {Y.shape}")
    if grid.fft_bins is not None:
        signs = np.where(np.arange(geom.M) % 2, -1.0, 1.0)
        Z = np.fft.fft(Y * signs, axis=1)[:, grid.fft_bins] / geom.M
    else:
        A = np.stack([steering_vector(geom, t) for t in grid.thetas], axis=1)
        Z = Y @ np.conj(A) / geom.M
    return BranchSignals(z=Z.T.copy(), grid=grid)


def beamform_calibrated(
    Y: np.ndarray,
    grid: DirectionGrid,
    geom: ArrayGeometry,
    beta: np.ndarray,
) -> BranchSignals:
    """Mismatch-aware beamformer z(theta_q) = Y @ conj(V(theta_q) beta).

    ``beta`` is the unit-norm calibration weight replacing the unknown
    subarray mismatches; with K = 1 and beta = 1 this is M times the plain
    beamformer output.
    """
    beta = np.asarray(beta)
    if beta.shape != (geom.K,):
        raise ValueError(f"beta must have length K={geom.K}, got shape {beta.shape}")
    if abs(np.linalg.norm(beta) - 1.0) > 1e-6:
        raise ValueError("beta must be unit norm")
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] != geom.M:
        raise ValueError(f"Y must be N x M with M={geom.M}, got {Y.shape}")
    # conj(V(theta) beta) has the per-antenna weights conj(beta_k a_r(theta));
    # apply them per subarray without materializing each V.
    w = np.repeat(np.conj(beta), geom.J)
    A = np.stack([steering_vector(geom, t) for t in grid.thetas], axis=1)
    Z = Y @ (w[:, None] * np.conj(A))
    return BranchSignals(z=Z.T.copy(), grid=grid)


def subarray_responses(geom: ArrayGeometry, grid: DirectionGrid) -> np.ndarray:
    """Stacked V(theta_q) matrices, shape (Q, M, K)."""
    return np.stack([subarray_response(geom, t) for t in grid.thetas])
