"""Joint estimation for the partly calibrated array.

Inter-subarray mismatches break the steering-vector orthogonality the plain
estimator relies on.  This module estimates a unit-norm calibration weight
beta alongside the two frequency offsets: for any trial offset pair the best
beta is the minimum eigenvector of a K x K residual-energy matrix, so the
joint problem reduces to minimizing the smallest eigenvalue over the offsets.
The search is seeded by the plain (coarse) estimate and adjusted with a
single second-order tap around it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .beamforming import beamform_calibrated, beamform_plain, subarray_responses
from .estimator import (
    CfoEstimate,
    NumericalError,
    PipelineResult,
    ProjectionCache,
    compensate,
    ml_channel,
    mrc_detect,
    newton_estimate,
)
from .ofdm import OfdmConfig
from .ula import ArrayGeometry, DirectionGrid

logger = logging.getLogger(__name__)


def _ctilde(
    Y: np.ndarray,
    V_all: np.ndarray,
    cos_thetas: np.ndarray,
    fd: float,
    xi: float,
) -> np.ndarray:
    """Rotated conjugate projections E(phi_q) Y* V(theta_q), shape (Q, N, K)."""
    N = Y.shape[0]
    W = np.einsum("nm,qmk->qnk", np.conj(Y), V_all)
    phis = fd * cos_thetas + xi
    ph = np.exp(2j * np.pi * np.outer(phis, np.arange(N)) / N)
    return ph[:, :, None] * W


def build_cost_matrix(
    Y: np.ndarray,
    grid: DirectionGrid,
    geom: ArrayGeometry,
    cache: ProjectionCache,
    fd: float,
    xi: float,
) -> np.ndarray:
    """K x K Hermitian PSD matrix whose quadratic form in beta is the summed
    projected residual energy of all branches at the trial offsets.

    beta^H C beta == sum_q || P_perp E^H(phi_q) Y conj(V(theta_q)) conj(beta) ||^2.
    """
    V_all = subarray_responses(geom, grid)
    ct = _ctilde(Y, V_all, grid.cos_thetas, fd, xi)
    Pc = np.einsum("nm,qmk->qnk", cache.P_perp.T, ct)
    C = np.einsum("qnk,qnl->kl", np.conj(ct), Pc)
    return 0.5 * (C + C.conj().T)


def min_eig(C: np.ndarray, herm_tol: float = 1e-8) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and unit eigenvector of a Hermitian matrix.

    The eigenvector phase is canonicalized so its first nonzero component is
    real positive.  Eigenvalue ties within 1e-9 relative keep the
    eigensolver's lowest-index vector (logged for diagnostics).
    """
    C = np.asarray(C)
    scale = max(np.abs(C).max(), 1.0)
    if np.abs(C - C.conj().T).max() > herm_tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    vals, vecs = np.linalg.eigh(0.5 * (C + C.conj().T))
    if vals.size > 1 and abs(vals[1] - vals[0]) <= 1e-9 * max(abs(vals[0]), 1.0):
        logger.debug("minimum eigenvalue nearly degenerate: %s", vals[:2])
    v = vecs[:, 0]
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    pivot = nz[0] if nz.size else 0
    phase = v[pivot] / abs(v[pivot]) if abs(v[pivot]) > 0 else 1.0
    return float(vals[0]), v / phase


@dataclass(frozen=True)
class CalibratedEstimate:
    """Refined offsets plus the calibration weight; keeps the coarse seed."""

    fd_hat: float
    xi_hat: float
    beta_hat: np.ndarray
    per_branch_phi: np.ndarray
    coarse: CfoEstimate | None
    fell_back: bool
    lambda_min: float


def _tap_sums(ct: np.ndarray, cache: ProjectionCache, cosq: np.ndarray):
    """Second-order expansion matrices of the residual matrix around a point.

    Returns (Ups, S1c, S1, S2cc, S2c, S2): the K x K matrix sums entering
    the 2x2 curvature system.  All six are Hermitian by construction.
    """
    d = cache.d_diag
    Ppt = cache.P_perp.T
    ctd = d[None, :, None] * ct
    ctdd = d[None, :, None] ** 2 * ct
    A0 = np.einsum("nm,qmk->qnk", Ppt, ct)
    Ad = np.einsum("nm,qmk->qnk", Ppt, ctd)
    Add = np.einsum("nm,qmk->qnk", Ppt, ctdd)
    T0 = np.einsum("qnk,qnl->qkl", np.conj(ct), A0)
    # T1 = ct^H (D^H Pp^T + Pp^T D) ct;  ct^H D^H = (D ct)^H.
    T1 = np.einsum("qnk,qnl->qkl", np.conj(ctd), A0) + np.einsum("qnk,qnl->qkl", np.conj(ct), Ad)
    # T2 = ct^H D^H Pp^T D ct + (ct^H (D^2)^H Pp^T ct + ct^H Pp^T D^2 ct) / 2.
    T2 = np.einsum("qnk,qnl->qkl", np.conj(ctd), Ad) + 0.5 * (
        np.einsum("qnk,qnl->qkl", np.conj(ctdd), A0)
        + np.einsum("qnk,qnl->qkl", np.conj(ct), Add)
    )
    Ups = T0.sum(axis=0)
    S1c = np.einsum("q,qkl->kl", cosq, T1)
    S1 = T1.sum(axis=0)
    S2cc = np.einsum("q,qkl->kl", cosq**2, T2)
    S2c = np.einsum("q,qkl->kl", 2.0 * cosq, T2)
    S2 = T2.sum(axis=0)
    return Ups, S1c, S1, S2cc, S2c, S2


def taylor_refine(
    Y: np.ndarray,
    grid: DirectionGrid,
    geom: ArrayGeometry,
    cache: ProjectionCache,
    coarse: CfoEstimate,
    taps: int = 1,
    max_step: float = 0.5,
) -> CalibratedEstimate:
    """One-tap (optionally iterated) adjustment of the coarse offsets on the
    minimum-eigenvalue surface, then the calibration weight at the result.

    Perturbation of the smallest eigenvalue around the expansion point turns
    the eigenvalue surface into an explicit quadratic in the two offset
    residuals; its stationary point is the adjusted estimate.  If the
    curvature system is singular, the update exceeds ``max_step``, or the
    smallest eigenvalue would increase, the coarse estimate is kept and the
    result flagged.
    """
    if not (np.isfinite(coarse.fd_hat) and np.isfinite(coarse.xi_hat)):
        raise NumericalError("non-finite coarse estimate")
    cosq = grid.cos_thetas
    V_all = subarray_responses(geom, grid)
    fd, xi = coarse.fd_hat, coarse.xi_hat
    lam_here = None
    fell_back = False
    for _ in range(max(1, taps)):
        ct = _ctilde(Y, V_all, cosq, fd, xi)
        Ups, S1c, S1, S2cc, S2c, S2 = _tap_sums(ct, cache, cosq)
        lam_here, v = min_eig(Ups)
        t11 = float(np.real(np.conj(v) @ S1c @ v))
        t12 = float(np.real(np.conj(v) @ S1 @ v))
        t21 = float(np.real(np.conj(v) @ S2cc @ v))
        t22 = float(np.real(np.conj(v) @ S2c @ v))
        t23 = float(np.real(np.conj(v) @ S2 @ v))
        H = np.array([[2.0 * t21, t22], [t22, 2.0 * t23]])
        det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
        if not np.isfinite(det) or abs(det) <= 1e-12 * max(abs(H).max() ** 2, 1.0):
            fell_back = True
            break
        step = -np.linalg.solve(H, np.array([t11, t12]))
        if not np.all(np.isfinite(step)) or np.abs(step).max() > max_step:
            fell_back = True
            break
        fd_new, xi_new = fd + step[0], xi + step[1]
        ct_new = _ctilde(Y, V_all, cosq, fd_new, xi_new)
        Pc = np.einsum("nm,qmk->qnk", cache.P_perp.T, ct_new)
        C_new = np.einsum("qnk,qnl->kl", np.conj(ct_new), Pc)
        lam_new, _ = min_eig(0.5 * (C_new + C_new.conj().T))
        if lam_new > lam_here + 1e-9 * max(1.0, lam_here):
            fell_back = True
            break
        fd, xi, lam_here = fd_new, xi_new, lam_new
    C_final = build_cost_matrix(Y, grid, geom, cache, fd, xi)
    lam_final, beta = min_eig(C_final)
    return CalibratedEstimate(
        fd_hat=float(fd),
        xi_hat=float(xi),
        beta_hat=beta,
        per_branch_phi=fd * cosq + xi,
        coarse=coarse,
        fell_back=fell_back,
        lambda_min=lam_final,
    )


def calibrated_pipeline(
    frames: np.ndarray,
    grid: DirectionGrid,
    geom: ArrayGeometry,
    cache: ProjectionCache,
    cfg: OfdmConfig,
    tx_data: np.ndarray | None = None,
    coarse_iters: int = 3,
    tol: float = 1e-6,
    taps: int = 1,
    true_cfo: tuple[float, float] | None = None,
) -> PipelineResult:
    """Full partly-calibrated receive chain on one frame.

    Coarse offsets come from the plain estimator run as if the array were
    calibrated; the one-tap adjustment and the calibration weight follow.
    Channel fitting and data detection then reuse the plain machinery on
    branches formed with the estimated weight.  ``true_cfo`` skips the
    offset estimation (genie benchmark) but still computes the weight.
    """
    Y1 = frames[0]
    if true_cfo is None:
        coarse = newton_estimate(
            beamform_plain(Y1, grid, geom), cache, max_iters=coarse_iters, tol=tol
        )
        est = taylor_refine(Y1, grid, geom, cache, coarse, taps=taps)
    else:
        fd, xi = true_cfo
        lam, beta = min_eig(build_cost_matrix(Y1, grid, geom, cache, fd, xi))
        est = CalibratedEstimate(
            fd_hat=float(fd),
            xi_hat=float(xi),
            beta_hat=beta,
            per_branch_phi=fd * grid.cos_thetas + xi,
            coarse=None,
            fell_back=False,
            lambda_min=lam,
        )
    pilot_branches = beamform_calibrated(Y1, grid, geom, est.beta_hat)
    h_hat = ml_channel(pilot_branches, cache, est)
    detection = None
    if tx_data is not None and cfg.Nb > 1:
        comp = [
            compensate(
                beamform_calibrated(frames[m - 1], grid, geom, est.beta_hat),
                est.per_branch_phi,
                m,
                cfg,
            )
            for m in range(2, cfg.Nb + 1)
        ]
        detection = mrc_detect(comp, h_hat, tx_data)
    return PipelineResult(estimate=est, h_hat=h_hat, detection=detection)
