"""Joint Doppler/oscillator-offset estimation for the fully calibrated array.

The estimator minimizes the summed per-branch projection residual

    g(fd, xi) = sum_q || P_perp E^H(fd cos(theta_q) + xi) z(theta_q) ||^2

over the two normalized frequencies, using damped Newton steps on its
second-order expansion.  A single branch cannot separate the two offsets
(any pair with the same superimposed CFO fits equally well); at least two
distinct cos(theta_q) are required.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamforming import BranchSignals, beamform_plain
from .ofdm import OfdmConfig, qam16_slice
from .ula import ArrayGeometry, DirectionGrid


class EstimationError(Exception):
    """Base class for recoverable per-trial estimation failures."""


class DegenerateGeometryError(EstimationError):
    """The branch geometry cannot separate Doppler from oscillator offset."""


class NumericalError(EstimationError):
    """Non-finite cost or matrix entries encountered."""


@dataclass(frozen=True)
class ProjectionCache:
    """Pilot-dependent operators reused across branches and iterations.

    ``P_perp`` projects onto the orthogonal complement of the pilot
    convolution matrix's column space; ``d_diag`` holds the diagonal of the
    derivative operator D = j*(2*pi/N)*diag(0..N-1).
    """

    B: np.ndarray
    B_pinv: np.ndarray
    P_perp: np.ndarray
    d_diag: np.ndarray

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @property
    def L(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class CfoEstimate:
    """Joint estimate of the normalized maximum DFO and the normalized OFO."""

    fd_hat: float
    xi_hat: float
    per_branch_phi: np.ndarray
    iterations_run: int


def build_projection(B: np.ndarray) -> ProjectionCache:
    """Precompute B's pseudo-inverse and the complement projector I - B B^+."""
    B = np.asarray(B)
    N, L = B.shape
    if np.linalg.matrix_rank(B) < L:
        raise ValueError("pilot convolution matrix is rank deficient")
    B_pinv = np.linalg.pinv(B)
    P_perp = np.eye(N) - B @ B_pinv
    d_diag = 1j * 2.0 * np.pi / N * np.arange(N)
    return ProjectionCache(B=B, B_pinv=B_pinv, P_perp=P_perp, d_diag=d_diag)


def _derotated(branches: BranchSignals, fd: float, xi: float) -> np.ndarray:
    phis = fd * branches.grid.cos_thetas + xi
    n = np.arange(branches.N)
    return branches.z * np.exp(-2j * np.pi * np.outer(phis, n) / branches.N)


def cost(fd: float, xi: float, branches: BranchSignals, cache: ProjectionCache) -> float:
    """Exact (non-expanded) projection cost at the trial offset pair."""
    zh = _derotated(branches, fd, xi)
    return float(np.sum(np.abs(zh @ cache.P_perp.T) ** 2).real)


def newton_estimate(
    branches: BranchSignals,
    cache: ProjectionCache,
    max_iters: int = 3,
    tol: float = 1e-6,
) -> CfoEstimate:
    """Damped Newton iteration on the joint projection cost from (0, 0).

    Each iteration solves the 2x2 system built from the per-branch
    quadratic expansion coefficients; if the proposed step increases the
    exact cost it is halved up to five times, after which the iteration
    stops at the last accepted point.
    """
    grid = branches.grid
    cosq = grid.cos_thetas
    if np.unique(np.round(cosq, 12)).size < 2:
        raise DegenerateGeometryError("need >= 2 distinct cos(theta_q) branches")
    fd, xi = 0.0, 0.0
    c_now = cost(fd, xi, branches, cache)
    if not np.isfinite(c_now):
        raise NumericalError("non-finite cost on input branches")
    Ppt = cache.P_perp.T
    d = cache.d_diag
    iters = 0
    for _ in range(max_iters):
        zh = _derotated(branches, fd, xi)
        zd = zh * d
        A0 = zh @ Ppt
        Ad = zd @ Ppt
        # T1 = 2 Re{z^H D P z}, T2 = Re{z^H D^2 P z} + z^H D P D^H z (per branch).
        T1 = -2.0 * np.real(np.sum(np.conj(zd) * A0, axis=1))
        T2 = np.real(np.sum(np.conj(zh * d**2) * A0, axis=1)) + np.sum(np.abs(Ad) ** 2, axis=1)
        t11 = float(np.dot(cosq, T1))
        t12 = float(np.sum(T1))
        t21 = float(np.dot(cosq**2, T2))
        t22 = float(2.0 * np.dot(cosq, T2))
        t23 = float(np.sum(T2))
        H = np.array([[2.0 * t21, t22], [t22, 2.0 * t23]])
        rhs = np.array([t11, t12])
        det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
        if not np.isfinite(det) or abs(det) <= 1e-12 * max(abs(H).max() ** 2, 1.0):
            raise DegenerateGeometryError("singular curvature system")
        step = -np.linalg.solve(H, rhs)
        if not np.all(np.isfinite(step)):
            raise NumericalError("non-finite Newton step")
        scale = 1.0
        for _ in range(5):
            c_new = cost(fd + scale * step[0], xi + scale * step[1], branches, cache)
            if c_new <= c_now:
                break
            scale /= 2.0
        else:
            break  # cost cannot be decreased along this direction
        fd += scale * step[0]
        xi += scale * step[1]
        c_now = c_new
        iters += 1
        if abs(scale * step[0]) < tol and abs(scale * step[1]) < tol:
            break
    return CfoEstimate(
        fd_hat=float(fd),
        xi_hat=float(xi),
        per_branch_phi=fd * cosq + xi,
        iterations_run=iters,
    )


def ml_channel(branches: BranchSignals, cache: ProjectionCache, est: CfoEstimate) -> np.ndarray:
    """Per-branch least-squares impulse responses, shape (Q, L).

    Row q is B^+ E^H(phi_q) z(theta_q): the tap vector whose convolution
    best explains the derotated branch.
    """
    if not (np.isfinite(est.fd_hat) and np.isfinite(est.xi_hat)):
        raise NumericalError("non-finite CFO estimate")
    zh = _derotated(branches, est.fd_hat, est.xi_hat)
    return zh @ cache.B_pinv.T


def compensate(
    branches: BranchSignals,
    per_branch_phi: np.ndarray,
    m: int,
    cfg: OfdmConfig,
) -> BranchSignals:
    """Undo block-m phase accumulation and in-block rotation at each branch's CFO."""
    if m < 1:
        raise ValueError("block index is 1-based")
    phis = np.asarray(per_branch_phi)
    n = np.arange(branches.N)
    rot = np.exp(-2j * np.pi * np.outer(phis, n) / branches.N)
    eta = np.exp(-2j * np.pi * phis * (m - 1) * (cfg.N + cfg.Ncp) / cfg.N)
    return BranchSignals(z=branches.z * rot * eta[:, None], grid=branches.grid)


@dataclass(frozen=True)
class DetectionResult:
    """Hard decisions plus symbol-error accounting for blocks 2..Nb."""

    symbols: np.ndarray  # (Nb-1, N) sliced constellation points
    errors: int
    erasures: int
    total: int

    @property
    def ser(self) -> float:
        return self.errors / self.total if self.total else 0.0


def mrc_detect(
    compensated: list[BranchSignals],
    h_hat: np.ndarray,
    tx_symbols: np.ndarray,
    denom_tol: float = 1e-12,
) -> DetectionResult:
    """Maximum-ratio combining across branches, then nearest-symbol decisions.

    Per subcarrier k the combiner forms sum_q conj(H_qk) Z_qk divided by
    sum_q |H_qk|^2, with H_q the length-N DFT of branch q's estimated taps
    and Z_q the unitary DFT of its compensated block.  Subcarriers whose
    combining denominator vanishes are flagged erasures and counted as
    symbol errors.
    """
    tx_symbols = np.atleast_2d(tx_symbols)
    n_blocks = len(compensated)
    if tx_symbols.shape[0] != n_blocks:
        raise ValueError("one reference symbol row per compensated block required")
    N = compensated[0].N
    H = np.fft.fft(h_hat, n=N, axis=1)  # (Q, N); matches the sqrt(N) F^H diag(x) F_L scaling
    den = np.sum(np.abs(H) ** 2, axis=0)
    erased = den < denom_tol
    den_safe = np.where(erased, 1.0, den)
    out = np.empty((n_blocks, N), dtype=complex)
    errors = 0
    for i, br in enumerate(compensated):
        Z = np.fft.fft(br.z, axis=1) / np.sqrt(N)
        x_hat = np.sum(np.conj(H) * Z, axis=0) / den_safe
        dec = qam16_slice(x_hat)
        out[i] = np.where(erased, np.nan + 1j * np.nan, dec)
        wrong = dec != qam16_slice(tx_symbols[i])
        errors += int(np.sum(wrong | erased))
    return DetectionResult(
        symbols=out,
        errors=errors,
        erasures=int(erased.sum()) * n_blocks,
        total=n_blocks * N,
    )


@dataclass(frozen=True)
class PipelineResult:
    """Everything one receive chain produces from a frame."""

    estimate: object  # CfoEstimate or CalibratedEstimate
    h_hat: np.ndarray
    detection: DetectionResult | None


def plain_pipeline(
    frames: np.ndarray,
    grid: DirectionGrid,
    geom: ArrayGeometry,
    cache: ProjectionCache,
    cfg: OfdmConfig,
    tx_data: np.ndarray | None = None,
    max_iters: int = 3,
    tol: float = 1e-6,
    true_cfo: tuple[float, float] | None = None,
) -> PipelineResult:
    """Full fully-calibrated receive chain on one frame.

    Beamform the pilot, estimate the offsets (or take them as given via
    ``true_cfo`` for the genie benchmark), fit per-branch channels, then
    compensate and combine the data blocks when ``tx_data`` (rows for
    blocks 2..Nb) is provided.
    """
    pilot_branches = beamform_plain(frames[0], grid, geom)
    if true_cfo is None:
        est = newton_estimate(pilot_branches, cache, max_iters=max_iters, tol=tol)
    else:
        fd, xi = true_cfo
        est = CfoEstimate(
            fd_hat=float(fd),
            xi_hat=float(xi),
            per_branch_phi=fd * grid.cos_thetas + xi,
            iterations_run=0,
        )
    h_hat = ml_channel(pilot_branches, cache, est)
    detection = None
    if tx_data is not None and cfg.Nb > 1:
        comp = [
            compensate(beamform_plain(frames[m - 1], grid, geom), est.per_branch_phi, m, cfg)
            for m in range(2, cfg.Nb + 1)
        ]
        detection = mrc_detect(comp, h_hat, tx_data)
    return PipelineResult(estimate=est, h_hat=h_hat, detection=detection)
