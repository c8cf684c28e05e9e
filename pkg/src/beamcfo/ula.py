"""Uniform linear array geometry, steering vectors, and beamforming direction grids.

Angles are measured from the array axis, so the spatial frequency of an
incoming plane wave is proportional to cos(theta).  All public interfaces
take radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Receive ULA evenly split into K individually calibrated subarrays.

    Parameters
    ----------
    M : int
        Total antenna count.
    K : int
        Subarray count; must divide M.  K=1 models a fully calibrated array.
    d_tilde : float
        Antenna spacing in wavelengths, 0 < d_tilde <= 0.5.
    """

    M: int
    K: int = 1
    d_tilde: float = 0.45

    def __post_init__(self):
        if self.M <= 0 or self.K <= 0:
            raise ValueError("M and K must be positive")
        if self.M % self.K:
            raise ValueError(f"K={self.K} must divide M={self.M}")
        if not 0.0 < self.d_tilde <= 0.5:
            raise ValueError(f"d_tilde={self.d_tilde} outside (0, 0.5]")

    @property
    def J(self) -> int:
        """Antennas per subarray."""
        return self.M // self.K

    @property
    def chi(self) -> float:
        """Phase constant pi * d_tilde (radians per unit cos-angle per element)."""
        return np.pi * self.d_tilde


@dataclass(frozen=True)
class DirectionGrid:
    """Fixed set of beamforming directions, ordered by ascending cos(theta).

    ``fft_bins`` is set when the grid comes from :func:`fft_direction_grid`;
    it holds the DFT bin index of each direction so beamforming can run
    through an FFT.
    """

    thetas: np.ndarray
    fft_bins: np.ndarray | None = None

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        object.__setattr__(self, "thetas", thetas)
        if thetas.ndim != 1 or thetas.size == 0:
            raise ValueError("thetas must be a non-empty 1-D array")
        if np.any(thetas < 0) or np.any(thetas > np.pi):
            raise ValueError("grid angles must lie in [0, pi]")
        if np.any(np.diff(np.cos(thetas)) <= 0):
            raise ValueError("grid must be strictly increasing in cos(theta)")

    @property
    def Q(self) -> int:
        return self.thetas.size

    @property
    def cos_thetas(self) -> np.ndarray:
        return np.cos(self.thetas)


def steering_vector(geom: ArrayGeometry, theta: float) -> np.ndarray:
    """Response of the perfectly calibrated array towards ``theta``.

    Element r (1-based) is exp(j * 2 * chi * (r-1) * cos(theta)).
    """
    return np.exp(2j * geom.chi * np.arange(geom.M) * np.cos(theta))


def mismatched_steering(geom: ArrayGeometry, theta: float, alpha: np.ndarray) -> np.ndarray:
    """Steering vector with per-subarray gain/phase mismatches applied.

    Antenna r belongs to subarray ceil(r / J); its response is scaled by
    that subarray's complex mismatch ``alpha[k]``.  With ``alpha`` all ones
    this reduces to :func:`steering_vector`.
    """
    alpha = np.asarray(alpha)
    if alpha.shape != (geom.K,):
        raise ValueError(f"alpha must have length K={geom.K}, got shape {alpha.shape}")
    return np.repeat(alpha, geom.J) * steering_vector(geom, theta)


def subarray_response(geom: ArrayGeometry, theta: float) -> np.ndarray:
    """M x K block-diagonal response matrix V(theta).

    Column k holds the steering entries of subarray k and is zero elsewhere,
    so V(theta) @ alpha equals :func:`mismatched_steering` and
    V(theta) @ ones(K) equals :func:`steering_vector`.
    """
    a = steering_vector(geom, theta)
    V = np.zeros((geom.M, geom.K), dtype=complex)
    for k in range(geom.K):
        sl = slice(k * geom.J, (k + 1) * geom.J)
        V[sl, k] = a[sl]
    return V


def sample_mismatch(K: int, sigma_alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a length-K inter-subarray mismatch vector.

    Magnitudes are i.i.d. uniform on
    [sqrt(1 - sigma_alpha^2) - sqrt(3)*sigma_alpha,
     sqrt(1 - sigma_alpha^2) + sqrt(3)*sigma_alpha], which makes
    E{|alpha_k|^2} = 1 exactly.  Phases are uniform on [0, 2*pi); the
    magnitude distribution is the modelled quantity, the phase is a
    direction-independent unknown.
    """
    if not 0.0 <= sigma_alpha < 1.0:
        raise ValueError(f"sigma_alpha={sigma_alpha} outside [0, 1)")
    center = np.sqrt(1.0 - sigma_alpha**2)
    half = np.sqrt(3.0) * sigma_alpha
    if center - half < 0:
        raise ValueError(f"sigma_alpha={sigma_alpha} puts the magnitude range below zero")
    mag = rng.uniform(center - half, center + half, K)
    phase = rng.uniform(0.0, 2.0 * np.pi, K)
    return mag * np.exp(1j * phase)


# |alpha_k| ~ U(0.8, 1.1875), the partly calibrated simulation setting.
DEFAULT_SIGMA_ALPHA = float(0.19375 / np.sqrt(3.0))


def fft_direction_grid(geom: ArrayGeometry) -> DirectionGrid:
    """Directions whose normalized beamformers are inverse-DFT columns.

    Bin r (1-based) maps to cos(theta) = (1/d_tilde) * ((r-1)/M - 1/2);
    only bins with |cos| <= 1 correspond to physical angles, so Q < M when
    d_tilde < 0.5.  The boundary |cos| = 1 is kept (at d_tilde = 0.5 bin 1
    lands exactly on the endfire angle pi; the aliased direction 0 never
    appears because bin M+1 is out of range).
    """
    r = np.arange(1, geom.M + 1)
    c = (1.0 / geom.d_tilde) * ((r - 1) / geom.M - 0.5)
    keep = np.abs(c) <= 1.0 + 1e-12
    thetas = np.arccos(np.clip(c[keep], -1.0, 1.0))
    return DirectionGrid(thetas=thetas, fft_bins=r[keep] - 1)
