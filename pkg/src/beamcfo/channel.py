"""Doubly selective multipath channel: L delay taps, each a sum of P subpaths.

Every subpath carries an independent complex gain and its own angle of
arrival, hence its own Doppler shift.  One realization stays constant over
a whole OFDM frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class PowerDelayProfile:
    """Per-tap average powers sigma_l^2, normalized to unit total gain."""

    sigma2: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma2, dtype=float)
        object.__setattr__(self, "sigma2", s)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("sigma2 must be a non-empty 1-D array")
        if np.any(s < 0):
            raise ValueError("tap powers must be nonnegative")
        if abs(s.sum() - 1.0) > 1e-12:
            raise ValueError(f"tap powers must sum to 1, got {s.sum()!r}")

    @property
    def L(self) -> int:
        return self.sigma2.size

    @classmethod
    def uniform(cls, L: int) -> "PowerDelayProfile":
        return cls(np.full(L, 1.0 / L))

    @classmethod
    def exponential(cls, L: int, decay: float = 1.0) -> "PowerDelayProfile":
        """Exponentially decaying profile, sigma_l^2 proportional to exp(-l/decay)."""
        s = np.exp(-np.arange(L) / decay)
        return cls(s / s.sum())


@dataclass(frozen=True)
class ChannelRealization:
    """L x P complex subpath gains and matching angles of arrival (radians)."""

    gains: np.ndarray
    aoas: np.ndarray

    def __post_init__(self):
        if self.gains.shape != self.aoas.shape or self.gains.ndim != 2:
            raise ValueError("gains and aoas must share an (L, P) shape")

    @property
    def L(self) -> int:
        return self.gains.shape[0]

    @property
    def P(self) -> int:
        return self.gains.shape[1]


def sample_channel(
    pdp: PowerDelayProfile,
    P: int,
    rng: np.random.Generator,
    aoa_mode: str = "random",
) -> ChannelRealization:
    """Draw one frame's channel realization.

    Gains are i.i.d. circular complex Gaussian with variance sigma_l^2 / P
    per tap.  ``aoa_mode`` is ``"random"`` (AoAs uniform on [0, 2*pi)) or
    ``"grid"`` (every tap sees the common set 2*pi*p/P, p=1..P, the layout
    assumed by the closed-form error analysis).
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    L = pdp.L
    scale = np.sqrt(pdp.sigma2 / (2.0 * P))[:, None]
    gains = scale * (rng.standard_normal((L, P)) + 1j * rng.standard_normal((L, P)))
    if aoa_mode == "random":
        aoas = rng.uniform(0.0, 2.0 * np.pi, (L, P))
    elif aoa_mode == "grid":
        aoas = np.broadcast_to(2.0 * np.pi * np.arange(1, P + 1) / P, (L, P)).copy()
    else:
        raise ValueError(f"unknown aoa_mode {aoa_mode!r}")
    return ChannelRealization(gains=gains, aoas=aoas)


def subpath_cfo(fd: float, xi: float, theta) -> np.ndarray | float:
    """Superimposed normalized CFO fd * cos(theta) + xi of one subpath."""
    return fd * np.cos(theta) + xi


def normalized_doppler(speed_kmh: float, carrier_hz: float, block_s: float) -> float:
    """Maximum Doppler shift normalized by the subcarrier spacing 1 / block_s."""
    return (speed_kmh / 3.6) * carrier_hz / SPEED_OF_LIGHT * block_s
