"""OFDM frame construction, 16-QAM mapping, CFO phase operators, and the
received-signal synthesis at the antenna array."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, subpath_cfo
from .ula import ArrayGeometry, steering_vector


@dataclass(frozen=True)
class OfdmConfig:
    """Subcarrier count N, cyclic prefix length Ncp, blocks per frame Nb.

    Block 1 of every frame is the pilot; blocks 2..Nb carry data.
    """

    N: int
    Ncp: int
    Nb: int = 1

    def __post_init__(self):
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError(f"N={self.N} must be a power of two")
        if self.Ncp < 0:
            raise ValueError("Ncp must be nonnegative")
        if self.Nb < 1:
            raise ValueError("Nb must be >= 1")


# Gray-mapped 16-QAM, unit average energy.  Per axis: 00 -> -3, 01 -> -1,
# 11 -> +1, 10 -> +3 (scaled by 1/sqrt(10)).
_QAM16_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
_GRAY_TO_LEVEL = np.array([0, 1, 3, 2])  # bit pair (b0 b1) as int -> level index
_LEVEL_TO_GRAY = np.argsort(_GRAY_TO_LEVEL)


def qam16_map(bits: np.ndarray) -> np.ndarray:
    """Map a bit array (length divisible by 4) to Gray-coded 16-QAM symbols."""
    bits = np.asarray(bits, dtype=int).ravel()
    if bits.size % 4:
        raise ValueError("bit count must be divisible by 4")
    quad = bits.reshape(-1, 4)
    i_idx = _GRAY_TO_LEVEL[2 * quad[:, 0] + quad[:, 1]]
    q_idx = _GRAY_TO_LEVEL[2 * quad[:, 2] + quad[:, 3]]
    return _QAM16_LEVELS[i_idx] + 1j * _QAM16_LEVELS[q_idx]


def qam16_slice(symbols: np.ndarray) -> np.ndarray:
    """Nearest-constellation decision, returned as exact constellation points."""
    u = np.asarray(symbols)
    i_idx = np.clip(np.round((u.real * np.sqrt(10.0) + 3.0) / 2.0), 0, 3).astype(int)
    q_idx = np.clip(np.round((u.imag * np.sqrt(10.0) + 3.0) / 2.0), 0, 3).astype(int)
    return _QAM16_LEVELS[i_idx] + 1j * _QAM16_LEVELS[q_idx]


def qam16_demap(symbols: np.ndarray) -> np.ndarray:
    """Hard-decision demap back to bits; inverse of :func:`qam16_map` when noiseless."""
    u = np.asarray(symbols).ravel()
    i_idx = np.clip(np.round((u.real * np.sqrt(10.0) + 3.0) / 2.0), 0, 3).astype(int)
    q_idx = np.clip(np.round((u.imag * np.sqrt(10.0) + 3.0) / 2.0), 0, 3).astype(int)
    out = np.empty((u.size, 4), dtype=int)
    gi = _LEVEL_TO_GRAY[i_idx]
    gq = _LEVEL_TO_GRAY[q_idx]
    out[:, 0] = gi >> 1
    out[:, 1] = gi & 1
    out[:, 2] = gq >> 1
    out[:, 3] = gq & 1
    return out.ravel()


def random_qam16(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform random 16-QAM symbols (pilot and data alike)."""
    idx = rng.integers(0, 4, size=(2,) + tuple(np.atleast_1d(shape)))
    return _QAM16_LEVELS[idx[0]] + 1j * _QAM16_LEVELS[idx[1]]


def random_frame_symbols(cfg: OfdmConfig, rng: np.random.Generator) -> np.ndarray:
    """Nb x N frequency-domain frame; row 0 is the pilot block."""
    return random_qam16((cfg.Nb, cfg.N), rng)


def conv_matrix(x: np.ndarray, L: int) -> np.ndarray:
    """N x L matrix B mapping channel taps to received time samples.

    B = sqrt(N) * F^H * diag(x) * F_L with F the unitary DFT, so B @ h is
    the circular convolution of the block's time samples with the
    zero-padded tap vector h.
    """
    x = np.asarray(x)
    N = x.size
    # Column l is the block's time samples circularly shifted by l:
    # sqrt(N) * ifft(x_n * exp(-2j*pi*n*l/N)).
    shifts = np.exp(-2j * np.pi * np.outer(np.arange(N), np.arange(L)) / N)
    return np.sqrt(N) * np.fft.ifft(x[:, None] * shifts, axis=0)


def phase_rotation(phi: float, N: int) -> np.ndarray:
    """Diagonal of the in-block rotation E(phi): exp(j*2*pi*phi*n/N), n=0..N-1."""
    return np.exp(2j * np.pi * phi * np.arange(N) / N)


def block_phase(phi: float, m: int, cfg: OfdmConfig) -> complex:
    """Phase accumulated by block m (1-based) including its cyclic prefix."""
    if m < 1:
        raise ValueError("block index is 1-based")
    return np.exp(2j * np.pi * phi * (m - 1) * (cfg.N + cfg.Ncp) / cfg.N)


def time_domain(x: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT of a frequency-domain block: s = F^H x."""
    return np.sqrt(x.shape[-1]) * np.fft.ifft(x, axis=-1)


def synthesize_frame(
    geom: ArrayGeometry,
    alpha: np.ndarray,
    chan: ChannelRealization,
    fd: float,
    xi: float,
    symbols: np.ndarray,
    noise_var: float,
    rng: np.random.Generator,
    cfg: OfdmConfig,
) -> np.ndarray:
    """Received frame at the array: (Nb, N, M) with CP already removed.

    Each subpath contributes its circularly convolved block, rotated by its
    own superimposed CFO inside the block and across blocks, times the
    (possibly mismatched) steering row.  Noise is i.i.d. CN(0, noise_var)
    per entry; per-antenna receive SNR is therefore 1 / noise_var.
    """
    symbols = np.atleast_2d(symbols)
    Nb, N = symbols.shape
    if Nb != cfg.Nb or N != cfg.N:
        raise ValueError(f"symbols shape {symbols.shape} does not match cfg ({cfg.Nb}, {cfg.N})")
    L, P = chan.L, chan.P
    if cfg.Ncp < L - 1:
        raise ValueError(f"Ncp={cfg.Ncp} < L-1={L - 1}: inter-block interference")

    phis = subpath_cfo(fd, xi, chan.aoas).ravel()  # length L*P
    cos_aoas = np.cos(chan.aoas).ravel()
    # Actual steering rows a^T(theta, mismatch) for every subpath.
    w = np.repeat(np.asarray(alpha), geom.J)
    A = w * np.exp(2j * geom.chi * np.outer(cos_aoas, np.arange(geom.M)))  # (L*P, M)
    E = np.exp(2j * np.pi * np.outer(np.arange(N), phis) / N)  # (N, L*P)
    tap_of = np.repeat(np.arange(L), P)
    g = chan.gains.ravel()

    out = np.empty((Nb, N, geom.M), dtype=complex)
    for m in range(1, Nb + 1):
        B = conv_matrix(symbols[m - 1], L)
        eta = np.exp(2j * np.pi * phis * (m - 1) * (N + cfg.Ncp) / N)
        S = E * B[:, tap_of] * (eta * g)  # (N, L*P): per-subpath received block
        Y = S @ A
        if noise_var > 0:
            Y = Y + np.sqrt(noise_var / 2.0) * (
                rng.standard_normal((N, geom.M)) + 1j * rng.standard_normal((N, geom.M))
            )
        out[m - 1] = Y
    return out
