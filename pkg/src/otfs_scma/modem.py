"""OTFS modulation chain with rectangular transmit/receive pulses.

The delay-Doppler frame is carried to the time domain through an ISFFT
followed by a Heisenberg transform; the receiver inverts the chain with a
Wigner transform and an SFFT.  With rectangular pulses both mid stages
reduce to block-wise normalized (I)DFTs, so the whole chain is unitary.
"""

from dataclasses import dataclass

import numpy as np

from .grid import OtfsGrid


@dataclass(frozen=True)
class TimeDomainSignal:
    """Time-domain frame: MN payload samples plus a cyclic-prefix length.

    The prefix always duplicates the last ``cp_len`` payload samples, so only
    its length is stored; ``with_cp`` materializes the full sample stream.
    """

    samples: np.ndarray
    cp_len: int = 0

    def __post_init__(self):
        if self.cp_len < 0:
            raise ValueError("cp_len must be non-negative")
        if self.cp_len > len(self.samples):
            raise ValueError("cp_len may not exceed the payload length")

    @property
    def with_cp(self) -> np.ndarray:
        if self.cp_len == 0:
            return self.samples
        return np.concatenate([self.samples[-self.cp_len:], self.samples])

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


def _check_frame(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2:
        raise ValueError("expected an M x N frame")
    if not np.all(np.isfinite(x)):
        raise ValueError("frame contains non-finite entries")
    return x


def isfft(x: np.ndarray) -> np.ndarray:
    """Inverse symplectic finite Fourier transform: F_M @ X @ F_N^H."""
    x = _check_frame(x)
    return np.fft.ifft(np.fft.fft(x, axis=0, norm="ortho"), axis=1, norm="ortho")


def sfft(y: np.ndarray) -> np.ndarray:
    """Symplectic finite Fourier transform: F_M^H @ Y @ F_N (inverse of isfft)."""
    y = _check_frame(y)
    return np.fft.fft(np.fft.ifft(y, axis=0, norm="ortho"), axis=1, norm="ortho")


def heisenberg(x_tf: np.ndarray, grid: OtfsGrid) -> TimeDomainSignal:
    """Time-frequency frame to time domain with a rectangular pulse.

    Sample c = n*M + m' of the output is the normalized M-point inverse DFT
    of time-frequency column n evaluated at m'.
    """
    x_tf = _check_frame(x_tf)
    if x_tf.shape != (grid.m, grid.n):
        raise ValueError(f"frame shape {x_tf.shape} does not match grid")
    blocks = np.fft.ifft(x_tf, axis=0, norm="ortho")
    return TimeDomainSignal(blocks.reshape(-1, order="F"), cp_len=0)


def wigner(r: TimeDomainSignal, grid: OtfsGrid) -> np.ndarray:
    """Time domain back to the time-frequency frame (inverse of heisenberg)."""
    samples = np.asarray(r.samples, dtype=complex)
    if samples.size != grid.num_samples:
        raise ValueError("payload length does not match grid")
    blocks = samples.reshape(grid.m, grid.n, order="F")
    return np.fft.fft(blocks, axis=0, norm="ortho")


def add_cp(s: TimeDomainSignal, cp_len: int) -> TimeDomainSignal:
    """Prefix the signal with a copy of its last cp_len samples."""
    return TimeDomainSignal(s.samples, cp_len=cp_len)


def remove_cp(r: TimeDomainSignal) -> TimeDomainSignal:
    """Strip the cyclic prefix; exact inverse of add_cp."""
    return TimeDomainSignal(r.samples, cp_len=0)


def modulate(x: np.ndarray, grid: OtfsGrid) -> TimeDomainSignal:
    """Full transmit chain: ISFFT, Heisenberg transform, cyclic prefix."""
    return add_cp(heisenberg(isfft(x), grid), grid.cp_len)


def demodulate(r: TimeDomainSignal, grid: OtfsGrid) -> np.ndarray:
    """Full receive chain: CP removal, Wigner transform, SFFT."""
    return sfft(wigner(remove_cp(r), grid))
