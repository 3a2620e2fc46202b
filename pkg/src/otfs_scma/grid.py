"""Delay-Doppler grid geometry shared by all transceiver stages."""

from dataclasses import dataclass


@dataclass(frozen=True)
class OtfsGrid:
    """Geometry of the M x N delay-Doppler lattice.

    Parameters
    ----------
    m : int
        Number of delay bins (subcarriers).
    n : int
        Number of Doppler bins (time intervals per frame).
    delta_f : float
        Subcarrier spacing in Hz.
    cp_len : int
        Cyclic-prefix length in samples.
    """

    m: int
    n: int
    delta_f: float
    cp_len: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("grid dimensions must be positive")
        if self.delta_f <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.cp_len < 0:
            raise ValueError("cp_len must be non-negative")
        if self.cp_len > self.m * self.n:
            raise ValueError("cp_len may not exceed the payload length M*N")

    @property
    def t_sym(self) -> float:
        """Symbol interval T = 1/delta_f in seconds."""
        return 1.0 / self.delta_f

    @property
    def ts(self) -> float:
        """Sample interval Ts = 1/(M*delta_f) in seconds."""
        return 1.0 / (self.m * self.delta_f)

    @property
    def num_samples(self) -> int:
        """Payload length M*N in samples."""
        return self.m * self.n

    @property
    def bandwidth(self) -> float:
        """Occupied bandwidth M*delta_f in Hz."""
        return self.m * self.delta_f

    @property
    def frame_duration(self) -> float:
        """Payload duration N*T in seconds."""
        return self.n * self.t_sym
