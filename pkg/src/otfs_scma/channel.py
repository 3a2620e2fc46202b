"""Doubly-selective multipath channels between users and receive chains.

Two equivalent representations of the same channel are provided:

* :func:`apply_time_domain` runs the physical time-domain convolution with
  time-varying taps (the ground-truth path), and
* :func:`build_dd_matrix` assembles the exact sparse delay-Doppler
  input-output matrix, including inter-Doppler leakage from fractional
  Doppler shifts and the raised-cosine pulse spreading fractional delays
  over neighbouring taps.

Both paths agree to numerical precision; the matrix path is what the
detectors consume.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .grid import OtfsGrid
from .modem import TimeDomainSignal

SPEED_OF_LIGHT = 3.0e8  # m/s

# pulse samples below this magnitude are dropped from the tap model
PULSE_THRESHOLD = 1e-3


class InterFrameInterferenceError(ValueError):
    """Raised when the cyclic prefix cannot absorb the channel memory."""


def pathloss_db(d_km: float) -> float:
    """Distance-dependent pathloss in dB for a distance in kilometers."""
    if d_km <= 0:
        raise ValueError("distance must be positive")
    return 142.1 + 37.6 * math.log10(d_km)


def pathloss_amplitude(pl_db: float) -> float:
    """Linear amplitude factor applied to a signal under pl_db of loss."""
    return 10.0 ** (-pl_db / 20.0)


def max_doppler_hz(velocity_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler shift of a user at the given speed and carrier."""
    return velocity_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def split_doppler(cycles: float) -> tuple[int, float]:
    """Split a Doppler shift in grid cycles into index and fraction.

    Returns (k, beta) with k integer, beta in (-0.5, 0.5], and
    k + beta == cycles exactly.
    """
    k = math.ceil(cycles - 0.5)
    return k, cycles - k


def jakes_doppler(
    v_max_hz: float, toward: bool, grid: OtfsGrid, rng: np.random.Generator
) -> tuple[float, int, float]:
    """Draw one path's Doppler shift from the Jakes angular model.

    The arrival angle is uniform on [0, pi/2] when the user moves toward
    the receiver and on [pi/2, pi] when it moves away, so the shift
    v_max*cos(angle) is non-negative resp. non-positive.

    Returns (nu_hz, k, beta).
    """
    if v_max_hz < 0:
        raise ValueError("maximum Doppler must be non-negative")
    lo, hi = (0.0, np.pi / 2) if toward else (np.pi / 2, np.pi)
    angle = rng.uniform(lo, hi)
    nu = v_max_hz * math.cos(angle)
    cycles = nu * grid.n * grid.t_sym
    k, beta = split_doppler(cycles)
    return nu, k, beta


def rc_pulse(tau, rolloff: float, ts: float):
    """Raised-cosine pulse value at time offset tau (seconds).

    Unit peak at tau = 0, zero crossings at non-zero integer multiples of
    ts; the removable singularity at tau = +-ts/(2*rolloff) is evaluated
    by its analytic limit.
    """
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must lie in (0, 1]")
    x = np.asarray(tau, dtype=float) / ts
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - (2.0 * rolloff * x) ** 2
        val = np.sinc(x) * np.cos(np.pi * rolloff * x) / denom
    limit = np.pi / 4.0 * np.sinc(1.0 / (2.0 * rolloff))
    val = np.where(np.abs(denom) < 1e-12, limit, val)
    return val if val.ndim else float(val)


@dataclass(frozen=True)
class ChannelProfile:
    """Power-delay profile and pulse configuration.

    ``delays_s``/``powers`` of None select the default profile: L taps at
    delays {0, 2, 4, ...} * Ts with exponentially decaying (or uniform)
    powers normalized to unit total.
    """

    num_paths: int = 4
    delays_s: tuple[float, ...] | None = None
    powers: tuple[float, ...] | None = None
    rolloff: float = 0.4
    pulse_span: int = 4
    timing_offset_max: float = 0.0
    profile_mode: str = "exponential"  # or "uniform"

    def resolve(self, grid: OtfsGrid) -> tuple[np.ndarray, np.ndarray]:
        """Concrete per-path delays and powers for a given grid."""
        if self.num_paths < 1:
            raise ValueError("need at least one path")
        if self.delays_s is not None:
            delays = np.asarray(self.delays_s, dtype=float)
            if len(delays) < self.num_paths:
                raise ValueError("delay profile shorter than the path count")
            delays = delays[: self.num_paths]
        else:
            delays = 2.0 * grid.ts * np.arange(self.num_paths)
        if self.powers is not None:
            powers = np.asarray(self.powers, dtype=float)
            if len(powers) < self.num_paths:
                raise ValueError("power profile shorter than the path count")
            powers = powers[: self.num_paths]
        elif self.profile_mode == "uniform":
            powers = np.ones(self.num_paths)
        elif self.profile_mode == "exponential":
            powers = np.exp(-np.arange(self.num_paths, dtype=float))
        else:
            raise ValueError(f"unknown profile mode {self.profile_mode!r}")
        if np.any(powers <= 0):
            raise ValueError("path powers must be positive")
        return delays, powers / powers.sum()


@dataclass(frozen=True)
class MultipathChannel:
    """One realized link: taps, Doppler shifts, timing offset, pathloss.

    ``doppler_cycles`` holds the shifts normalized to the Doppler bin
    spacing 1/(N*T); ``doppler_idx + doppler_frac == doppler_cycles``
    exactly, with the fraction in (-0.5, 0.5].
    """

    gains: np.ndarray
    delays: np.ndarray
    doppler_cycles: np.ndarray
    doppler_idx: np.ndarray
    doppler_frac: np.ndarray
    timing_offset: float
    num_taps: int
    pathloss_db: float
    rolloff: float = 0.4

    @property
    def num_paths(self) -> int:
        return len(self.gains)

    def nu_hz(self, grid: OtfsGrid) -> np.ndarray:
        """Per-path Doppler shifts in Hz."""
        return self.doppler_cycles / (grid.n * grid.t_sym)


def generate_channel(
    distance_m: float,
    toward: bool,
    profile: ChannelProfile,
    grid: OtfsGrid,
    v_max_hz: float,
    rng: np.random.Generator,
    pathloss_override_db: float | None = None,
) -> MultipathChannel:
    """Draw one multipath channel realization.

    Path gains are complex Gaussian with variances from the normalized
    power profile; Doppler shifts follow the Jakes model with the sign
    fixed by the travel direction relative to the receiver.

    The draw order (gains, then Doppler angles, then timing offset) is
    fixed so seeded runs are reproducible.
    """
    delays, powers = profile.resolve(grid)
    n_paths = profile.num_paths
    gains = np.sqrt(powers / 2.0) * (
        rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)
    )
    cycles = np.empty(n_paths)
    k_idx = np.empty(n_paths, dtype=int)
    beta = np.empty(n_paths)
    for i in range(n_paths):
        _, k_idx[i], beta[i] = jakes_doppler(v_max_hz, toward, grid, rng)
        cycles[i] = k_idx[i] + beta[i]
    t_off = (
        float(rng.uniform(0.0, profile.timing_offset_max))
        if profile.timing_offset_max > 0
        else 0.0
    )
    num_taps = math.ceil((t_off + delays.max()) / grid.ts) + profile.pulse_span
    pl_db = (
        pathloss_override_db
        if pathloss_override_db is not None
        else pathloss_db(distance_m / 1000.0)
    )
    return MultipathChannel(
        gains=gains,
        delays=delays,
        doppler_cycles=cycles,
        doppler_idx=k_idx,
        doppler_frac=beta,
        timing_offset=t_off,
        num_taps=num_taps,
        pathloss_db=pl_db,
        rolloff=profile.rolloff,
    )


def _pulse_taps(
    ch: MultipathChannel, grid: OtfsGrid
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per path, the (tap indices, pulse weights) above the threshold."""
    p = np.arange(ch.num_taps)
    taps = []
    for i in range(ch.num_paths):
        w = rc_pulse(p * grid.ts - ch.timing_offset - ch.delays[i], ch.rolloff, grid.ts)
        keep = np.abs(w) >= PULSE_THRESHOLD
        taps.append((p[keep], w[keep]))
    return taps


def apply_time_domain(
    signal: TimeDomainSignal, ch: MultipathChannel, grid: OtfsGrid
) -> TimeDomainSignal:
    """Pass a CP-protected frame through the channel in the time domain.

    The cyclic prefix must cover the channel memory (cp_len >= P - 1); the
    returned signal is the payload after CP discard at the receiver, which
    then equals a cyclic convolution with the time-varying taps.
    """
    if signal.cp_len < ch.num_taps - 1:
        raise InterFrameInterferenceError(
            f"cp_len={signal.cp_len} cannot absorb {ch.num_taps} channel taps"
        )
    s = signal.samples
    mn = grid.num_samples
    if s.size != mn:
        raise ValueError("payload length does not match grid")
    c = np.arange(mn)
    amp = pathloss_amplitude(ch.pathloss_db)
    r = np.zeros(mn, dtype=complex)
    taps = _pulse_taps(ch, grid)
    for i in range(ch.num_paths):
        p_idx, weights = taps[i]
        if len(p_idx) == 0:
            continue
        # exp(j 2 pi nu_i (c - p) Ts) with nu_i Ts = cycles_i / (M N)
        phase = np.exp(2j * np.pi * ch.doppler_cycles[i] * c / mn)
        for p, w in zip(p_idx, weights):
            shift = np.exp(-2j * np.pi * ch.doppler_cycles[i] * p / mn)
            r += ch.gains[i] * w * shift * phase * np.roll(s, p)
    return TimeDomainSignal(amp * r, cp_len=0)


def _theta(q: np.ndarray, beta: float, n: int) -> np.ndarray:
    """Doppler leakage kernel; reduces to N*delta(q) for integer shifts."""
    if beta == 0.0:
        return np.where(q % n == 0, float(n), 0.0).astype(complex)
    num = np.exp(2j * np.pi * beta) - 1.0
    den = np.exp(2j * np.pi * (q + beta) / n) - 1.0
    return num / den


def _path_entries(
    grid: OtfsGrid,
    k_i: int,
    beta: float,
    taps: np.ndarray,
    weights: np.ndarray,
):
    """COO entries of one path's unit-gain delay-Doppler matrix."""
    m, n = grid.m, grid.n
    ell = np.arange(m)
    karr = np.arange(n)
    theta = _theta(karr, beta, n) / n  # leakage offsets share the bin range
    q_keep = np.flatnonzero(theta != 0.0)
    rows_base = karr[None, :] * m + ell[:, None]  # (m, n), fixed across taps
    rows_out, cols_out, vals_out = [], [], []
    for p, w in zip(taps, weights):
        xi = np.exp(2j * np.pi * (ell - p) * (k_i + beta) / (m * n))
        lp = (ell - p) % m
        below = ell < p
        for qi in q_keep:
            kcol = (karr - k_i + qi) % n
            phi = np.exp(-2j * np.pi * kcol / n)
            vals = (w * theta[qi]) * xi[:, None] * np.where(
                below[:, None], phi[None, :], 1.0
            )
            cols = kcol[None, :] * m + lp[:, None]
            rows_out.append(rows_base.ravel())
            cols_out.append(cols.ravel())
            vals_out.append(vals.ravel())
    if not rows_out:
        empty = np.zeros(0)
        return empty.astype(int), empty.astype(int), empty.astype(complex)
    return (
        np.concatenate(rows_out),
        np.concatenate(cols_out),
        np.concatenate(vals_out),
    )


def build_path_matrices(ch: MultipathChannel, grid: OtfsGrid) -> list[sparse.csr_matrix]:
    """Unit-gain delay-Doppler matrix of each path (no gain, no pathloss)."""
    mn = grid.num_samples
    taps = _pulse_taps(ch, grid)
    out = []
    for i in range(ch.num_paths):
        rows, cols, vals = _path_entries(
            grid, int(ch.doppler_idx[i]), float(ch.doppler_frac[i]), *taps[i]
        )
        out.append(sparse.csr_matrix((vals, (rows, cols)), shape=(mn, mn)))
    return out


def build_dd_matrix(ch: MultipathChannel, grid: OtfsGrid) -> sparse.csr_matrix:
    """Exact delay-Doppler input-output matrix of the channel.

    Row k*M + l of the result maps vec(X) (column-major) to the received
    delay-Doppler sample Y[l, k], including pathloss and path gains.
    """
    mn = grid.num_samples
    amp = pathloss_amplitude(ch.pathloss_db)
    taps = _pulse_taps(ch, grid)
    rows_all, cols_all, vals_all = [], [], []
    for i in range(ch.num_paths):
        rows, cols, vals = _path_entries(
            grid, int(ch.doppler_idx[i]), float(ch.doppler_frac[i]), *taps[i]
        )
        rows_all.append(rows)
        cols_all.append(cols)
        vals_all.append(amp * ch.gains[i] * vals)
    return sparse.csr_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(mn, mn),
    )


def perturb_csi(
    ch: MultipathChannel, epsilon: float, rng: np.random.Generator
) -> MultipathChannel:
    """Synthesize a norm-bounded channel estimate.

    Each true parameter equals the returned estimate plus an error of
    magnitude at most epsilon times the true magnitude: gains get a
    uniform draw from the complex disk, delays and Doppler shifts from a
    symmetric interval.  epsilon = 0 returns the channel unchanged.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    n_paths = ch.num_paths
    radius = epsilon * np.abs(ch.gains)
    u = rng.uniform(0.0, 1.0, n_paths)
    ang = rng.uniform(0.0, 2 * np.pi, n_paths)
    d_gain = radius * np.sqrt(u) * np.exp(1j * ang)
    d_delay = rng.uniform(-1.0, 1.0, n_paths) * epsilon * np.abs(ch.delays)
    d_cycles = rng.uniform(-1.0, 1.0, n_paths) * epsilon * np.abs(ch.doppler_cycles)
    if epsilon == 0.0:
        return ch
    cycles = ch.doppler_cycles - d_cycles
    k_idx = np.empty(n_paths, dtype=int)
    beta = np.empty(n_paths)
    for i in range(n_paths):
        k_idx[i], beta[i] = split_doppler(cycles[i])
    delays = ch.delays - d_delay
    # tap count is kept: the pulse-span slack covers sub-sample delay shifts
    return replace(
        ch,
        gains=ch.gains - d_gain,
        delays=delays,
        doppler_cycles=cycles,
        doppler_idx=k_idx,
        doppler_frac=beta,
    )
