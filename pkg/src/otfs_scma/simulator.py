"""Monte Carlo link simulation: geometry, transmit chain, detection, ABER.

A trial drops users on the highway strip, sends one OTFS frame per user
through independently drawn doubly-selective channels to every receive
chain, and recovers the bits with the configured detector.  Trials use
counter-derived RNG streams, so a (seed, power index, trial index) triple
fully determines every draw and runs are reproducible byte-for-byte.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis
from .channel import (
    ChannelProfile,
    apply_time_domain,
    build_dd_matrix,
    generate_channel,
    max_doppler_hz,
    perturb_csi,
)
from .codebook import (
    AllocationAxis,
    ScmaCodebook,
    allocate,
    block_positions,
    load_codebook,
    map_bits,
)
from .detectors import (
    GaepConfig,
    gaep_centralized,
    gaep_decentralized,
    ml_detect_single_user,
    reduce_system,
)
from .geometry import GeometryConfig, Scheme, sample_geometry
from .grid import OtfsGrid
from .modem import TimeDomainSignal, demodulate, modulate


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_variance(psd_dbm_hz: float, bandwidth_hz: float) -> float:
    """Noise power in watts over the given bandwidth."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return dbm_to_watts(psd_dbm_hz + 10.0 * math.log10(bandwidth_hz))


@dataclass(frozen=True)
class DetectorSettings:
    algorithm: str = "centralized"  # centralized | decentralized | ml
    gaep: GaepConfig = field(default_factory=GaepConfig)

    def __post_init__(self):
        if self.algorithm not in ("centralized", "decentralized", "ml"):
            raise ValueError(f"unknown detector algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class SimulationConfig:
    grid: OtfsGrid = field(default_factory=lambda: OtfsGrid(64, 16, 15e3, 16))
    carrier_hz: float = 4.0e9
    codebook_path: str | None = None
    allocation: AllocationAxis = AllocationAxis.DELAY
    scheme: Scheme = Scheme.COMP
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    channel: ChannelProfile = field(default_factory=ChannelProfile)
    velocity_kmh: float = 300.0
    power_sweep_dbm: tuple[float, ...] = (20.0, 30.0, 40.0)
    noise_psd_dbm_hz: float = -174.0
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    csi_epsilon: float = 0.0
    trials: int = 1000
    seed: int = 0
    bound_channel_draws: int = 100
    bound_pathloss_samples: int = 100_000

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if len(self.power_sweep_dbm) == 0:
            raise ValueError("power sweep must not be empty")
        if self.csi_epsilon < 0:
            raise ValueError("csi_epsilon must be non-negative")

    @classmethod
    def from_json(cls, path) -> "SimulationConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "SimulationConfig":
        kw = {}
        if "grid" in raw:
            g = raw["grid"]
            kw["grid"] = OtfsGrid(
                m=g["m"], n=g["n"], delta_f=g["delta_f_hz"], cp_len=g.get("cp_len", 0)
            )
        if "carrier_hz" in raw:
            kw["carrier_hz"] = float(raw["carrier_hz"])
        if "codebook" in raw:
            kw["codebook_path"] = raw["codebook"]
        if "allocation" in raw:
            kw["allocation"] = AllocationAxis(raw["allocation"])
        if "scheme" in raw:
            kw["scheme"] = Scheme(raw["scheme"])
        if "geometry" in raw:
            ge = raw["geometry"]
            kw["geometry"] = GeometryConfig(
                d_h=ge["d_h_m"],
                d_p=ge["d_p_m"],
                d_w=ge["d_w_m"],
                colocated_site_spacing=ge.get("colocated_site_spacing_m"),
            )
        if "channel" in raw:
            c = raw["channel"]
            kw["channel"] = ChannelProfile(
                num_paths=c.get("num_paths", 4),
                delays_s=tuple(c["delays_s"]) if c.get("delays_s") else None,
                powers=tuple(c["powers"]) if c.get("powers") else None,
                rolloff=c.get("rolloff", 0.4),
                pulse_span=c.get("pulse_span", 4),
                timing_offset_max=c.get("timing_offset_max_s", 0.0),
                profile_mode=c.get("profile_mode", "exponential"),
            )
        if "velocity_kmh" in raw:
            kw["velocity_kmh"] = float(raw["velocity_kmh"])
        if "power_sweep_dbm" in raw:
            kw["power_sweep_dbm"] = tuple(float(p) for p in raw["power_sweep_dbm"])
        if "noise_psd_dbm_hz" in raw:
            kw["noise_psd_dbm_hz"] = float(raw["noise_psd_dbm_hz"])
        if "detector" in raw:
            det = dict(raw["detector"])
            algorithm = det.pop("algorithm", "centralized")
            kw["detector"] = DetectorSettings(
                algorithm=algorithm, gaep=GaepConfig(**det)
            )
        for key in ("csi_epsilon", "trials", "seed"):
            if key in raw:
                kw[key] = raw[key]
        if "bound" in raw:
            kw["bound_channel_draws"] = raw["bound"].get("channel_draws", 100)
            kw["bound_pathloss_samples"] = raw["bound"].get("pathloss_samples", 100_000)
        return cls(**kw)


@dataclass
class AberReport:
    """Result rows of a sweep; one row per (scheme, power, series)."""

    rows: list[dict] = field(default_factory=list)

    COLUMNS = (
        "scheme",
        "power_dbm",
        "series",
        "aber",
        "bit_errors",
        "bits_total",
        "trials",
        "seed",
    )

    def add(self, **kw):
        self.rows.append({col: kw[col] for col in self.COLUMNS})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(row[c]) if isinstance(row[c], float)
                                  else str(row[c]) for c in self.COLUMNS) + "\n")


def trial_rng(seed: int, point: int, trial: int, stream: int) -> np.random.Generator:
    """Counter-derived generator: independent stream per (point, trial, role)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(point, trial, stream))
    )


_STREAM_GEOMETRY = 0
_STREAM_BITS = 1
_STREAM_CHANNEL = 2
_STREAM_NOISE = 3
_STREAM_CSI = 4


def _site_assignments(users, scheme: Scheme, geom: GeometryConfig):
    """Group users by the receiver site that detects them.

    Returns a list of (chain positions+directions, served user indices).
    Joint reception uses a single site holding both chains; the cellular
    scheme yields one single-chain site per radio head.
    """
    if scheme is Scheme.COMP:
        return [(list(users[0].chains), list(range(len(users))))]
    sites: dict = {}
    for j, u in enumerate(users):
        key = u.chains[0].position
        sites.setdefault(key, (list(u.chains), []))[1].append(j)
    return list(sites.values())


def run_trial(config: SimulationConfig, point: int, trial: int, codebook=None):
    """One Monte Carlo trial; returns (per-user bit errors, per-user bits)."""
    cb = codebook if codebook is not None else load_codebook(config.codebook_path)
    grid = config.grid
    n_users = cb.num_users
    t_blocks = grid.num_samples // cb.num_resources
    width = cb.bits_per_codeword
    bits_per_user = t_blocks * width
    seed = config.seed

    rng_geom = trial_rng(seed, point, trial, _STREAM_GEOMETRY)
    rng_bits = trial_rng(seed, point, trial, _STREAM_BITS)
    rng_chan = trial_rng(seed, point, trial, _STREAM_CHANNEL)
    rng_noise = trial_rng(seed, point, trial, _STREAM_NOISE)
    rng_csi = trial_rng(seed, point, trial, _STREAM_CSI)

    power_w = dbm_to_watts(config.power_sweep_dbm[point])
    sigma2 = noise_variance(config.noise_psd_dbm_hz, grid.bandwidth)
    v_max = max_doppler_hz(config.velocity_kmh, config.carrier_hz)

    users = sample_geometry(
        config.geometry, config.scheme, n_users, config.velocity_kmh, rng_geom
    )

    if config.detector.algorithm == "ml":
        return _run_ml_trial(
            config, cb, users, power_w, sigma2, v_max,
            rng_bits, rng_chan, rng_noise, rng_csi, trial,
        )

    bits_tx = rng_bits.integers(0, 2, size=(n_users, bits_per_user))
    frames = []
    signals = []
    for j in range(n_users):
        idx = map_bits(bits_tx[j], cb.codebook_size)
        x = allocate(idx, cb, grid, config.allocation, j)
        frames.append(x)
        s = modulate(x, grid)
        signals.append(TimeDomainSignal(math.sqrt(power_w) * s.samples, s.cp_len))

    sites = _site_assignments(users, config.scheme, config.geometry)
    # draw channels in a fixed (site, chain, user) order for reproducibility
    site_channels = []
    for chains, _served in sites:
        per_chain = []
        for chain in chains:
            per_user = []
            for j in range(n_users):
                dist = math.hypot(
                    users[j].position[0] - chain.position[0],
                    users[j].position[1] - chain.position[1],
                )
                toward = chain.position[0] > users[j].position[0]
                per_user.append(
                    generate_channel(
                        dist, toward, config.channel, grid, v_max, rng_chan
                    )
                )
            per_chain.append(per_user)
        site_channels.append(per_chain)

    placements = [
        block_positions(cb, grid, config.allocation, j) for j in range(n_users)
    ]
    powers = np.full(n_users, power_w)
    errors = np.zeros(n_users, dtype=int)
    for (chains, served), per_chain in zip(sites, site_channels):
        y_chunks = []
        for chain_idx in range(len(chains)):
            r = np.zeros(grid.num_samples, dtype=complex)
            for j in range(n_users):
                out = apply_time_domain(
                    signals[j], per_chain[chain_idx][j], grid
                )
                r += out.samples
            noise = math.sqrt(sigma2 / 2.0) * (
                rng_noise.standard_normal(grid.num_samples)
                + 1j * rng_noise.standard_normal(grid.num_samples)
            )
            y = demodulate(TimeDomainSignal(r + noise, 0), grid)
            y_chunks.append(y.reshape(-1, order="F"))
        h_est = []
        for chain_idx in range(len(chains)):
            row = []
            for j in range(n_users):
                ch = per_chain[chain_idx][j]
                if config.csi_epsilon > 0:
                    ch = perturb_csi(ch, config.csi_epsilon, rng_csi)
                row.append(build_dd_matrix(ch, grid))
            h_est.append(row)
        per_chain_sys, stacked = reduce_system(h_est, placements, powers, sigma2, cb)
        for sys_obj, chunk in zip(per_chain_sys, y_chunks):
            sys_obj.y[:] = chunk
        stacked.y[:] = np.concatenate(y_chunks)
        if config.detector.algorithm == "centralized":
            result = gaep_centralized(stacked, config.detector.gaep)
            decided = result.bits
        elif config.detector.algorithm == "decentralized":
            if len(per_chain_sys) != 2:
                raise ValueError(
                    "decentralized detection needs a two-chain site"
                )
            results = gaep_decentralized(per_chain_sys, config.detector.gaep)
            decided = results[0].bits
        else:
            raise ValueError(f"unsupported algorithm {config.detector.algorithm!r}")
        for j in served:
            errors[j] = int(np.sum(decided[j] != bits_tx[j]))
    return errors, np.full(n_users, bits_per_user)


def _run_ml_trial(
    config, cb, users, power_w, sigma2, v_max,
    rng_bits, rng_chan, rng_noise, rng_csi, trial,
):
    """Single-user trial with exhaustive ML detection.

    The active user cycles deterministically with the trial index so the
    per-user codebooks are exercised evenly.
    """
    grid = config.grid
    j0 = trial % cb.num_users
    t_blocks = grid.num_samples // cb.num_resources
    width = cb.bits_per_codeword
    bits_tx = rng_bits.integers(0, 2, size=t_blocks * width)
    idx = map_bits(bits_tx, cb.codebook_size)
    x = allocate(idx, cb, grid, config.allocation, j0)
    s0 = modulate(x, grid)
    s = TimeDomainSignal(math.sqrt(power_w) * s0.samples, s0.cp_len)

    chains = users[j0].chains
    channels = [
        generate_channel(c.distance_m, c.toward, config.channel, grid, v_max, rng_chan)
        for c in chains
    ]
    y_parts = []
    for ch in channels:
        r = apply_time_domain(s, ch, grid).samples
        noise = math.sqrt(sigma2 / 2.0) * (
            rng_noise.standard_normal(grid.num_samples)
            + 1j * rng_noise.standard_normal(grid.num_samples)
        )
        y_parts.append(demodulate(TimeDomainSignal(r + noise, 0), grid).reshape(-1, order="F"))
    y = np.concatenate(y_parts)

    est = channels
    if config.csi_epsilon > 0:
        est = [perturb_csi(ch, config.csi_epsilon, rng_csi) for ch in channels]
    placements = block_positions(cb, grid, config.allocation, j0)
    chi = cb.nonzero_codewords[j0]
    mats = [build_dd_matrix(ch, grid) for ch in est]
    cols = placements.reshape(-1)
    g = np.vstack([m.toarray()[:, cols] for m in mats]) * math.sqrt(power_w)
    resp = np.einsum(
        "rtd,qd->tqr",
        g.reshape(len(y), t_blocks, cb.num_nonzero),
        chi,
    )
    decided_idx = ml_detect_single_user(y, resp)
    from .codebook import demap

    decided = demap(decided_idx, cb.codebook_size)
    errors = np.zeros(cb.num_users, dtype=int)
    bits = np.zeros(cb.num_users, dtype=int)
    errors[j0] = int(np.sum(decided != bits_tx))
    bits[j0] = len(bits_tx)
    return errors, bits


def run_sweep(config: SimulationConfig, progress=None) -> AberReport:
    """Run the configured sweep and aggregate bit errors per power point."""
    cb = load_codebook(config.codebook_path)
    report = AberReport()
    series = config.detector.algorithm
    for point in range(len(config.power_sweep_dbm)):
        err_total = 0
        bits_total = 0
        for trial in range(config.trials):
            errors, bits = run_trial(config, point, trial, codebook=cb)
            err_total += int(errors.sum())
            bits_total += int(bits.sum())
            if progress is not None:
                progress(point, trial)
        report.add(
            scheme=config.scheme.value,
            power_dbm=float(config.power_sweep_dbm[point]),
            series=series,
            aber=err_total / bits_total,
            bit_errors=err_total,
            bits_total=bits_total,
            trials=config.trials,
            seed=config.seed,
        )
    return report


def run_bound(config: SimulationConfig) -> AberReport:
    """Evaluate the single-user ABER union bound over the power sweep."""
    cb = load_codebook(config.codebook_path)
    sigma2 = noise_variance(config.noise_psd_dbm_hz, config.grid.bandwidth)
    rho = [dbm_to_watts(p) / sigma2 for p in config.power_sweep_dbm]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed))
    bounds = analysis.aber_union_bound(
        cb,
        config.grid,
        config.allocation,
        config.channel,
        config.geometry,
        config.scheme,
        max_doppler_hz(config.velocity_kmh, config.carrier_hz),
        rho,
        rng,
        num_channel_draws=config.bound_channel_draws,
        pathloss_samples=config.bound_pathloss_samples,
    )
    report = AberReport()
    for power, value in zip(config.power_sweep_dbm, bounds):
        report.add(
            scheme=config.scheme.value,
            power_dbm=float(power),
            series="bound",
            aber=float(value),
            bit_errors=0,
            bits_total=0,
            trials=config.bound_channel_draws,
            seed=config.seed,
        )
    return report
