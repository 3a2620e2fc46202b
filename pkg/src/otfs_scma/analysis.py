"""Single-user pairwise error probability and the ABER union bound.

For a single transmitting user the received frame is linear in the channel
gain vector, y = sqrt(P) * Phi(X) h + w, where column i of Phi(X) is the
response of path i to the frame.  Error probabilities between frame pairs
follow from the eigenvalues of the difference Gram matrix after averaging
the Gaussian gains analytically; distances enter through the mean linear
pathloss of the user distribution.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channel import (
    ChannelProfile,
    MultipathChannel,
    build_path_matrices,
    generate_channel,
    pathloss_db,
)
from .codebook import AllocationAxis, ScmaCodebook, block_positions, demap
from .detectors import EnumerationLimitError
from .geometry import GeometryConfig, Scheme, serving_chains
from .grid import OtfsGrid


def q_function(x):
    """Gaussian tail probability (exact, via the complementary error function)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def q_approx(x):
    """Two-exponential upper approximation of the Gaussian tail."""
    x = np.asarray(x, dtype=float)
    val = np.exp(-(x**2) / 2.0) / 12.0 + np.exp(-2.0 * x**2 / 3.0) / 4.0
    return val if val.ndim else float(val)


@dataclass(frozen=True)
class CodewordMatrix:
    """Per-chain path-response matrices of one frame plus stacking weights.

    ``per_chain[u]`` has shape (MN, L_u); ``pathloss_linear[u]`` is the
    linear power gain applied under a square root when stacking.
    """

    per_chain: tuple[np.ndarray, ...]
    pathloss_linear: tuple[float, ...]

    @property
    def stacked(self) -> np.ndarray:
        """Block-diagonal stacked matrix weighted by the amplitude gains."""
        mats = [
            np.sqrt(pl) * phi for phi, pl in zip(self.per_chain, self.pathloss_linear)
        ]
        rows = sum(m.shape[0] for m in mats)
        cols = sum(m.shape[1] for m in mats)
        out = np.zeros((rows, cols), dtype=complex)
        r = c = 0
        for m in mats:
            out[r : r + m.shape[0], c : c + m.shape[1]] = m
            r += m.shape[0]
            c += m.shape[1]
        return out


def build_codeword_matrix(
    frame: np.ndarray,
    channels: list[MultipathChannel],
    grid: OtfsGrid,
    pathloss_linear: list[float] | None = None,
) -> CodewordMatrix:
    """Path-response matrix of a frame for each receive chain.

    Column i of the per-chain matrix is the delay-Doppler response of the
    chain's path i to the frame (unit gain); multiplying by the gain
    vector reproduces the full channel output up to the pathloss weight.
    """
    vec = np.asarray(frame, dtype=complex).reshape(-1, order="F")
    per_chain = []
    for ch in channels:
        cols = [p @ vec for p in build_path_matrices(ch, grid)]
        per_chain.append(np.stack(cols, axis=1))
    if pathloss_linear is None:
        pathloss_linear = [1.0] * len(channels)
    return CodewordMatrix(tuple(per_chain), tuple(float(p) for p in pathloss_linear))


def conditional_pep(
    phi_x: np.ndarray,
    phi_xhat: np.ndarray,
    h: np.ndarray,
    rho: float,
    exact: bool = False,
) -> float:
    """Error probability of deciding X-hat given X, conditioned on h.

    Uses the two-exponential tail approximation by default; ``exact``
    evaluates the true Gaussian tail instead.
    """
    dist2 = float(np.sum(np.abs((phi_x - phi_xhat) @ h) ** 2))
    arg = math.sqrt(rho / 2.0 * dist2)
    return float(q_function(arg)) if exact else float(q_approx(arg))


def pep_spectrum(
    phi_x: np.ndarray, phi_xhat: np.ndarray, rel_tol: float = 1e-12
) -> np.ndarray:
    """Non-zero eigenvalues of the difference Gram matrix.

    Eigenvalues below ``rel_tol`` times the largest are treated as
    numerical noise and dropped; their count defines the diversity order.
    """
    delta = phi_x - phi_xhat
    gram = delta.conj().T @ delta
    eig = np.linalg.eigvalsh(gram)
    if eig.size == 0 or eig.max() <= 0:
        return np.zeros(0)
    return np.sort(eig[eig > rel_tol * eig.max()])[::-1]


def averaged_pep(
    eigenvalues: np.ndarray,
    rho: float,
    l1: int,
    l2: int,
    gain_variance: float | None = None,
) -> float:
    """Pairwise error probability averaged over Gaussian path gains.

    The gain vector entries are i.i.d. complex Gaussian with variance
    2/(L1+L2) by default (unit power per receive chain when L1 == L2).
    """
    v = gain_variance if gain_variance is not None else 2.0 / (l1 + l2)
    lam = np.asarray(eigenvalues, dtype=float)
    t1 = np.prod(1.0 / (1.0 + rho * lam * v / 4.0))
    t2 = np.prod(1.0 / (1.0 + rho * lam * v / 3.0))
    return float(t1 / 12.0 + t2 / 4.0)


def asymptotic_pep(
    eigenvalues: np.ndarray,
    rho: float,
    l1: int,
    l2: int,
    gain_variance: float | None = None,
) -> float:
    """High-power limit of :func:`averaged_pep`, decaying as rho**(-R)."""
    v = gain_variance if gain_variance is not None else 2.0 / (l1 + l2)
    lam = np.asarray(eigenvalues, dtype=float)
    r = len(lam)
    if r == 0:
        return 1.0 / 3.0
    geo = float(np.prod(lam)) ** (1.0 / r)
    return (
        (geo * v / 4.0) ** (-r) / 12.0 + (geo * v / 3.0) ** (-r) / 4.0
    ) * rho ** (-r)


def mean_pathloss(
    geom: GeometryConfig,
    scheme: Scheme,
    chain_index: int,
    num_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo mean of the linear pathloss power gain of one chain."""
    x = rng.uniform(0.0, geom.d_h, num_samples)
    y = rng.uniform(geom.d_p, geom.d_p + geom.d_w, num_samples)
    total = 0.0
    for xi, yi in zip(x, y):
        chain = serving_chains(geom, scheme, (xi, yi))[chain_index]
        total += 10.0 ** (-pathloss_db(chain.distance_m / 1000.0) / 10.0)
    return total / num_samples


def _bound_chain_towards(scheme: Scheme, rng: np.random.Generator) -> list[bool]:
    """Travel-direction flags of the serving chains for one channel draw."""
    if scheme is Scheme.COMP:
        return [False, True]
    if scheme is Scheme.COLOCATED:
        return [False, False]
    if scheme is Scheme.CELLULAR:
        return [bool(rng.integers(0, 2))]
    raise ValueError(f"unknown scheme {scheme!r}")


def aber_union_bound(
    codebook: ScmaCodebook,
    grid: OtfsGrid,
    axis: AllocationAxis,
    profile: ChannelProfile,
    geom: GeometryConfig,
    scheme: Scheme,
    v_max_hz: float,
    rho_values,
    rng: np.random.Generator,
    num_channel_draws: int = 100,
    pathloss_samples: int = 100_000,
    max_hypotheses: int = 2**20,
) -> np.ndarray:
    """Union bound on the single-user average bit error rate.

    All frame pairs of every user are enumerated; each pair's error
    probability is averaged analytically over the Gaussian path gains and
    numerically over ``num_channel_draws`` draws of delays, Doppler shifts
    and timing offsets.  Distances are absorbed into the mean linear
    pathloss of the uniform user distribution.
    """
    rho_values = np.asarray(rho_values, dtype=float)
    t_blocks = grid.num_samples // codebook.num_resources
    q = codebook.codebook_size
    n_frames = q**t_blocks
    if n_frames > max_hypotheses:
        raise EnumerationLimitError(
            f"{n_frames} frames per user exceed the guard of {max_hypotheses}"
        )
    n_chains = 1 if scheme is Scheme.CELLULAR else 2
    mean_pl = [
        mean_pathloss(geom, scheme, u, pathloss_samples, rng) for u in range(n_chains)
    ]
    l_paths = profile.num_paths
    l1 = l2 = l_paths
    if n_chains == 1:
        l2 = 0
    gain_var = 2.0 / (l1 + l2) if n_chains == 2 else 1.0 / l1

    # all frame index tuples and their pairwise bit distances
    width = codebook.bits_per_codeword
    digits = q ** np.arange(t_blocks - 1, -1, -1)
    tuples = (np.arange(n_frames)[:, None] // digits[None, :]) % q  # (F, T)
    bits = np.stack([demap(tup, q) for tup in tuples])  # (F, T*width)
    bit_diff = (bits[:, None, :] != bits[None, :, :]).sum(axis=2)  # (F, F)

    pairs = [(a, b) for a in range(n_frames) for b in range(a + 1, n_frames)]
    pair_a = np.array([p[0] for p in pairs])
    pair_b = np.array([p[1] for p in pairs])

    total = np.zeros_like(rho_values)
    for j in range(codebook.num_users):
        positions = block_positions(codebook, grid, axis, j)
        chi = codebook.nonzero_codewords[j]
        frames = np.zeros((grid.num_samples, n_frames), dtype=complex)
        for f in range(n_frames):
            frames[positions.reshape(-1), f] = chi[tuples[f]].reshape(-1)
        # eigen-spectra of every (pair, draw), zero-padded to L1+L2
        spectra = np.zeros((len(pairs), num_channel_draws, l1 + l2))
        for draw in range(num_channel_draws):
            towards = _bound_chain_towards(scheme, rng)
            offset = 0
            for u, toward in enumerate(towards):
                ch = generate_channel(
                    1.0,
                    toward,
                    profile,
                    grid,
                    v_max_hz,
                    rng,
                    pathloss_override_db=0.0,
                )
                resp = np.stack(
                    [p @ frames for p in build_path_matrices(ch, grid)], axis=1
                )  # (MN, L, F)
                delta = resp[:, :, pair_a] - resp[:, :, pair_b]  # (MN, L, P)
                gram = mean_pl[u] * np.einsum("mlp,mkp->plk", delta.conj(), delta)
                eig = np.linalg.eigvalsh(gram)  # (P, L)
                eig[eig < 1e-12 * eig.max(axis=1, keepdims=True)] = 0.0
                eig[eig < 0] = 0.0
                spectra[:, draw, offset : offset + l_paths] = eig
                offset += l_paths
        # Eq.-style product over the padded spectrum; zeros contribute 1
        for ri, rho in enumerate(rho_values):
            t1 = np.prod(1.0 / (1.0 + rho * spectra * gain_var / 4.0), axis=2)
            t2 = np.prod(1.0 / (1.0 + rho * spectra * gain_var / 3.0), axis=2)
            pep = (t1 / 12.0 + t2 / 4.0).mean(axis=1)  # (P,)
            weighted = 2.0 * np.sum(pep * bit_diff[pair_a, pair_b])
            total[ri] += weighted
    denom = codebook.num_users * n_frames * t_blocks * width
    return total / denom
