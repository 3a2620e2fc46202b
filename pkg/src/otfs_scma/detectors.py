"""Multi-user detection on the grouped sparse delay-Doppler system.

The per-chain observations y = H x + w are reduced to a factor graph whose
variable nodes are D-dimensional codeword blocks and whose observation
nodes are received samples.  Detection runs Gaussian-approximated
expectation-propagation message passing, either centralized over the
stacked observations of both receive chains or decentralized with
iterative extrinsic exchange between the chains.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .codebook import ScmaCodebook, demap


class EnumerationLimitError(ValueError):
    """Raised when an exhaustive search would exceed the hypothesis guard."""


@dataclass(frozen=True)
class GaepConfig:
    """Message-passing knobs.

    damping        precision-domain damping factor in (0, 1]
    min_variance   floor on projected posterior variances
    conv_threshold rho: a block counts as converged when its max posterior
                   reaches 1 - conv_threshold
    max_iter       centralized iteration budget
    inner_iter     local iterations per decentralized round
    outer_rounds   extrinsic exchange rounds between the chains
    """

    damping: float = 0.3
    min_variance: float = 1e-8
    conv_threshold: float = 0.1
    max_iter: int = 20
    inner_iter: int = 3
    outer_rounds: int = 5

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.min_variance <= 0:
            raise ValueError("min_variance must be positive")
        if not 0 < self.conv_threshold < 1:
            raise ValueError("conv_threshold must lie in (0, 1)")


@dataclass
class DetectorResult:
    """Output of one detector run."""

    posteriors: np.ndarray  # (blocks, Q)
    hard_indices: np.ndarray  # (blocks,)
    bits: np.ndarray  # (J, bits per user)
    iterations: int
    delta_history: list[float] = field(default_factory=list)
    exchanged_complex_values: int = 0


class ReducedSystem:
    """Sparse grouped linear model y = H x + w over codeword blocks.

    Columns of the effective matrix are grouped into blocks of width D, one
    per transmitted codeword; blocks of user j occupy the contiguous range
    [j*T, (j+1)*T) with T = MN/K codewords per frame.  Edges enumerate the
    connected (observation row, block) pairs; ``edge_h[e]`` is the 1 x D
    coefficient row of that pair (entries may be zero element-wise).
    """

    def __init__(
        self,
        y: np.ndarray,
        noise_var: float,
        edge_row: np.ndarray,
        edge_block: np.ndarray,
        edge_h: np.ndarray,
        num_rows: int,
        num_blocks: int,
        chi: np.ndarray,
        block_user: np.ndarray,
        powers: np.ndarray,
    ):
        self.y = np.asarray(y, dtype=complex)
        self.noise_var = float(noise_var)
        self.edge_row = edge_row
        self.edge_block = edge_block
        self.edge_h = edge_h
        self.edge_mask = edge_h != 0
        self.edge_habs2 = np.abs(edge_h) ** 2
        self.num_rows = num_rows
        self.num_blocks = num_blocks
        self.chi = chi  # (J, Q, D) non-zero codeword parts per user
        self.block_user = block_user  # (blocks,)
        self.powers = powers
        self.chi_block = chi[block_user]  # (blocks, Q, D)
        self.chi_block_abs2 = np.abs(self.chi_block) ** 2
        self.chi_edge = self.chi_block[edge_block]  # (E, Q, D)
        if self.y.size != num_rows:
            raise ValueError("observation length does not match row count")

    @property
    def num_edges(self) -> int:
        return len(self.edge_row)

    @property
    def dims(self) -> tuple[int, int, int]:
        q, d = self.chi.shape[1], self.chi.shape[2]
        return self.num_blocks, q, d

    def blocks_of_row(self, d: int) -> np.ndarray:
        """Index set I(d): blocks connected to observation row d."""
        return np.sort(self.edge_block[self.edge_row == d])

    def rows_of_block(self, c: int) -> np.ndarray:
        """Index set J(c): observation rows connected to block c."""
        return np.sort(self.edge_row[self.edge_block == c])

    def _bincount_rows(self, values: np.ndarray) -> np.ndarray:
        re = np.bincount(self.edge_row, weights=values.real, minlength=self.num_rows)
        if np.iscomplexobj(values):
            im = np.bincount(
                self.edge_row, weights=values.imag, minlength=self.num_rows
            )
            return re + 1j * im
        return re

    def _bincount_blocks(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.edge_block, weights=values, minlength=self.num_blocks)


def reduce_system(
    h_matrices,
    placements,
    powers,
    noise_var: float,
    codebook: ScmaCodebook,
) -> tuple[list[ReducedSystem], ReducedSystem]:
    """Drop the all-zero columns and group the survivors by codeword.

    Parameters
    ----------
    h_matrices : sequence over receive chains of sequences over users of
        sparse MN x MN delay-Doppler matrices.
    placements : per-user (T, D) arrays of occupied column indices.
    powers : per-user transmit powers (watts); scales the user's columns
        by sqrt(P_j).
    noise_var : receiver noise variance per complex sample.

    Returns the per-chain systems and the row-stacked system.
    """
    num_users = len(placements)
    if len(powers) != num_users:
        raise ValueError("power list length must match the user count")
    blocks_per_user = placements[0].shape[0]
    d = codebook.num_nonzero
    num_blocks = num_users * blocks_per_user
    chi = codebook.nonzero_codewords
    block_user = np.repeat(np.arange(num_users), blocks_per_user)

    per_chain = []
    edge_parts = []
    for chain in h_matrices:
        if len(chain) != num_users:
            raise ValueError("each chain needs one matrix per user")
        num_rows = chain[0].shape[0]
        rows_l, blks_l, elems_l, vals_l = [], [], [], []
        for j, h in enumerate(chain):
            if placements[j].shape != (blocks_per_user, d):
                raise ValueError("inconsistent placement shapes across users")
            sub = sparse.csc_matrix(h)[:, placements[j].reshape(-1)]
            sub.eliminate_zeros()
            coo = sub.tocoo()
            rows_l.append(coo.row.astype(np.int64))
            blks_l.append(j * blocks_per_user + coo.col // d)
            elems_l.append(coo.col % d)
            vals_l.append(np.sqrt(powers[j]) * coo.data)
        rows = np.concatenate(rows_l)
        blks = np.concatenate(blks_l)
        elems = np.concatenate(elems_l)
        vals = np.concatenate(vals_l)
        key = rows * num_blocks + blks
        ukey, inv = np.unique(key, return_inverse=True)
        edge_h = np.zeros((len(ukey), d), dtype=complex)
        edge_h[inv, elems] = vals
        e_row = (ukey // num_blocks).astype(np.int64)
        e_blk = (ukey % num_blocks).astype(np.int64)
        per_chain.append(
            ReducedSystem(
                y=np.zeros(num_rows, dtype=complex),
                noise_var=noise_var,
                edge_row=e_row,
                edge_block=e_blk,
                edge_h=edge_h,
                num_rows=num_rows,
                num_blocks=num_blocks,
                chi=chi,
                block_user=block_user,
                powers=np.asarray(powers, dtype=float),
            )
        )
        edge_parts.append((e_row, e_blk, edge_h, num_rows))

    row_offset = 0
    rows_s, blks_s, hs_s = [], [], []
    for e_row, e_blk, edge_h, num_rows in edge_parts:
        rows_s.append(e_row + row_offset)
        blks_s.append(e_blk)
        hs_s.append(edge_h)
        row_offset += num_rows
    stacked = ReducedSystem(
        y=np.zeros(row_offset, dtype=complex),
        noise_var=noise_var,
        edge_row=np.concatenate(rows_s),
        edge_block=np.concatenate(blks_s),
        edge_h=np.vstack(hs_s),
        num_rows=row_offset,
        num_blocks=num_blocks,
        chi=chi,
        block_user=block_user,
        powers=np.asarray(powers, dtype=float),
    )
    return per_chain, stacked


def initial_projection(system: ReducedSystem, log_prior: np.ndarray | None):
    """Project the (possibly flat) prior of every block into a Gaussian."""
    b, q, d = system.num_blocks, system.chi.shape[1], system.chi.shape[2]
    if log_prior is None:
        prior = np.full((b, q), 1.0 / q)
    else:
        shift = log_prior - log_prior.max(axis=1, keepdims=True)
        prior = np.exp(shift)
        prior /= prior.sum(axis=1, keepdims=True)
    mean = np.einsum("bq,bqd->bd", prior, system.chi_block)
    var = np.einsum("bq,bqd->bd", prior, system.chi_block_abs2) - np.abs(mean) ** 2
    return mean, var


def observation_update(system: ReducedSystem, mu: np.ndarray, eta: np.ndarray):
    """Means and variances sent from observation rows to blocks.

    For each connected element the interference from every other block on
    the row and from the block's other elements is subtracted (mean) or
    accumulated (variance).  Entries at structurally-zero elements are
    meaningless and must be ignored via the edge mask.
    """
    h = system.edge_h
    h_safe = np.where(system.edge_mask, h, 1.0)
    contrib = (h * mu).sum(axis=1)
    row_mean = system._bincount_rows(contrib)
    c_msg = (system.y[system.edge_row] - row_mean[system.edge_row])[:, None] / h_safe
    c_msg = c_msg + mu
    var_contrib = (system.edge_habs2 * eta).sum(axis=1)
    row_var = system._bincount_rows(var_contrib)
    habs2_safe = np.where(system.edge_mask, system.edge_habs2, 1.0)
    d_msg = (row_var[system.edge_row] + system.noise_var)[:, None] / habs2_safe - eta
    return c_msg, d_msg


def variable_update(
    system: ReducedSystem,
    c_msg: np.ndarray,
    d_msg: np.ndarray,
    log_prior: np.ndarray | None,
    min_variance: float,
):
    """Block posteriors and their Gaussian projections.

    The per-block likelihood products are accumulated in the log domain
    with max-subtraction before exponentiation, so long products of
    near-zero likelihoods cannot underflow.
    """
    d_safe = np.maximum(d_msg, 1e-300)
    diff2 = np.abs(system.chi_edge - c_msg[:, None, :]) ** 2
    ll_edge = -(np.where(system.edge_mask, 1.0, 0.0)[:, None, :] * diff2
                / d_safe[:, None, :]).sum(axis=2)
    q = ll_edge.shape[1]
    log_post = np.zeros((system.num_blocks, q))
    for qi in range(q):
        log_post[:, qi] = system._bincount_blocks(ll_edge[:, qi])
    if log_prior is not None:
        log_post = log_post + log_prior
    log_post -= log_post.max(axis=1, keepdims=True)
    post = np.exp(log_post)
    post /= post.sum(axis=1, keepdims=True)
    mean = np.einsum("bq,bqd->bd", post, system.chi_block)
    var = np.einsum("bq,bqd->bd", post, system.chi_block_abs2) - np.abs(mean) ** 2
    var = np.maximum(var, min_variance)
    return post, mean, var


def extrinsic_combine(e_mean, f_var, c_msg, d_msg):
    """Gaussian division: posterior with the observation message removed.

    Returns the extrinsic mean/variance; the variance is +inf when the two
    precisions cancel (uninformative) and negative when the observation
    message is sharper than the posterior, which damping must absorb.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = 1.0 / f_var - 1.0 / d_msg
        gam = e_mean / f_var - c_msg / d_msg
        eta_ext = np.where(lam != 0, 1.0 / np.where(lam != 0, lam, 1.0), np.inf)
        mu_ext = np.where(lam != 0, gam / np.where(lam != 0, lam, 1.0), 0.0)
    return mu_ext, eta_ext


def damp(mu_ext, eta_ext, mu_prev, eta_prev, damping: float):
    """Precision-domain convex combination of new and previous messages.

    Whenever the renewed variance would be non-positive (or undefined) the
    previous message is kept unchanged.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_ext = 1.0 / eta_ext
        gam_ext = mu_ext * lam_ext
        lam_prev = 1.0 / eta_prev
        gam_prev = mu_prev * lam_prev
        lam_new = damping * lam_ext + (1.0 - damping) * lam_prev
        gam_new = damping * gam_ext + (1.0 - damping) * gam_prev
        ok = (lam_new > 0) & np.isfinite(lam_new) & np.isfinite(gam_new)
        eta_new = np.where(ok, 1.0 / np.where(ok, lam_new, 1.0), eta_prev)
        mu_new = np.where(ok, gam_new / np.where(ok, lam_new, 1.0), mu_prev)
    return mu_new, eta_new


def convergence_indicator(posteriors: np.ndarray, conv_threshold: float) -> float:
    """Fraction of blocks whose dominant posterior reaches 1 - threshold."""
    return float(np.mean(posteriors.max(axis=1) >= 1.0 - conv_threshold))


def _check_messages(mu, eta, mask):
    if not np.all(np.isfinite(mu[mask])) or not np.all(np.isfinite(eta[mask])):
        raise FloatingPointError("non-finite message")
    if np.any(eta[mask] <= 0):
        raise FloatingPointError("non-positive message variance")


def _decode(system: ReducedSystem, posteriors: np.ndarray):
    hard = np.argmax(posteriors, axis=1)
    num_users = system.chi.shape[0]
    blocks_per_user = system.num_blocks // num_users
    q = system.chi.shape[1]
    bits = np.stack(
        [
            demap(hard[j * blocks_per_user : (j + 1) * blocks_per_user], q)
            for j in range(num_users)
        ]
    )
    return hard, bits


def gaep_centralized(
    system: ReducedSystem,
    config: GaepConfig,
    log_prior: np.ndarray | None = None,
    max_iter: int | None = None,
    csi_path_totals: tuple[int, int] | None = None,
    antennas: tuple[int, int] = (1, 1),
) -> DetectorResult:
    """Iterative detection on a (stacked or single-chain) reduced system.

    Observation and variable nodes exchange Gaussian messages in a
    flooding schedule; the reported posteriors are those of the iteration
    with the highest convergence indicator seen.  Terminates early once
    every block is confidently decided.
    """
    e = system.num_edges
    d = system.chi.shape[2]
    mean0, var0 = initial_projection(system, log_prior)
    mu = mean0[system.edge_block].copy()
    eta = np.maximum(var0[system.edge_block], config.min_variance)
    mask = system.edge_mask
    mu[~mask] = 0.0
    eta[~mask] = 1.0

    n_iter = config.max_iter if max_iter is None else max_iter
    best_delta = -1.0
    retained = None
    history = []
    iterations = 0
    for kappa in range(1, n_iter + 1):
        iterations = kappa
        c_msg, d_msg = observation_update(system, mu, eta)
        post, e_mean, f_var = variable_update(
            system, c_msg, d_msg, log_prior, config.min_variance
        )
        if np.any(np.abs(post.sum(axis=1) - 1.0) > 1e-9):
            raise FloatingPointError("posterior normalization drifted")
        mu_ext, eta_ext = extrinsic_combine(
            e_mean[system.edge_block], f_var[system.edge_block], c_msg, d_msg
        )
        mu, eta = damp(mu_ext, eta_ext, mu, eta, config.damping)
        _check_messages(mu, eta, mask)
        delta = convergence_indicator(post, config.conv_threshold)
        history.append(delta)
        if delta > best_delta:
            best_delta = delta
            retained = post
        if delta == 1.0:
            break

    hard, bits = _decode(system, retained)
    exchanged = 0
    if csi_path_totals is not None:
        mn = system.num_rows // (antennas[0] + antennas[1])
        exchanged = (
            mn * (antennas[0] + antennas[1])
            + 3 * (antennas[0] * csi_path_totals[0] + antennas[1] * csi_path_totals[1])
            + 2 * system.num_blocks * d
        )
    return DetectorResult(
        posteriors=retained,
        hard_indices=hard,
        bits=bits,
        iterations=iterations,
        delta_history=history,
        exchanged_complex_values=exchanged,
    )


def log_prior_from_gaussian(
    system: ReducedSystem, mean: np.ndarray, var: np.ndarray
) -> np.ndarray:
    """Per-block log prior induced by element-wise Gaussian beliefs."""
    diff2 = np.abs(system.chi_block - mean[:, None, :]) ** 2
    with np.errstate(divide="ignore"):
        return -(diff2 / var[:, None, :]).sum(axis=2)


def gaep_decentralized(
    systems: list[ReducedSystem], config: GaepConfig
) -> list[DetectorResult]:
    """Decentralized detection with extrinsic exchange between two chains.

    Each chain runs local message passing for ``inner_iter`` iterations
    against a prior formed from the peer's last extrinsic beliefs, then
    both exchange updated extrinsic means/variances; ``outer_rounds``
    such rounds are executed.  Within a round the two chains use the
    extrinsics of the previous exchange, so they may run in parallel.
    """
    if len(systems) != 2:
        raise ValueError("decentralized detection expects exactly two chains")
    b, q, d = systems[0].num_blocks, systems[0].chi.shape[1], systems[0].chi.shape[2]
    if systems[1].num_blocks != b:
        raise ValueError("the two chains must share the block structure")
    ext_mean = [np.zeros((b, d), dtype=complex) for _ in range(2)]
    ext_var = [np.full((b, d), np.inf) for _ in range(2)]
    var_cap = 1e6 * float(np.mean(np.abs(systems[0].chi) ** 2))
    exchanged = 0
    results: list[DetectorResult | None] = [None, None]
    for _ in range(config.outer_rounds):
        new_mean = [None, None]
        new_var = [None, None]
        for u in (0, 1):
            peer = 1 - u
            log_prior = (
                None
                if np.all(np.isinf(ext_var[peer]))
                else log_prior_from_gaussian(systems[u], ext_mean[peer], ext_var[peer])
            )
            res = gaep_centralized(
                systems[u], config, log_prior=log_prior, max_iter=config.inner_iter
            )
            results[u] = res
            post = res.posteriors
            mean = np.einsum("bq,bqd->bd", post, systems[u].chi_block)
            var = np.einsum("bq,bqd->bd", post, systems[u].chi_block_abs2)
            var = np.maximum(var - np.abs(mean) ** 2, config.min_variance)
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = 1.0 / var - 1.0 / ext_var[peer]
                gam = mean / var - ext_mean[peer] / ext_var[peer]
                ok = (lam > 0) & np.isfinite(lam) & np.isfinite(gam)
                new_var[u] = np.where(ok, 1.0 / np.where(ok, lam, 1.0), var_cap)
                new_mean[u] = np.where(ok, gam / np.where(ok, lam, 1.0), mean)
        ext_mean = new_mean
        ext_var = new_var
        exchanged += 2 * b * d
    for u in (0, 1):
        results[u].exchanged_complex_values = exchanged
    return results


def ml_detect_single_user(
    y: np.ndarray,
    block_responses: np.ndarray,
    max_hypotheses: int = 2**20,
    chunk: int = 4096,
) -> np.ndarray:
    """Exhaustive joint maximum-likelihood search over one user's frame.

    ``block_responses[t, q]`` is the noiseless received vector contributed
    by codeword q in block t (power and pathloss included), so a frame
    hypothesis is the sum of one response per block.

    Returns the minimizing codeword index per block.  Refuses instances
    whose hypothesis count Q**T exceeds ``max_hypotheses``.
    """
    t, q, _ = block_responses.shape
    n_hyp = q**t
    if n_hyp > max_hypotheses:
        raise EnumerationLimitError(
            f"{n_hyp} hypotheses exceed the guard of {max_hypotheses}"
        )
    best_err = np.inf
    best_idx = None
    digits = q ** np.arange(t - 1, -1, -1)
    for start in range(0, n_hyp, chunk):
        ids = np.arange(start, min(start + chunk, n_hyp))
        combos = (ids[:, None] // digits[None, :]) % q  # (chunk, T)
        pred = block_responses[np.arange(t)[None, :], combos].sum(axis=1)
        err = np.sum(np.abs(y[None, :] - pred) ** 2, axis=1)
        k = int(np.argmin(err))
        if err[k] < best_err:
            best_err = float(err[k])
            best_idx = combos[k]
    return best_idx


def overhead_report(
    mode: str,
    m: int,
    n: int,
    j: int,
    k: int,
    d: int,
    q: int,
    s_bar: int = 0,
    antennas: tuple[int, int] = (1, 1),
    path_totals: tuple[int, int] = (0, 0),
    n_c: int = 20,
    n_i: int = 3,
    n_o: int = 5,
) -> dict:
    """Closed-form complexity and fronthaul accounting per detector mode.

    ``s_bar`` is the edge count of the factor graph (sum over rows of the
    connected block count); ``path_totals`` the per-chain totals of
    resolvable paths across users.
    """
    mn = m * n
    if (mn * j * d) % k != 0:
        raise ValueError("MNJD must be divisible by K")
    group_cols = mn * j * d // k
    if mode == "centralized":
        exchanged = (
            mn * (antennas[0] + antennas[1])
            + 3 * (antennas[0] * path_totals[0] + antennas[1] * path_totals[1])
            + 2 * group_cols
        )
        complexity = n_c * (6 * s_bar * d + s_bar * d * q + 2 * group_cols * q)
    elif mode == "decentralized":
        exchanged = 2 * group_cols * n_o
        complexity = n_o * n_i * (6 * s_bar * d + s_bar * d * q + 4 * group_cols * q)
    else:
        raise ValueError(f"unknown detector mode {mode!r}")
    return {
        "mode": mode,
        "complexity_order": complexity,
        "complex_values_exchanged": exchanged,
    }
