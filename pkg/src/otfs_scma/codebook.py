"""Sparse multi-user codebooks and their placement on the delay-Doppler grid.

Each of the J users maps groups of log2(Q) bits onto K-dimensional codewords
with exactly D non-zero entries, then tiles MN/K codewords over the M x N
grid either along the delay axis or along the Doppler axis.
"""

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import OtfsGrid

_DEFAULT_CODEBOOK = Path(__file__).parent / "data" / "codebook_j6k4d2q4.json"


class AllocationAxis(enum.Enum):
    """Axis along which consecutive codewords tile the grid."""

    DELAY = "delay"
    DOPPLER = "doppler"


@dataclass(frozen=True)
class ScmaCodebook:
    """Per-user sparse codebooks.

    Attributes
    ----------
    codewords : complex array, shape (J, Q, K)
        Q codewords of length K for each user.
    support : int array, shape (J, D)
        Sorted resource indices of the non-zero entries per user.
    """

    num_users: int
    num_resources: int
    num_nonzero: int
    codebook_size: int
    codewords: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        validate_codebook(self)

    @property
    def bits_per_codeword(self) -> int:
        return int(np.log2(self.codebook_size))

    @property
    def nonzero_codewords(self) -> np.ndarray:
        """Codewords restricted to their support, shape (J, Q, D)."""
        j_idx = np.arange(self.num_users)[:, None, None]
        q_idx = np.arange(self.codebook_size)[None, :, None]
        return self.codewords[j_idx, q_idx, self.support[:, None, :]]

    @classmethod
    def from_json(cls, path) -> "ScmaCodebook":
        with open(path) as fh:
            raw = json.load(fh)
        for key in ("J", "K", "D", "Q", "codewords"):
            if key not in raw:
                raise ValueError(f"codebook file missing field {key!r}")
        cw = np.asarray(raw["codewords"], dtype=float)
        if cw.shape != (raw["J"], raw["Q"], raw["K"], 2):
            raise ValueError(
                "codeword array must have shape (J, Q, K, 2) of [re, im] pairs, "
                f"got {cw.shape}"
            )
        codewords = cw[..., 0] + 1j * cw[..., 1]
        support = _derive_support(codewords, raw["D"])
        return cls(
            num_users=raw["J"],
            num_resources=raw["K"],
            num_nonzero=raw["D"],
            codebook_size=raw["Q"],
            codewords=codewords,
            support=support,
        )

    def to_json(self, path) -> None:
        payload = {
            "J": self.num_users,
            "K": self.num_resources,
            "D": self.num_nonzero,
            "Q": self.codebook_size,
            "codewords": np.stack(
                [self.codewords.real, self.codewords.imag], axis=-1
            ).tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)


def load_codebook(path=None) -> ScmaCodebook:
    """Load a codebook file; defaults to the packaged J=6, K=4, D=2, Q=4 set."""
    return ScmaCodebook.from_json(path if path is not None else _DEFAULT_CODEBOOK)


def _derive_support(codewords: np.ndarray, d: int) -> np.ndarray:
    """Extract the per-user support and check it is shared by all codewords."""
    j, q, k = codewords.shape
    support = np.zeros((j, d), dtype=int)
    for u in range(j):
        nz = np.flatnonzero(np.any(np.abs(codewords[u]) > 0, axis=0))
        if len(nz) != d:
            raise ValueError(
                f"user {u}: support size {len(nz)} does not match D={d}"
            )
        rows_ok = np.all(np.abs(codewords[u][:, nz]) > 0)
        if not rows_ok:
            raise ValueError(f"user {u}: some codeword is zero on the support")
        support[u] = nz
    return support


def validate_codebook(cb: ScmaCodebook) -> None:
    """Enforce the structural invariants of a sparse codebook."""
    j, q, k = cb.num_users, cb.codebook_size, cb.num_resources
    d = cb.num_nonzero
    if cb.codewords.shape != (j, q, k):
        raise ValueError("codeword array shape mismatch")
    if q < 2 or (q & (q - 1)) != 0:
        raise ValueError("codebook size Q must be a power of two")
    if not (0 < d <= k):
        raise ValueError("need 0 < D <= K")
    # D non-zeros exactly on the declared support
    for u in range(j):
        off = np.setdiff1d(np.arange(k), cb.support[u])
        if np.any(np.abs(cb.codewords[u][:, off]) > 0):
            raise ValueError(f"user {u}: non-zero entry outside declared support")
        if np.any(np.abs(cb.codewords[u][:, cb.support[u]]) == 0):
            raise ValueError(f"user {u}: zero entry inside declared support")
    # regular mapping: every resource carried by exactly J*D/K users
    occupancy = np.zeros(k, dtype=int)
    for u in range(j):
        occupancy[cb.support[u]] += 1
    if j * d % k != 0 or np.any(occupancy != j * d // k):
        raise ValueError(
            f"irregular resource mapping: occupancy {occupancy.tolist()}, "
            f"expected {j * d / k} per resource"
        )
    # distinct codewords, unit average energy
    for u in range(j):
        flat = cb.codewords[u].round(12)
        if len({tuple(row) for row in flat.tolist()}) != q:
            raise ValueError(f"user {u}: duplicate codewords")
    energy = np.mean(np.sum(np.abs(cb.codewords) ** 2, axis=2), axis=1)
    if not np.allclose(energy, 1.0, atol=1e-9):
        raise ValueError(f"average codeword energy must be 1, got {energy}")


def map_bits(bits, q: int) -> np.ndarray:
    """Map a bit vector onto codeword indices, big-endian per group.

    Every consecutive log2(Q) bits form one index; the first bit of a group
    is the most significant.
    """
    bits = np.asarray(bits, dtype=int)
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0/1")
    width = int(np.log2(q))
    if 2**width != q:
        raise ValueError("Q must be a power of two")
    if bits.size % width != 0:
        raise ValueError(
            f"bit vector length {bits.size} not divisible by log2(Q)={width}"
        )
    groups = bits.reshape(-1, width)
    weights = 1 << np.arange(width - 1, -1, -1)
    return groups @ weights


def demap(indices, q: int) -> np.ndarray:
    """Inverse of :func:`map_bits`: codeword indices back to bits."""
    indices = np.asarray(indices, dtype=int)
    if np.any(indices < 0) or np.any(indices >= q):
        raise ValueError("codeword index out of range")
    width = int(np.log2(q))
    shifts = np.arange(width - 1, -1, -1)
    return ((indices[:, None] >> shifts) & 1).reshape(-1)


def block_positions(
    codebook: ScmaCodebook, grid: OtfsGrid, axis: AllocationAxis, user: int
) -> np.ndarray:
    """Column-major vec indices of one user's codeword entries.

    Returns an int array of shape (MN/K, D); row t holds the positions
    k*M + l that codeword t of this user occupies on the grid.
    """
    m, n, k = grid.m, grid.n, codebook.num_resources
    if axis is AllocationAxis.DELAY:
        if m % k != 0:
            raise ValueError(f"delay allocation needs M % K == 0, got M={m}, K={k}")
        blocks_per_col = m // k
        t = np.arange(m * n // k)
        col = t // blocks_per_col
        row0 = k * (t % blocks_per_col)
        base = col * m + row0
        return base[:, None] + codebook.support[user][None, :]
    if axis is AllocationAxis.DOPPLER:
        if n % k != 0:
            raise ValueError(f"Doppler allocation needs N % K == 0, got N={n}, K={k}")
        blocks_per_row = n // k
        t = np.arange(m * n // k)
        row = t // blocks_per_row
        col0 = k * (t % blocks_per_row)
        base = col0 * m + row
        return base[:, None] + codebook.support[user][None, :] * m
    raise ValueError(f"unknown allocation axis {axis!r}")


def allocate(
    indices,
    codebook: ScmaCodebook,
    grid: OtfsGrid,
    axis: AllocationAxis,
    user: int,
) -> np.ndarray:
    """Assemble the M x N frame of one user from its codeword index sequence."""
    indices = np.asarray(indices, dtype=int)
    expected = grid.num_samples // codebook.num_resources
    if indices.size != expected:
        raise ValueError(
            f"need MN/K = {expected} codeword indices, got {indices.size}"
        )
    positions = block_positions(codebook, grid, axis, user)
    chi = codebook.nonzero_codewords[user]  # (Q, D)
    frame = np.zeros(grid.num_samples, dtype=complex)
    frame[positions.reshape(-1)] = chi[indices].reshape(-1)
    return frame.reshape(grid.m, grid.n, order="F")


def deallocate(
    frame: np.ndarray,
    codebook: ScmaCodebook,
    grid: OtfsGrid,
    axis: AllocationAxis,
    user: int,
    atol: float = 1e-9,
) -> np.ndarray:
    """Read codeword indices back from a frame; exact inverse of allocate."""
    positions = block_positions(codebook, grid, axis, user)
    values = frame.reshape(-1, order="F")[positions]  # (T, D)
    chi = codebook.nonzero_codewords[user]  # (Q, D)
    dist = np.sum(np.abs(values[:, None, :] - chi[None, :, :]) ** 2, axis=2)
    best = np.argmin(dist, axis=1)
    if np.any(dist[np.arange(len(best)), best] > atol):
        raise ValueError("frame entries do not match any codeword")
    return best
