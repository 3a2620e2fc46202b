"""Shared fixtures: toy codebooks, reduced systems, exhaustive oracles."""

import numpy as np
import pytest
from scipy import sparse

from otfs_scma.codebook import ScmaCodebook, block_positions
from otfs_scma.detectors import ReducedSystem, reduce_system


def make_toy_codebook(num_users=2) -> ScmaCodebook:
    """Small regular codebook: QPSK repeated on disjoint resource pairs."""
    assert num_users == 2
    k, d, q = 4, 2, 4
    supports = [(0, 1), (2, 3)]
    qpsk = np.array(
        [(1 - 2 * (i >> 1)) + 1j * (1 - 2 * (i & 1)) for i in range(q)]
    ) / np.sqrt(2)
    codewords = np.zeros((num_users, q, k), dtype=complex)
    for j, sup in enumerate(supports):
        for r in sup:
            codewords[j, :, r] = qpsk / np.sqrt(d)
    return ScmaCodebook(
        num_users=num_users,
        num_resources=k,
        num_nonzero=d,
        codebook_size=q,
        codewords=codewords,
        support=np.array(supports),
    )


def manual_system(y, edges, chi, block_user, noise_var, num_rows, num_blocks):
    """Build a ReducedSystem from an explicit edge list.

    ``edges`` is a list of (row, block, h_row) with h_row of length D.
    """
    e_row = np.array([e[0] for e in edges], dtype=np.int64)
    e_blk = np.array([e[1] for e in edges], dtype=np.int64)
    e_h = np.array([e[2] for e in edges], dtype=complex)
    return ReducedSystem(
        y=np.asarray(y, dtype=complex),
        noise_var=noise_var,
        edge_row=e_row,
        edge_block=e_blk,
        edge_h=e_h,
        num_rows=num_rows,
        num_blocks=num_blocks,
        chi=np.asarray(chi, dtype=complex),
        block_user=np.asarray(block_user, dtype=int),
        powers=np.ones(np.asarray(chi).shape[0]),
    )


def block_responses(system):
    """Dense per-block codeword responses, shape (blocks, Q, rows).

    Feeds the exhaustive enumeration detector, which doubles as the joint
    maximum a-posteriori oracle on small instances.
    """
    b, q, d = system.num_blocks, system.chi.shape[1], system.chi.shape[2]
    h_dense = np.zeros((system.num_rows, b, d), dtype=complex)
    h_dense[system.edge_row[:, None], system.edge_block[:, None],
            np.arange(d)[None, :]] = system.edge_h
    return np.einsum("rbd,bqd->bqr", h_dense, system.chi_block)


def identity_matrices(grid, codebook, num_chains=1):
    """Per-chain, per-user identity delay-Doppler matrices."""
    eye = sparse.identity(grid.num_samples, format="csr", dtype=complex)
    return [[eye for _ in range(codebook.num_users)] for _ in range(num_chains)]


def transmit_vector(codebook, grid, axis, indices_per_user):
    """Grid-domain stacked signal sum over users for given codeword indices."""
    vec = np.zeros(grid.num_samples, dtype=complex)
    for j, idx in enumerate(indices_per_user):
        pos = block_positions(codebook, grid, axis, j)
        chi = codebook.nonzero_codewords[j]
        vec[pos.reshape(-1)] += chi[np.asarray(idx)].reshape(-1)
    return vec


@pytest.fixture
def toy_cb():
    return make_toy_codebook()
