import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otfs_scma.grid import OtfsGrid
from otfs_scma.modem import (
    TimeDomainSignal,
    add_cp,
    demodulate,
    heisenberg,
    isfft,
    modulate,
    remove_cp,
    sfft,
    wigner,
)


def random_frame(m, n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))


def test_isfft_zeros():
    assert np.all(isfft(np.zeros((4, 2))) == 0)


def test_isfft_identity_at_1x1():
    x = np.array([[1.3 - 0.2j]])
    assert np.allclose(isfft(x), x)
    assert np.allclose(sfft(x), x)


def test_isfft_sfft_round_trip():
    x = random_frame(4, 2, seed=1)
    assert np.max(np.abs(sfft(isfft(x)) - x)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([(2, 2), (4, 2), (8, 4), (16, 8)]), st.integers(0, 1000))
def test_isfft_unitary(shape, seed):
    x = random_frame(*shape, seed=seed)
    assert abs(np.sum(np.abs(isfft(x)) ** 2) - np.sum(np.abs(x) ** 2)) < 1e-12 * x.size


def test_heisenberg_impulse():
    # single pilot at (0, 0): the first M samples are constant 1/sqrt(M)
    grid = OtfsGrid(4, 2, 15e3)
    x_tf = np.zeros((4, 2), dtype=complex)
    x_tf[0, 0] = 1.0
    s = heisenberg(x_tf, grid)
    assert np.allclose(s.samples[:4], 0.5)
    assert np.allclose(s.samples[4:], 0.0)


def test_heisenberg_energy():
    grid = OtfsGrid(8, 4, 15e3)
    x = random_frame(8, 4, seed=2)
    s = heisenberg(x, grid)
    assert abs(s.energy - np.sum(np.abs(x) ** 2)) < 1e-10


def test_wigner_inverts_heisenberg():
    grid = OtfsGrid(8, 4, 15e3)
    x = random_frame(8, 4, seed=3)
    assert np.max(np.abs(wigner(heisenberg(x, grid), grid) - x)) < 1e-12


def test_wigner_impulse_spreads_over_frequency():
    grid = OtfsGrid(4, 2, 15e3)
    r = TimeDomainSignal(np.eye(8)[0].astype(complex))
    y = wigner(r, grid)
    assert np.allclose(y[:, 0], 0.5)
    assert np.allclose(y[:, 1], 0.0)


def test_cp_round_trip():
    rng = np.random.default_rng(4)
    s = TimeDomainSignal(rng.standard_normal(8) + 1j * rng.standard_normal(8))
    out = remove_cp(add_cp(s, 3))
    assert np.array_equal(out.samples, s.samples)
    assert out.cp_len == 0


def test_cp_prefix_content():
    s = TimeDomainSignal(np.arange(8, dtype=complex))
    ext = add_cp(s, 2).with_cp
    assert ext.tolist()[:2] == [6, 7]
    assert len(ext) == 10


def test_cp_zero_is_identity():
    s = TimeDomainSignal(np.ones(4, dtype=complex))
    assert np.array_equal(add_cp(s, 0).with_cp, s.samples)


def test_cp_too_long_rejected():
    s = TimeDomainSignal(np.ones(8, dtype=complex))
    with pytest.raises(ValueError):
        add_cp(s, 9)


def test_loopback_identity():
    grid = OtfsGrid(64, 16, 15e3, cp_len=16)
    x = random_frame(64, 16, seed=5)
    y = demodulate(modulate(x, grid), grid)
    assert np.max(np.abs(y - x)) < 1e-10


def test_loopback_zeros():
    grid = OtfsGrid(8, 4, 15e3, cp_len=2)
    assert np.all(demodulate(modulate(np.zeros((8, 4)), grid), grid) == 0)


def test_loopback_preserves_energy():
    grid = OtfsGrid(16, 8, 15e3, cp_len=4)
    x = random_frame(16, 8, seed=6)
    x /= np.linalg.norm(x)
    s = modulate(x, grid)
    assert abs(s.energy - 1.0) < 1e-12
