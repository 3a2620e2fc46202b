import numpy as np
import pytest

from otfs_scma import modem
from otfs_scma.channel import (
    ChannelProfile,
    InterFrameInterferenceError,
    MultipathChannel,
    apply_time_domain,
    build_dd_matrix,
    build_path_matrices,
    generate_channel,
    jakes_doppler,
    max_doppler_hz,
    pathloss_db,
    perturb_csi,
    rc_pulse,
    split_doppler,
)
from otfs_scma.grid import OtfsGrid

GRID = OtfsGrid(16, 8, 15e3, cp_len=16)
V_MAX = max_doppler_hz(300.0, 4e9)


def identity_channel(rolloff=0.4):
    return MultipathChannel(
        gains=np.array([1.0 + 0j]),
        delays=np.array([0.0]),
        doppler_cycles=np.array([0.0]),
        doppler_idx=np.array([0]),
        doppler_frac=np.array([0.0]),
        timing_offset=0.0,
        num_taps=1,
        pathloss_db=0.0,
        rolloff=rolloff,
    )


class TestPathloss:
    def test_at_one_km(self):
        assert pathloss_db(1.0) == pytest.approx(142.1)

    def test_at_hundred_meters(self):
        assert pathloss_db(0.1) == pytest.approx(104.5)

    def test_at_half_km(self):
        # frozen from an independent evaluation of the formula
        assert pathloss_db(0.5) == pytest.approx(130.7812721630343, abs=1e-10)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            pathloss_db(0.0)


class TestJakes:
    def test_max_doppler_matches_reported_value(self):
        # 300 km/h at 4 GHz
        assert V_MAX == pytest.approx(1111.1, abs=0.2)

    def test_split_example(self):
        # nu = 1111 Hz, N = 16, delta_f = 15 kHz => nu*NT = 1.185
        grid = OtfsGrid(64, 16, 15e3)
        cycles = 1111.0 * grid.n * grid.t_sym
        k, beta = split_doppler(cycles)
        assert k == 1
        assert beta == pytest.approx(0.1850666666666667, abs=1e-12)

    def test_split_is_exact(self):
        rng = np.random.default_rng(0)
        for cycles in rng.uniform(-3, 3, 1000):
            k, beta = split_doppler(cycles)
            assert k + beta == cycles
            assert -0.5 < beta <= 0.5

    def test_boundary_goes_to_upper_half(self):
        assert split_doppler(0.5) == (0, 0.5)
        assert split_doppler(-0.5) == (-1, 0.5)

    def test_sign_convention(self):
        rng = np.random.default_rng(1)
        toward = np.array(
            [jakes_doppler(V_MAX, True, GRID, rng)[0] for _ in range(500)]
        )
        away = np.array(
            [jakes_doppler(V_MAX, False, GRID, rng)[0] for _ in range(500)]
        )
        assert np.all(toward >= 0)
        assert np.all(away <= 0)
        assert np.all(np.abs(toward) <= V_MAX)

    def test_zero_speed(self):
        rng = np.random.default_rng(2)
        nu, k, beta = jakes_doppler(0.0, True, GRID, rng)
        assert (nu, k, beta) == (0.0, 0, 0.0)


class TestRcPulse:
    def test_peak(self):
        assert rc_pulse(0.0, 0.4, 1e-6) == pytest.approx(1.0)

    def test_nyquist_zero(self):
        assert rc_pulse(1e-6, 0.4, 1e-6) == pytest.approx(0.0, abs=1e-12)

    def test_half_sample_value(self):
        # frozen from an independent closed-form evaluation
        assert rc_pulse(0.5e-6, 0.4, 1e-6) == pytest.approx(
            0.613138350952957, abs=1e-12
        )

    def test_singularity_limit(self):
        ts = 1e-6
        tau = ts / (2 * 0.4)
        expected = -0.1414213562373095  # pi/4 * sinc(1/(2*0.4))
        assert rc_pulse(tau, 0.4, ts) == pytest.approx(expected, abs=1e-9)
        # approaching the singularity agrees with the limit
        assert rc_pulse(tau * (1 + 1e-9), 0.4, ts) == pytest.approx(expected, abs=1e-6)

    def test_rejects_bad_rolloff(self):
        with pytest.raises(ValueError):
            rc_pulse(0.0, 0.0, 1e-6)


class TestGenerateChannel:
    def test_profile_normalization(self):
        for mode in ("uniform", "exponential"):
            profile = ChannelProfile(num_paths=4, profile_mode=mode)
            _, powers = profile.resolve(GRID)
            assert powers.sum() == pytest.approx(1.0)

    def test_requested_path_count(self):
        rng = np.random.default_rng(3)
        profile = ChannelProfile(num_paths=4)
        ch = generate_channel(522.0, True, profile, GRID, V_MAX, rng)
        assert ch.num_paths == 4
        assert ch.num_taps >= int((ch.timing_offset + ch.delays.max()) / GRID.ts)

    def test_gain_power_statistics(self):
        rng = np.random.default_rng(4)
        profile = ChannelProfile(num_paths=4, profile_mode="uniform")
        total = np.zeros(4)
        n = 4000
        for _ in range(n):
            ch = generate_channel(
                522.0, True, profile, GRID, V_MAX, rng, pathloss_override_db=0.0
            )
            total += np.abs(ch.gains) ** 2
        assert np.allclose(total / n, 0.25, atol=0.02)

    def test_profile_shorter_than_l_rejected(self):
        profile = ChannelProfile(num_paths=4, delays_s=(0.0, 1e-6))
        with pytest.raises(ValueError):
            profile.resolve(GRID)

    def test_single_tap_flat_channel_scales_frame(self):
        rng = np.random.default_rng(5)
        profile = ChannelProfile(num_paths=1, delays_s=(0.0,))
        ch = generate_channel(
            1000.0, True, profile, GRID, 0.0, rng, pathloss_override_db=0.0
        )
        x = rng.standard_normal((GRID.m, GRID.n)) + 0j
        r = apply_time_domain(modem.modulate(x, GRID), ch, GRID)
        y = modem.demodulate(r, GRID)
        assert np.max(np.abs(y - ch.gains[0] * x)) < 1e-10


class TestApplyTimeDomain:
    def test_zero_gains_zero_output(self):
        import dataclasses

        ch = dataclasses.replace(identity_channel(), gains=np.array([0.0 + 0j]))
        s = modem.modulate(np.ones((GRID.m, GRID.n)), GRID)
        assert np.all(apply_time_domain(s, ch, GRID).samples == 0)

    def test_identity_channel_passthrough(self):
        s = modem.modulate(np.ones((GRID.m, GRID.n)), GRID)
        r = apply_time_domain(s, identity_channel(), GRID)
        assert np.max(np.abs(r.samples - s.samples)) < 1e-14

    def test_short_cp_rejected(self):
        rng = np.random.default_rng(6)
        profile = ChannelProfile(num_paths=4)
        ch = generate_channel(522.0, True, profile, GRID, V_MAX, rng)
        grid_short = OtfsGrid(16, 8, 15e3, cp_len=2)
        s = modem.modulate(np.ones((16, 8)), grid_short)
        with pytest.raises(InterFrameInterferenceError):
            apply_time_domain(s, ch, grid_short)


class TestDdMatrix:
    def test_identity_channel_is_identity_matrix(self):
        h = build_dd_matrix(identity_channel(), GRID).toarray()
        assert np.max(np.abs(h - np.eye(GRID.num_samples))) < 1e-14

    def test_integer_doppler_single_shift(self):
        # beta = 0 collapses the Doppler leakage to one cyclic shift
        ch = MultipathChannel(
            gains=np.array([1.0 + 0j]),
            delays=np.array([2 * GRID.ts]),
            doppler_cycles=np.array([3.0]),
            doppler_idx=np.array([3]),
            doppler_frac=np.array([0.0]),
            timing_offset=0.0,
            num_taps=3,
            pathloss_db=0.0,
            rolloff=0.4,
        )
        h = build_dd_matrix(ch, GRID)
        assert h.nnz == GRID.num_samples  # one entry per row
        assert np.allclose(np.abs(h.data), 1.0)

    def test_matrix_matches_time_domain_pipeline(self):
        rng = np.random.default_rng(7)
        profile = ChannelProfile(
            num_paths=4, profile_mode="uniform", timing_offset_max=0.4 * GRID.ts
        )
        worst = 0.0
        for _ in range(20):
            ch = generate_channel(522.0, rng.uniform() < 0.5, profile, GRID, V_MAX, rng)
            x = rng.standard_normal((GRID.m, GRID.n)) + 1j * rng.standard_normal(
                (GRID.m, GRID.n)
            )
            y_pipe = modem.demodulate(
                apply_time_domain(modem.modulate(x, GRID), ch, GRID), GRID
            )
            y_mat = build_dd_matrix(ch, GRID) @ x.reshape(-1, order="F")
            rel = np.linalg.norm(
                y_mat - y_pipe.reshape(-1, order="F")
            ) / np.linalg.norm(y_mat)
            worst = max(worst, rel)
        assert worst < 1e-8

    def test_path_matrices_compose_to_full_matrix(self):
        rng = np.random.default_rng(8)
        profile = ChannelProfile(num_paths=3, profile_mode="uniform")
        ch = generate_channel(250.0, True, profile, GRID, V_MAX, rng)
        mats = build_path_matrices(ch, GRID)
        amp = 10 ** (-ch.pathloss_db / 20)
        combined = sum(amp * g * m.toarray() for g, m in zip(ch.gains, mats))
        assert np.max(np.abs(combined - build_dd_matrix(ch, GRID).toarray())) < 1e-12

    def test_unit_profile_preserves_energy_on_average(self):
        rng = np.random.default_rng(9)
        profile = ChannelProfile(num_paths=4, profile_mode="uniform")
        x = rng.standard_normal(GRID.num_samples) + 1j * rng.standard_normal(
            GRID.num_samples
        )
        x /= np.linalg.norm(x)
        acc = 0.0
        n = 1000
        for _ in range(n):
            ch = generate_channel(
                522.0, True, profile, GRID, V_MAX, rng, pathloss_override_db=0.0
            )
            acc += np.sum(np.abs(build_dd_matrix(ch, GRID) @ x) ** 2)
        assert acc / n == pytest.approx(1.0, rel=0.1)


class TestPerturbCsi:
    def test_zero_epsilon_is_exact(self):
        rng = np.random.default_rng(10)
        ch = generate_channel(522.0, True, ChannelProfile(), GRID, V_MAX, rng)
        est = perturb_csi(ch, 0.0, rng)
        assert est is ch

    def test_error_bound_against_estimate(self):
        rng = np.random.default_rng(11)
        eps = 0.05
        profile = ChannelProfile(num_paths=4, timing_offset_max=0.0)
        worst = 0.0
        for _ in range(2500):
            ch = generate_channel(522.0, True, profile, GRID, V_MAX, rng)
            est = perturb_csi(ch, eps, rng)
            nz = np.abs(est.gains) > 0
            rel = np.abs(ch.gains - est.gains)[nz] / np.abs(est.gains)[nz]
            worst = max(worst, rel.max())
            nzc = np.abs(est.doppler_cycles) > 0
            relc = (
                np.abs(ch.doppler_cycles - est.doppler_cycles)[nzc]
                / np.abs(est.doppler_cycles)[nzc]
            )
            if relc.size:
                worst = max(worst, relc.max())
        assert worst <= eps / (1 - eps) + 1e-12

    def test_doppler_split_stays_consistent(self):
        rng = np.random.default_rng(12)
        ch = generate_channel(522.0, True, ChannelProfile(), GRID, V_MAX, rng)
        est = perturb_csi(ch, 0.05, rng)
        assert np.all(est.doppler_idx + est.doppler_frac == est.doppler_cycles)
        assert np.all((est.doppler_frac > -0.5) & (est.doppler_frac <= 0.5))
