import math

import numpy as np
import pytest

from astd.array_geom import CircularArray, geometric_delays
from astd.channel_sim import (
    ENVIRONMENTS,
    EigenrayPath,
    Environment,
    MultichannelRecord,
    NoiseSpec,
    ReverbTail,
    Target,
    TargetScene,
    add_noise,
    echo_onsets,
    image_source_paths,
    load_eigenray_table,
    rayleigh_reflection,
    synthesize_received,
)
from astd.doa import matched_filter_envelope
from astd.waveforms import default_ping, synthesize

ENV = ENVIRONMENTS["env1"]
ARR = CircularArray(4, 2.5)
PING = synthesize(default_ping())
NOISELESS = NoiseSpec(snr_db=math.inf, seed=0)


def scene(*targets):
    return TargetScene(tuple(Target(*t) for t in targets))


class TestEnvironment:
    def test_default_preset_matches_deep_water_setup(self):
        assert ENV.water_depth == 1000.0
        assert ENV.ssp_surface == 1548.52
        assert ENV.ssp_bottom == 1501.38
        assert ENV.sediment_density == 1.8
        assert ENV.sediment_speed == 1800.0
        assert ENV.receiver_depth == 5.0
        assert ENV.effective_sound_speed == pytest.approx(1524.95)

    def test_three_presets_exist(self):
        assert set(ENVIRONMENTS) == {"env1", "env2", "env3"}
        assert ENVIRONMENTS["env2"].water_depth == 100.0
        assert ENVIRONMENTS["env3"].sediment_speed == 1450.0

    def test_depth_and_speed_validation(self):
        with pytest.raises(ValueError):
            Environment(1000, 1500, 1500, 1.8, 1800, source_depth=2000, receiver_depth=5)
        with pytest.raises(ValueError):
            Environment(1000, 900, 1500, 1.8, 1800, source_depth=100, receiver_depth=5)


class TestImageSourcePaths:
    def test_direct_path_geometry(self):
        paths = image_source_paths(ENV, 1000.0, max_order=0)
        assert len(paths) == 1
        length = math.hypot(1000.0, ENV.source_depth - ENV.receiver_depth)
        assert paths[0].delay == pytest.approx(length / ENV.effective_sound_speed, rel=1e-12)
        assert paths[0].amplitude == pytest.approx(1.0 / length, rel=1e-12)

    def test_surface_image_flips_sign(self):
        paths = image_source_paths(ENV, 1000.0, max_order=1)
        surface = [p for p in paths if p.n_surface_bounces == 1 and p.n_bottom_bounces == 0]
        assert len(surface) == 1
        length = math.hypot(1000.0, ENV.source_depth + ENV.receiver_depth)
        assert surface[0].delay == pytest.approx(length / ENV.effective_sound_speed, rel=1e-12)
        assert surface[0].amplitude == pytest.approx(-1.0 / length, rel=1e-12)

    def test_order_one_has_three_paths_sorted_by_delay(self):
        paths = image_source_paths(ENV, 1000.0, max_order=1)
        assert len(paths) == 3
        delays = [p.delay for p in paths]
        assert delays == sorted(delays)

    def test_amplitudes_vanish_with_range(self):
        maxima = [max(abs(p.amplitude) for p in image_source_paths(ENV, r, 2))
                  for r in (1e3, 1e4, 1e5, 1e6)]
        assert all(a > b for a, b in zip(maxima, maxima[1:]))

    def test_max_order_guard(self):
        with pytest.raises(ValueError):
            image_source_paths(ENV, 1000.0, max_order=9)

    def test_strength_scales_amplitudes(self):
        one = image_source_paths(ENV, 1500.0, 2, strength=1.0)
        two = image_source_paths(ENV, 1500.0, 2, strength=2.0)
        for p1, p2 in zip(one, two):
            assert p2.amplitude == pytest.approx(2.0 * p1.amplitude, rel=1e-15)


class TestRayleighReflection:
    def test_total_reflection_below_critical_angle(self):
        # env1 sediment is faster than water: shallow grazing is total
        critical = math.acos(ENV.effective_sound_speed / ENV.sediment_speed)
        assert rayleigh_reflection(ENV, 0.5 * critical) == 1.0

    def test_partial_reflection_above_critical_angle(self):
        r = rayleigh_reflection(ENV, math.radians(80.0))
        assert 0.0 < r < 1.0

    def test_slow_bottom_reflects_negatively_at_shallow_grazing(self):
        r = rayleigh_reflection(ENVIRONMENTS["env3"], math.radians(2.0))
        assert r < 0.0


class TestSynthesizeReceived:
    def test_echo_onset_at_two_way_delay(self):
        # 2R/c oracle: a 1500 m target at c_eff = 1500 arrives at t = 2 s
        env = Environment(1000.0, 1500.0, 1500.0, 1.8, 1800.0, 100.0, 5.0)
        rec = synthesize_received(scene((1500.0, math.pi / 2)), env, ARR, PING,
                                  NOISELESS, max_order=0, duration=5.0)
        # element 0 has zero plane-wave delay for a 90 degree bearing
        envelope = matched_filter_envelope(rec.channels[0], PING)
        assert abs(int(np.argmax(envelope)) - 12000) <= 1

    def test_empty_scene_is_pure_noise_at_configured_rms(self):
        rec = synthesize_received(TargetScene(), ENV, ARR, PING,
                                  NoiseSpec(0.0, seed=7, noise_rms=0.25), duration=2.0)
        rms = np.sqrt(np.mean(rec.channels**2, axis=1))
        assert np.all(np.abs(rms - 0.25) < 0.0025)

    def test_superposition_with_shared_noise_draw(self):
        sc_a = scene((1500.0, math.radians(40.0)))
        sc_b = scene((2500.0, math.radians(60.0)))
        sc_ab = scene((1500.0, math.radians(40.0)), (2500.0, math.radians(60.0)))
        kw = dict(env=ENV, arr=ARR, ping=PING, max_order=1, duration=6.0)
        rec_a = synthesize_received(sc_a, noise=NOISELESS, **kw)
        rec_b = synthesize_received(sc_b, noise=NOISELESS, **kw)
        rec_ab = synthesize_received(sc_ab, noise=NOISELESS, **kw)
        assert np.max(np.abs(rec_ab.channels - rec_a.channels - rec_b.channels)) < 1e-9

        noisy = synthesize_received(sc_ab, noise=NoiseSpec(5.0, seed=3), **kw)
        draw = noisy.channels - rec_ab.channels
        # the residual must be a single scaled deterministic noise draw
        from astd.channel_sim import _noise_matrix

        unit = _noise_matrix(3, rec_ab.channels.shape)
        sigma = draw[0, 0] / unit[0, 0]
        assert np.allclose(draw, sigma * unit, atol=1e-12 * abs(sigma))

    def test_snr_zero_db_power_ratio(self):
        sc = scene((1500.0, 1.0))
        clean = synthesize_received(sc, ENV, ARR, PING, NOISELESS, duration=6.0)
        noisy = synthesize_received(sc, ENV, ARR, PING, NoiseSpec(0.0, seed=5), duration=6.0)
        support = np.any(clean.channels != 0.0, axis=0)
        p_echo = np.mean(clean.channels[:, support] ** 2)
        p_noise = np.var(noisy.channels - clean.channels)
        assert 0.9 < p_echo / p_noise < 1.1

    def test_fixed_seed_is_bit_identical(self):
        sc = scene((2000.0, 2.0))
        kw = dict(env=ENV, arr=ARR, ping=PING, noise=NoiseSpec(0.0, seed=11), duration=6.0)
        a = synthesize_received(sc, **kw)
        b = synthesize_received(sc, **kw)
        assert np.array_equal(a.channels, b.channels)

    def test_cross_channel_lags_match_geometric_delays(self):
        bearing = math.radians(25.0)
        rec = synthesize_received(scene((1500.0, bearing)), ENV, ARR, PING,
                                  NOISELESS, max_order=0, duration=6.0)
        delays = geometric_delays(ARR, bearing, ENV.effective_sound_speed)
        fs = PING.sample_rate
        for j in range(1, 4):
            corr = np.correlate(rec.channels[j], rec.channels[0], mode="full")
            lag = int(np.argmax(np.abs(corr))) - (rec.n_samples - 1)
            assert abs(lag - round((delays[j] - delays[0]) * fs)) <= 1

    def test_matched_filter_peak_at_mean_two_way_delay(self):
        for bearing_deg in (0.0, 37.0,
                            290.0):
            bearing = math.radians(bearing_deg)
            rec = synthesize_received(scene((1500.0, bearing)), ENV, ARR, PING,
                                      NOISELESS, max_order=0, duration=6.0)
            fs = PING.sample_rate
            delays = geometric_delays(ARR, bearing, ENV.effective_sound_speed)
            onset = 2.0 * 1500.0 / ENV.effective_sound_speed
            for k in range(4):
                peak = int(np.argmax(matched_filter_envelope(rec.channels[k], PING)))
                assert abs(peak - round((onset + delays[k]) * fs)) <= 1

    def test_target_strength_doubles_echo(self):
        kw = dict(env=ENV, arr=ARR, ping=PING, noise=NOISELESS, max_order=0, duration=6.0)
        one = synthesize_received(scene((1500.0, 1.0, 1.0)), **kw)
        two = synthesize_received(scene((1500.0, 1.0, 2.0)), **kw)
        mf1 = np.max(matched_filter_envelope(one.channels[0], PING))
        mf2 = np.max(matched_filter_envelope(two.channels[0], PING))
        assert mf2 / mf1 == pytest.approx(2.0, abs=1e-6)

    def test_echo_past_record_end_names_target(self):
        with pytest.raises(ValueError, match="target 0"):
            synthesize_received(scene((5000.0, 0.0)), ENV, ARR, PING,
                                NOISELESS, duration=6.0)

    def test_reverb_tail_added_when_enabled(self):
        sc = scene((1500.0, 1.0))
        quiet = synthesize_received(sc, ENV, ARR, PING, NOISELESS, duration=6.0)
        tail = synthesize_received(sc, ENV, ARR, PING, NOISELESS, duration=6.0,
                                   reverb=ReverbTail(rms=0.01, decay_s=1.0))
        early = slice(0, 6000)  # before any echo arrives
        assert np.all(quiet.channels[:, early] == 0.0)
        expected = 0.01 * np.sqrt((1.0 - np.exp(-2.0)) / 2.0)
        assert np.std(tail.channels[:, early]) == pytest.approx(expected, rel=0.1)

    def test_echo_onsets_helper(self):
        sc = scene((1524.95, 0.0), (3049.9, 1.0))
        assert echo_onsets(sc, ENV) == pytest.approx([2.0, 4.0])


class TestAddNoise:
    def test_infinite_snr_is_identity(self):
        rec = MultichannelRecord(np.random.default_rng(0).normal(size=(2, 600)), 6000.0, 0.1)
        assert add_noise(rec, NoiseSpec(math.inf, seed=1)) is rec

    def test_all_zero_record_rejected(self):
        rec = MultichannelRecord(np.zeros((2, 600)), 6000.0, 0.1)
        with pytest.raises(ValueError):
            add_noise(rec, NoiseSpec(10.0, seed=1))

    def test_scene_validation(self):
        with pytest.raises(ValueError):
            TargetScene((Target(100.0, 0.0),))
        with pytest.raises(ValueError):
            TargetScene((Target(2000.0, 7.0),))


class TestEigenrayTable:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "rays.txt"
        path.write_text("# amplitude delay\n0.002 1.5\n-0.001 1.52\n")
        rays = load_eigenray_table(path)
        assert [r.delay for r in rays] == [1.5, 1.52]
        assert rays[1].amplitude == -0.001

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "rays.txt"
        path.write_text("0.002 1.5 extra\n")
        with pytest.raises(ValueError, match="rays.txt:1"):
            load_eigenray_table(path)

    def test_injected_rays_drive_synthesis(self):
        rays = [EigenrayPath(0.001, 1.0), EigenrayPath(-0.0005, 1.1)]
        rec = synthesize_received(scene((1500.0, 0.0)), ENV, ARR, PING, NOISELESS,
                                  duration=6.0, eigenrays=rays)
        fs = PING.sample_rate
        corr = matched_filter_envelope(rec.channels[1], PING)
        onset = 2.0 * 1500.0 / ENV.effective_sound_speed
        # channel 1 has zero plane-wave delay at bearing 0
        assert abs(int(np.argmax(corr)) - round(onset * fs)) <= 1
        # second ray shows up 0.1 s after the first
        second = int(np.argmax(corr[round((onset + 0.05) * fs):])) + round((onset + 0.05) * fs)
        assert abs(second - round((onset + 0.1) * fs)) <= 1
