import math

import numpy as np
import pytest

from astd.array_geom import CircularArray, steering_vector
from astd.channel_sim import ENVIRONMENTS, NoiseSpec, Target, TargetScene, synthesize_received
from astd.doa import (
    PseudoSpectrum,
    SnapshotSet,
    cbf_spectrum,
    covariance,
    matched_filter_range,
    music_spectrum,
    music_spectrum_from_subspace,
    mvdr_spectrum,
    mvdr_weights,
    noise_subspace,
    spectrum_peaks,
    wideband_spectrum,
)
from astd.waveforms import default_ping, synthesize

ARR = CircularArray(4, 2.5)
C = 1500.0
FREQ = 2500.0


def steering(deg):
    return steering_vector(ARR, math.radians(deg), FREQ, C).entries


def simulated_snapshots(bearings_deg, snr_db, n_snapshots, seed):
    """Monte-Carlo oracle scene: complex Gaussian sources plus unit noise."""
    rng = np.random.default_rng(seed)
    n = ARR.n_elements
    x = np.zeros((n_snapshots, n), dtype=complex)
    amp = math.sqrt(10.0 ** (snr_db / 10.0) / 2.0)
    for deg in bearings_deg:
        s = amp * (rng.standard_normal(n_snapshots) + 1j * rng.standard_normal(n_snapshots))
        x += s[:, None] * steering(deg)[None, :]
    x += math.sqrt(0.5) * (rng.standard_normal((n_snapshots, n))
                           + 1j * rng.standard_normal((n_snapshots, n)))
    return SnapshotSet(x, FREQ)


class TestCovariance:
    def test_single_snapshot_outer_product(self):
        x = np.array([[1.0 + 2.0j, -0.5j, 2.0, 1.0 - 1.0j]])
        r = covariance(SnapshotSet(x, FREQ))
        assert np.allclose(r, np.outer(x[0], x[0].conj()), atol=1e-15)

    def test_iid_noise_approaches_identity(self):
        snap = simulated_snapshots([], 0.0, 10000, seed=0)
        r = covariance(snap)
        off = r - np.diag(np.diag(r))
        assert np.max(np.abs(off)) < 0.05
        assert np.allclose(np.diag(r).real, 1.0, atol=0.05)

    def test_loading_shifts_eigenvalues(self):
        x = np.array([[1.0, 1.0, 1.0, 1.0]], dtype=complex)
        r = covariance(SnapshotSet(x, FREQ), loading=0.001)
        evals = np.linalg.eigvalsh(r)
        assert np.all(evals >= 0.001 * 4.0 / 4.0 - 1e-12)

    def test_hermitian(self):
        snap = simulated_snapshots([30.0], 10.0, 64, seed=1)
        r = covariance(snap)
        assert np.max(np.abs(r - r.conj().T)) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            SnapshotSet(np.zeros((0, 4), dtype=complex), FREQ)


class TestCbf:
    def test_flat_for_identity_covariance(self):
        ps = cbf_spectrum(np.eye(4, dtype=complex), ARR, FREQ, C)
        assert np.allclose(ps.values, 1.0, atol=1e-12)

    def test_noiseless_single_source_peaks_at_truth(self):
        a = steering(30.0)
        ps = cbf_spectrum(np.outer(a, a.conj()), ARR, FREQ, C, grid_step=1.0)
        assert ps.bearings_deg[int(np.argmax(ps.values))] == 30.0

    def test_array_gain_bound_on_rank_one(self):
        s2 = 2.5  # source power
        a = steering(115.0)
        ps = cbf_spectrum(s2 * np.outer(a, a.conj()), ARR, FREQ, C)
        assert ps.scale == pytest.approx(16.0 * s2, rel=1e-9)

    def test_two_separated_sources_form_two_peaks(self):
        a, b = steering(40.0), steering(60.0)
        r = np.outer(a, a.conj()) + np.outer(b, b.conj())
        ps = cbf_spectrum(r, ARR, FREQ, C)
        peaks = spectrum_peaks(ps, rel_threshold=0.5, min_separation_deg=5.0)
        assert any(abs(p - 40.0) <= 1.0 for p in peaks)
        assert any(abs(p - 60.0) <= 1.0 for p in peaks)

    def test_scaling_invariance(self):
        snap = simulated_snapshots([75.0], 10.0, 200, seed=2)
        r = covariance(snap)
        a = cbf_spectrum(r, ARR, FREQ, C).values
        b = cbf_spectrum(37.0 * r, ARR, FREQ, C).values
        assert np.allclose(a, b, atol=1e-12)


class TestMvdr:
    def test_flat_for_identity(self):
        ps = mvdr_spectrum(np.eye(4, dtype=complex), ARR, FREQ, C)
        assert np.allclose(ps.values, 1.0, atol=1e-12)
        assert ps.scale == pytest.approx(0.25, rel=1e-12)

    def test_monte_carlo_single_source(self):
        snap = simulated_snapshots([30.0], 10.0, 500, seed=3)
        r = covariance(snap, loading=1e-3)
        ps = mvdr_spectrum(r, ARR, FREQ, C, grid_step=1.0)
        peak = ps.bearings_deg[int(np.argmax(ps.values))]
        assert abs(peak - 30.0) <= 1.0

    def test_distortionless_constraint(self):
        snap = simulated_snapshots([120.0], 5.0, 300, seed=4)
        r = covariance(snap, loading=1e-3)
        from astd.array_geom import steering_matrix

        grid = np.deg2rad(np.arange(0.0, 360.0, 1.0))
        a = steering_matrix(ARR, grid, FREQ, C)
        w = mvdr_weights(r, a)
        gains = np.einsum("ij,ij->j", w.conj(), a)
        assert np.max(np.abs(gains - 1.0)) < 1e-10

    def test_singular_covariance_rejected(self):
        a = steering(10.0)
        with pytest.raises(ValueError):
            mvdr_spectrum(np.outer(a, a.conj()), ARR, FREQ, C)

    def test_scaling_invariance(self):
        snap = simulated_snapshots([200.0], 10.0, 200, seed=5)
        r = covariance(snap, loading=1e-3)
        a = mvdr_spectrum(r, ARR, FREQ, C).values
        b = mvdr_spectrum(0.003 * r, ARR, FREQ, C).values
        assert np.allclose(a, b, atol=1e-10)


class TestMusic:
    def test_noiseless_source_is_orthogonal_to_noise_subspace(self):
        a = steering(30.0)
        en, evals = noise_subspace(np.outer(a, a.conj()), n_sources=1)
        assert np.linalg.norm(en.conj().T @ a) ** 2 < 1e-8
        assert np.all(np.diff(evals) <= 1e-12)

    def test_two_source_monte_carlo(self):
        snap = simulated_snapshots([40.0, 60.0], 10.0, 500, seed=6)
        r = covariance(snap)
        ps = music_spectrum(r, ARR, 2, FREQ, C, grid_step=1.0)
        peaks = spectrum_peaks(ps, rel_threshold=0.2, max_peaks=2)
        assert len(peaks) == 2
        assert min(abs(p - 40.0) for p in peaks) <= 2.0
        assert min(abs(p - 60.0) for p in peaks) <= 2.0

    def test_eigenvalues_descending_and_real(self):
        snap = simulated_snapshots([10.0], 10.0, 100, seed=7)
        _, evals = noise_subspace(covariance(snap), 1)
        assert evals.dtype.kind == "f"
        assert np.all(np.diff(evals) <= 0.0)

    def test_invalid_source_count(self):
        with pytest.raises(ValueError):
            music_spectrum(np.eye(4, dtype=complex), ARR, 4, FREQ, C)

    def test_invariance_to_noise_subspace_basis(self):
        snap = simulated_snapshots([80.0], 10.0, 200, seed=8)
        en, _ = noise_subspace(covariance(snap), 1)
        rng = np.random.default_rng(9)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
        a = music_spectrum_from_subspace(en, ARR, FREQ, C).values
        b = music_spectrum_from_subspace(en @ q, ARR, FREQ, C).values
        assert np.allclose(a, b, atol=1e-9)


class TestMatchedFilterRange:
    def make_channel(self, ranges, amps, fs=6000.0, n=40000):
        ping = synthesize(default_ping())
        x = np.zeros(n)
        for r, a in zip(ranges, amps):
            lag = round(2.0 * r / C * fs)
            x[lag:lag + len(ping.samples)] += a * ping.samples
        return x, ping

    def test_single_echo_range(self):
        x, ping = self.make_channel([1500.0], [1.0])
        dets = matched_filter_range(x, ping, C)
        assert abs(dets[0].lag - 12000) <= 1
        assert dets[0].range_m == pytest.approx(1500.0, abs=0.125)

    def test_two_echoes_sorted_by_score(self):
        x, ping = self.make_channel([1500.0, 3000.0], [0.5, 1.0])
        dets = matched_filter_range(x, ping, C)
        assert len(dets) >= 2
        assert abs(dets[0].range_m - 3000.0) <= 0.125
        assert abs(dets[1].range_m - 1500.0) <= 0.125

    def test_pure_noise_has_no_detections(self):
        rng = np.random.default_rng(10)
        ping = synthesize(default_ping())
        dets = matched_filter_range(rng.normal(size=60000), ping, C)
        assert dets == []

    def test_replica_longer_than_record_rejected(self):
        ping = synthesize(default_ping())
        with pytest.raises(ValueError):
            matched_filter_range(np.zeros(100), ping, C)


class TestWideband:
    def test_band_average_argmax_stable(self):
        env = ENVIRONMENTS["env1"]
        ping = synthesize(default_ping())
        scene = TargetScene((Target(2000.0, math.radians(30.0)),))
        rec = synthesize_received(scene, env, ARR, ping, NoiseSpec(10.0, seed=11),
                                  duration=6.0)
        wide = wideband_spectrum(rec, ARR, "cbf", 2000.0, 3000.0, env.effective_sound_speed)
        from astd.doa import snapshot_sets
        from astd.features import StftConfig

        sets = snapshot_sets(rec, StftConfig(), 2000.0, 3000.0)
        center = sets[len(sets) // 2]
        ps = cbf_spectrum(covariance(center), ARR, center.frequency,
                          env.effective_sound_speed)
        wide_peak = wide.bearings_deg[int(np.argmax(wide.values))]
        center_peak = ps.bearings_deg[int(np.argmax(ps.values))]
        assert abs(wide_peak - center_peak) <= 1.0

    def test_unknown_method_rejected(self):
        rec = synthesize_received(TargetScene(), ENVIRONMENTS["env1"], ARR,
                                  synthesize(default_ping()), NoiseSpec(0.0, seed=1),
                                  duration=3.0)
        with pytest.raises(ValueError):
            wideband_spectrum(rec, ARR, "esprit", 2000.0, 3000.0, C)


class TestPeaks:
    def test_minimum_separation_is_circular(self):
        grid = np.arange(0.0, 360.0, 1.0)
        vals = np.zeros(360)
        vals[358] = 1.0
        vals[1] = 0.9
        vals[100] = 0.8
        peaks = spectrum_peaks(PseudoSpectrum(grid, vals), min_separation_deg=5.0)
        assert 358.0 in peaks and 100.0 in peaks and 1.0 not in peaks
