import numpy as np
import pytest

from astd.channel_sim import MultichannelRecord
from astd.features import (
    MelConfig,
    PatchGrid,
    StftConfig,
    extract_patches,
    log_mel,
    mel_filter_centers,
    mel_filterbank,
    phase_matrix,
    stft,
    stft_frame_times,
)
from astd.waveforms import SampleBuffer

FS = 6000.0


class TestStft:
    def test_default_bin_count_is_1501(self):
        assert StftConfig().n_bins == 1501

    def test_frame_count_formula(self):
        cfg = StftConfig(fft_size=512, window_length=512, hop=128)
        x = np.zeros(2048)
        assert stft(x, cfg).shape == (1 + (2048 - 512) // 128, 257)

    def test_short_signal_rejected(self):
        with pytest.raises(ValueError):
            stft(np.zeros(100), StftConfig())

    def test_tone_at_bin_center_has_no_leakage(self):
        cfg = StftConfig(fft_size=3000, window_length=3000, hop=3000, window="rect")
        # 1000 Hz sits exactly on bin 500 (bin width = fs/fft = 2 Hz)
        t = np.arange(3000) / FS
        spec = stft(np.cos(2 * np.pi * 1000.0 * t), cfg)[0]
        mags = np.abs(spec)
        peak = mags[500]
        others = np.delete(mags, 500)
        assert 20 * np.log10(others.max() / peak) < -60.0

    def test_parseval_with_rect_window(self):
        # direct time-domain energy oracle; one-sided bins double except
        # DC and Nyquist
        rng = np.random.default_rng(7)
        x = rng.normal(size=4096)
        cfg = StftConfig(fft_size=512, window_length=512, hop=512, window="rect")
        spec = stft(x, cfg)
        weights = np.full(cfg.n_bins, 2.0)
        weights[0] = weights[-1] = 1.0
        spectral = np.sum(weights[None, :] * np.abs(spec) ** 2) / cfg.fft_size
        assert spectral == pytest.approx(np.sum(x**2), rel=1e-6)

    def test_frame_times(self):
        cfg = StftConfig()
        times = stft_frame_times(cfg, round(15 * FS), FS)
        assert times[0] == 0.0
        assert times[1] == pytest.approx(0.25)


class TestPhaseMatrix:
    def record(self, channels):
        ch = np.asarray(channels)
        return MultichannelRecord(ch, FS, ch.shape[1] / FS)

    def test_shape_matches_channel_and_bin_counts(self):
        rng = np.random.default_rng(0)
        rec = self.record(rng.normal(size=(4, 9000)))
        pm = phase_matrix(rec, StftConfig(), frame=1)
        assert pm.values.shape == (4, 1501)
        assert pm.frame_index == 1

    def test_duplicated_channels_give_identical_rows(self):
        rng = np.random.default_rng(1)
        row = rng.normal(size=6000)
        rec = self.record(np.tile(row, (4, 1)))
        pm = phase_matrix(rec, StftConfig(), frame=0)
        assert np.array_equal(pm.values, np.tile(pm.values[0], (4, 1)))

    def test_pure_delay_appears_as_linear_phase(self):
        # analytic delay-phase oracle: a circular shift by d samples of a
        # window-periodic signal multiplies bin f by exp(-2j pi f d / L)
        rng = np.random.default_rng(2)
        base = rng.normal(size=3000)
        d = 7
        rec = self.record(np.stack([base, np.roll(base, d)]))
        cfg = StftConfig(fft_size=3000, window_length=3000, hop=3000, window="rect")
        pm = phase_matrix(rec, cfg, frame=0, with_magnitudes=True)
        strong = pm.magnitudes[0] > 1e-6 * pm.magnitudes[0].max()
        diff = pm.values[1] - pm.values[0]
        expected = -2 * np.pi * np.arange(1501) * d / 3000.0
        wrapped = np.angle(np.exp(1j * (diff - expected)))
        assert np.max(np.abs(wrapped[strong])) < 1e-3

    def test_phase_invariant_to_positive_gain(self):
        rng = np.random.default_rng(3)
        ch = rng.normal(size=(4, 6000))
        a = phase_matrix(self.record(ch), StftConfig(), 0)
        b = phase_matrix(self.record(2.0 * ch), StftConfig(), 0)
        assert np.array_equal(a.values, b.values)
        c = phase_matrix(self.record(3.7 * ch), StftConfig(), 0)
        assert np.allclose(a.values, c.values, atol=1e-12)

    def test_phases_in_half_open_interval(self):
        rng = np.random.default_rng(4)
        pm = phase_matrix(self.record(rng.normal(size=(2, 6000))), StftConfig(), 0)
        assert np.all(pm.values > -np.pi)
        assert np.all(pm.values <= np.pi)

    def test_frame_out_of_range(self):
        rec = self.record(np.zeros((2, 6000)))
        with pytest.raises(IndexError):
            phase_matrix(rec, StftConfig(), 5)


class TestLogMel:
    def test_always_128_rows(self):
        rng = np.random.default_rng(5)
        mel = log_mel(SampleBuffer(rng.normal(size=6000), FS), MelConfig())
        assert mel.shape[0] == 128

    def test_silence_hits_log_floor(self):
        cfg = MelConfig()
        mel = log_mel(SampleBuffer(np.zeros(6000), FS), cfg)
        assert np.all(mel == np.log(cfg.log_floor))

    def test_tone_peaks_at_nearest_filter(self):
        # filter-center lookup oracle
        cfg = MelConfig()
        t = np.arange(6000) / FS
        mel = log_mel(SampleBuffer(np.sin(2 * np.pi * 1000.0 * t), FS), cfg)
        centers = mel_filter_centers(FS, cfg)
        expected = int(np.argmin(np.abs(centers - 1000.0)))
        assert int(np.argmax(mel.mean(axis=1))) == expected

    def test_filterbank_nonnegative_and_covers_band(self):
        cfg = MelConfig()
        n_fft = 1024
        bank = mel_filterbank(FS, n_fft, cfg)
        assert np.all(bank >= 0.0)
        freqs = np.arange(n_fft // 2 + 1) * FS / n_fft
        inside = (freqs > 0.0) & (freqs < FS / 2.0)
        assert np.all(bank.sum(axis=0)[inside] > 0.0)

    def test_n_mels_is_pinned(self):
        with pytest.raises(ValueError):
            MelConfig(n_mels=64)

    def test_too_short_signal_rejected(self):
        with pytest.raises(ValueError):
            log_mel(SampleBuffer(np.ones(10), FS), MelConfig())


class TestPatches:
    def test_grid_counts(self):
        seq = extract_patches(np.arange(128 * 100, dtype=float).reshape(128, 100))
        assert seq.grid_shape == (12, 9)
        assert seq.patches.shape == (108, 256)

    def test_single_patch_is_flattened_input(self):
        block = np.arange(256, dtype=float).reshape(16, 16)
        seq = extract_patches(block)
        assert seq.grid_shape == (1, 1)
        assert np.array_equal(seq.patches[0], block.ravel())

    def test_constant_input_gives_identical_patches(self):
        seq = extract_patches(np.full((128, 60), 3.5))
        assert np.all(seq.patches == 3.5)

    def test_too_small_input_rejected(self):
        with pytest.raises(ValueError):
            extract_patches(np.zeros((10, 100)))

    def test_overlap_add_reconstructs_covered_region(self):
        rng = np.random.default_rng(6)
        mel = rng.normal(size=(128, 57))
        grid = PatchGrid()
        seq = extract_patches(mel, grid)
        rows, cols = seq.grid_shape
        acc = np.zeros_like(mel)
        cnt = np.zeros_like(mel)
        for r in range(rows):
            for c in range(cols):
                patch = seq.patches[r * cols + c].reshape(16, 16)
                acc[r * 10:r * 10 + 16, c * 10:c * 10 + 16] += patch
                cnt[r * 10:r * 10 + 16, c * 10:c * 10 + 16] += 1.0
        covered = cnt > 0
        assert np.array_equal(acc[covered] / cnt[covered], mel[covered])

    def test_overlap_must_be_smaller_than_patch(self):
        with pytest.raises(ValueError):
            PatchGrid(overlap=16)
