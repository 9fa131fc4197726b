"""Model input representations: STFT phase matrices and log-Mel patches.

The bearing branch consumes the per-frame matrix of STFT phases across
hydrophones; the distance branch consumes flattened 16x16 patches of a
128-bin log-Mel spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel_sim import MultichannelRecord
from .waveforms import SampleBuffer

N_MELS = 128


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters; defaults give 1501 one-sided bins at 6 kHz."""

    fft_size: int = 3000
    window_length: int = 3000
    hop: int = 1500
    window: str = "hann"

    def __post_init__(self):
        if self.window_length > self.fft_size:
            raise ValueError("window_length must not exceed fft_size")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            raise ValueError("signal shorter than one analysis window")
        return 1 + (n_samples - self.window_length) // self.hop

    def window_values(self) -> np.ndarray:
        if self.window == "rect":
            return np.ones(self.window_length)
        return np.hanning(self.window_length)


@dataclass(frozen=True)
class PhaseFrameMatrix:
    """STFT phases (radians in (-pi, pi]) per channel for one time frame."""

    values: np.ndarray
    frame_index: int
    magnitudes: np.ndarray | None = None


def stft(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """One-sided STFT, shape (n_frames, n_bins).

    Frames are windowed then zero-padded to fft_size; the frame count is
    1 + floor((len - window_length)/hop).
    """
    x = np.asarray(samples, dtype=np.float64)
    n_frames = cfg.n_frames(len(x))
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * cfg.window_values()[None, :]
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def stft_frame_times(cfg: StftConfig, n_samples: int, fs: float) -> np.ndarray:
    """Start time in seconds of each STFT frame."""
    return cfg.hop * np.arange(cfg.n_frames(n_samples)) / fs


def phase_matrix(rec: MultichannelRecord, cfg: StftConfig, frame: int,
                 with_magnitudes: bool = False) -> PhaseFrameMatrix:
    """Phases of all channels at one STFT frame, shape (N, n_bins)."""
    n_frames = cfg.n_frames(rec.n_samples)
    if not 0 <= frame < n_frames:
        raise IndexError(f"frame {frame} out of range [0, {n_frames})")
    start = frame * cfg.hop
    seg = rec.channels[:, start:start + cfg.window_length] * cfg.window_values()[None, :]
    spec = np.fft.rfft(seg, n=cfg.fft_size, axis=1)
    phases = np.angle(spec)
    phases[phases == -np.pi] = np.pi
    mags = np.abs(spec) if with_magnitudes else None
    return PhaseFrameMatrix(phases, frame, mags)


@dataclass(frozen=True)
class MelConfig:
    """Log-Mel front end; the filter count is pinned to 128 bands."""

    n_mels: int = N_MELS
    frame_length: float = 0.025
    frame_hop: float = 0.010
    f_min: float = 0.0
    f_max: float | None = None
    log_floor: float = 1e-10
    n_fft: int | None = None  # default: 4x zero-padded power of two

    def __post_init__(self):
        if self.n_mels != N_MELS:
            raise ValueError(f"n_mels is fixed at {N_MELS}")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")

    def resolve(self, fs: float) -> tuple[int, int, int, float]:
        """(window samples, hop samples, fft size, f_max) for a sample rate."""
        win = round(self.frame_length * fs)
        hop = round(self.frame_hop * fs)
        n_fft = self.n_fft or 4 * 2 ** int(np.ceil(np.log2(win)))
        f_max = self.f_max if self.f_max is not None else fs / 2.0
        if f_max > fs / 2.0:
            raise ValueError("f_max above Nyquist")
        return win, hop, n_fft, f_max


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(fs: float, n_fft: int, cfg: MelConfig) -> np.ndarray:
    """Triangular filters on the one-sided power spectrum, (n_mels, bins)."""
    _, _, _, f_max = cfg.resolve(fs)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / np.maximum(center - lower, 1e-12)
    falling = (upper - freqs[None, :]) / np.maximum(upper - center, 1e-12)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_filter_centers(fs: float, cfg: MelConfig) -> np.ndarray:
    """Center frequency in Hz of each Mel band."""
    _, _, _, f_max = cfg.resolve(fs)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2))
    return edges[1:-1]


def log_mel(buf: SampleBuffer, cfg: MelConfig) -> np.ndarray:
    """Log-Mel spectrogram, shape (128, n_frames), natural log."""
    win, hop, n_fft, _ = cfg.resolve(buf.sample_rate)
    x = buf.samples
    if len(x) < win:
        raise ValueError("signal shorter than one Mel frame")
    n_frames = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    bank = mel_filterbank(buf.sample_rate, n_fft, cfg)
    return np.log(np.maximum(power @ bank.T, cfg.log_floor)).T


@dataclass(frozen=True)
class PatchGrid:
    """16x16 patches with a 6-cell overlap in both axes (stride 10)."""

    patch_height: int = 16
    patch_width: int = 16
    overlap: int = 6

    def __post_init__(self):
        if not 0 <= self.overlap < min(self.patch_height, self.patch_width):
            raise ValueError("overlap must be smaller than the patch size")

    @property
    def stride_h(self) -> int:
        return self.patch_height - self.overlap

    @property
    def stride_w(self) -> int:
        return self.patch_width - self.overlap


@dataclass(frozen=True)
class PatchSequence:
    """Row-major (frequency-major) flattened patches, shape (n, 256)."""

    patches: np.ndarray
    grid_shape: tuple[int, int]


def extract_patches(mel: np.ndarray, grid: PatchGrid = PatchGrid()) -> PatchSequence:
    """Slice a spectrogram into overlapping flattened patches."""
    mel = np.asarray(mel)
    h, w = mel.shape
    ph, pw = grid.patch_height, grid.patch_width
    sh, sw = grid.stride_h, grid.stride_w
    if h < ph or w < pw:
        raise ValueError(f"spectrogram {h}x{w} smaller than one {ph}x{pw} patch")
    rows = (h - ph) // sh + 1
    cols = (w - pw) // sw + 1
    out = np.empty((rows * cols, ph * pw), dtype=mel.dtype)
    for r in range(rows):
        for c in range(cols):
            out[r * cols + c] = mel[r * sh:r * sh + ph, c * sw:c * sw + pw].ravel()
    return PatchSequence(out, (rows, cols))
