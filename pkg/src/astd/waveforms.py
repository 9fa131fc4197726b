"""Transmit waveform synthesis: CW tones and LFM/HFM chirps.

All waveforms are real-valued cosine sweeps with a rectangular envelope by
default; optional raised-cosine ramps limit spectral splatter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

WAVEFORM_KINDS = ("cw", "lfm", "hfm")


@dataclass(frozen=True)
class WaveformSpec:
    """Parameters of a transmit waveform.

    kind: one of "cw", "lfm", "hfm".
    f_start, f_end: sweep endpoints in Hz (equal for CW).
    duration: pulse length in seconds.
    sample_rate: in Hz.
    amplitude: peak amplitude (dimensionless).
    """

    kind: str
    f_start: float
    f_end: float
    duration: float
    sample_rate: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in WAVEFORM_KINDS:
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        vals = (self.f_start, self.f_end, self.duration, self.sample_rate, self.amplitude)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("waveform parameters must be finite")
        nyq = self.sample_rate / 2.0
        if not (0.0 < self.f_start <= nyq and 0.0 < self.f_end <= nyq):
            raise ValueError(f"frequencies must lie in (0, {nyq}] Hz")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.kind == "cw" and self.f_start != self.f_end:
            raise ValueError("cw requires f_start == f_end")
        if self.kind == "hfm" and self.f_start == self.f_end:
            raise ValueError("hfm requires f_start != f_end")

    @property
    def n_samples(self) -> int:
        return round(self.duration * self.sample_rate)


@dataclass(frozen=True)
class SampleBuffer:
    """Real time-domain samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _phase(spec: WaveformSpec, t: np.ndarray) -> np.ndarray:
    f0, f1, T = spec.f_start, spec.f_end, spec.duration
    if spec.kind == "cw":
        return 2.0 * np.pi * f0 * t
    if spec.kind == "lfm":
        return 2.0 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2.0 * T))
    # hfm: instantaneous frequency f0 / (1 - (f1-f0) t / (f1 T)) sweeps
    # hyperbolically from f0 at t=0 to f1 at t=T
    return -2.0 * np.pi * (f0 * f1 * T) / (f1 - f0) * np.log1p(-(f1 - f0) * t / (f1 * T))


def synthesize(spec: WaveformSpec, ramp: float = 0.0) -> SampleBuffer:
    """Generate the waveform of `spec`.

    ramp: optional raised-cosine ramp length in seconds applied to both
    ends of the pulse (0 keeps the rectangular envelope).
    """
    n = spec.n_samples
    t = np.arange(n) / spec.sample_rate
    x = spec.amplitude * np.cos(_phase(spec, t))
    if ramp > 0.0:
        n_ramp = min(round(ramp * spec.sample_rate), n // 2)
        if n_ramp > 0:
            w = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_ramp) / n_ramp))
            x[:n_ramp] *= w
            x[-n_ramp:] *= w[::-1]
    return SampleBuffer(x, spec.sample_rate)


def instantaneous_frequency(buf: SampleBuffer) -> np.ndarray:
    """Estimate instantaneous frequency in Hz per sample.

    Central finite difference of the unwrapped analytic-signal phase.
    The first and last samples use one-sided differences and are less
    reliable; so are a few samples near each edge (transform leakage).
    """
    x = buf.samples
    if len(x) < 3:
        raise ValueError("buffer too short for frequency estimation")
    if np.max(np.abs(x)) == 0.0:
        raise ValueError("phase undefined for all-zero signal")
    phase = np.unwrap(np.angle(hilbert(x)))
    return np.gradient(phase) * buf.sample_rate / (2.0 * np.pi)


def default_ping(sample_rate: float = 6000.0) -> WaveformSpec:
    """The default transmit pulse: HFM 2000 -> 3000 Hz over 1 s."""
    return WaveformSpec("hfm", 2000.0, 3000.0, 1.0, sample_rate)
