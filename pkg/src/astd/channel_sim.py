"""Multichannel echo synthesis through a shallow-water multipath channel.

The received signal per hydrophone is a sum of delayed/attenuated copies of
the transmit pulse (direct path plus surface/bottom images) embedded in
white Gaussian noise. Propagation uses the image-source method with a
constant effective sound speed; externally computed eigenray tables can be
injected instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .array_geom import CircularArray, geometric_delays
from .waveforms import SampleBuffer

WATER_DENSITY = 1.0  # g/cm^3
MAX_IMAGE_ORDER = 8
SINC_TAPS = 64


@dataclass(frozen=True)
class Environment:
    """Waveguide description: depths, sound-speed endpoints, sediment."""

    water_depth: float
    ssp_surface: float
    ssp_bottom: float
    sediment_density: float
    sediment_speed: float
    source_depth: float
    receiver_depth: float

    def __post_init__(self):
        for name in ("source_depth", "receiver_depth"):
            d = getattr(self, name)
            if not 0.0 < d <= self.water_depth:
                raise ValueError(f"{name} must lie in (0, water_depth]")
        for name in ("ssp_surface", "ssp_bottom", "sediment_speed"):
            v = getattr(self, name)
            if not 1300.0 < v < 2200.0:
                raise ValueError(f"{name} out of plausible range (1300, 2200) m/s")

    @property
    def effective_sound_speed(self) -> float:
        return 0.5 * (self.ssp_surface + self.ssp_bottom)


ENVIRONMENTS = {
    "env1": Environment(1000.0, 1548.52, 1501.38, 1.8, 1800.0, 100.0, 5.0),
    "env2": Environment(100.0, 1500.0, 1510.0, 1.5, 2000.0, 10.0, 5.0),
    "env3": Environment(2000.0, 1500.0, 1550.0, 1.4, 1450.0, 100.0, 5.0),
}


@dataclass(frozen=True)
class EigenrayPath:
    """One propagation path: pressure gain, delay, and bounce counts."""

    amplitude: float
    delay: float
    n_surface_bounces: int = 0
    n_bottom_bounces: int = 0

    def __post_init__(self):
        if self.delay <= 0.0:
            raise ValueError("path delay must be positive")
        if not math.isfinite(self.amplitude):
            raise ValueError("path amplitude must be finite")


@dataclass(frozen=True)
class Target:
    range_m: float
    bearing: float
    strength: float = 1.0


@dataclass(frozen=True)
class TargetScene:
    """Targets visible to the sonar, with a validated range window."""

    targets: tuple[Target, ...] = ()
    min_range: float = 1000.0
    max_range: float = 5000.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        for t in self.targets:
            if not self.min_range <= t.range_m <= self.max_range:
                raise ValueError(f"target range {t.range_m} outside "
                                 f"[{self.min_range}, {self.max_range}] m")
            if not 0.0 <= t.bearing < 2.0 * np.pi:
                raise ValueError("bearing must lie in [0, 2*pi)")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise, reproducible from the seed.

    snr_db scales the noise against the mean echo power over the echo
    supports; noise_rms is the absolute per-channel RMS used when the
    record contains no echo at all.
    """

    snr_db: float
    seed: int
    noise_rms: float = 1.0


@dataclass(frozen=True)
class ReverbTail:
    """Exponentially decaying diffuse tail excited at ping time."""

    rms: float
    decay_s: float


@dataclass(frozen=True)
class MultichannelRecord:
    """Per-hydrophone time series; channels has shape (N, n_samples)."""

    channels: np.ndarray
    sample_rate: float
    duration: float

    def __post_init__(self):
        ch = np.atleast_2d(np.asarray(self.channels, dtype=np.float64))
        object.__setattr__(self, "channels", ch)
        if ch.shape[1] != round(self.duration * self.sample_rate):
            raise ValueError("channel length inconsistent with duration")

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]


def rayleigh_reflection(env: Environment, grazing_angle: float) -> float:
    """Bottom reflection coefficient at the given grazing angle.

    Fluid-fluid Rayleigh coefficient with the water column at the effective
    sound speed. Beyond the critical angle the reflection is total; its
    phase is dropped and the coefficient is reported as 1.0.
    """
    c1 = env.effective_sound_speed
    c2 = env.sediment_speed
    rho1, rho2 = WATER_DENSITY, env.sediment_density
    sin1 = math.sin(grazing_angle)
    cos2 = (c2 / c1) * math.cos(grazing_angle)
    if abs(cos2) >= 1.0:
        return 1.0
    sin2 = math.sqrt(1.0 - cos2 * cos2)
    z1 = rho1 * c1 / sin1
    z2 = rho2 * c2 / sin2
    return (z2 - z1) / (z2 + z1)


def image_source_paths(
    env: Environment, horizontal_range: float, max_order: int, strength: float = 1.0
) -> list[EigenrayPath]:
    """Eigenrays between source and receiver via surface/bottom images.

    max_order bounds the total bounce count per path. Amplitudes combine
    1/length spherical spreading, a -1 per surface bounce, and the Rayleigh
    bottom coefficient per bottom bounce. Sorted by delay ascending.
    """
    if horizontal_range <= 0.0:
        raise ValueError("horizontal range must be positive")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if max_order > MAX_IMAGE_ORDER:
        raise ValueError(f"max_order > {MAX_IMAGE_ORDER} rejected")
    zs, zr, depth = env.source_depth, env.receiver_depth, env.water_depth
    c = env.effective_sound_speed
    paths = []
    for m in range(max_order // 2 + 1):
        # the four image families for each double-bounce cycle m
        family = [
            (2.0 * depth * m + (zr - zs), m, m),
            (2.0 * depth * m + (zr + zs), m + 1, m),
            (2.0 * depth * (m + 1) - (zr + zs), m, m + 1),
            (2.0 * depth * (m + 1) - (zr - zs), m + 1, m + 1),
        ]
        for dz, ns, nb in family:
            if ns + nb > max_order:
                continue
            length = math.hypot(horizontal_range, dz)
            grazing = math.atan2(abs(dz), horizontal_range)
            amp = strength / length * (-1.0) ** ns
            if nb > 0:
                amp *= rayleigh_reflection(env, grazing) ** nb
            paths.append(EigenrayPath(amp, length / c, ns, nb))
    paths.sort(key=lambda p: p.delay)
    return paths


def load_eigenray_table(path) -> list[EigenrayPath]:
    """Read `amplitude delay_seconds` lines; '#' starts a comment."""
    rays = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'amplitude delay_seconds'")
            rays.append(EigenrayPath(float(parts[0]), float(parts[1])))
    if not rays:
        raise ValueError(f"{path}: no eigenrays found")
    rays.sort(key=lambda p: p.delay)
    return rays


def fractional_delay_kernel(mu: float, n_taps: int = SINC_TAPS) -> np.ndarray:
    """Hann-windowed sinc interpolator for a fractional shift mu in [0, 1).

    The kernel's group delay is n_taps/2 - 1 + mu samples; at mu == 0 it
    reduces to a unit impulse (exact integer shift).
    """
    center = n_taps // 2 - 1
    arg = np.arange(n_taps) - center - mu
    half = n_taps // 2
    window = 0.5 * (1.0 + np.cos(np.pi * np.clip(arg / half, -1.0, 1.0)))
    return np.sinc(arg) * window


def _add_delayed(dest: np.ndarray, pulse: np.ndarray, delay_s: float,
                 fs: float, gain: float) -> int:
    """Add gain * pulse delayed by delay_s into dest; returns last index."""
    shift = delay_s * fs
    base = math.floor(shift)
    mu = shift - base
    kernel = fractional_delay_kernel(mu)
    delayed = np.convolve(pulse, kernel)
    start = base - (SINC_TAPS // 2 - 1)
    stop = start + len(delayed)
    lo = max(start, 0)
    if lo < min(stop, len(dest)):
        dest[lo:min(stop, len(dest))] += gain * delayed[lo - start:min(stop, len(dest)) - start]
    return stop - 1


def add_noise(rec: MultichannelRecord, noise: NoiseSpec,
              support: np.ndarray | None = None) -> MultichannelRecord:
    """Add per-channel white Gaussian noise at the configured SNR.

    SNR convention: 10*log10(P_echo / P_noise) with P_echo the mean squared
    sample over the echo support (default: samples where any channel is
    nonzero) and P_noise the noise variance. Channels get independent
    streams derived from the seed; fixed seed gives bit-identical output.
    """
    if not math.isfinite(noise.snr_db):
        return rec
    if support is None:
        support = np.any(rec.channels != 0.0, axis=0)
    if not np.any(support) or not np.any(rec.channels):
        raise ValueError("cannot set a finite SNR on an all-zero record")
    p_echo = float(np.mean(rec.channels[:, support] ** 2))
    sigma = math.sqrt(p_echo * 10.0 ** (-noise.snr_db / 10.0))
    out = rec.channels + sigma * _noise_matrix(noise.seed, rec.channels.shape)
    return MultichannelRecord(out, rec.sample_rate, rec.duration)


def _noise_matrix(seed: int, shape: tuple[int, int]) -> np.ndarray:
    streams = np.random.SeedSequence(seed).spawn(shape[0])
    return np.stack([np.random.default_rng(s).standard_normal(shape[1])
                     for s in streams])


def synthesize_received(
    scene: TargetScene,
    env: Environment,
    arr: CircularArray,
    ping: SampleBuffer,
    noise: NoiseSpec,
    max_order: int = 2,
    duration: float = 15.0,
    reverb: ReverbTail | None = None,
    eigenrays: list[EigenrayPath] | None = None,
) -> MultichannelRecord:
    """Simulate the array record for one ping at t = 0.

    Each target echoes back with a two-way onset of 2*range/c_eff; the
    multipath structure (from the image-source method, or from an injected
    eigenray table) is applied as delays relative to its earliest path,
    with that path's amplitude as the per-path gain reference. Per-element
    plane-wave delays shift each channel. Noise is added last.
    """
    fs = ping.sample_rate
    n = round(duration * fs)
    c = env.effective_sound_speed
    channels = np.zeros((arr.n_elements, n))
    support = np.zeros(n, dtype=bool)
    for t_idx, target in enumerate(scene.targets):
        paths = eigenrays if eigenrays is not None else image_source_paths(
            env, target.range_m, max_order)
        tau0 = paths[0].delay
        onset = 2.0 * target.range_m / c
        elem_delays = geometric_delays(arr, target.bearing, c)
        for path in paths:
            rel = path.delay - tau0
            gain = target.strength * path.amplitude
            for k in range(arr.n_elements):
                last = _add_delayed(channels[k], ping.samples,
                                    onset + rel + elem_delays[k], fs, gain)
                if last >= n:
                    raise ValueError(
                        f"echo of target {t_idx} (range {target.range_m} m) "
                        f"extends past the {duration} s record")
        lo = math.floor((onset + min(elem_delays)) * fs)
        hi = math.ceil((onset + (paths[-1].delay - tau0) + max(elem_delays)) * fs
                       + len(ping.samples) + SINC_TAPS)
        support[max(lo, 0):min(hi, n)] = True
    if reverb is not None:
        t = np.arange(n) / fs
        envelope = reverb.rms * np.exp(-t / reverb.decay_s)
        streams = np.random.SeedSequence((noise.seed, 0x7EB)).spawn(arr.n_elements)
        for k, s in enumerate(streams):
            channels[k] += envelope * np.random.default_rng(s).standard_normal(n)
        support |= envelope > 1e-4 * reverb.rms
    rec = MultichannelRecord(channels, fs, duration)
    if not scene.targets and reverb is None:
        if not math.isfinite(noise.snr_db):
            return rec
        out = noise.noise_rms * _noise_matrix(noise.seed, channels.shape)
        return MultichannelRecord(out, fs, duration)
    return add_noise(rec, noise, support)


def echo_onsets(scene: TargetScene, env: Environment) -> list[float]:
    """Two-way echo onset times in seconds, one per target."""
    c = env.effective_sound_speed
    return [2.0 * t.range_m / c for t in scene.targets]
