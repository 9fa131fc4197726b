"""Classical bearing estimators (CBF, MVDR, MUSIC) and matched-filter ranging.

Narrowband spectra operate on snapshot covariance matrices; wideband
processing averages per-bin spectra incoherently across the ping band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate, find_peaks, hilbert

from .array_geom import CircularArray, steering_matrix
from .channel_sim import MultichannelRecord
from .features import StftConfig, stft
from .waveforms import SampleBuffer

DEFAULT_LOADING = 1e-3


@dataclass(frozen=True)
class SnapshotSet:
    """Complex array observations at one frequency, shape (K, N)."""

    snapshots: np.ndarray
    frequency: float

    def __post_init__(self):
        snaps = np.atleast_2d(np.asarray(self.snapshots, dtype=np.complex128))
        object.__setattr__(self, "snapshots", snaps)
        if snaps.shape[0] < 1:
            raise ValueError("need at least one snapshot")


@dataclass(frozen=True)
class PseudoSpectrum:
    """Max-normalized bearing power map; scale holds the pre-norm maximum."""

    bearings_deg: np.ndarray
    values: np.ndarray
    scale: float = 1.0


def bearing_grid(grid_step: float) -> np.ndarray:
    """Uniform bearing grid in degrees covering [0, 360)."""
    return np.arange(0.0, 360.0, grid_step)


def covariance(snap: SnapshotSet, loading: float = 0.0) -> np.ndarray:
    """Sample covariance (1/K) sum x x^H, with optional diagonal loading
    of loading * trace/N."""
    if loading < 0.0:
        raise ValueError("loading must be >= 0")
    x = snap.snapshots
    r = x.T @ x.conj() / x.shape[0]
    r = 0.5 * (r + r.conj().T)
    if loading > 0.0:
        n = r.shape[0]
        r = r + loading * (np.trace(r).real / n) * np.eye(n)
    return r


def snapshot_sets(rec: MultichannelRecord, cfg: StftConfig,
                  f_lo: float, f_hi: float) -> list[SnapshotSet]:
    """Per-bin snapshot sets from the record's STFT, limited to [f_lo, f_hi]."""
    specs = np.stack([stft(ch, cfg) for ch in rec.channels])  # (N, frames, bins)
    freqs = np.arange(cfg.n_bins) * rec.sample_rate / cfg.fft_size
    sets = []
    for b in np.nonzero((freqs >= f_lo) & (freqs <= f_hi))[0]:
        sets.append(SnapshotSet(specs[:, :, b].T, freqs[b]))
    if not sets:
        raise ValueError("no STFT bins inside the requested band")
    return sets


def cbf_spectrum(r: np.ndarray, arr: CircularArray, frequency: float,
                 sound_speed: float, grid_step: float = 1.0) -> PseudoSpectrum:
    """Conventional beamformer power a^H R a over the bearing grid."""
    grid = bearing_grid(grid_step)
    a = steering_matrix(arr, np.deg2rad(grid), frequency, sound_speed)
    power = np.einsum("ij,ik,kj->j", a.conj(), r, a).real
    return _normalized(grid, power)


def mvdr_weights(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Distortionless weights R^-1 a / (a^H R^-1 a) per steering column."""
    y = np.linalg.solve(r, a)
    denom = np.einsum("ij,ij->j", a.conj(), y).real
    return y / denom[None, :]


def mvdr_spectrum(r: np.ndarray, arr: CircularArray, frequency: float,
                  sound_speed: float, grid_step: float = 1.0) -> PseudoSpectrum:
    """Minimum-variance spectrum 1 / (a^H R^-1 a); requires invertible R."""
    grid = bearing_grid(grid_step)
    a = steering_matrix(arr, np.deg2rad(grid), frequency, sound_speed)
    try:
        y = np.linalg.solve(r, a)
    except np.linalg.LinAlgError as err:
        raise ValueError("covariance is singular; apply diagonal loading") from err
    denom = np.einsum("ij,ij->j", a.conj(), y).real
    if np.any(denom <= 0.0):
        raise ValueError("covariance is not positive definite; apply loading")
    return _normalized(grid, 1.0 / denom)


def noise_subspace(r: np.ndarray, n_sources: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise-subspace basis and eigenvalues (descending) of a covariance."""
    n = r.shape[0]
    if not 1 <= n_sources < n:
        raise ValueError(f"n_sources must lie in [1, {n})")
    evals, evecs = np.linalg.eigh(r)
    order = np.argsort(evals)[::-1]
    return evecs[:, order[n_sources:]], evals[order]


def music_spectrum_from_subspace(en: np.ndarray, arr: CircularArray,
                                 frequency: float, sound_speed: float,
                                 grid_step: float = 1.0) -> PseudoSpectrum:
    grid = bearing_grid(grid_step)
    a = steering_matrix(arr, np.deg2rad(grid), frequency, sound_speed)
    proj = en.conj().T @ a
    denom = np.maximum(np.einsum("ij,ij->j", proj.conj(), proj).real, 1e-300)
    return _normalized(grid, 1.0 / denom)


def music_spectrum(r: np.ndarray, arr: CircularArray, n_sources: int,
                   frequency: float, sound_speed: float,
                   grid_step: float = 1.0) -> PseudoSpectrum:
    """Subspace spectrum 1 / ||E_n^H a||^2 with n_sources assumed known."""
    en, _ = noise_subspace(r, n_sources)
    return music_spectrum_from_subspace(en, arr, frequency, sound_speed, grid_step)


def wideband_spectrum(rec: MultichannelRecord, arr: CircularArray, method: str,
                      f_lo: float, f_hi: float, sound_speed: float,
                      grid_step: float = 1.0, n_sources: int = 1,
                      loading: float = DEFAULT_LOADING,
                      cfg: StftConfig | None = None) -> PseudoSpectrum:
    """Incoherent average of per-bin spectra over [f_lo, f_hi]."""
    cfg = cfg or StftConfig()
    total = None
    for snap in snapshot_sets(rec, cfg, f_lo, f_hi):
        r = covariance(snap, loading if method in ("mvdr", "music") else 0.0)
        if method == "cbf":
            ps = cbf_spectrum(r, arr, snap.frequency, sound_speed, grid_step)
        elif method == "mvdr":
            ps = mvdr_spectrum(r, arr, snap.frequency, sound_speed, grid_step)
        elif method == "music":
            ps = music_spectrum(r, arr, n_sources, snap.frequency, sound_speed, grid_step)
        else:
            raise ValueError(f"unknown method {method!r}")
        total = ps.values if total is None else total + ps.values
    return _normalized(bearing_grid(grid_step), total)


def circular_difference_deg(a: float, b: float) -> float:
    """Minimal angular distance between two bearings in degrees."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def spectrum_peaks(ps: PseudoSpectrum, rel_threshold: float = 0.5,
                   min_separation_deg: float = 5.0,
                   max_peaks: int | None = None) -> list[float]:
    """Bearings of local maxima above rel_threshold, circularly separated."""
    vals = ps.values
    is_peak = (vals >= np.roll(vals, 1)) & (vals >= np.roll(vals, -1))
    candidates = sorted(np.nonzero(is_peak & (vals >= rel_threshold))[0],
                        key=lambda i: vals[i], reverse=True)
    kept: list[int] = []
    for i in candidates:
        if all(circular_difference_deg(ps.bearings_deg[i], ps.bearings_deg[j])
               >= min_separation_deg for j in kept):
            kept.append(i)
        if max_peaks is not None and len(kept) >= max_peaks:
            break
    return [float(ps.bearings_deg[i]) for i in kept]


@dataclass(frozen=True)
class RangeDetection:
    range_m: float
    score: float
    lag: int


def matched_filter_envelope(channel: np.ndarray, replica: SampleBuffer) -> np.ndarray:
    """Pulse-compression envelope per nonnegative lag, normalized by the
    replica energy so a clean echo scores approximately its amplitude.

    Correlating against the analytic replica removes the carrier ripple of
    the real-valued correlation, putting the envelope peak at the echo lag.
    """
    x = np.asarray(channel, dtype=np.float64)
    s = replica.samples
    if len(s) > len(x):
        raise ValueError("replica longer than the record channel")
    return np.abs(correlate(x, hilbert(s), mode="full"))[len(s) - 1:] / np.dot(s, s)


def matched_filter_range(channel: np.ndarray, replica: SampleBuffer,
                         sound_speed: float, threshold: float | None = None,
                         min_separation: int | None = None) -> list[RangeDetection]:
    """Matched-filter the channel and map envelope peak lags to ranges via
    R = lag/fs * c/2.

    The default threshold is 10x the median envelope (noise-floor rule).
    """
    corr = matched_filter_envelope(channel, replica)
    if threshold is None:
        threshold = 10.0 * float(np.median(corr))
    if min_separation is None:
        min_separation = max(len(replica.samples) // 2, 1)
    peaks, props = find_peaks(corr, height=threshold, distance=min_separation)
    fs = replica.sample_rate
    dets = [RangeDetection(lag / fs * sound_speed / 2.0, float(h), int(lag))
            for lag, h in zip(peaks, props["peak_heights"])]
    dets.sort(key=lambda d: d.score, reverse=True)
    return dets


def _normalized(grid: np.ndarray, power: np.ndarray) -> PseudoSpectrum:
    power = np.maximum(np.asarray(power, dtype=np.float64), 0.0)
    peak = float(power.max())
    if peak <= 0.0:
        return PseudoSpectrum(grid, np.zeros_like(power), 0.0)
    return PseudoSpectrum(grid, power / peak, peak)
