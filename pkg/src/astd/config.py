"""Run configuration: a flat key=value file mirroring every tunable default.

Unknown keys are rejected; the resolved configuration is echoed into each
run's output directory for provenance. The ASTD_SEED environment variable
overrides the seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

from .channel_sim import ENVIRONMENTS
from .features import MelConfig, PatchGrid, StftConfig
from .models import DoaGrid
from .nn import AdamConfig, SchedulerConfig
from .waveforms import WaveformSpec


class ConfigError(Exception):
    """Bad configuration (CLI exit code 1)."""


class DataError(Exception):
    """Missing or malformed data (CLI exit code 2)."""


class NumericError(Exception):
    """Numeric failure such as NaN (CLI exit code 3)."""


def _cfg(default, help_text: str):
    return field(default=default, metadata={"help": help_text})


@dataclass
class RunConfig:
    seed: int = _cfg(0, "base RNG seed for synthesis/training")
    sample_rate: float = _cfg(6000.0, "sample rate in Hz")
    duration: float = _cfg(15.0, "record length in seconds")
    n_elements: int = _cfg(4, "hydrophones on the ring")
    radius: float = _cfg(2.5, "ring radius in meters")
    reference_bearing_deg: float = _cfg(0.0, "bearing of element 0 (degrees)")
    waveform: str = _cfg("hfm", "transmit waveform: cw|lfm|hfm")
    f_start: float = _cfg(2000.0, "sweep start frequency in Hz")
    f_end: float = _cfg(3000.0, "sweep end frequency in Hz")
    ping_duration: float = _cfg(1.0, "pulse length in seconds")
    amplitude: float = _cfg(1.0, "pulse amplitude")
    ramp: float = _cfg(0.0, "raised-cosine edge ramp in seconds")
    environments: tuple = _cfg(("env1",), "environment presets, comma-separated")
    snr_levels: tuple = _cfg((10.0, 0.0, -10.0), "SNR levels in dB, comma-separated")
    records_per_condition: int = _cfg(20, "records per (environment, SNR) pair")
    targets_per_scene: int = _cfg(1, "targets in every synthesized scene")
    min_range: float = _cfg(1000.0, "closest target range in meters")
    max_range: float = _cfg(5000.0, "farthest target range in meters")
    target_strength: float = _cfg(1.0, "echo strength multiplier")
    max_order: int = _cfg(2, "image-source bounce order")
    noise_rms: float = _cfg(1.0, "noise RMS for target-free records")
    segment_length: float = _cfg(1.0, "segment length in seconds")
    segment_overlap: float = _cfg(0.0, "segment overlap rate in [0,1)")
    label_rule: str = _cfg("onset", "segment labeling: onset|energy")
    range_mapping: str = _cfg("start", "segment-to-range time: start|midpoint")
    fft_size: int = _cfg(3000, "STFT transform size")
    window_length: int = _cfg(3000, "STFT window length in samples")
    hop: int = _cfg(1500, "STFT hop in samples")
    stft_window: str = _cfg("hann", "STFT window: hann|rect")
    mel_frame: float = _cfg(0.025, "Mel frame length in seconds")
    mel_hop: float = _cfg(0.010, "Mel frame hop in seconds")
    mel_fmin: float = _cfg(0.0, "Mel filterbank lower edge in Hz")
    mel_fmax: float = _cfg(0.0, "Mel upper edge in Hz (0 = Nyquist)")
    mel_floor: float = _cfg(1e-10, "log floor for Mel power")
    patch_size: int = _cfg(16, "square patch side in Mel cells")
    patch_overlap: int = _cfg(6, "patch overlap in cells")
    normalize_features: bool = _cfg(True, "standardize each Mel spectrogram")
    balance_positives: bool = _cfg(True, "oversample echo segments in training")
    phase_normalize: bool = _cfg(True, "relative-phase + ping-band input stage")
    grid_classes: int = _cfg(36, "bearing grid size")
    codec: str = _cfg("softmax_expectation",
                      "bearing codec: softmax_expectation|one_hot_multilabel")
    detect_threshold: float = _cfg(0.5, "detection score threshold")
    frame_overlap_min: float = _cfg(0.5, "min echo overlap for training frames")
    multi_frame_average: bool = _cfg(False, "average scores over echo frames")
    d_model: int = _cfg(64, "transformer width")
    depth: int = _cfg(2, "transformer blocks")
    heads: int = _cfg(4, "attention heads")
    max_patches: int = _cfg(256, "positional table size")
    ff_mult: int = _cfg(4, "feed-forward width multiplier")
    angle_lr: float = _cfg(1e-3, "bearing model learning rate")
    angle_epochs: int = _cfg(50, "bearing model epochs")
    plateau_factor: float = _cfg(0.1, "plateau LR reduction factor")
    plateau_patience: int = _cfg(3, "epochs without improvement before reduce")
    min_lr: float = _cfg(1e-4, "plateau LR floor")
    early_stop_patience: int = _cfg(6, "epochs without improvement before stop")
    range_lr: float = _cfg(1e-4, "distance model learning rate")
    range_epochs: int = _cfg(20, "distance model epochs")
    decay_factor: float = _cfg(0.85, "per-epoch step decay factor")
    batch_size: int = _cfg(32, "training batch size")
    jobs: int = _cfg(1, "worker bound for parallel work")

    def __post_init__(self):
        if self.waveform not in ("cw", "lfm", "hfm"):
            raise ConfigError(f"unknown waveform {self.waveform!r}")
        for env in self.environments:
            if env not in ENVIRONMENTS:
                raise ConfigError(f"unknown environment {env!r}")
        if self.label_rule not in ("onset", "energy"):
            raise ConfigError(f"unknown label_rule {self.label_rule!r}")
        if self.range_mapping not in ("start", "midpoint"):
            raise ConfigError(f"unknown range_mapping {self.range_mapping!r}")
        if not 0.0 <= self.segment_overlap < 1.0:
            raise ConfigError("segment_overlap must lie in [0, 1)")
        if self.codec not in ("softmax_expectation", "one_hot_multilabel"):
            raise ConfigError(f"unknown codec {self.codec!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    # -- constructors for module-level configs -------------------------------

    def waveform_spec(self) -> WaveformSpec:
        f_end = self.f_start if self.waveform == "cw" else self.f_end
        return WaveformSpec(self.waveform, self.f_start, f_end,
                            self.ping_duration, self.sample_rate, self.amplitude)

    def stft_config(self) -> StftConfig:
        return StftConfig(self.fft_size, self.window_length, self.hop,
                          self.stft_window)

    def mel_config(self) -> MelConfig:
        f_max = self.mel_fmax if self.mel_fmax > 0.0 else None
        return MelConfig(frame_length=self.mel_frame, frame_hop=self.mel_hop,
                         f_min=self.mel_fmin, f_max=f_max, log_floor=self.mel_floor)

    def patch_grid(self) -> PatchGrid:
        return PatchGrid(self.patch_size, self.patch_size, self.patch_overlap)

    def doa_grid(self) -> DoaGrid:
        return DoaGrid(self.grid_classes, self.codec, self.detect_threshold)

    def ping_band_bins(self) -> tuple[int, int] | None:
        """STFT bin window of the transmit band, for the phase input stage."""
        if not self.phase_normalize:
            return None
        f_lo, f_hi = sorted((self.f_start, self.f_end))
        lo = int(math.floor(f_lo / self.sample_rate * self.fft_size))
        hi = int(math.ceil(f_hi / self.sample_rate * self.fft_size))
        return max(lo, 0), min(hi, self.fft_size // 2)

    def angle_optimizer(self) -> tuple[AdamConfig, SchedulerConfig]:
        return (AdamConfig(self.angle_lr),
                SchedulerConfig("plateau", self.plateau_factor,
                                self.plateau_patience, self.min_lr,
                                self.early_stop_patience))

    def range_optimizer(self) -> tuple[AdamConfig, SchedulerConfig]:
        return AdamConfig(self.range_lr), SchedulerConfig.step_decay(self.decay_factor)

    def effective_seed(self) -> int:
        override = os.environ.get("ASTD_SEED")
        return int(override) if override else self.seed


def _parse_value(name: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError("expected true/false")
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if all(isinstance(d, float) for d in default) or name == "snr_levels":
                return tuple(float(p) for p in parts)
            return tuple(parts)
        return text
    except ValueError as err:
        raise ConfigError(f"bad value for {name!r}: {text!r} ({err})") from err


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines; '#' starts a comment; unknown keys rejected."""
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, value, known[key].default)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


def config_text(cfg: RunConfig) -> str:
    """Serialize every key for provenance echoing."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_help() -> str:
    """One line per key with its default, for --help."""
    lines = []
    for f in fields(RunConfig):
        default = f.default
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        lines.append(f"  {f.name}={default}  {f.metadata['help']}")
    return "\n".join(lines)
