"""End-to-end plumbing: record files, segmentation and range mapping,
dataset synthesis with manifests, branch feature assembly, detection maps,
and the sweep experiment harness."""

from __future__ import annotations

import hashlib
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .array_geom import CircularArray
from .channel_sim import (
    ENVIRONMENTS,
    MultichannelRecord,
    NoiseSpec,
    Target,
    TargetScene,
    echo_onsets,
    synthesize_received,
)
from .config import ConfigError, DataError, RunConfig, config_text
from .features import extract_patches, log_mel, phase_matrix, stft_frame_times
from .metrics import auc as metric_auc
from .metrics import match_bearings, recall as metric_recall
from .models import (
    AngleDnn,
    DoaGrid,
    SegmentTransformer,
    class_scores,
    decode_angle,
    decode_class_scores,
    encode_labels,
)
from .waveforms import SampleBuffer, synthesize

RECORD_MAGIC = b"ASTDSIG1"
MANIFEST_NAME = "manifest.txt"
CONFIG_ECHO_NAME = "run.cfg"


# -- record files --------------------------------------------------------------


def write_record(path, rec: MultichannelRecord) -> None:
    """Binary record: magic, fs (u32), channels (u16), samples (u64), then
    channel-interleaved float32 little-endian samples."""
    fs = round(rec.sample_rate)
    if fs != rec.sample_rate:
        raise DataError("record format requires an integer sample rate")
    with open(path, "wb") as fh:
        fh.write(RECORD_MAGIC)
        fh.write(struct.pack("<IHQ", fs, rec.n_channels, rec.n_samples))
        fh.write(np.ascontiguousarray(rec.channels.T, dtype="<f4").tobytes())


def read_record(path) -> MultichannelRecord:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(RECORD_MAGIC))
            if magic != RECORD_MAGIC:
                raise DataError(f"{path}: not a record file")
            fs, n_ch, n_samp = struct.unpack("<IHQ", fh.read(14))
            data = np.frombuffer(fh.read(4 * n_ch * n_samp), dtype="<f4")
    except OSError as err:
        raise DataError(f"cannot read record {path}: {err}") from err
    if data.size != n_ch * n_samp:
        raise DataError(f"{path}: truncated record")
    channels = data.reshape(n_samp, n_ch).T
    return MultichannelRecord(channels, float(fs), n_samp / fs)


def write_sample_buffer(path, buf: SampleBuffer) -> None:
    rec = MultichannelRecord(buf.samples[None, :], buf.sample_rate,
                             len(buf.samples) / buf.sample_rate)
    write_record(path, rec)


# -- segmentation and range mapping ---------------------------------------------


@dataclass(frozen=True)
class SegmentRecord:
    """One time slice of a channel with its presence label."""

    index: int
    samples: np.ndarray
    length_seconds: float
    overlap_rate: float
    label: str  # "p0" (no target) or "p1" (target)
    start_time: float


@dataclass(frozen=True)
class RangeEstimate:
    range_m: float
    echo_time: float
    sound_speed: float


def segment_to_range(index: int, length_s: float, overlap: float,
                     sound_speed: float, mapping: str = "start") -> RangeEstimate:
    """Map a segment position to range: S = V*T/2 with T = c*L*(1-h).

    mapping "midpoint" uses the segment midpoint instead of its start.
    """
    if index < 0:
        raise ValueError("segment index must be >= 0")
    position = index + 0.5 if mapping == "midpoint" else float(index)
    echo_time = length_s * position * (1.0 - overlap)
    return RangeEstimate(sound_speed * echo_time / 2.0, echo_time, sound_speed)


def segment_signal(samples: np.ndarray, fs: float, length_s: float,
                   overlap: float, truth_onsets: Iterable[float] = (),
                   ping_duration: float = 0.0,
                   label_rule: str = "onset") -> list[SegmentRecord]:
    """Slice a channel into segments starting every c*(1-h) seconds.

    Labels: "onset" marks p1 iff an echo onset time falls inside the
    segment; "energy" marks p1 iff at least half the ping duration overlaps
    the segment.
    """
    x = np.asarray(samples, dtype=np.float64)
    n_seg_samples = round(length_s * fs)
    if n_seg_samples < 1 or n_seg_samples > len(x):
        raise ValueError("segment length must fit inside the record")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap rate must lie in [0, 1)")
    duration = len(x) / fs
    hop = length_s * (1.0 - overlap)
    count = int(math.floor((duration - length_s) / hop)) + 1
    onsets = list(truth_onsets)
    segments = []
    for nu in range(count):
        start = nu * hop
        first = round(start * fs)
        label = "p0"
        for onset in onsets:
            if label_rule == "onset":
                hit = start <= onset < start + length_s
            else:
                covered = min(onset + ping_duration, start + length_s) - max(onset, start)
                hit = covered >= 0.5 * ping_duration
            if hit:
                label = "p1"
                break
        segments.append(SegmentRecord(nu, x[first:first + n_seg_samples],
                                      length_s, overlap, label, start))
    return segments


# -- dataset generation ----------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    split: str
    snr_db: float
    env_id: str
    targets: tuple  # of (bearing_deg, range_m)
    seed: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    header: dict[str, str]

    def split(self, name: str) -> list[ManifestEntry]:
        out = [e for e in self.entries if e.split == name]
        if not out:
            raise DataError(f"manifest has no {name!r} split")
        return out

    def text(self) -> str:
        lines = [f"# {k}={v}" for k, v in self.header.items()]
        for e in self.entries:
            cells = [e.file, e.split, repr(e.snr_db), e.env_id]
            cells += [f"{b!r}:{r!r}" for b, r in e.targets]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def write(self, path) -> None:
        Path(path).write_text(self.text())

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        header: dict[str, str] = {}
        entries: list[ManifestEntry] = []
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as err:
            raise DataError(f"cannot read manifest {path}: {err}") from err
        base_seed = 0
        for line in lines:
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
                if key == "seed":
                    base_seed = int(value)
                continue
            cells = line.split("\t")
            if len(cells) < 4:
                raise DataError(f"manifest line too short: {line!r}")
            targets = tuple(
                (float(c.split(":")[0]), float(c.split(":")[1])) for c in cells[4:])
            entries.append(ManifestEntry(cells[0], cells[1], float(cells[2]),
                                         cells[3], targets,
                                         _entry_seed(base_seed, len(entries))))
        return cls(entries, header)


def _entry_seed(base_seed: int, index: int) -> int:
    return int(np.random.default_rng((base_seed, index, 0xA5)).integers(2**62))


def build_manifest(cfg: RunConfig, seed: int | None = None) -> DatasetManifest:
    """Deterministic scene draws for every (environment, SNR) condition,
    split 8:1:1 within each condition."""
    base_seed = cfg.effective_seed() if seed is None else seed
    entries: list[ManifestEntry] = []
    for env_id in cfg.environments:
        for snr in cfg.snr_levels:
            for j in range(cfg.records_per_condition):
                index = len(entries)
                rng = np.random.default_rng((base_seed, index, 0x5C))
                targets = tuple(
                    (float(rng.uniform(0.0, 360.0)),
                     float(rng.uniform(cfg.min_range, cfg.max_range)))
                    for _ in range(cfg.targets_per_scene))
                split = {8: "val", 9: "test"}.get(j % 10, "train")
                entries.append(ManifestEntry(
                    f"rec_{index:06d}.sig", split, snr, env_id, targets,
                    _entry_seed(base_seed, index)))
    header = {"seed": str(base_seed), "sample_rate": str(cfg.sample_rate),
              "duration": str(cfg.duration), "waveform": cfg.waveform}
    return DatasetManifest(entries, header)


def synthesize_entry(cfg: RunConfig, entry: ManifestEntry) -> MultichannelRecord:
    """Regenerate one record deterministically from its manifest entry."""
    env = ENVIRONMENTS[entry.env_id]
    arr = CircularArray(cfg.n_elements, cfg.radius,
                        math.radians(cfg.reference_bearing_deg))
    ping = synthesize(cfg.waveform_spec(), ramp=cfg.ramp)
    scene = TargetScene(
        tuple(Target(r, math.radians(b), cfg.target_strength)
              for b, r in entry.targets),
        min_range=cfg.min_range, max_range=cfg.max_range)
    noise = NoiseSpec(entry.snr_db, entry.seed, cfg.noise_rms)
    return synthesize_received(scene, env, arr, ping, noise,
                               max_order=cfg.max_order, duration=cfg.duration)


def generate_dataset(cfg: RunConfig, out_dir, seed: int | None = None) -> DatasetManifest:
    """Write record files and the manifest; echo the config for provenance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(cfg, seed)

    def emit(entry: ManifestEntry) -> None:
        try:
            write_record(out / entry.file, synthesize_entry(cfg, entry))
        except OSError as err:
            raise DataError(f"cannot write {out / entry.file}: {err}") from err

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            list(pool.map(emit, manifest.entries))
    else:
        for entry in manifest.entries:
            emit(entry)
    manifest.write(out / MANIFEST_NAME)
    (out / CONFIG_ECHO_NAME).write_text(config_text(cfg))
    return manifest


def record_loader(data_dir) -> Callable[[ManifestEntry], MultichannelRecord]:
    base = Path(data_dir)
    return lambda entry: read_record(base / entry.file)


# -- branch features --------------------------------------------------------------


def segment_patches(samples: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Distance-branch features for one segment: flattened patches of the
    (optionally standardized) log-Mel spectrogram, float32 (L, 256)."""
    mel = log_mel(SampleBuffer(samples, cfg.sample_rate), cfg.mel_config())
    if cfg.normalize_features:
        std = mel.std()
        mel = (mel - mel.mean()) / (std if std > 1e-12 else 1.0)
    return extract_patches(mel, cfg.patch_grid()).patches.astype(np.float32)


def entry_onsets(cfg: RunConfig, entry: ManifestEntry) -> list[float]:
    env = ENVIRONMENTS[entry.env_id]
    scene = TargetScene(tuple(Target(r, math.radians(b)) for b, r in entry.targets),
                        min_range=cfg.min_range, max_range=cfg.max_range)
    return echo_onsets(scene, env)


def record_segments(rec: MultichannelRecord, cfg: RunConfig,
                    onsets: Iterable[float] = ()) -> list[SegmentRecord]:
    return segment_signal(rec.channels[0], rec.sample_rate, cfg.segment_length,
                          cfg.segment_overlap, onsets, cfg.ping_duration,
                          cfg.label_rule)


def segment_arrays(cfg: RunConfig, entries: list[ManifestEntry], loader,
                   balance: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (patches, labels) for the distance branch over all segments.

    balance oversamples positive segments (deterministic duplication) until
    they reach at least a quarter of the set; scoring a record's segments
    is heavily negative-dominated otherwise.
    """
    feats, labels = [], []
    for entry in entries:
        rec = loader(entry)
        for seg in record_segments(rec, cfg, entry_onsets(cfg, entry)):
            feats.append(segment_patches(seg.samples, cfg))
            labels.append(1.0 if seg.label == "p1" else 0.0)
    if not feats:
        raise DataError("no segments produced; check the manifest")
    x = np.stack(feats)
    y = np.asarray(labels)
    if balance:
        n_pos = int(y.sum())
        n_neg = len(y) - n_pos
        if 0 < n_pos < n_neg / 3.0:
            extra = int(math.ceil(n_neg / (3.0 * n_pos))) - 1
            pos_idx = np.nonzero(y == 1.0)[0]
            x = np.concatenate([x] + [x[pos_idx]] * extra)
            y = np.concatenate([y] + [y[pos_idx]] * extra)
    return x, y


def echo_frames(rec: MultichannelRecord, cfg: RunConfig,
                targets: Iterable[tuple[float, float]], onsets: list[float],
                min_overlap: float | None = None) -> list[tuple[int, list[float]]]:
    """(frame index, bearings present) for STFT frames overlapping an echo.

    Overlap is measured against [onset, onset + ping]; a frame qualifies
    when the covered fraction of the window reaches min_overlap.
    """
    stft_cfg = cfg.stft_config()
    times = stft_frame_times(stft_cfg, rec.n_samples, rec.sample_rate)
    window_s = stft_cfg.window_length / rec.sample_rate
    need = (cfg.frame_overlap_min if min_overlap is None else min_overlap) * window_s
    frames = []
    for i, t0 in enumerate(times):
        present = []
        for (bearing, _), onset in zip(targets, onsets):
            covered = min(onset + cfg.ping_duration, t0 + window_s) - max(onset, t0)
            if covered >= need:
                present.append(bearing)
        if present:
            frames.append((i, present))
    return frames


def central_echo_frame(rec: MultichannelRecord, cfg: RunConfig,
                       onset: float) -> int:
    """Frame whose window center is nearest the echo's center."""
    stft_cfg = cfg.stft_config()
    times = stft_frame_times(stft_cfg, rec.n_samples, rec.sample_rate)
    window_s = stft_cfg.window_length / rec.sample_rate
    center = onset + 0.5 * cfg.ping_duration
    return int(np.argmin(np.abs(times + 0.5 * window_s - center)))


def angle_arrays(cfg: RunConfig, entries: list[ManifestEntry], loader,
                 grid: DoaGrid) -> tuple[np.ndarray, np.ndarray, list[list[float]]]:
    """Stacked (phase inputs, encoded targets, true bearing sets) for the
    bearing branch, one row per qualifying STFT frame."""
    stft_cfg = cfg.stft_config()
    inputs, targets, bearing_sets = [], [], []
    for entry in entries:
        rec = loader(entry)
        onsets = entry_onsets(cfg, entry)
        for frame, bearings in echo_frames(rec, cfg, entry.targets, onsets):
            pm = phase_matrix(rec, stft_cfg, frame)
            inputs.append(pm.values[None].astype(np.float32))
            targets.append(encode_labels(bearings, grid))
            bearing_sets.append(bearings)
    if not inputs:
        raise DataError("no echo-bearing frames found; check the manifest")
    return np.stack(inputs), np.stack(targets), bearing_sets


# -- detection --------------------------------------------------------------------


@dataclass
class DistanceAzimuthMap:
    """Bearing x range score surface with extracted detections."""

    bearings_deg: np.ndarray
    ranges_m: np.ndarray
    scores: np.ndarray  # (n_bearings, n_ranges) in [0, 1]
    detections: list[tuple[float, float, float]]  # (bearing, range, score)


def detect(rec: MultichannelRecord, angle_model: AngleDnn, grid: DoaGrid,
           segment_model: SegmentTransformer, cfg: RunConfig,
           sound_speed: float | None = None) -> DistanceAzimuthMap:
    """Fuse the per-segment presence scores with the decoded bearing scores
    into a bearing x range map (outer product of the max-normalized branch
    scores); detections are local maxima above the configured threshold."""
    if sound_speed is None:
        sound_speed = ENVIRONMENTS[cfg.environments[0]].effective_sound_speed
    segments = record_segments(rec, cfg)
    patches = np.stack([segment_patches(s.samples, cfg) for s in segments])
    seg_scores = segment_model(patches).data.astype(np.float64)
    ranges = np.array([
        segment_to_range(s.index, cfg.segment_length, cfg.segment_overlap,
                         sound_speed, cfg.range_mapping).range_m
        for s in segments])

    candidates = [s for s, score in zip(segments, seg_scores)
                  if score > cfg.detect_threshold]
    stft_cfg = cfg.stft_config()
    times = stft_frame_times(stft_cfg, rec.n_samples, rec.sample_rate)
    window_s = stft_cfg.window_length / rec.sample_rate
    bearing_scores = np.zeros(grid.class_count)
    n_frames = 0
    for i, t0 in enumerate(times):
        covered = max(
            (min(seg.start_time + seg.length_seconds, t0 + window_s)
             - max(seg.start_time, t0) for seg in candidates),
            default=-1.0)
        if covered >= cfg.frame_overlap_min * window_s:
            pm = phase_matrix(rec, stft_cfg, i)
            bearing_scores += class_scores(angle_model.logits(pm.values), grid)
            n_frames += 1
    if n_frames:
        bearing_scores /= n_frames

    b_norm = bearing_scores / bearing_scores.max() if bearing_scores.max() > 0 else bearing_scores
    r_norm = seg_scores / seg_scores.max() if seg_scores.max() > 0 else seg_scores
    scores = np.outer(b_norm, r_norm)

    detections = []
    if candidates:
        peak_b = (b_norm >= np.roll(b_norm, 1)) & (b_norm >= np.roll(b_norm, -1))
        peak_r = _linear_peaks(r_norm)
        for i in np.nonzero(peak_b)[0]:
            for j in np.nonzero(peak_r)[0]:
                if scores[i, j] > cfg.detect_threshold:
                    detections.append((float(grid.bearings_deg[i]),
                                       float(ranges[j]), float(scores[i, j])))
        detections.sort(key=lambda d: d[2], reverse=True)
    return DistanceAzimuthMap(grid.bearings_deg, ranges, scores, detections)


def _linear_peaks(values: np.ndarray) -> np.ndarray:
    higher_left = np.empty(len(values), dtype=bool)
    higher_right = np.empty(len(values), dtype=bool)
    higher_left[0] = True
    higher_left[1:] = values[1:] >= values[:-1]
    higher_right[-1] = True
    higher_right[:-1] = values[:-1] >= values[1:]
    return higher_left & higher_right


def write_map_csv(path, damap: DistanceAzimuthMap) -> None:
    lines = ["bearing_deg,range_m,score"]
    for i, b in enumerate(damap.bearings_deg):
        for j, r in enumerate(damap.ranges_m):
            lines.append(f"{b:.1f},{r:.1f},{damap.scores[i, j]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- experiment harness -------------------------------------------------------------


def evaluate_distance(cfg: RunConfig, entries, loader,
                      segment_model: SegmentTransformer,
                      batch_size: int = 64) -> tuple[float, float]:
    """(AUC, recall) over every segment of the given entries."""
    patches, labels = segment_arrays(cfg, entries, loader)
    scores = np.concatenate([
        segment_model(patches[lo:lo + batch_size]).data
        for lo in range(0, len(patches), batch_size)])
    return (metric_auc(scores, labels.astype(int)),
            metric_recall(scores, labels.astype(int), cfg.detect_threshold))


def evaluate_angle(cfg: RunConfig, entries, loader, angle_model: AngleDnn,
                   grid: DoaGrid) -> tuple[float, float]:
    """(MAE, RMSE) in degrees over records, minimal-arc errors, multi-target
    sets matched by minimum-cost assignment."""
    stft_cfg = cfg.stft_config()
    abs_means, sq_means = [], []
    for entry in entries:
        rec = loader(entry)
        onsets = entry_onsets(cfg, entry)
        truth = [b for b, _ in entry.targets]
        if cfg.multi_frame_average:
            frames = [i for i, _ in echo_frames(rec, cfg, entry.targets, onsets)]
            if not frames:
                continue
            pooled = np.zeros(grid.class_count)
            for i in frames:
                pm = phase_matrix(rec, stft_cfg, i)
                pooled += class_scores(angle_model.logits(pm.values), grid)
            predicted = decode_class_scores(pooled / len(frames), grid)
        else:
            frame = central_echo_frame(rec, cfg, min(onsets))
            pm = phase_matrix(rec, stft_cfg, frame)
            predicted = decode_angle(angle_model.logits(pm.values), grid)
        matched_p, matched_t = match_bearings(predicted, truth)
        if len(matched_p) == 0:
            abs_means.append(180.0)  # total miss counts as worst case
            sq_means.append(180.0**2)
            continue
        err = np.abs((matched_p - matched_t + 180.0) % 360.0 - 180.0)
        abs_means.append(float(err.mean()))
        sq_means.append(float((err**2).mean()))
    if not abs_means:
        raise DataError("no records evaluated for the bearing task")
    return float(np.mean(abs_means)), float(math.sqrt(np.mean(sq_means)))


def run_experiment(cfg: RunConfig, manifest: DatasetManifest, loader,
                   angle_model: AngleDnn | None, grid: DoaGrid | None,
                   segment_model: SegmentTransformer | None,
                   sweep: str) -> list[dict]:
    """Metric rows for one sweep over the manifest's test split."""
    test = manifest.split("test")
    rows: list[dict] = []
    if sweep == "snr":
        for snr in cfg.snr_levels:
            group = [e for e in test if e.snr_db == snr]
            row = {"snr_db": snr}
            row.update(_group_metrics(cfg, group, loader, angle_model, grid,
                                      segment_model))
            rows.append(row)
    elif sweep == "env":
        for env_id in cfg.environments:
            group = [e for e in test if e.env_id == env_id]
            row = {"environment": env_id}
            row.update(_group_metrics(cfg, group, loader, angle_model, grid,
                                      segment_model))
            rows.append(row)
    elif sweep == "sources":
        counts = sorted({len(e.targets) for e in test})
        for n in counts:
            group = [e for e in test if len(e.targets) == n]
            row = {"sources": n,
                   "encoding": "softmax" if grid and grid.codec == "softmax_expectation"
                   else "one-hot"}
            row.update(_group_metrics(cfg, group, loader, angle_model, grid,
                                      segment_model))
            rows.append(row)
    else:
        raise ConfigError(f"unknown sweep {sweep!r}")
    return rows


def _group_metrics(cfg, group, loader, angle_model, grid, segment_model) -> dict:
    if not group:
        raise DataError("empty evaluation group; check sweep levels")
    out: dict = {}
    if segment_model is not None:
        auc_value, recall_value = evaluate_distance(cfg, group, loader, segment_model)
        out["auc"] = auc_value
        out["recall"] = recall_value
    if angle_model is not None:
        mae_value, rmse_value = evaluate_angle(cfg, group, loader, angle_model, grid)
        out["mae_deg"] = mae_value
        out["rmse_deg"] = rmse_value
    return out


def write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise DataError("no rows to write")
    fields = list(rows[0].keys())
    lines = [",".join(fields)]
    for row in rows:
        cells = []
        for name in fields:
            v = row[name]
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
