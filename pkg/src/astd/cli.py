"""Command-line interface.

Subcommands: synth (waveform file), dataset gen (records + manifest),
train angle|range (checkpoints + history), eval (sweep CSVs), spectrum
(bearing pseudo-spectrum CSV), detect (distance-azimuth map CSV). Report
commands render a matplotlib figure next to the CSV unless --no-figure.

Exit codes: 1 configuration error, 2 data error, 3 numeric failure.
Bearings use degrees counterclockwise from +x.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import pipeline, plots
from .array_geom import CircularArray
from .channel_sim import ENVIRONMENTS, NoiseSpec, Target, TargetScene, synthesize_received
from .config import (
    ConfigError,
    DataError,
    NumericError,
    RunConfig,
    config_help,
    config_text,
    load_config,
)
from .doa import wideband_spectrum
from .features import phase_matrix, stft, stft_frame_times
from .models import (
    AngleDnn,
    ModelDataset,
    SegmentTransformer,
    angle_loss,
    class_scores,
    decode_angle,
    load_model,
    presence_loss,
    save_model,
    train,
)
from .metrics import match_bearings
from .waveforms import WaveformSpec, synthesize


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage errors are config errors
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="astd",
        description=__doc__,
        epilog="configuration keys (key=value file for --config):\n" + config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a transmit waveform file")
    synth.add_argument("--kind", choices=("cw", "lfm", "hfm"), default="hfm")
    synth.add_argument("--f0", type=float, default=2000.0)
    synth.add_argument("--f1", type=float, default=None,
                       help="sweep end (default: 3000, or f0 for cw)")
    synth.add_argument("--dur", type=float, default=1.0)
    synth.add_argument("--fs", type=float, default=6000.0)
    synth.add_argument("--amplitude", type=float, default=1.0)
    synth.add_argument("--ramp", type=float, default=0.0)
    synth.add_argument("--out", required=True)

    dataset = sub.add_parser("dataset", help="dataset operations")
    dataset_sub = dataset.add_subparsers(dest="dataset_command", required=True)
    gen = dataset_sub.add_parser("gen", help="synthesize records and a manifest")
    gen.add_argument("--config", help="key=value run configuration file")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, help="override the config seed")

    train_p = sub.add_parser("train", help="train a detection model")
    train_p.add_argument("task", choices=("angle", "range"))
    train_p.add_argument("--config")
    train_p.add_argument("--data", required=True, help="dataset directory")
    train_p.add_argument("--out", required=True, help="output directory")

    eval_p = sub.add_parser("eval", help="metric sweeps over the test split")
    eval_p.add_argument("--sweep", choices=("snr", "env", "sources", "waveform"),
                        required=True)
    eval_p.add_argument("--config")
    eval_p.add_argument("--data", required=True,
                        help="dataset dir (waveform sweep: parent of run dirs)")
    eval_p.add_argument("--angle-ckpt")
    eval_p.add_argument("--range-ckpt")
    eval_p.add_argument("--out", required=True)
    _figure_flags(eval_p)

    spec = sub.add_parser("spectrum", help="full-bearing pseudo-spectrum CSV")
    spec.add_argument("--method", choices=("cbf", "mvdr", "music", "dnn"),
                      required=True)
    spec.add_argument("--grid", type=float, default=1.0, help="grid step (deg)")
    spec.add_argument("--record", help="record file (default: bundled demo scene)")
    spec.add_argument("--config")
    spec.add_argument("--angle-ckpt", help="needed for --method dnn")
    spec.add_argument("--n-sources", type=int, default=1)
    spec.add_argument("--out", required=True)
    _figure_flags(spec)

    det = sub.add_parser("detect", help="distance-azimuth map for one record")
    det.add_argument("--record", required=True)
    det.add_argument("--config")
    det.add_argument("--angle-ckpt", required=True)
    det.add_argument("--range-ckpt", required=True)
    det.add_argument("--out", required=True)
    _figure_flags(det, default_suffix=".svg")

    return parser


def _figure_flags(parser, default_suffix: str = ".png") -> None:
    parser.add_argument("--figure", help=f"figure path (default: CSV with "
                                          f"{default_suffix})")
    parser.add_argument("--no-figure", action="store_true",
                        help="skip figure rendering")
    parser.set_defaults(figure_suffix=default_suffix)


def _figure_path(args) -> Path | None:
    if args.no_figure:
        return None
    if args.figure:
        return Path(args.figure)
    return Path(args.out).with_suffix(args.figure_suffix)


def _load_cfg(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _cmd_synth(args) -> None:
    if args.f1 is None:
        args.f1 = args.f0 if args.kind == "cw" else 3000.0
    try:
        spec = WaveformSpec(args.kind, args.f0, args.f1, args.dur, args.fs,
                            args.amplitude)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    pipeline.write_sample_buffer(args.out, synthesize(spec, ramp=args.ramp))
    print(f"wrote {args.out} ({spec.kind}, {spec.n_samples} samples)")


def _cmd_dataset_gen(args) -> None:
    cfg = _load_cfg(args)
    manifest = pipeline.generate_dataset(cfg, args.out, args.seed)
    print(f"wrote {len(manifest.entries)} records to {args.out} "
          f"(manifest digest {manifest.digest()[:12]})")


def _angle_validation(cfg, grid, inputs, bearing_sets):
    def metric(model) -> float:
        errors = []
        for lo in range(0, len(inputs), cfg.batch_size):
            from .nn import Tensor

            logits = model(Tensor(inputs[lo:lo + cfg.batch_size])).data
            for row, truth in zip(logits, bearing_sets[lo:lo + cfg.batch_size]):
                predicted = decode_angle(row.astype(np.float64), grid)
                p, t = match_bearings(predicted, truth)
                if len(p) == 0:
                    errors.append(180.0)
                else:
                    errors.append(float(np.mean(np.abs((p - t + 180.0) % 360.0 - 180.0))))
        return float(np.mean(errors))
    return metric


def _cmd_train(args) -> None:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = pipeline.DatasetManifest.read(Path(args.data) / pipeline.MANIFEST_NAME)
    loader = pipeline.record_loader(args.data)
    seed = cfg.effective_seed()
    if args.task == "angle":
        grid = cfg.doa_grid()
        tr_x, tr_y, _ = pipeline.angle_arrays(cfg, manifest.split("train"), loader, grid)
        va_x, va_y, va_b = pipeline.angle_arrays(cfg, manifest.split("val"), loader, grid)
        model = AngleDnn(grid.class_count, cfg.fft_size // 2 + 1, seed=seed,
                         relative_phase=cfg.phase_normalize,
                         band_bins=cfg.ping_band_bins())
        adam, sched = cfg.angle_optimizer()
        history = train(model, ModelDataset(tr_x, tr_y, va_x, va_y), adam, sched,
                        cfg.angle_epochs, angle_loss(grid),
                        _angle_validation(cfg, grid, va_x, va_b),
                        cfg.batch_size, seed)
        save_model(out / "angle.ckpt", model, {"codec": grid.codec})
        history_path = out / "angle_history.csv"
    else:
        tr_x, tr_y = pipeline.segment_arrays(cfg, manifest.split("train"), loader,
                                             balance=cfg.balance_positives)
        va_x, va_y = pipeline.segment_arrays(cfg, manifest.split("val"), loader)
        model = SegmentTransformer(cfg.d_model, cfg.depth, cfg.heads,
                                   cfg.max_patches, cfg.patch_size**2,
                                   cfg.ff_mult, seed=seed)
        adam, sched = cfg.range_optimizer()
        history = train(model, ModelDataset(tr_x, tr_y, va_x, va_y), adam, sched,
                        cfg.range_epochs, presence_loss,
                        batch_size=cfg.batch_size, seed=seed)
        save_model(out / "range.ckpt", model)
        history_path = out / "range_history.csv"
    pipeline.write_rows_csv(history_path, history.rows())
    plots.save_training_history(history.rows(), history_path.with_suffix(".png"))
    (out / "run.cfg").write_text(config_text(cfg))
    print(f"trained {args.task} model: best val metric "
          f"{history.best_metric:.6f} at epoch {history.best_epoch}; wrote {out}")


def _load_models(args):
    angle_model = grid = segment_model = None
    if args.angle_ckpt:
        angle_model, grid = load_model(args.angle_ckpt)
    if args.range_ckpt:
        segment_model, _ = load_model(args.range_ckpt)
        if not isinstance(segment_model, SegmentTransformer):
            raise ConfigError(f"{args.range_ckpt} is not a distance checkpoint")
    if angle_model is not None and not isinstance(angle_model, AngleDnn):
        raise ConfigError(f"{args.angle_ckpt} is not a bearing checkpoint")
    return angle_model, grid, segment_model


def _cmd_eval(args) -> None:
    cfg = _load_cfg(args)
    if args.sweep == "waveform":
        rows = []
        parent = Path(args.data)
        run_dirs = sorted(p for p in parent.iterdir() if p.is_dir())
        if not run_dirs:
            raise DataError(f"no run directories under {parent}")
        for run_dir in run_dirs:
            run_cfg = load_config(run_dir / pipeline.CONFIG_ECHO_NAME)
            manifest = pipeline.DatasetManifest.read(run_dir / pipeline.MANIFEST_NAME)
            loader = pipeline.record_loader(run_dir)
            angle_model, grid = load_model(run_dir / "angle.ckpt")
            seg_path = run_dir / "range.ckpt"
            segment_model = load_model(seg_path)[0] if seg_path.exists() else None
            row = {"waveform": run_cfg.waveform}
            test = manifest.split("test")
            if angle_model is not None:
                mae_v, rmse_v = pipeline.evaluate_angle(run_cfg, test, loader,
                                                        angle_model, grid)
                row.update(mae_deg=mae_v, rmse_deg=rmse_v)
            if segment_model is not None:
                auc_v, rec_v = pipeline.evaluate_distance(run_cfg, test, loader,
                                                          segment_model)
                row.update(auc=auc_v, recall=rec_v)
            rows.append(row)
        order = {"cw": 0, "lfm": 1, "hfm": 2}
        rows.sort(key=lambda r: order.get(r["waveform"], 99))
        x_field = "waveform"
    else:
        angle_model, grid, segment_model = _load_models(args)
        if angle_model is None and segment_model is None:
            raise ConfigError("eval needs --angle-ckpt and/or --range-ckpt")
        manifest = pipeline.DatasetManifest.read(Path(args.data) / pipeline.MANIFEST_NAME)
        loader = pipeline.record_loader(args.data)
        rows = pipeline.run_experiment(cfg, manifest, loader, angle_model, grid,
                                       segment_model, args.sweep)
        x_field = {"snr": "snr_db", "env": "environment", "sources": "sources"}[args.sweep]
    pipeline.write_rows_csv(args.out, rows)
    figure = _figure_path(args)
    if figure is not None:
        plots.save_metric_rows(rows, x_field, figure)
    print(f"wrote {len(rows)} rows to {args.out}")


def _demo_record(cfg: RunConfig):
    """Bundled single-source scene: 30 degrees, mid-window range, 10 dB."""
    env = ENVIRONMENTS[cfg.environments[0]]
    arr = CircularArray(cfg.n_elements, cfg.radius,
                        math.radians(cfg.reference_bearing_deg))
    ping = synthesize(cfg.waveform_spec(), ramp=cfg.ramp)
    rng_m = 0.5 * (cfg.min_range + cfg.max_range)
    scene = TargetScene((Target(rng_m, math.radians(30.0), cfg.target_strength),),
                        min_range=cfg.min_range, max_range=cfg.max_range)
    return synthesize_received(scene, env, arr, ping,
                               NoiseSpec(10.0, cfg.effective_seed(), cfg.noise_rms),
                               max_order=cfg.max_order, duration=cfg.duration)


def _dnn_spectrum(cfg, rec, angle_model, grid):
    stft_cfg = cfg.stft_config()
    freqs = np.arange(stft_cfg.n_bins) * rec.sample_rate / stft_cfg.fft_size
    f_lo, f_hi = sorted((cfg.f_start, cfg.f_end))
    band = (freqs >= f_lo) & (freqs <= f_hi)
    spec0 = stft(rec.channels[0], stft_cfg)
    energies = np.sum(np.abs(spec0[:, band]) ** 2, axis=1)
    frames = np.nonzero(energies >= 0.5 * energies.max())[0]
    scores = np.zeros(grid.class_count)
    for i in frames:
        pm = phase_matrix(rec, stft_cfg, int(i))
        scores += class_scores(angle_model.logits(pm.values), grid)
    scores /= len(frames)
    return grid.bearings_deg, scores / scores.max()


def _cmd_spectrum(args) -> None:
    cfg = _load_cfg(args)
    rec = pipeline.read_record(args.record) if args.record else _demo_record(cfg)
    env = ENVIRONMENTS[cfg.environments[0]]
    if args.method == "dnn":
        if not args.angle_ckpt:
            raise ConfigError("--method dnn requires --angle-ckpt")
        angle_model, grid = load_model(args.angle_ckpt)
        bearings, values = _dnn_spectrum(cfg, rec, angle_model, grid)
    else:
        arr = CircularArray(cfg.n_elements, cfg.radius,
                            math.radians(cfg.reference_bearing_deg))
        f_lo, f_hi = sorted((cfg.f_start, cfg.f_end))
        ps = wideband_spectrum(rec, arr, args.method, f_lo, f_hi,
                               env.effective_sound_speed, args.grid,
                               args.n_sources, cfg=cfg.stft_config())
        bearings, values = ps.bearings_deg, ps.values
    lines = ["bearing_deg,value"]
    lines += [f"{b:.3f},{v:.6f}" for b, v in zip(bearings, values)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    figure = _figure_path(args)
    if figure is not None:
        plots.save_pseudo_spectrum(bearings, values, figure, label=args.method)
    print(f"wrote spectrum ({args.method}) to {args.out}")


def _cmd_detect(args) -> None:
    cfg = _load_cfg(args)
    rec = pipeline.read_record(args.record)
    angle_model, grid = load_model(args.angle_ckpt)
    segment_model, _ = load_model(args.range_ckpt)
    damap = pipeline.detect(rec, angle_model, grid, segment_model, cfg)
    pipeline.write_map_csv(args.out, damap)
    figure = _figure_path(args)
    if figure is not None:
        plots.save_distance_azimuth(damap, figure)
    top = (f"top detection bearing {damap.detections[0][0]:.1f} deg, "
           f"range {damap.detections[0][1]:.0f} m" if damap.detections
           else "no detections")
    print(f"wrote map to {args.out}; {top}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth":
            _cmd_synth(args)
        elif args.command == "dataset":
            _cmd_dataset_gen(args)
        elif args.command == "train":
            _cmd_train(args)
        elif args.command == "eval":
            _cmd_eval(args)
        elif args.command == "spectrum":
            _cmd_spectrum(args)
        elif args.command == "detect":
            _cmd_detect(args)
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
