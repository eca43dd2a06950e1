"""Command-line entry point: ``waveprior {synth,corrupt,fit,evaluate,spectrogram,ablate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .architectures import PRESETS, get_preset
from .corruption import (
    DEFAULT_MIC,
    DEFAULT_ROOM,
    DEFAULT_SOURCE,
    CorruptionSpec,
    MaskInterval,
    Waveform,
    add_noise,
    corrupt,
)
from .io import (
    ExperimentConfig,
    atomic_write_bytes,
    atomic_write_text,
    load_clip,
    synth_signal,
    wav_read,
    wav_write,
)
from .metrics import evaluate, stft_magnitude
from .trainer import TrainConfig, fit_prior, trace_summary

log = logging.getLogger("waveprior")

SUMMARY_HEADER = "clip,variant,seed,baseline_sisnr,max_sisnr,epoch_of_max,max_psnr,sisnri,final_sisnr"
SUMMARY_FIELDS = ["baseline_sisnr", "max_sisnr", "epoch_of_max", "max_psnr", "sisnri", "final_sisnr"]


class UsageError(Exception):
    pass


def _summary_line(clip: str, variant: str, seed, summary: dict) -> str:
    vals = [repr(float(summary[k])) if k != "epoch_of_max" else str(int(summary[k])) for k in SUMMARY_FIELDS]
    return ",".join([clip, variant, str(seed), *vals])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    w = synth_signal(args.kind, args.duration, args.seed)
    wav_write(args.out, w, args.format)
    return 0


def cmd_corrupt(args) -> int:
    if args.kind in ("gaussian", "uniform") and args.target_sisnr is None:
        raise UsageError(f"--kind {args.kind} requires --target-sisnr")
    if args.kind == "reverb" and args.rt60 is None:
        raise UsageError("--kind reverb requires --rt60")
    if args.kind == "mask" and args.mask_ms is None:
        raise UsageError("--kind mask requires --mask-ms")
    clean = wav_read(args.inp)
    spec = CorruptionSpec(
        kind=args.kind,
        target_sisnr_db=args.target_sisnr,
        rt60_s=args.rt60,
        room_dims_m=tuple(args.room),
        source_pos_m=tuple(args.source),
        mic_pos_m=tuple(args.mic),
        mask_ms=args.mask_ms,
        mask_start_sample=args.mask_start,
        seed=args.seed,
    )
    out, mask = corrupt(clean, spec)
    wav_write(args.out, out, args.format)
    if mask is not None:
        mask_path = Path(args.mask_out) if args.mask_out else Path(args.out).with_suffix(".mask.json")
        atomic_write_text(mask_path, mask.to_json())
    return 0


def cmd_fit(args) -> int:
    target = wav_read(args.target)
    reference = wav_read(args.reference) if args.reference else None
    mask = MaskInterval.load(args.mask) if args.mask else None
    if mask is not None and args.resample_noise:
        raise UsageError("--mask needs a fixed input; drop --resample-noise")
    if reference is not None and len(reference) != len(target):
        raise UsageError(f"reference has {len(reference)} samples, target has {len(target)}")
    overrides = {}
    if args.base_channels:
        overrides["base_channels"] = args.base_channels
    variant = get_preset(args.preset, **overrides)
    cfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        input_noise_std=args.input_noise_std,
        resample_noise_each_epoch=args.resample_noise,
        perturbation_std=args.perturbation_std,
        metric_every=args.metric_every,
        checkpoint_epochs=args.checkpoints,
        seed=args.seed,
        log_every=args.log_every,
    )
    result = fit_prior(variant, target, cfg, reference, mask)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "trace.csv", result.trace.to_csv())
    for epoch, y in sorted(result.trace.checkpoints.items()):
        wav_write(out_dir / f"out_epoch{epoch}.wav", Waveform(y), args.format)
    wav_write(out_dir / "final.wav", Waveform(result.final_output), args.format)
    if reference is not None:
        wav_write(out_dir / "best.wav", Waveform(result.best_output), args.format)
        summary = trace_summary(result.trace, result.baseline)
        clip = args.clip_name or Path(args.target).stem
        atomic_write_text(
            out_dir / "summary.csv",
            SUMMARY_HEADER + "\n" + _summary_line(clip, args.preset, args.seed, summary) + "\n",
        )
        print(json.dumps(summary))
    return 0


def cmd_evaluate(args) -> int:
    ref = wav_read(args.reference)
    est = wav_read(args.estimate)
    corrupted = wav_read(args.corrupted) if args.corrupted else None
    lengths = {len(ref), len(est)} | ({len(corrupted)} if corrupted is not None else set())
    if len(lengths) != 1:
        raise UsageError(f"signal lengths differ: {sorted(lengths)}")
    report = evaluate(ref.samples, est.samples, None if corrupted is None else corrupted.samples,
                      clip=Path(args.estimate).stem)
    print(json.dumps(report.as_dict()))
    return 0


def spectrogram_png(mag: np.ndarray) -> bytes:
    """Grayscale PNG, time on x and frequency on y (low frequencies at the bottom)."""
    peak = mag.max()
    scaled = np.zeros_like(mag) if peak <= 0 else mag / peak * 255.0
    img = np.round(scaled.T[::-1]).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def cmd_spectrogram(args) -> int:
    w = wav_read(args.inp)
    mag = stft_magnitude(w.samples, args.frame, args.hop)
    atomic_write_bytes(args.out_png, spectrogram_png(mag))
    if args.out_csv:
        buf = io.StringIO()
        np.savetxt(buf, mag, delimiter=",", fmt="%.10g")
        atomic_write_text(args.out_csv, buf.getvalue())
    return 0


def _ablation_job(job: tuple) -> dict:
    clip_name, clip_spec, base_dir, variant_name, seed, clip_index, cfg_dict = job
    cfg = ExperimentConfig(**cfg_dict)
    clean = load_clip(clip_spec, base_dir)
    noisy = add_noise(clean, cfg.noise_kind, cfg.target_sisnr_db, seed=1000 * seed + clip_index)
    overrides = {"base_channels": cfg.base_channels} if cfg.base_channels else {}
    train = TrainConfig(
        epochs=cfg.epochs,
        lr=cfg.lr,
        input_noise_std=cfg.input_noise_std,
        resample_noise_each_epoch=cfg.resample_noise,
        perturbation_std=cfg.perturbation_std,
        metric_every=cfg.metric_every,
        checkpoint_epochs=(),
        seed=seed,
    )
    result = fit_prior(get_preset(variant_name, **overrides), noisy, train, reference=clean)
    summary = trace_summary(result.trace, result.baseline)
    return {"clip": clip_name, "variant": variant_name, "seed": seed, **summary}


def run_ablation(cfg: ExperimentConfig, base_dir: Path | None = None, jobs: int = 1) -> list[dict]:
    """One row per (variant, clip, seed), in config order."""
    jobs_list = []
    for variant in cfg.variants:
        for ci, clip in enumerate(cfg.clips):
            for seed in cfg.seeds:
                jobs_list.append((Path(clip).stem if not clip.startswith("synth:") else clip,
                                  clip, base_dir, variant, seed, ci, cfg.__dict__.copy()))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_ablation_job, jobs_list))
    return [_ablation_job(j) for j in jobs_list]


def ablation_csv(rows: list[dict], variants: list[str]) -> str:
    lines = [SUMMARY_HEADER]
    for r in rows:
        lines.append(_summary_line(r["clip"], r["variant"], r["seed"], r))
    for v in variants:
        mine = [r for r in rows if r["variant"] == v]
        means = {k: float(np.mean([r[k] for r in mine])) for k in SUMMARY_FIELDS}
        vals = [repr(means[k]) for k in SUMMARY_FIELDS]
        lines.append(",".join(["MEAN", v, "", *vals]))
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    try:
        cfg = ExperimentConfig.load(path)
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc
    jobs = args.jobs or cfg.jobs
    rows = run_ablation(cfg, path.parent, jobs)
    out = Path(args.output or cfg.output)
    if not out.is_absolute() and not args.output:
        out = path.parent / out
    atomic_write_text(out, ablation_csv(rows, cfg.variants))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="waveprior", description="Deep waveform prior experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic test signal")
    s.add_argument("--kind", choices=["multisine", "chirp", "am_tone"], default="multisine")
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=["float32", "pcm16"], default="float32")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("corrupt", help="add noise, reverberation or an inpainting gap")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--kind", choices=["gaussian", "uniform", "reverb", "mask"], required=True)
    c.add_argument("--target-sisnr", type=float)
    c.add_argument("--rt60", type=float)
    c.add_argument("--room", type=float, nargs=3, default=list(DEFAULT_ROOM))
    c.add_argument("--source", type=float, nargs=3, default=list(DEFAULT_SOURCE))
    c.add_argument("--mic", type=float, nargs=3, default=list(DEFAULT_MIC))
    c.add_argument("--mask-ms", type=float)
    c.add_argument("--mask-start", type=int)
    c.add_argument("--mask-out")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--format", choices=["float32", "pcm16"], default="float32")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corrupt)

    f = sub.add_parser("fit", help="fit a generator to one corrupted waveform")
    f.add_argument("--target", required=True)
    f.add_argument("--reference")
    f.add_argument("--mask")
    f.add_argument("--preset", choices=list(PRESETS), default="conv-lstm")
    f.add_argument("--base-channels", type=int)
    f.add_argument("--epochs", type=int, default=3000)
    f.add_argument("--lr", type=float, default=1e-4)
    f.add_argument("--input-noise-std", type=float, default=0.1)
    f.add_argument("--resample-noise", action="store_true",
                   help="draw new input noise every epoch (not allowed with --mask)")
    f.add_argument("--perturbation-std", type=float,
                   help="with --resample-noise, keep the first input and add fresh jitter of this std")
    f.add_argument("--metric-every", type=int, default=10)
    f.add_argument("--checkpoints", type=int, nargs="*", default=[500, 1000])
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--clip-name")
    f.add_argument("--format", choices=["float32", "pcm16"], default="float32")
    f.add_argument("--log-every", type=int, default=0)
    f.add_argument("--out-dir", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="SI-SNR / PSNR of an estimate against a reference")
    e.add_argument("--reference", required=True)
    e.add_argument("--estimate", required=True)
    e.add_argument("--corrupted")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("spectrogram", help="log-magnitude spectrogram as PNG (+ CSV)")
    g.add_argument("--in", dest="inp", required=True)
    g.add_argument("--out-png", required=True)
    g.add_argument("--out-csv")
    g.add_argument("--frame", type=int, default=1024)
    g.add_argument("--hop", type=int, default=256)
    g.set_defaults(func=cmd_spectrogram)

    a = sub.add_parser("ablate", help="run the architecture ablation grid from a JSON config")
    a.add_argument("--config", required=True)
    a.add_argument("--jobs", type=int)
    a.add_argument("--output")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"waveprior {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("command failed", exc_info=True)
        print(f"waveprior {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
