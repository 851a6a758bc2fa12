"""Command-line surface: synth-data, train, enhance, profile, eval.

Every command takes --seed and is bit-reproducible under it. Report-writing
commands emit a CSV plus a rendered PNG figure next to it.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
import wave
from pathlib import Path

import numpy as np

from nsexit import checkpoint as ckpt
from nsexit import datagen, report
from nsexit.arch import VARIANTS, build_model
from nsexit.config import ConfigError, RunConfig, load_config, validate
from nsexit.dsp import SAMPLE_RATE, apply_mask, istft, log_power, stft
from nsexit.loss import LossConfig
from nsexit.metrics import log_spectral_distance, si_sdr
from nsexit.profiler import profile_model
from nsexit.train import TrainConfig, TrainingDiverged, train_joint, train_layerwise

log = logging.getLogger("nsexit")


# ------------------------------------------------------------------ synth-data

def _wav_bytes(signal) -> bytes:
    buf = io.BytesIO()
    x = datagen.as_samples(signal)
    q = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(buf, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(q.tobytes())
    return buf.getvalue()


def _write_if_changed(path: Path, data: bytes) -> bool:
    if path.exists() and path.read_bytes() == data:
        return False
    path.write_bytes(data)
    return True


def cmd_synth_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lo, _, hi = args.snr.partition(":")
    snr_lo, snr_hi = float(lo), float(hi or lo)
    kinds = [k.strip() for k in args.kinds.split(",")]
    for k in kinds:
        if k not in datagen.NOISE_KINDS:
            raise SystemExit(f"unknown noise kind {k!r}")
    rng = np.random.default_rng([args.seed, 0xDA7A])
    records = []
    for _ in range(args.count):
        records.append(datagen.ClipRecord(
            seed=int(rng.integers(0, 2 ** 48)),
            kind=kinds[int(rng.integers(0, len(kinds)))],
            snr_db=float(rng.uniform(snr_lo, snr_hi)),
        ))
    n_val = int(round(args.val_fraction * len(records)))
    for i in rng.permutation(len(records))[:n_val]:
        records[i].split = "val"

    manifest = out / "manifest.tsv"
    written = 0
    for i, rec in enumerate(records):
        clip = datagen.make_clip(rec, args.clip_seconds)
        for tag, sig in (("clean", clip.clean), ("noise", clip.noise),
                         ("noisy", clip.noisy)):
            written += _write_if_changed(out / f"{tag}_{i:05d}.wav", _wav_bytes(sig))
    old = manifest.read_text() if manifest.exists() else None
    datagen.write_manifest(manifest, records, args.clip_seconds)
    if old is not None and old == manifest.read_text() and written == 0:
        log.info("all %d clips already up to date in %s", len(records), out)
    else:
        log.info("wrote %d clips (%d files changed) to %s", len(records), written, out)
    print(manifest)
    return 0


# ----------------------------------------------------------------------- train

def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                       patience=cfg.patience, lr_decay=cfg.lr_decay,
                       decay_interval=cfg.decay_interval, seed=cfg.seed,
                       clip_seconds=cfg.clip_seconds, profile=cfg.profile,
                       loss=LossConfig(alpha=cfg.loss_alpha,
                                       compression=cfg.loss_compression))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.variant:
        cfg.variant = args.variant
    if args.strategy:
        cfg.strategy = args.strategy
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    problems = validate(cfg)
    if not cfg.data_manifest:
        problems.append("data_manifest is required for training")
    if problems:
        raise ConfigError(problems)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = _train_config(cfg)
    data = datagen.ClipSet.from_manifest(cfg.data_manifest, clip_seconds=cfg.clip_seconds)
    model = build_model(cfg.variant, seed=cfg.seed, profile=cfg.profile,
                        exit_activation=cfg.exit_activation)
    if cfg.variant.startswith("pretrain"):
        ckpt.load_values(model, cfg.baseline_checkpoint)
        log.info("initialised from baseline checkpoint %s", cfg.baseline_checkpoint)

    init_history, epoch_offset = None, 0
    last_path = out / "ckpt_last.nsc"
    if args.resume:
        if cfg.strategy != "joint":
            raise SystemExit("--resume is only supported for the joint strategy")
        if not last_path.exists():
            raise SystemExit(f"--resume: no checkpoint at {last_path}")
        header = ckpt.load_values(model, last_path)
        init_history = header["training"].get("val_history", [])
        epoch_offset = header["training"].get("epochs_run", len(init_history))
        log.info("resuming after %d epochs", epoch_offset)

    try:
        if cfg.strategy == "joint":
            rep = train_joint(model, data, tcfg, init_history=init_history,
                              epoch_offset=epoch_offset)
        else:
            rep = train_layerwise(model, data, tcfg)
    except TrainingDiverged as exc:
        log.error("aborted: %s", exc)
        return 2

    # wall time stays out of the header so same-seed runs write identical bytes
    summary = {"strategy": rep.strategy, "epochs_run": rep.epochs_run + epoch_offset,
               "stop_reason": rep.stop_reason, "best_epoch": rep.best_epoch,
               "best_val": float(rep.best_val),
               "val_history": [r.val_total for r in rep.records]}
    ckpt.save_checkpoint(out / "ckpt_best.nsc", model, training=summary,
                         params=rep.best_params)
    ckpt.save_checkpoint(last_path, model, training=summary)
    csv_path = out / "train_report.csv"
    report.write_train_csv(rep, csv_path)
    report.save_train_figure(rep, report.figure_path(csv_path))
    log.info("done: %s (%d epochs, best val %.5f); reports in %s",
             rep.stop_reason, rep.epochs_run, rep.best_val, out)
    return 0


# --------------------------------------------------------------------- enhance

def cmd_enhance(args) -> int:
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    exit_i = args.exit if args.exit is not None else max(model.exits)
    if exit_i not in model.exits:
        raise SystemExit(f"exit {exit_i} not available; {model.variant} "
                         f"has exits {model.exits}")
    noisy = datagen.wav_read(args.in_wav)
    spec = stft(noisy)
    feats = log_power(spec).astype(np.float32)
    mask = model.forward_to_exit(feats, exit_i)
    enhanced = istft(apply_mask(spec, mask.astype(np.float64)))
    datagen.wav_write(args.out_wav, enhanced)
    log.info("enhanced %s -> %s via exit %d (%d samples)", args.in_wav,
             args.out_wav, exit_i, len(enhanced))
    return 0


# --------------------------------------------------------------------- profile

def cmd_profile(args) -> int:
    if args.checkpoint:
        model, _ = ckpt.load_checkpoint(args.checkpoint)
    elif args.variant:
        model = build_model(args.variant, seed=args.seed or 0, profile=args.profile)
    else:
        raise SystemExit("profile needs --checkpoint or --variant")
    rep = profile_model(model, frames=args.frames, with_timing=not args.no_timing)
    print(rep.as_table())
    if args.out:
        report.write_profile_csv(rep, args.out)
        report.save_profile_figure(rep, report.figure_path(args.out))
        log.info("wrote %s and %s", args.out, report.figure_path(args.out))
    return 0


# ------------------------------------------------------------------------ eval

def _crop(x: np.ndarray) -> np.ndarray:
    # drop the partially-windowed first/last hop to compare like with like
    return x[256:len(x) - 256]


def cmd_eval(args) -> int:
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    exits = list(model.exits)
    records, meta = datagen.read_manifest(args.manifest)
    seconds = meta["clip_seconds"] or 4.0
    base = Path(args.manifest).parent
    rows = []
    for idx, rec in enumerate(records):
        clip = datagen.make_clip(rec, seconds, base_dir=base)
        spec = stft(clip.noisy)
        feats = log_power(spec).astype(np.float32)
        masks, _ = model.forward_all_exits(feats, want_tape=False)
        noisy_rec = istft(spec).samples
        n = len(noisy_rec)
        clean = _crop(clip.clean.samples[:n])
        row = {"clip": idx, "seed": rec.seed, "kind": rec.kind, "snr_db": rec.snr_db,
               "si_sdr_noisy": si_sdr(clean, _crop(noisy_rec)),
               "lsd_noisy": log_spectral_distance(clean, _crop(noisy_rec))}
        for i in exits:
            est = _crop(istft(apply_mask(spec, masks[i].astype(np.float64))).samples)
            row[f"si_sdr_exit{i}"] = si_sdr(clean, est)
            row[f"lsd_exit{i}"] = log_spectral_distance(clean, est)
        rows.append(row)
    report.write_eval_csv(rows, args.out, exits)
    buckets_path = Path(args.out).with_name(Path(args.out).stem + "_snr_buckets.csv")
    report.write_eval_buckets_csv(rows, buckets_path, exits)
    report.save_eval_figure(rows, report.figure_path(args.out), exits)
    log.info("evaluated %d clips -> %s, %s, %s", len(rows), args.out, buckets_path,
             report.figure_path(args.out))
    return 0


# ------------------------------------------------------------------ arg parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsexit",
                                description="Early-exiting noise suppression toolkit")
    p.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate a synthetic noisy/clean dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--count", type=int, default=100, help="number of clips")
    sp.add_argument("--snr", default="0:20", help="SNR range in dB, 'lo:hi'")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--kinds", default="white,pink,babble,hum",
                    help="comma-separated noise kinds")
    sp.add_argument("--clip-seconds", type=float, default=4.0)
    sp.add_argument("--val-fraction", type=float, default=0.1)
    sp.set_defaults(func=cmd_synth_data)

    tp = sub.add_parser("train", help="train a variant per a config file")
    tp.add_argument("--config", required=True)
    tp.add_argument("--variant", choices=sorted(VARIANTS))
    tp.add_argument("--strategy", choices=("joint", "layerwise"))
    tp.add_argument("--seed", type=int)
    tp.add_argument("--out", help="output directory (overrides out_dir)")
    tp.add_argument("--resume", action="store_true",
                    help="continue a joint run from ckpt_last.nsc")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("enhance", help="denoise a WAV file through one exit")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--in", dest="in_wav", required=True)
    ep.add_argument("--out", dest="out_wav", required=True)
    ep.add_argument("--exit", type=int, default=None,
                    help="exit stage (default: deepest)")
    ep.add_argument("--seed", type=int, default=0)
    ep.set_defaults(func=cmd_enhance)

    pp = sub.add_parser("profile", help="parameter/MAC/FLOP/latency report")
    pp.add_argument("--checkpoint")
    pp.add_argument("--variant", choices=sorted(VARIANTS))
    pp.add_argument("--profile", choices=("full", "tiny"), default="full")
    pp.add_argument("--frames", type=int, default=1000)
    pp.add_argument("--no-timing", action="store_true")
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", help="CSV path (figure written alongside)")
    pp.set_defaults(func=cmd_profile)

    vp = sub.add_parser("eval", help="per-exit SI-SDR/LSD over a manifest")
    vp.add_argument("--checkpoint", required=True)
    vp.add_argument("--manifest", required=True)
    vp.add_argument("--out", required=True, help="CSV path (figure written alongside)")
    vp.add_argument("--seed", type=int, default=0)
    vp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
