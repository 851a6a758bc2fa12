"""CSV emission for training, profiling and evaluation, with a rendered
figure written next to every delimited file."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from nsexit.profiler import ComplexityReport  # noqa: E402

_FIG_KW = dict(dpi=150, bbox_inches="tight")


def figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


# ------------------------------------------------------------------- training

def write_train_csv(report, path):
    exits = sorted({i for r in report.records for i in r.train_per_exit})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "stage", "lr", "train_total", "val_total"]
                   + [f"train_exit{i}" for i in exits] + [f"val_exit{i}" for i in exits])
        for r in report.records:
            w.writerow([r.epoch, "" if r.stage is None else r.stage, f"{r.lr:.8g}",
                        f"{r.train_total:.8g}", f"{r.val_total:.8g}"]
                       + [_fmt(r.train_per_exit.get(i)) for i in exits]
                       + [_fmt(r.val_per_exit.get(i)) for i in exits])


def _fmt(v):
    return "" if v is None else f"{v:.8g}"


def save_train_figure(report, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [r.epoch for r in report.records]
    ax.plot(epochs, [r.train_total for r in report.records], label="train", lw=1.5)
    ax.plot(epochs, [r.val_total for r in report.records], label="validation",
            lw=1.5, ls="--")
    stages = [r.stage for r in report.records]
    if any(s is not None for s in stages):
        for k in range(1, len(stages)):
            if stages[k] != stages[k - 1]:
                ax.axvline(epochs[k] - 0.5, color="grey", lw=0.7, alpha=0.6)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(f"{report.variant} / {report.strategy}")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)


# ------------------------------------------------------------------ profiling

def write_profile_csv(creport: ComplexityReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "exit", "cum_params", "macs_per_frame", "macs_per_second",
                    "flops_per_frame", "flops_per_second", "latency_ms_per_frame",
                    "latency_ms_per_second"])
        for r in creport.rows:
            w.writerow([creport.variant, r.exit_index, r.cum_params, r.macs_per_frame,
                        r.macs_per_second, r.flops_per_frame, r.flops_per_second,
                        _fmt(r.latency_ms_per_frame), _fmt(r.latency_ms_per_second)])


def save_profile_figure(creport: ComplexityReport, path):
    exits = [r.exit_index for r in creport.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(exits, [r.macs_per_second / 1e6 for r in creport.rows], "o-", label="MMAC/s")
    ax.plot(exits, [r.flops_per_second / 1e6 for r in creport.rows], "s-", label="MFLOP/s")
    ax.set_xlabel("exit stage")
    ax.set_ylabel("operations per second of audio (millions)")
    ax.set_title(f"cumulative cost per exit: {creport.variant}")
    ax.grid(alpha=0.3)
    if any(r.latency_ms_per_second is not None for r in creport.rows):
        ax2 = ax.twinx()
        ax2.plot(exits, [r.latency_ms_per_second for r in creport.rows], "^--",
                 color="tab:red", label="latency ms/s")
        ax2.set_ylabel("latency (ms per second of audio)", color="tab:red")
    ax.legend(loc="upper left")
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)


# ----------------------------------------------------------------- evaluation

def write_eval_csv(rows: list[dict], path, exits: list[int]):
    cols = (["clip", "seed", "kind", "snr_db", "si_sdr_noisy", "lsd_noisy"]
            + [f"si_sdr_exit{i}" for i in exits] + [f"lsd_exit{i}" for i in exits])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (int, str)) else f"{r[c]:.6f}"
                        for c in cols])


def snr_bucket(snr_db: float, width: float = 5.0) -> str:
    lo = width * (snr_db // width)
    return f"[{lo:g},{lo + width:g})"


def write_eval_buckets_csv(rows: list[dict], path, exits: list[int]):
    """Aggregate per-clip metrics into 5 dB input-SNR brackets; the noisy
    signal appears as its own source row in every bracket."""
    sources = ["noisy"] + [f"exit{i}" for i in exits]
    buckets: dict[str, list[dict]] = {}
    for r in rows:
        buckets.setdefault(snr_bucket(r["snr_db"]), []).append(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "snr_bucket", "n_clips", "si_sdr_mean", "lsd_mean"])
        for bucket in sorted(buckets) + ["all"]:
            group = rows if bucket == "all" else buckets[bucket]
            for src in sources:
                si = sum(g[f"si_sdr_{src}"] for g in group) / len(group)
                lsd = sum(g[f"lsd_{src}"] for g in group) / len(group)
                w.writerow([src, bucket, len(group), f"{si:.6f}", f"{lsd:.6f}"])


def save_eval_figure(rows: list[dict], path, exits: list[int]):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    data_si = [[r[f"si_sdr_exit{i}"] - r["si_sdr_noisy"] for r in rows] for i in exits]
    axes[0].boxplot(data_si, tick_labels=[str(i) for i in exits])
    axes[0].axhline(0.0, color="grey", lw=0.8)
    axes[0].set_xlabel("exit stage")
    axes[0].set_ylabel("SI-SDR improvement (dB)")
    axes[0].grid(alpha=0.3)
    data_lsd = [[r[f"lsd_exit{i}"] for r in rows] for i in exits]
    axes[1].boxplot(data_lsd, tick_labels=[str(i) for i in exits])
    axes[1].axhline(sum(r["lsd_noisy"] for r in rows) / len(rows), color="grey",
                    lw=0.8, ls="--", label="noisy")
    axes[1].set_xlabel("exit stage")
    axes[1].set_ylabel("log-spectral distance (dB)")
    axes[1].grid(alpha=0.3)
    axes[1].legend()
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)
