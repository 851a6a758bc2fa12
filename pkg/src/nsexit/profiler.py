"""Analytic parameter/MAC/FLOP accounting per exit and single-frame timing.

MACs count matrix-multiply work only (FC: in*out per frame; GRU: 3*(in*h +
h*h)); bias adds, activations and the gated elementwise updates are costed
as 1 FLOP per element on top of 2 FLOPs per MAC. Rates are normalised to
1 second of audio = 63 frames. Exiting at stage i pays for mask layers of
stages <= i and auxiliary layers of stages < i, plus the exit head's
activation FLOPs.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nsexit.arch import ModelGraph
from nsexit.dsp import N_BINS
from nsexit.nn import FcLayer, GruLayer

FRAMES_PER_SECOND = 63


def _layer_macs(layer) -> int:
    if isinstance(layer, GruLayer):
        return 3 * (layer.in_dim * layer.hidden + layer.hidden * layer.hidden)
    return layer.in_dim * layer.out_dim


def _layer_flops(layer) -> int:
    # 2 FLOPs per MAC, plus bias adds, activations and gate arithmetic
    if isinstance(layer, GruLayer):
        return 2 * _layer_macs(layer) + 13 * layer.hidden
    return 2 * _layer_macs(layer) + 2 * layer.out_dim


def _exit_head_flops(kind: str) -> int:
    # sigmoid on 257 bins, or scale-and-shift (2 ops/bin) for GRU states
    return N_BINS if kind == "fc" else 2 * N_BINS


def count_params(model: ModelGraph):
    """Per-layer and total trainable parameter counts (closed-form per layer)."""
    per_layer = {}
    for st in model.stages:
        per_layer[st.phi.name] = st.phi.param_count()
        if st.aux is not None:
            per_layer[st.aux.name] = st.aux.param_count()
    return per_layer, sum(per_layer.values())


def count_macs_per_exit(model: ModelGraph) -> dict[int, int]:
    """Cumulative per-frame MACs needed to reach each exit."""
    out = {}
    for i in model.exits:
        total = 0
        for st in model.stages[:i + 1]:
            total += _layer_macs(st.phi)
            if st.aux is not None and st.index < i:
                total += _layer_macs(st.aux)
        out[i] = total
    return out


def count_flops_per_exit(model: ModelGraph) -> dict[int, int]:
    out = {}
    for i in model.exits:
        total = _exit_head_flops(model.stages[i].kind)
        for st in model.stages[:i + 1]:
            total += _layer_flops(st.phi)
            if st.aux is not None and st.index < i:
                total += _layer_flops(st.aux)
        out[i] = total
    return out


def cumulative_params_per_exit(model: ModelGraph) -> dict[int, int]:
    out = {}
    for i in model.exits:
        total = 0
        for st in model.stages[:i + 1]:
            total += st.phi.param_count()
            if st.aux is not None and st.index < i:
                total += st.aux.param_count()
        out[i] = total
    return out


def time_inference(model: ModelGraph, exit_i: int, frames: int = 1000,
                   warmup: int = 50) -> float:
    """Mean wall seconds per single-frame truncated pass, hidden state carried."""
    frame = np.zeros((1, N_BINS), dtype=np.float32)
    state: dict = {}
    for _ in range(warmup):
        model.forward_to_exit(frame, exit_i, state=state)
    t0 = time.perf_counter()
    for _ in range(frames):
        model.forward_to_exit(frame, exit_i, state=state)
    return (time.perf_counter() - t0) / frames


def measurement_env() -> dict:
    env = {"python": platform.python_version(), "numpy": np.__version__,
           "machine": platform.machine(), "cpu": platform.processor() or "unknown",
           "governor": "unknown"}
    cpuinfo = Path("/proc/cpuinfo")
    if cpuinfo.exists():
        for line in cpuinfo.read_text().splitlines():
            if line.lower().startswith("model name"):
                env["cpu"] = line.split(":", 1)[1].strip()
                break
    gov = Path("/sys/devices/system/cpu/cpu0/cpufreq/scaling_governor")
    try:
        env["governor"] = gov.read_text().strip()
    except OSError:
        pass
    return env


@dataclass
class ExitCost:
    exit_index: int
    cum_params: int
    macs_per_frame: int
    macs_per_second: int
    flops_per_frame: int
    flops_per_second: int
    latency_ms_per_frame: float | None = None
    latency_ms_per_second: float | None = None


@dataclass
class ComplexityReport:
    variant: str
    total_params: int
    rows: list[ExitCost]
    per_layer_params: dict
    env: dict = field(default_factory=dict)

    def as_table(self) -> str:
        head = (f"variant: {self.variant}   total params: {self.total_params:,}\n"
                f"{'exit':>4} {'cum params':>12} {'MMAC/s':>10} {'MFLOP/s':>10} "
                f"{'ms/frame':>9} {'ms/s':>8}")
        lines = [head]
        for r in self.rows:
            lat_f = f"{r.latency_ms_per_frame:.4f}" if r.latency_ms_per_frame is not None else "-"
            lat_s = f"{r.latency_ms_per_second:.2f}" if r.latency_ms_per_second is not None else "-"
            lines.append(f"{r.exit_index:>4} {r.cum_params:>12,} "
                         f"{r.macs_per_second / 1e6:>10.2f} {r.flops_per_second / 1e6:>10.2f} "
                         f"{lat_f:>9} {lat_s:>8}")
        return "\n".join(lines)


def profile_model(model: ModelGraph, frames: int = 1000, with_timing: bool = True
                  ) -> ComplexityReport:
    per_layer, total = count_params(model)
    macs = count_macs_per_exit(model)
    flops = count_flops_per_exit(model)
    cum_params = cumulative_params_per_exit(model)
    rows = []
    for i in model.exits:
        row = ExitCost(i, cum_params[i], macs[i], macs[i] * FRAMES_PER_SECOND,
                       flops[i], flops[i] * FRAMES_PER_SECOND)
        if with_timing:
            sec = time_inference(model, i, frames=frames)
            row.latency_ms_per_frame = sec * 1e3
            row.latency_ms_per_second = sec * 1e3 * FRAMES_PER_SECOND
        rows.append(row)
    return ComplexityReport(model.variant, total, rows, per_layer,
                            env=measurement_env() if with_timing else {})
