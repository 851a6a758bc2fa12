"""Adaptive-moment optimiser, validation-driven schedule, and the two
training strategies: joint (all exit losses summed) and stage-wise
(train to each exit in turn, freezing finished sub-models).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from nsexit.arch import VARIANTS, ModelGraph, slice_submodel
from nsexit.loss import LossConfig, compressed_spectral_loss, joint_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 512
    max_epochs: int = 400
    patience: int = 25
    lr_decay: float = 0.9
    decay_interval: int = 5
    seed: int = 0
    clip_seconds: float = 4.0
    profile: str = "full"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.max_epochs, self.patience,
               self.lr_decay, self.decay_interval, self.clip_seconds) <= 0:
            raise ValueError("all training parameters must be positive")
        if self.patience <= self.decay_interval:
            raise ValueError("patience must exceed the lr decay interval")

    @classmethod
    def tiny(cls, **overrides) -> "TrainConfig":
        """Desk-scale defaults: small batches, 2-second clips, tiny model dims."""
        base = dict(batch_size=16, clip_seconds=2.0, profile="tiny")
        base.update(overrides)
        return cls(**base)


class Adam:
    """Adaptive-moment update with bias correction; frozen tensors untouched."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            if p.frozen:
                continue
            g = p.grad
            m = self._m.get(p.name)
            if m is None:
                m = self._m[p.name] = np.zeros_like(p.value)
            v = self._v.get(p.name)
            if v is None:
                v = self._v[p.name] = np.zeros_like(p.value)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_and_stop_update(val_history, base_lr: float, patience: int = 25,
                       decay: float = 0.9, interval: int = 5):
    """Learning rate and stop decision from a full validation-loss history.

    The rate decays by `decay` for every `interval` consecutive epochs without
    a new best; training stops after `patience` such epochs.
    """
    best = np.inf
    since_best = 0
    for v in val_history:
        if v < best:
            best = v
            since_best = 0
        else:
            since_best += 1
    lr = base_lr * decay ** (since_best // interval)
    return lr, since_best >= patience


# ------------------------------------------------------------------ loss bridge

def masked_spectral_loss(mask, noisy_spec, clean_spec, sigma, cfg: LossConfig,
                         want_grad: bool = True):
    """Loss of (noisy * mask) against clean, both normalised per clip by the
    clean clip's std; returns (loss, d(loss)/d(mask) or None)."""
    sig = np.asarray(sigma, dtype=np.float64)
    if sig.ndim == 0:
        sig = sig[None]
    sig = sig[:, None, None] if mask.ndim == 3 else float(sig[0])
    noisy = noisy_spec.astype(np.complex128)
    s_hat = noisy * mask / sig
    s_ref = clean_spec.astype(np.complex128) / sig
    value, d_est = compressed_spectral_loss(s_ref, s_hat, cfg)
    if not want_grad:
        return value, None
    d_mask = ((d_est.real * noisy.real + d_est.imag * noisy.imag) / sig)
    return value, d_mask.astype(np.float32)


# ------------------------------------------------------------------- bookkeeping

@dataclass
class EpochRecord:
    epoch: int
    stage: int | None
    lr: float
    train_total: float
    val_total: float
    train_per_exit: dict
    val_per_exit: dict


@dataclass
class TrainReport:
    variant: str
    strategy: str
    records: list[EpochRecord]
    stop_reason: str
    wall_seconds: float
    best_epoch: int
    best_val: float
    best_params: dict | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.records)


def snapshot_params(tensors) -> dict:
    return {t.name: t.value.copy() for t in tensors}


def restore_params(tensors, snap: dict):
    for t in tensors:
        t.value[...] = snap[t.name]


def _require_pretrain_init(model: ModelGraph):
    if model.variant.startswith("pretrain") and not model.meta.get("initialized_from"):
        raise ValueError(
            f"{model.variant} must start from a trained baseline checkpoint; "
            "load one with checkpoint.load_values() / baseline_checkpoint config key")


def stage_epoch_cap(variant: str, stage: int, max_epochs: int) -> int:
    """Per-stage epoch budget for stage-wise training."""
    family = VARIANTS[variant].family
    cap = 50 if family == "dense" else 50 * (stage + 1)
    return min(cap, max_epochs)


# ------------------------------------------------------------------- training

def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _validate(model: ModelGraph, data, cfg: TrainConfig, exits) -> dict:
    """Mean per-exit loss over the validation split (forward only)."""
    sums = {i: 0.0 for i in exits}
    count = 0
    for idx in _batches(data.val_idx, cfg.batch_size):
        feats = data.features[idx]
        masks, _ = model.forward_all_exits(feats, want_tape=False)
        for i in exits:
            value, _ = masked_spectral_loss(masks[i], data.noisy[idx], data.clean[idx],
                                            data.sigma[idx], cfg.loss, want_grad=False)
            sums[i] += value * len(idx)
        count += len(idx)
    return {i: sums[i] / count for i in exits}


def train_joint(model: ModelGraph, data, cfg: TrainConfig, on_step=None,
                init_history=None, epoch_offset: int = 0) -> TrainReport:
    """Minimise the unit-weighted sum of all exit losses in one loop."""
    _require_pretrain_init(model)
    if len(data.val_idx) == 0:
        raise ValueError("dataset has no validation split")
    exits = list(model.exits)
    rng = np.random.default_rng([cfg.seed, 0xA11])
    adam = Adam(lr=cfg.lr)
    params = model.params()
    val_hist = list(init_history or [])
    records: list[EpochRecord] = []
    best_val = min(val_hist) if val_hist else np.inf
    best_epoch = 0
    best_params = None
    stop_reason = "max_epochs"
    t0 = time.perf_counter()

    for epoch in range(epoch_offset + 1, cfg.max_epochs + 1):
        lr, _ = lr_and_stop_update(val_hist, cfg.lr, cfg.patience,
                                   cfg.lr_decay, cfg.decay_interval)
        adam.lr = lr
        order = rng.permutation(data.train_idx)
        train_sums = {i: 0.0 for i in exits}
        n_seen = 0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            for p in params:
                p.zero_grad()
            feats = data.features[idx]
            masks, tapes = model.forward_all_exits(feats)
            mask_grads = {}
            batch_losses = []
            for i in exits:
                value, d_mask = masked_spectral_loss(
                    masks[i], data.noisy[idx], data.clean[idx], data.sigma[idx], cfg.loss)
                train_sums[i] += value * len(idx)
                mask_grads[i] = d_mask
                batch_losses.append(value)
            total = joint_loss(batch_losses)
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
            model.backward(tapes, mask_grads)
            adam.step(params)
            if on_step is not None:
                on_step(model, None, epoch, step)
            n_seen += len(idx)
        train_per_exit = {i: train_sums[i] / n_seen for i in exits}
        val_per_exit = _validate(model, data, cfg, exits)
        val_total = joint_loss(list(val_per_exit.values()))
        val_hist.append(val_total)
        records.append(EpochRecord(epoch, None, lr, joint_loss(list(train_per_exit.values())),
                                   val_total, train_per_exit, val_per_exit))
        if val_total < best_val:
            best_val = val_total
            best_epoch = epoch
            best_params = snapshot_params(params)
        log.info("epoch %d/%d lr %.2e train %.5f val %.5f", epoch, cfg.max_epochs,
                 lr, records[-1].train_total, val_total)
        _, stop = lr_and_stop_update(val_hist, cfg.lr, cfg.patience,
                                     cfg.lr_decay, cfg.decay_interval)
        if stop:
            stop_reason = "early_stop"
            break

    if best_params is None:
        best_params = snapshot_params(params)
        best_epoch = len(records)
        best_val = records[-1].val_total if records else np.inf
    return TrainReport(model.variant, "joint", records, stop_reason,
                       time.perf_counter() - t0, best_epoch, best_val, best_params)


def train_layerwise(model: ModelGraph, data, cfg: TrainConfig, on_step=None) -> TrainReport:
    """Train each exit's sub-model in turn, freezing it when done.

    The stage-i loop updates only tensors of the current sub-model that are
    not yet frozen; at the end of a stage the best-validation values are
    restored and the whole sub-model freezes.
    """
    _require_pretrain_init(model)
    if len(data.val_idx) == 0:
        raise ValueError("dataset has no validation split")
    rng = np.random.default_rng([cfg.seed, 0x57A])
    records: list[EpochRecord] = []
    stop_reason = "max_epochs"
    t0 = time.perf_counter()
    epoch_counter = 0

    for stage in model.exits:
        sub = slice_submodel(model, stage)
        sub_tensors = sub.tensors()
        trainable = [t for t in sub_tensors if not t.frozen]
        adam = Adam(lr=cfg.lr)
        cap = stage_epoch_cap(model.variant, stage, cfg.max_epochs)
        val_hist: list[float] = []
        best_val = np.inf
        best_vals_snap = None
        stage_stop = "stage_cap"
        for epoch in range(1, cap + 1):
            epoch_counter += 1
            lr, _ = lr_and_stop_update(val_hist, cfg.lr, cfg.patience,
                                       cfg.lr_decay, cfg.decay_interval)
            adam.lr = lr
            order = rng.permutation(data.train_idx)
            train_sum = 0.0
            n_seen = 0
            for step, idx in enumerate(_batches(order, cfg.batch_size)):
                for p in sub_tensors:
                    p.zero_grad()
                masks, tapes = sub.forward(data.features[idx])
                value, d_mask = masked_spectral_loss(
                    masks[stage], data.noisy[idx], data.clean[idx],
                    data.sigma[idx], cfg.loss)
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at stage {stage} epoch {epoch} step {step}")
                sub.backward(tapes, d_mask)
                adam.step(trainable)
                if on_step is not None:
                    on_step(model, stage, epoch, step)
                train_sum += value * len(idx)
                n_seen += len(idx)
            val_sum = 0.0
            n_val = 0
            for idx in _batches(data.val_idx, cfg.batch_size):
                masks, _ = sub.forward(data.features[idx])
                value, _ = masked_spectral_loss(
                    masks[stage], data.noisy[idx], data.clean[idx],
                    data.sigma[idx], cfg.loss, want_grad=False)
                val_sum += value * len(idx)
                n_val += len(idx)
            val_loss = val_sum / n_val
            val_hist.append(val_loss)
            train_loss = train_sum / n_seen
            records.append(EpochRecord(epoch_counter, stage, lr, train_loss, val_loss,
                                       {stage: train_loss}, {stage: val_loss}))
            if val_loss < best_val:
                best_val = val_loss
                best_vals_snap = snapshot_params(trainable)
            log.info("stage %d epoch %d/%d lr %.2e train %.5f val %.5f",
                     stage, epoch, cap, lr, train_loss, val_loss)
            _, stop = lr_and_stop_update(val_hist, cfg.lr, cfg.patience,
                                         cfg.lr_decay, cfg.decay_interval)
            if stop:
                stage_stop = "early_stop"
                break
        if best_vals_snap is not None:
            restore_params(trainable, best_vals_snap)
        sub.freeze()
        log.info("stage %d done (%s), %d tensors frozen", stage, stage_stop,
                 len(sub.tensors()))

    return TrainReport(model.variant, "layerwise", records, stop_reason,
                       time.perf_counter() - t0, best_epoch=len(records),
                       best_val=records[-1].val_total if records else np.inf,
                       best_params=snapshot_params(model.params()))
