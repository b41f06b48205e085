"""Pretraining with the fair contrastive objective, CTC fine-tuning, AdamW, cosine schedule."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from faircl import autograd as ag
from faircl.autograd import Tensor
from faircl.data import COMPOSITE, Utterance, make_contrastive_batch, pad_batch
from faircl.features import AugmentPolicy
from faircl.losses import FairLossConfig, ctc_loss_batch, fairasr_loss, info_nce
from faircl.model import (ModelConfig, Params, decode_logits, encode, encoder_param_names,
                          init_decoder, init_encoder, mean_pool, project, save_checkpoint)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Non-finite loss or gradient; carries the last finite parameters."""

    def __init__(self, msg: str, last_good: Params | None = None):
        super().__init__(msg)
        self.last_good = last_good


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-4
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    seed: int = 0
    # pretraining
    objective: str = "fairasr"
    lam: float = 0.1
    grl_alpha: float = 1.0
    shared_embedding_space: bool = True
    temperature: float = 0.2
    fsc_attribute: str = COMPOSITE
    time_mask_width: int = 10
    n_time_masks: int = 2
    freq_mask_width: int = 8
    n_freq_masks: int = 2
    # fine-tuning
    freeze_encoder: bool = False
    blank: int = 0

    def validate(self) -> None:
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"stage must be pretrain or finetune, got {self.stage!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < (2 if self.stage == "pretrain" else 1):
            raise ConfigError("batch_size too small")
        if self.objective not in ("fairasr", "infonce"):
            raise ConfigError(f"objective must be fairasr or infonce, got {self.objective!r}")
        self.loss_config().validate()

    def loss_config(self) -> FairLossConfig:
        return FairLossConfig(self.lam, self.grl_alpha, self.shared_embedding_space, self.temperature)

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(self.time_mask_width, self.n_time_masks,
                             self.freq_mask_width, self.n_freq_masks)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def losses(self, key: str = "loss") -> list[float]:
        return [r[key] for r in self.records]

    def to_jsonl(self, timing: bool = False) -> str:
        lines = []
        for r in self.records:
            rec = {k: v for k, v in r.items() if timing or k != "wall"}
            lines.append(json.dumps({"kind": "step", **rec}, sort_keys=True))
        for e in self.epochs:
            lines.append(json.dumps({"kind": "epoch", **e}, sort_keys=True))
        return "\n".join(lines) + "\n"


# -- optimizer -------------------------------------------------------------------
def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total_steps <= 0:
        return lr_max
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Params, state: AdamWState, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, weight_decay: float = 0.01, eps: float = 1e-8,
               names: Sequence[str] | None = None) -> None:
    """In-place AdamW update of ``params`` from their ``.grad`` (missing grad counts as zero).

    Weight decay is decoupled: weights shrink by ``lr * weight_decay``
    directly, independent of the adaptive moments.
    """
    names = sorted(params) if names is None else list(names)
    for name in names:
        g = params[name].grad
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    for name in names:
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_grad_norm(params: Params, names: Sequence[str], max_norm: float) -> float:
    sq = sum(float((params[n].grad ** 2).sum()) for n in names if params[n].grad is not None)
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        c = max_norm / (norm + 1e-12)
        for n in names:
            if params[n].grad is not None:
                params[n].grad = params[n].grad * c
    return norm


def _zero_grads(params: Params) -> None:
    for p in params.values():
        p.grad = None


def _snapshot(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def _batches(n: int, size: int, rng: np.random.Generator, min_size: int) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i:i + size] for i in range(0, n, size)]
    return [b for b in out if len(b) >= min_size]


def _check_finite_loss(value: float, step: int, last_good: Params) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss at step {step}", last_good)


# -- loops -----------------------------------------------------------------------------
def contrastive_forward(batch_utts: Sequence[Utterance], params: Params, model_cfg: ModelConfig,
                        cfg: TrainConfig, aug_seed: int):
    """Loss tensor and component dict for one contrastive batch."""
    batch = make_contrastive_batch(batch_utts, cfg.fsc_attribute, cfg.augment_policy(), aug_seed)
    x, mask = pad_batch(batch.samples)
    h, sub_mask = encode(x, mask, params, model_cfg)
    hbar = mean_pool(h, sub_mask)
    if cfg.objective == "infonce":
        z = project(hbar, params, "head", model_cfg.normalize_projections)
        loss = info_nce(z, batch.pair_of, cfg.temperature)
        return loss, {"info_nce": loss.item()}
    return fairasr_loss(hbar, batch.pair_of, batch.group_key, params, cfg.loss_config(),
                        model_cfg.normalize_projections)


def pretrain(corpus: Sequence[Utterance], cfg: TrainConfig, model_cfg: ModelConfig,
             checkpoint_dir=None, params: Params | None = None) -> tuple[Params, TrainLog]:
    """Minimize InfoNCE + lambda * FSC (or InfoNCE alone) with AdamW under a cosine schedule."""
    cfg.validate()
    if cfg.stage != "pretrain":
        raise ConfigError("pretrain requires stage = pretrain")
    if not corpus:
        raise ConfigError("pretrain: empty corpus")
    if params is None:
        independent = cfg.objective == "fairasr" and not cfg.shared_embedding_space
        params = init_encoder(model_cfg, cfg.seed, independent_head=independent)
    names = sorted(params)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    plan = [_batches(len(corpus), cfg.batch_size, shuffle_rng, 2) for _ in range(cfg.epochs)]
    total_steps = sum(len(p) for p in plan)
    if total_steps == 0:
        raise ConfigError("pretrain: corpus too small for a batch of two")
    state = AdamWState()
    tlog = TrainLog()
    step = 0
    best = math.inf
    last_good = _snapshot(params)
    for epoch, batches in enumerate(plan, 1):
        ep_losses, ep_nce = [], []
        for idx in batches:
            t0 = time.perf_counter()
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min)
            loss, parts = contrastive_forward([corpus[i] for i in idx], params, model_cfg, cfg,
                                              aug_seed=cfg.seed * 1_000_003 + step)
            _check_finite_loss(loss.item(), step, last_good)
            _zero_grads(params)
            loss.backward()
            gnorm = clip_grad_norm(params, names, cfg.clip_norm)
            adamw_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps, names)
            step += 1
            rec = {"step": step, "epoch": epoch, "lr": lr, "loss": loss.item(),
                   "grad_norm": gnorm, **parts, "wall": time.perf_counter() - t0}
            tlog.records.append(rec)
            ep_losses.append(rec["loss"])
            ep_nce.append(parts["info_nce"])
        last_good = _snapshot(params)
        summary = {"epoch": epoch, "loss": float(np.mean(ep_losses)),
                   "info_nce": float(np.mean(ep_nce))}
        tlog.epochs.append(summary)
        log.info("pretrain epoch %d loss %.4f", epoch, summary["loss"])
        if checkpoint_dir is not None:
            d = Path(checkpoint_dir)
            d.mkdir(parents=True, exist_ok=True)
            save_checkpoint(d / f"pretrain_epoch{epoch:03d}.ckpt", params, model_cfg)
            if summary["loss"] < best:
                best = summary["loss"]
                save_checkpoint(d / "pretrain_best.ckpt", params, model_cfg)
    return params, tlog


def finetune(corpus: Sequence[Utterance], pretrained: Params, cfg: TrainConfig,
             model_cfg: ModelConfig, checkpoint_dir=None) -> tuple[Params, TrainLog]:
    """Attach the recurrent head to the pretrained encoder and minimize mean CTC loss.

    No augmentation is applied. With ``freeze_encoder`` only the head moves.
    """
    cfg.validate()
    if cfg.stage != "finetune":
        raise ConfigError("finetune requires stage = finetune")
    if not corpus:
        raise ConfigError("finetune: empty corpus")
    for utt in corpus:
        if max(utt.transcript) >= model_cfg.vocab_size:
            raise ConfigError(f"utterance {utt.id} has token {max(utt.transcript)} outside "
                              f"vocabulary of size {model_cfg.vocab_size}")
        if utt.spec.bins != model_cfg.n_mels:
            raise ConfigError(f"utterance {utt.id} has {utt.spec.bins} mel bins, model expects "
                              f"{model_cfg.n_mels}")
    params = {k: Tensor(pretrained[k].data.copy(), requires_grad=True, name=k)
              for k in encoder_param_names(pretrained)}
    if not params:
        raise ConfigError("finetune: pretrained parameters contain no encoder weights")
    params.update(init_decoder(model_cfg, cfg.seed))
    trainable = sorted(k for k in params if not (cfg.freeze_encoder and not k.startswith("decoder.")))
    shuffle_rng = np.random.default_rng([cfg.seed, 3])
    plan = [_batches(len(corpus), cfg.batch_size, shuffle_rng, 1) for _ in range(cfg.epochs)]
    total_steps = sum(len(p) for p in plan)
    state = AdamWState()
    tlog = TrainLog()
    step = 0
    best = math.inf
    last_good = _snapshot(params)
    for epoch, batches in enumerate(plan, 1):
        ep_losses = []
        for idx in batches:
            t0 = time.perf_counter()
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min)
            utts = [corpus[i] for i in idx]
            loss = ctc_forward(utts, params, model_cfg, cfg.blank)
            _check_finite_loss(loss.item(), step, last_good)
            _zero_grads(params)
            loss.backward()
            gnorm = clip_grad_norm(params, trainable, cfg.clip_norm)
            adamw_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps, trainable)
            step += 1
            tlog.records.append({"step": step, "epoch": epoch, "lr": lr, "loss": loss.item(),
                                 "grad_norm": gnorm, "wall": time.perf_counter() - t0})
            ep_losses.append(loss.item())
        last_good = _snapshot(params)
        summary = {"epoch": epoch, "loss": float(np.mean(ep_losses))}
        tlog.epochs.append(summary)
        log.info("finetune epoch %d ctc %.4f", epoch, summary["loss"])
        if checkpoint_dir is not None:
            d = Path(checkpoint_dir)
            d.mkdir(parents=True, exist_ok=True)
            save_checkpoint(d / f"finetune_epoch{epoch:03d}.ckpt", params, model_cfg)
            if summary["loss"] < best:
                best = summary["loss"]
                save_checkpoint(d / "finetune_best.ckpt", params, model_cfg)
    return params, tlog


def ctc_forward(utts: Sequence[Utterance], params: Params, model_cfg: ModelConfig,
                blank: int = 0) -> Tensor:
    x, mask = pad_batch([u.spec for u in utts])
    h, sub_mask = encode(x, mask, params, model_cfg)
    lp = decode_logits(h, sub_mask, params)
    return ctc_loss_batch(lp, sub_mask.sum(axis=1), [u.transcript for u in utts], blank)


def pooled_embeddings(corpus: Sequence[Utterance], params: Params, model_cfg: ModelConfig,
                      batch_size: int = 64) -> np.ndarray:
    """Mean-pooled encoder features, one row per utterance (no graph is built)."""
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    rows = []
    for i in range(0, len(corpus), batch_size):
        x, mask = pad_batch([u.spec for u in corpus[i:i + batch_size]])
        h, sub = encode(x, mask, frozen, model_cfg)
        rows.append(mean_pool(h, sub).data)
    return np.concatenate(rows, axis=0)
