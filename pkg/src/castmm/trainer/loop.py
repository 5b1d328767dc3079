"""Pretraining, finetuning and evaluation loops."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from castmm.batch import Sample
from castmm.corpus.build import Corpus
from castmm.fusion.models import ModelConfig, build_model
from castmm.nn.checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint
from castmm.nn.core import backward, resolve_dtype
from castmm.nn.optim import AdamW
from castmm.trainer.config import TrainConfig
from castmm.trainer.data import DataBundle, batch_stream, fixed_batches, prepare_data, stream_rng
from castmm.trainer.runlog import RunLog
from castmm.trainer.schedule import lr_at, sample_mask


@dataclass
class TrainResult:
    model: torch.nn.Module
    log: RunLog
    data: DataBundle
    config: TrainConfig
    kind: str
    model_config: ModelConfig
    step: int
    state: dict[str, torch.Tensor] = field(default_factory=dict)

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "step": self.step,
            "dtype": str(next(self.model.parameters()).dtype).replace("torch.", ""),
            "model_config": self.model_config.to_dict(),
            "train_config": self.config.to_dict(),
            **self.data.meta(),
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.state, self.meta())


def _model_kind(cfg: TrainConfig) -> str:
    return {"mnp": "mnp", "contrastive": "contrastive-pretrain"}.get(cfg.kind, cfg.variant)


def _snapshot(model, opt: AdamW) -> dict[str, torch.Tensor]:
    out = {n: p.detach().clone() for n, p in model.named_parameters()}
    out.update({n: t.clone() for n, t in opt.state_tensors().items()})
    return out


def _fit(model, cfg: TrainConfig, samples: list[Sample], loss_fn, log: RunLog, dtype, on_eval=None) -> AdamW:
    opt = AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
    stream = batch_stream(samples, cfg.batch_size, cfg.seed, dtype)
    for step in range(cfg.total_steps):
        chunk, batch = next(stream)
        lr = lr_at(step, cfg)
        opt.zero_grad()
        loss = loss_fn(chunk, batch)
        backward(loss)
        opt.step(lr)
        log.add_step(step, lr, loss.item())
        last = step + 1 == cfg.total_steps
        if on_eval is not None and ((step + 1) % cfg.eval_every == 0 or last):
            on_eval(step, opt)
    return opt


def _start(cfg: TrainConfig, expect: str) -> torch.dtype:
    if cfg.kind != expect:
        raise ValueError(f"config task {cfg.task!r} does not match a {expect} run")
    torch.set_num_threads(1)
    return resolve_dtype(cfg.precision)


def _build(kind: str, cfg: TrainConfig, data: DataBundle, dtype, model_cfg: ModelConfig | None = None):
    mcfg = replace(model_cfg or cfg.model, vocab_size=len(data.vocab), desc_dim=len(data.desc_mean))
    model = build_model(kind, mcfg, cfg.seed, dtype)
    if cfg.freeze_text or kind == "concat-frozen":
        model.set_text_frozen(True)
    return model, mcfg


def _masker(cfg: TrainConfig):
    rng = stream_rng(cfg.seed, "mask")

    def apply(chunk, batch):
        sets = [sample_mask(s.graph.n_nodes, cfg.mask_ratio, rng) for s in chunk]
        batch.node_mask = batch.graphs.global_mask(sets)
        return batch

    return apply


def pretrain_mnp(corpus: Corpus, cfg: TrainConfig, data: DataBundle | None = None) -> TrainResult:
    """Masked node prediction over the train split."""
    dtype = _start(cfg, "mnp")
    data = data or prepare_data(corpus, cfg.model, None, cfg.min_freq)
    model, mcfg = _build("mnp", cfg, data, dtype)
    mask = _masker(cfg)
    log = RunLog()
    opt = _fit(model, cfg, data.samples["train"], lambda c, b: model.loss(mask(c, b)), log, dtype)
    log.final = {"train_masked_accuracy": masked_accuracy(model, data.samples["train"], cfg.mask_ratio, cfg.seed)}
    return TrainResult(model, log, data, cfg, "mnp", mcfg, cfg.total_steps, _snapshot(model, opt))


def pretrain_contrastive(corpus: Corpus, cfg: TrainConfig, data: DataBundle | None = None) -> TrainResult:
    """Two-tower structure/text alignment over the train split."""
    dtype = _start(cfg, "contrastive")
    data = data or prepare_data(corpus, cfg.model, None, cfg.min_freq)
    if len(data.samples["train"]) < 2:
        raise ValueError("contrastive pretraining needs at least 2 training samples")
    model, mcfg = _build("contrastive-pretrain", cfg, data, dtype)
    log = RunLog()
    opt = _fit(model, cfg, data.samples["train"], lambda c, b: model.loss(b), log, dtype)
    log.final = {"temperature": model.heads.temperature.item()}
    return TrainResult(model, log, data, cfg, "contrastive-pretrain", mcfg, cfg.total_steps, _snapshot(model, opt))


def _load_init(init):
    if init is None:
        return None, None
    if isinstance(init, TrainResult):
        return init.state, init.meta()
    if isinstance(init, (str, Path)):
        return load_checkpoint(init)
    return init


def finetune(init, corpus: Corpus, cfg: TrainConfig, data: DataBundle | None = None) -> TrainResult:
    """Regress ``cfg.prop``; returns the best-validation model.

    ``init`` is None (train from scratch), a checkpoint path, a TrainResult or a
    ``(tensors, meta)`` pair. Parameters under ``cfg.transfer`` prefixes are
    copied from it; the regression head is always fresh.
    """
    dtype = _start(cfg, "regression")
    prop = cfg.prop
    tensors, meta = _load_init(init)
    model_cfg = ModelConfig(**meta["model_config"]) if meta else None
    data = data or prepare_data(corpus, model_cfg or cfg.model, prop, cfg.min_freq, meta)
    model, mcfg = _build(cfg.variant, cfg, data, dtype, model_cfg)
    if tensors is not None:
        loaded = load_into(model, tensors, cfg.transfer)
        if not loaded:
            raise CheckpointError("initial checkpoint shares no parameters with the model")
    if not data.samples["val"]:
        raise ValueError("finetuning needs a non-empty validation split")

    log = RunLog()
    best = {"mae": float("inf"), "step": -1, "state": {}}

    def on_eval(step, opt):
        val = evaluate(model, data, "val").mae
        log.add_eval(step, "val", val)
        if val < best["mae"]:
            best.update(mae=val, step=step, state=_snapshot(model, opt))

    _fit(model, cfg, data.samples["train"], lambda c, b: model.loss(b), log, dtype, on_eval)
    load_into(model, best["state"])
    log.final = {
        "best_step": best["step"],
        "best_val_mae": best["mae"],
        "test_mae": evaluate(model, data, "test").mae if data.samples["test"] else None,
    }
    return TrainResult(model, log, data, cfg, cfg.variant, mcfg, best["step"] + 1, best["state"])


@dataclass
class EvalResult:
    mae: float
    rows: list[tuple[str, float, float]]  # id, prediction, target

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "prediction", "target"])
            for sid, p, t in self.rows:
                w.writerow([sid, repr(p), repr(t)])


@torch.no_grad()
def predict(model, samples: list[Sample], data: DataBundle) -> list[tuple[str, float, float]]:
    dtype = next(model.parameters()).dtype
    rows = []
    for chunk, batch in fixed_batches(samples, 64, dtype):
        z = model.predict(batch).double().numpy()
        for s, zi in zip(chunk, z):
            rows.append((s.id, float(data.target.inverse(zi)), float(data.target.inverse(s.target))))
    return rows


def evaluate(model, data: DataBundle, split: str = "test") -> EvalResult:
    """MAE in target space (log10 for the moduli) plus per-sample rows sorted by id."""
    if split not in data.samples:
        raise KeyError(f"unknown split {split!r}")
    rows = predict(model, data.samples[split], data)
    if not rows:
        return EvalResult(float("nan"), [])
    err = np.array([abs(p - t) for _, p, t in rows])
    return EvalResult(float(err.mean()), rows)


@torch.no_grad()
def masked_accuracy(model, samples: list[Sample], ratio: float, seed: int = 0, draws: int = 4) -> float:
    """Fraction of masked nodes whose element is predicted correctly."""
    dtype = next(model.parameters()).dtype
    rng = stream_rng(seed, "eval-mask")
    hit = total = 0
    for _ in range(draws):
        for chunk, batch in fixed_batches(samples, 64, dtype):
            sets = [sample_mask(s.graph.n_nodes, ratio, rng) for s in chunk]
            batch.node_mask = batch.graphs.global_mask(sets)
            pred = model.mnp_logits(batch).argmax(dim=-1)
            truth = batch.graphs.elements[batch.node_mask]
            hit += int((pred == truth).sum())
            total += len(truth)
    return hit / total


def load_trained(path, corpus: Corpus) -> tuple[torch.nn.Module, DataBundle, dict]:
    """Rebuild a model and its preprocessing from a checkpoint."""
    tensors, meta = load_checkpoint(path)
    mcfg = ModelConfig(**meta["model_config"])
    data = prepare_data(corpus, mcfg, meta.get("property"), meta.get("vocab_min_freq", 2), meta)
    model = build_model(meta["kind"], mcfg, 0, getattr(torch, meta["dtype"]))
    missing = set(dict(model.named_parameters())) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    load_into(model, tensors)
    return model, data, meta
