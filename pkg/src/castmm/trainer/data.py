"""Turn a corpus into model-ready samples and seeded batch streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import torch

from castmm.batch import Batch, Sample, collate
from castmm.corpus.build import Corpus
from castmm.encoders.vocab import Vocab, build_vocab, tokenize
from castmm.fusion.models import ModelConfig


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, purpose), so streams never interact."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class Standardizer:
    mean: float = 0.0
    std: float = 1.0

    def forward(self, y):
        return (y - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


@dataclass
class DataBundle:
    """Vocabulary, normalisation statistics and per-split samples."""

    vocab: Vocab
    prop: str | None
    target: Standardizer
    desc_mean: np.ndarray
    desc_std: np.ndarray
    samples: dict[str, list[Sample]]

    def meta(self) -> dict:
        return {
            "vocab": [self.vocab.token(i) for i in range(len(self.vocab))],
            "vocab_min_freq": self.vocab.min_freq,
            "property": self.prop,
            "target_mean": self.target.mean,
            "target_std": self.target.std,
            "desc_mean": self.desc_mean.tolist(),
            "desc_std": self.desc_std.tolist(),
        }


def vocab_from_meta(meta: dict) -> Vocab:
    tokens = meta["vocab"]
    return Vocab({t: i for i, t in enumerate(tokens)}, meta.get("vocab_min_freq", 2))


def _usable(corpus: Corpus, part: str, prop: str | None) -> list[str]:
    ids = corpus.ids(part)
    if prop is None:
        return list(ids)
    return [i for i in ids if corpus[i].record.has_target(prop)]


def prepare_data(
    corpus: Corpus,
    model_cfg: ModelConfig,
    prop: str | None = None,
    min_freq: int = 2,
    meta: dict | None = None,
) -> DataBundle:
    """Build samples for every split.

    Statistics (vocabulary, target and descriptor normalisation) come from the
    train split, or from ``meta`` when reusing a checkpoint's preprocessing.
    """
    train = _usable(corpus, "train", prop)
    if not train:
        what = f"targets for {prop!r}" if prop else "structures"
        raise ValueError(f"corpus has no training {what}")

    if meta is not None and "vocab" in meta:
        vocab = vocab_from_meta(meta)
    else:
        vocab = build_vocab([corpus[i].text for i in train], min_freq)

    if meta is not None and meta.get("property") == prop and "target_mean" in meta:
        target = Standardizer(meta["target_mean"], meta["target_std"])
    elif prop is not None:
        y = np.array([corpus[i].record.target(prop) for i in train])
        target = Standardizer(float(y.mean()), float(y.std()) or 1.0)
    else:
        target = Standardizer()

    if meta is not None and meta.get("desc_mean") is not None:
        d_mean, d_std = np.array(meta["desc_mean"]), np.array(meta["desc_std"])
    else:
        d = np.stack([corpus[i].descriptors for i in train])
        d_mean, d_std = d.mean(axis=0), d.std(axis=0)
        d_std[d_std == 0] = 1.0

    samples = {}
    for part in ("train", "val", "test"):
        rows = []
        for sid in _usable(corpus, part, prop):
            e = corpus[sid]
            y = target.forward(e.record.target(prop)) if prop else 0.0
            rows.append(
                Sample(
                    sid,
                    corpus.graph(sid, model_cfg.cutoff, model_cfg.rbf_dim),
                    tokenize(e.text, vocab),
                    float(y),
                    (e.descriptors - d_mean) / d_std,
                )
            )
        samples[part] = rows
    return DataBundle(vocab, prop, target, d_mean, d_std, samples)


def batch_stream(
    samples: Sequence[Sample], batch_size: int, seed: int, dtype=torch.float32
) -> Iterator[tuple[list[Sample], Batch]]:
    """Endless batches; each epoch is a fresh seeded permutation."""
    if not samples:
        raise ValueError("no samples to train on")
    rng = stream_rng(seed, "data-order")
    size = min(batch_size, len(samples))
    while True:
        order = rng.permutation(len(samples))
        for start in range(0, len(order) - size + 1, size):
            chunk = [samples[k] for k in order[start : start + size]]
            yield chunk, collate(chunk, dtype)


def fixed_batches(samples: Sequence[Sample], batch_size: int = 64, dtype=torch.float32):
    """Deterministic id-sorted batches for evaluation."""
    ordered = sorted(samples, key=lambda s: s.id)
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start : start + batch_size]
        yield chunk, collate(chunk, dtype)
