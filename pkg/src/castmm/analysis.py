"""Attention-map extraction and pairwise node-similarity distributions."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from castmm.batch import Sample, collate
from castmm.encoders.vocab import Vocab
from castmm.fusion.cross_attention import AttentionMap

log = logging.getLogger(__name__)

BIN_WIDTH = 0.02
N_BINS = 50
HIST_COLUMNS = ("layer", "bin_lo", "bin_hi", "count")
ATTN_COLUMNS = ("layer", "head", "node", "token_index", "token", "weight")


def token_strings(sample: Sample, vocab: Vocab) -> list[str]:
    return [vocab.token(i) for i in sample.tokens.ids]


@torch.no_grad()
def record_attention(model, sample: Sample, vocab: Vocab) -> tuple[AttentionMap, list[str]]:
    """Layers x heads x nodes x tokens weights for one sample, plus token strings."""
    dtype = next(model.parameters()).dtype
    out = model.fuse(collate([sample], dtype), record=True)
    amap = out.attention_map(0, sample.graph.n_nodes, len(sample.tokens))
    return amap, token_strings(sample, vocab)


def pairwise_cosine(m) -> np.ndarray:
    """Cosine similarity of every unordered row pair (a < b), in row-major pair order."""
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if n < 2:
        log.info("pairwise_cosine: %d row(s), no pairs", n)
        return np.zeros(0)
    norms = np.sqrt((m * m).sum(axis=1))
    a, b = np.triu_indices(n, k=1)
    dots = (m[a] * m[b]).sum(axis=1)
    return dots / (norms[a] * norms[b])


def histogram(values: np.ndarray) -> np.ndarray:
    """Counts in 50 bins of width 0.02 on [0, 1]; 1.0 lands in the last bin.

    Values are clipped into [0, 1] for binning only, so round-off just past
    either end is still counted.
    """
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    idx = np.minimum((v / BIN_WIDTH).astype(np.int64), N_BINS - 1)
    return np.bincount(idx, minlength=N_BINS)


def bin_edges() -> np.ndarray:
    return np.round(np.arange(N_BINS + 1) * BIN_WIDTH, 10)


@dataclass
class SimilarityReport:
    """Pooled cosine values per label ("2" for layer 2, "2.h5" for one head)."""

    values: dict[str, np.ndarray] = field(default_factory=dict)
    n_samples: int = 0
    n_skipped: int = 0
    skipped_ids: list[str] = field(default_factory=list)

    def histograms(self) -> dict[str, np.ndarray]:
        return {k: histogram(v) for k, v in self.values.items()}

    def summary(self) -> dict[str, dict]:
        out = {}
        for k, v in self.values.items():
            out[k] = {
                "count": int(len(v)),
                "mean": float(v.mean()) if len(v) else float("nan"),
                "std": float(v.std()) if len(v) else float("nan"),
            }
        return out


def _label(layer: int, head: int | None) -> str:
    return str(layer) if head is None else f"{layer}.h{head}"


@torch.no_grad()
def similarity_distribution(
    model,
    samples: Sequence[Sample],
    layers: Sequence[int] | None = None,
    per_head: bool = False,
    batch_size: int = 32,
) -> SimilarityReport:
    """Aggregate pairwise cosines over samples (sorted by id) and heads.

    Samples with fewer than two nodes are skipped and counted. ``layers``
    defaults to every fusion layer.
    """
    ordered = sorted(samples, key=lambda s: s.id)
    if not ordered:
        raise ValueError("similarity_distribution needs at least one sample")
    dtype = next(model.parameters()).dtype
    report = SimilarityReport()
    chunks: dict[str, list[np.ndarray]] = {}
    usable = [s for s in ordered if s.graph.n_nodes >= 2]
    for s in ordered:
        if s.graph.n_nodes < 2:
            report.n_skipped += 1
            report.skipped_ids.append(s.id)
    if not usable:
        raise ValueError("every sample has fewer than two nodes")
    for start in range(0, len(usable), batch_size):
        part = usable[start : start + batch_size]
        out = model.fuse(collate(part, dtype), record=True)
        n_layers = len(out.attention)
        chosen = range(n_layers) if layers is None else layers
        for b, s in enumerate(part):
            amap = out.attention_map(b, s.graph.n_nodes, len(s.tokens))
            for layer in chosen:
                for head in range(amap.shape[1]):
                    vals = pairwise_cosine(amap.layer_head(layer, head))
                    chunks.setdefault(_label(layer, head if per_head else None), []).append(vals)
    report.values = {k: np.concatenate(v) for k, v in chunks.items()}
    report.n_samples = len(usable)
    return report


def export_histogram_csv(report: SimilarityReport, path) -> None:
    edges = bin_edges()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HIST_COLUMNS)
        for label, counts in report.histograms().items():
            for i, c in enumerate(counts):
                w.writerow([label, f"{edges[i]:.2f}", f"{edges[i + 1]:.2f}", int(c)])


def read_histogram_csv(path) -> dict[str, np.ndarray]:
    out: dict[str, list[int]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["layer"], []).append(int(row["count"]))
    return {k: np.array(v, dtype=np.int64) for k, v in out.items()}


def export_attention_csv(amap: AttentionMap, tokens: Sequence[str], path) -> None:
    L, H, N, T = amap.shape
    if len(tokens) != T:
        raise ValueError(f"{len(tokens)} token strings for {T} attention columns")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTN_COLUMNS)
        for layer in range(L):
            for head in range(H):
                for node in range(N):
                    for t in range(T):
                        w.writerow([layer, head, node, t, tokens[t], repr(float(amap.values[layer, head, node, t]))])


def read_attention_csv(path) -> tuple[AttentionMap, list[str]]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return AttentionMap(np.zeros((0, 0, 0, 0))), []
    dims = [max(int(r[c]) for r in rows) + 1 for c in ("layer", "head", "node", "token_index")]
    vals = np.zeros(dims)
    tokens = [""] * dims[3]
    for r in rows:
        vals[int(r["layer"]), int(r["head"]), int(r["node"]), int(r["token_index"])] = float(r["weight"])
        tokens[int(r["token_index"])] = r["token"]
    return AttentionMap(vals), tokens


def export_csv(obj, path) -> None:
    """Write a SimilarityReport histogram, or an attention dump given as (header, map)."""
    if isinstance(obj, SimilarityReport):
        export_histogram_csv(obj, path)
    elif isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[1], AttentionMap):
        header, amap = obj
        export_attention_csv(amap, header["tokens"], path)
    else:
        raise TypeError(f"cannot export {type(obj).__name__} as CSV")
