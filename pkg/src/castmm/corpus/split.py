"""Train/val/test splits and per-split summary statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from castmm.corpus.properties import TARGET_KINDS, PropertyRecord
from castmm.crystal import CrystalStructure
from castmm.encoders.vocab import word_tokens


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    ratios: tuple[int, int, int]

    def parts(self) -> dict[str, tuple[str, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def to_dict(self) -> dict:
        return {**{k: list(v) for k, v in self.parts().items()}, "seed": self.seed, "ratios": list(self.ratios)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]), tuple(d["ratios"]))


def split_dataset(ids: Sequence[str], ratios=(8, 1, 1), seed: int = 0) -> DatasetSplit:
    ids = list(ids)
    n = len(ids)
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    if len(set(ids)) != n:
        raise ValueError("sample ids must be distinct")
    total = sum(ratios)
    n_train = (n * ratios[0]) // total
    n_val = (n * ratios[1]) // total
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=int(seed),
        ratios=tuple(int(r) for r in ratios),
    )


STATS_COLUMNS = (
    ["split", "count", "nodes_mean", "nodes_std", "tokens_mean", "tokens_std", "text_rate", "text_count"]
    + [f"{k}_{s}" for k in TARGET_KINDS for s in ("mean", "std")]
)


def _mean_std(x) -> tuple[float, float]:
    if len(x) == 0:
        return float("nan"), float("nan")
    a = np.asarray(x, dtype=np.float64)
    return float(a.mean()), float(a.std())


def dataset_stats(
    split: DatasetSplit,
    structures: Mapping[str, CrystalStructure],
    texts: Mapping[str, str],
    records: Mapping[str, PropertyRecord] | None = None,
) -> list[dict]:
    """One row per split part; std is the population (ddof=0) value.

    Token counts are word tokens of the description, excluding [CLS].
    """
    rows = []
    for name, ids in split.parts().items():
        nodes = [len(structures[i]) for i in ids]
        tokens = [len(word_tokens(texts[i])) for i in ids]
        present = sum(1 for i in ids if texts[i].strip())
        row = {
            "split": name,
            "count": len(ids),
            "text_rate": present / len(ids) if ids else float("nan"),
            "text_count": present,
        }
        row["nodes_mean"], row["nodes_std"] = _mean_std(nodes)
        row["tokens_mean"], row["tokens_std"] = _mean_std(tokens)
        for k in TARGET_KINDS:
            vals = [records[i].target(k) for i in ids if records and records[i].has_target(k)]
            row[f"{k}_mean"], row[f"{k}_std"] = _mean_std(vals)
        rows.append(row)
    return rows


def write_stats_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in STATS_COLUMNS})
