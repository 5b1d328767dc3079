"""Assemble a filtered, split corpus and (de)serialise it as JSON-lines."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from castmm.corpus.describe import describe
from castmm.corpus.descriptors import DescriptorSchema, build_descriptor_schema, extract_descriptors
from castmm.corpus.filters import FilterDecision, apply_filters
from castmm.corpus.generate import SPACE_GROUPS, GenConfig, generate_crystal, sample_seed
from castmm.corpus.properties import PropertyConfig, PropertyRecord, make_property_record
from castmm.corpus.split import DatasetSplit, dataset_stats, split_dataset, write_stats_csv
from castmm.crystal import CrystalStructure, PeriodicGraph, RbfSpec, build_periodic_graph
from castmm.tags import CRYSTAL_SYSTEMS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusConfig:
    n: int = 512
    seed: int = 0
    text_dropout_prob: float = 0.002
    nan_threshold: float = 0.5
    ratios: tuple[int, int, int] = (8, 1, 1)
    gen: GenConfig = field(default_factory=GenConfig)
    props: PropertyConfig = field(default_factory=PropertyConfig)


@dataclass
class Entry:
    structure: CrystalStructure
    text: str
    record: PropertyRecord
    decision: FilterDecision
    descriptors: np.ndarray | None = None
    split: str | None = None

    @property
    def id(self) -> str:
        return self.structure.id


@dataclass
class Corpus:
    entries: dict[str, Entry]
    split: DatasetSplit
    schema: DescriptorSchema

    def kept(self) -> list[str]:
        return [i for i, e in self.entries.items() if e.decision.keep]

    def __getitem__(self, sid: str) -> Entry:
        return self.entries[sid]

    def ids(self, part: str) -> tuple[str, ...]:
        return self.split.parts()[part]

    def graph(self, sid: str, cutoff: float = 5.0, rbf_size: int = 16) -> PeriodicGraph:
        """Periodic graph of one structure, cached per (cutoff, rbf_size)."""
        cache = self.__dict__.setdefault("_graphs", {})
        key = (sid, float(cutoff), int(rbf_size))
        if key not in cache:
            rbf = RbfSpec.default(cutoff, rbf_size)
            cache[key] = build_periodic_graph(self.entries[sid].structure, cutoff, rbf)
        return cache[key]

    def stats(self) -> list[dict]:
        kept = {i: self.entries[i] for i in self.kept()}
        return dataset_stats(
            self.split,
            {i: e.structure for i, e in kept.items()},
            {i: e.text for i, e in kept.items()},
            {i: e.record for i, e in kept.items()},
        )

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "corpus.jsonl", "w") as fh:
            for sid, e in self.entries.items():
                row = {
                    "id": sid,
                    "structure": e.structure.to_dict(),
                    "text": e.text,
                    "descriptors": None if e.descriptors is None else e.descriptors.tolist(),
                    "targets": e.record.targets,
                    "aux": e.record.aux,
                    "filter": str(e.decision),
                    "split": e.split,
                }
                fh.write(json.dumps(row) + "\n")
        (out / "schema.json").write_text(json.dumps(self.schema.to_dict(), indent=1))
        (out / "split.json").write_text(json.dumps(self.split.to_dict()))
        write_stats_csv(self.stats(), out / "stats.csv")

    @classmethod
    def load(cls, out_dir) -> "Corpus":
        out = Path(out_dir)
        entries = {}
        with open(out / "corpus.jsonl") as fh:
            for line in fh:
                row = json.loads(line)
                s = CrystalStructure.from_dict(row["structure"])
                rec = PropertyRecord(row["id"], row["targets"], row["aux"], tuple(s.symbols))
                f = row["filter"]
                dec = FilterDecision(True) if f == "keep" else FilterDecision(False, f[5:-1])
                desc = None if row["descriptors"] is None else np.array(row["descriptors"], dtype=np.float64)
                entries[row["id"]] = Entry(s, row["text"], rec, dec, desc, row["split"])
        schema = DescriptorSchema.from_dict(json.loads((out / "schema.json").read_text()))
        split = DatasetSplit.from_dict(json.loads((out / "split.json").read_text()))
        return cls(entries, split, schema)


def build_corpus(cfg: CorpusConfig) -> Corpus:
    entries: dict[str, Entry] = {}
    for i in range(cfg.n):
        seed = sample_seed(cfg.seed, i)
        s = generate_crystal(seed, cfg.gen, id=f"syn-{cfg.seed}-{i:06d}")
        rec = make_property_record(s, noise_seed=cfg.seed, config=cfg.props)
        text = describe(s, cfg.text_dropout_prob, seed=cfg.seed)
        entries[s.id] = Entry(s, text, rec, apply_filters(rec))
    kept = [i for i, e in entries.items() if e.decision.keep]
    log.info("kept %d of %d generated structures", len(kept), cfg.n)
    split = split_dataset(kept, cfg.ratios, cfg.seed)
    universe = {
        "crystal_system": CRYSTAL_SYSTEMS,
        "space_group_label": [sg for v in SPACE_GROUPS.values() for sg in v],
    }
    schema = build_descriptor_schema(
        [entries[i].structure for i in split.train], cfg.nan_threshold, known_labels=universe
    )
    for part, ids in split.parts().items():
        for i in ids:
            entries[i].split = part
            entries[i].descriptors = extract_descriptors(entries[i].structure, schema).values
    return Corpus(entries, split, schema)


def config_to_dict(cfg: CorpusConfig) -> dict:
    return asdict(cfg)
