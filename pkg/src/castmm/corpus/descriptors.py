"""Typed descriptor vectors (categorical / numerical / boolean)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from castmm.crystal import CrystalStructure

KINDS = ("categorical", "numerical", "boolean")


class SchemaError(ValueError):
    pass


def _tilt_angle(s: CrystalStructure) -> float:
    # only meaningful for corner-sharing networks of at least four sites
    if not s.global_tags.corner_sharing or len(s) < 4:
        return math.nan
    f = s.frac_array()
    v = (f[1] - f[0]) @ s.lattice.basis
    cos = abs(v[2]) / max(float(np.linalg.norm(v)), 1e-12)
    return math.degrees(math.acos(min(cos, 1.0)))


# name -> (kind, getter)
FIELDS: dict[str, tuple[str, Callable[[CrystalStructure], object]]] = {
    "crystal_system": ("categorical", lambda s: s.global_tags.crystal_system),
    "space_group_label": ("categorical", lambda s: s.global_tags.space_group_label),
    "edge_sharing": ("boolean", lambda s: s.global_tags.edge_sharing),
    "corner_sharing": ("boolean", lambda s: s.global_tags.corner_sharing),
    "face_sharing": ("boolean", lambda s: s.global_tags.face_sharing),
    "bond_min": ("numerical", lambda s: s.global_tags.bond_range[0]),
    "bond_max": ("numerical", lambda s: s.global_tags.bond_range[1]),
    "n_sites": ("numerical", lambda s: float(len(s))),
    "volume_per_atom": ("numerical", lambda s: s.lattice.volume / len(s)),
    "corner_tilt_angle": ("numerical", _tilt_angle),
}


def _undefined(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str


@dataclass(frozen=True)
class DescriptorSchema:
    fields: tuple[FieldSpec, ...]
    category_maps: dict[str, dict[str, int]]
    dropped: tuple[str, ...] = ()

    def __len__(self):
        return len(self.fields)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    def encode(self, name: str, label: str) -> int:
        try:
            return self.category_maps[name][label]
        except KeyError:
            raise SchemaError(f"label {label!r} not in frozen categories of {name!r}") from None

    def decode(self, name: str, ordinal: int) -> str:
        inv = {v: k for k, v in self.category_maps[name].items()}
        return inv[int(ordinal)]

    def to_dict(self) -> dict:
        return {
            "fields": [[f.name, f.kind] for f in self.fields],
            "category_maps": self.category_maps,
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DescriptorSchema":
        return cls(
            tuple(FieldSpec(n, k) for n, k in d["fields"]),
            {k: dict(v) for k, v in d["category_maps"].items()},
            tuple(d.get("dropped", ())),
        )


@dataclass(frozen=True)
class DescriptorVector:
    values: np.ndarray
    schema: DescriptorSchema


def build_descriptor_schema(
    structures: Sequence[CrystalStructure],
    nan_threshold: float = 0.5,
    fields: Sequence[str] | None = None,
    known_labels: Mapping[str, Iterable[str]] | None = None,
) -> DescriptorSchema:
    """Freeze field list and category orderings on a (training) corpus.

    Fields undefined for more than ``nan_threshold`` of the structures are dropped.
    ``known_labels`` adds labels that may be absent from a small training split.
    """
    if not structures:
        raise SchemaError("cannot build a schema from an empty corpus")
    names = list(fields) if fields is not None else list(FIELDS)
    kept, dropped, cats = [], [], {}
    for name in names:
        kind, get = FIELDS[name]
        vals = [get(s) for s in structures]
        missing = sum(_undefined(v) for v in vals) / len(vals)
        if missing > nan_threshold:
            dropped.append(name)
            continue
        kept.append(FieldSpec(name, kind))
        if kind == "categorical":
            seen = {str(v) for v in vals if not _undefined(v)}
            seen.update((known_labels or {}).get(name, ()))
            labels = sorted(seen)
            cats[name] = {lab: i for i, lab in enumerate(labels)}
    return DescriptorSchema(tuple(kept), cats, tuple(dropped))


def extract_descriptors(structure: CrystalStructure, schema: DescriptorSchema) -> DescriptorVector:
    out = np.zeros(len(schema), dtype=np.float64)
    for k, f in enumerate(schema.fields):
        v = FIELDS[f.name][1](structure)
        if f.kind == "categorical":
            out[k] = schema.encode(f.name, str(v))
        elif f.kind == "boolean":
            out[k] = 1.0 if v else 0.0
        else:
            # retained numerical fields are imputed with 0 where undefined
            out[k] = 0.0 if _undefined(v) else float(v)
    return DescriptorVector(out, schema)
