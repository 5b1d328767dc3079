"""Synthetic ground-truth properties.

Every regression target is ``offset + scale * (local + global) + noise`` where
``local`` is visible to a graph model (element identities, mean inverse
neighbour distance) and ``global`` depends only on text-borne tags.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from castmm.crystal import CrystalStructure, build_periodic_graph, mean_inverse_distance
from castmm.tags import CRYSTAL_SYSTEMS, SHARING_MODES

TARGET_KINDS = ("E_tot", "bandgap", "logG", "logK")

COEFF_VERSION = 1

# (offset, scale, element phase, inverse-distance weight)
_PROPERTY_SHAPE = {
    "E_tot": (-5.0, 2.0, 0.0, 4.0),
    "bandgap": (2.0, 0.8, 1.1, -3.0),
    "logG": (1.5, 0.25, 2.3, 5.0),
    "logK": (1.9, 0.25, 3.7, 6.0),
}

# unit-scale tables, multiplied by the property scale
_SYSTEM_TABLE = {
    "E_tot": (-1.2, -0.6, 0.0, 0.5, 0.9, 1.4, -1.6),
    "bandgap": (0.8, -1.0, 1.3, -0.4, 0.2, -1.5, 0.6),
    "logG": (-1.4, 0.3, -0.7, 1.1, 1.6, -0.2, 0.9),
    "logK": (0.4, -1.5, 1.0, -0.9, 0.1, 1.5, -0.5),
}
_SHARING_TABLE = {
    "E_tot": (0.5, -0.4, 0.3),
    "bandgap": (-0.3, 0.5, 0.4),
    "logG": (0.4, 0.3, -0.5),
    "logK": (-0.5, 0.4, 0.3),
}


@dataclass(frozen=True)
class PropertyConfig:
    noise_sigma: float = 0.05  # in units of the property scale
    cutoff: float = 5.0
    anomaly_prob: float = 0.02


def _check_kind(kind: str) -> None:
    if kind not in TARGET_KINDS:
        raise ValueError(f"unknown property kind {kind!r}; expected one of {TARGET_KINDS}")


def element_coefficient(element: int, kind: str) -> float:
    _check_kind(kind)
    phase = _PROPERTY_SHAPE[kind][2]
    z = element + 1
    return math.sin(0.37 * z + phase) + 0.3 * math.cos(0.11 * z)


def global_coefficients(kind: str) -> dict[str, float]:
    """Coefficient table (already multiplied by the property scale)."""
    _check_kind(kind)
    scale = _PROPERTY_SHAPE[kind][1]
    out = {f"system:{s}": scale * c for s, c in zip(CRYSTAL_SYSTEMS, _SYSTEM_TABLE[kind])}
    out.update({f"flag:{m}": scale * c for m, c in zip(SHARING_MODES, _SHARING_TABLE[kind])})
    return out


def global_part(structure: CrystalStructure, kind: str) -> float:
    coef = global_coefficients(kind)
    tags = structure.global_tags
    v = coef[f"system:{tags.crystal_system}"]
    for m, on in tags.sharing().items():
        if on:
            v += coef[f"flag:{m}"]
    return v


def local_part(structure: CrystalStructure, kind: str, cutoff: float = 5.0) -> float:
    offset, scale, _, w_inv = _PROPERTY_SHAPE[kind]
    elem = float(np.mean([element_coefficient(e, kind) for e in structure.elements]))
    inv = mean_inverse_distance(build_periodic_graph(structure, cutoff))
    return offset + scale * (elem + w_inv * (inv - 0.3))


def _noise_rng(noise_seed: int, structure_id: str, kind: str) -> np.random.Generator:
    return np.random.default_rng(
        [int(noise_seed), zlib.crc32(structure_id.encode()), TARGET_KINDS.index(kind)]
    )


def ground_truth_property(
    structure: CrystalStructure, property_kind: str, noise_seed: int = 0, config: PropertyConfig | None = None
) -> float:
    """Target value in training space (log10 GPa for the two moduli)."""
    _check_kind(property_kind)
    cfg = config or PropertyConfig()
    value = local_part(structure, property_kind, cfg.cutoff) + global_part(structure, property_kind)
    if cfg.noise_sigma > 0:
        sigma = cfg.noise_sigma * _PROPERTY_SHAPE[property_kind][1]
        value += float(_noise_rng(noise_seed, structure.id, property_kind).normal(0.0, sigma))
    return value


@dataclass
class PropertyRecord:
    id: str
    targets: dict[str, float] = field(default_factory=dict)  # E_tot, bandgap, G_vrh, K_vrh
    aux: dict[str, float] = field(default_factory=dict)
    elements: tuple[str, ...] = ()

    def __post_init__(self):
        for k, v in {**self.targets, **self.aux}.items():
            if not math.isfinite(v):
                raise ValueError(f"{self.id}: non-finite value for {k}")

    def target(self, kind: str) -> float:
        """Regression-space target; moduli are log10-transformed."""
        if kind == "logG":
            return math.log10(self.targets["G_vrh"])
        if kind == "logK":
            return math.log10(self.targets["K_vrh"])
        return self.targets[kind]

    def has_target(self, kind: str) -> bool:
        key = {"logG": "G_vrh", "logK": "K_vrh"}.get(kind, kind)
        return key in self.targets

    def to_dict(self) -> dict:
        return {"id": self.id, "targets": dict(self.targets), "aux": dict(self.aux), "elements": list(self.elements)}

    @classmethod
    def from_dict(cls, d: dict) -> "PropertyRecord":
        return cls(d["id"], dict(d.get("targets", {})), dict(d.get("aux", {})), tuple(d.get("elements", ())))


def make_property_record(
    structure: CrystalStructure, noise_seed: int = 0, config: PropertyConfig | None = None
) -> PropertyRecord:
    cfg = config or PropertyConfig()
    vals = {k: ground_truth_property(structure, k, noise_seed, cfg) for k in TARGET_KINDS}
    rng = np.random.default_rng([int(noise_seed), zlib.crc32(structure.id.encode()), 99])
    g, k = 10.0 ** vals["logG"], 10.0 ** vals["logK"]
    ug, dg, uk, dk = rng.uniform(0.02, 0.25, size=4)
    aux = {
        "formation_energy": float(rng.normal(-1.5, 0.8)),
        "e_above_hull": float(abs(rng.normal(0.0, 0.04))),
        "G_voigt": g * (1 + ug),
        "G_reuss": g * (1 - dg),
        "K_voigt": k * (1 + uk),
        "K_reuss": k * (1 - dk),
    }
    if rng.random() < cfg.anomaly_prob:
        aux["G_voigt"], aux["G_reuss"] = aux["G_reuss"], aux["G_voigt"]
    return PropertyRecord(
        id=structure.id,
        targets={"E_tot": vals["E_tot"], "bandgap": vals["bandgap"], "G_vrh": g, "K_vrh": k},
        aux=aux,
        elements=tuple(structure.symbols),
    )

