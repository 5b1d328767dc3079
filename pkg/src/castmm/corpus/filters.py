"""Data-quality filters applied to property records, in fixed rule order."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

from castmm.crystal import NOBLE_GASES
from castmm.corpus.properties import PropertyRecord

log = logging.getLogger(__name__)

ENERGY_THRESHOLD = 0.150  # eV/atom
MIN_FORMATION_ENERGY = -10.0  # eV/atom
MAX_MODULUS = 1000.0  # GPa

RULES = (
    "energy-above-threshold",
    "nonpositive-modulus",
    "modulus-ordering",
    "noble-gas",
    "formation-energy-too-low",
    "modulus-too-large",
)

_MODULI = ("G_voigt", "G_reuss", "G_vrh", "K_voigt", "K_reuss", "K_vrh")


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None

    def __str__(self):
        return "keep" if self.keep else f"drop({self.reason})"


def _fields(record: PropertyRecord) -> dict[str, float]:
    return {**record.aux, **record.targets}


def _need(values: dict, names: Iterable[str], rule: str, rid: str) -> bool:
    missing = [n for n in names if n not in values]
    if missing:
        log.debug("%s: rule %s skipped, missing %s", rid, rule, missing)
        return False
    return True


def apply_filters(record: PropertyRecord, elements: Iterable[str] | None = None) -> FilterDecision:
    """Return ``keep`` or ``drop(reason)`` where reason is the first rule that fires."""
    v = _fields(record)
    rid = record.id
    elements = set(record.elements if elements is None else elements)

    energy = [k for k in ("e_above_hull", "formation_energy") if k in v]
    if not energy:
        log.debug("%s: rule energy-above-threshold skipped, no energy fields", rid)
    elif any(v[k] > ENERGY_THRESHOLD for k in energy):
        return FilterDecision(False, RULES[0])

    present = [k for k in _MODULI if k in v]
    if len(present) < len(_MODULI):
        log.debug("%s: rule nonpositive-modulus checks only %s", rid, present)
    if any(v[k] <= 0 for k in present):
        return FilterDecision(False, RULES[1])

    for sym in ("G", "K"):
        names = (f"{sym}_reuss", f"{sym}_vrh", f"{sym}_voigt")
        if _need(v, names, RULES[2], rid):
            r, h, g = (v[n] for n in names)
            if not (r < h < g):
                return FilterDecision(False, RULES[2])

    if elements & NOBLE_GASES:
        return FilterDecision(False, RULES[3])

    if _need(v, ["formation_energy"], RULES[4], rid) and v["formation_energy"] < MIN_FORMATION_ENERGY:
        return FilterDecision(False, RULES[4])

    big = [k for k in ("G_vrh", "K_vrh") if k in v]
    if any(v[k] > MAX_MODULUS for k in big):
        return FilterDecision(False, RULES[5])

    return FilterDecision(True)
