"""Deterministic rule-based text descriptions of crystals."""

from __future__ import annotations

import zlib

import numpy as np

from castmm.crystal import CrystalStructure, build_periodic_graph, nearest_neighbor_distances

_ARTICLE = {"edge": "an", "corner": "a", "face": "a"}
BOND_TOLERANCE = 1.25


def _coordination(structure: CrystalStructure) -> tuple[list[int], list[set[str]]]:
    nn = nearest_neighbor_distances(structure)
    graph = build_periodic_graph(structure, cutoff=float(nn.max()) * BOND_TOLERANCE)
    symbols = structure.symbols
    counts = [0] * len(structure)
    partners: list[set[str]] = [set() for _ in range(len(structure))]
    for i, j, d in zip(graph.src, graph.dst, graph.distance):
        if d <= nn[i] * BOND_TOLERANCE:
            counts[i] += 1
            partners[i].add(symbols[j])
    return counts, partners


def text_dropped(structure_id: str, prob: float, seed: int = 0) -> bool:
    if prob <= 0:
        return False
    u = np.random.default_rng([int(seed), zlib.crc32(structure_id.encode())]).random()
    return bool(u < prob)


def describe(structure: CrystalStructure, text_dropout_prob: float = 0.0, seed: int = 0) -> str:
    """Render a description; returns "" when the dropout draw marks the text missing."""
    if text_dropped(structure.id, text_dropout_prob, seed):
        return ""
    tags = structure.global_tags
    symbols = structure.symbols
    counts, partners = _coordination(structure)

    parts = [
        f"{structure.formula()} crystallizes in the {tags.crystal_system} "
        f"{tags.space_group_label} space group."
    ]
    order = list(dict.fromkeys(symbols))
    for el in order:
        idx = [i for i, s in enumerate(symbols) if s == el]
        cn = int(round(float(np.mean([counts[i] for i in idx]))))
        nbrs = sorted(set().union(*(partners[i] for i in idx)))
        parts.append(f"{el} is bonded to {cn} {' and '.join(nbrs)} atoms.")

    cation, anion = order[0], order[-1]
    first_cn = counts[symbols.index(cation)]
    poly = f"{cation}{anion}{first_cn}"
    for mode, on in tags.sharing().items():
        if on:
            word = mode.split("_")[0]
            parts.append(f"{cation} forms {_ARTICLE[word]} {word}-sharing {poly} polyhedra.")
    lo, hi = tags.bond_range
    parts.append(f"There is a spread of bond distances ranging from {lo:.2f} to {hi:.2f} angstroms.")
    return " ".join(parts)
