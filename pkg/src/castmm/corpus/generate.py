"""Synthetic crystal generator.

Geometry (lattice, sites) and the global tags are drawn independently, so
crystal system and polyhedral sharing are only recoverable from the text.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from castmm.crystal import (
    NOBLE_GASES,
    AtomSite,
    CrystalStructure,
    Lattice,
    element_id,
    nearest_neighbor_distances,
)
from castmm.tags import CRYSTAL_SYSTEMS, GlobalTags

SPACE_GROUPS = {
    "triclinic": ("P1", "P-1"),
    "monoclinic": ("P2_1/c", "C2/m", "C2/c"),
    "orthorhombic": ("Pbcn", "Pnma", "Cmcm"),
    "tetragonal": ("I4/mmm", "P4/mmm", "I4_1/amd"),
    "trigonal": ("R-3m", "P-3m1", "R3c"),
    "hexagonal": ("P6_3/mmc", "P6/mmm"),
    "cubic": ("Fm-3m", "Pm-3m", "Fd-3m", "Im-3m"),
}

DEFAULT_ELEMENT_POOL = (
    "Li", "O", "Na", "Mg", "Al", "Si", "S", "Cl", "K", "Ca",
    "Ti", "Fe", "Cu", "Zn", "Se", "Sr", "Sn", "Te", "Ba", "Pb",
)  # fmt: skip


@dataclass(frozen=True)
class GenConfig:
    min_sites: int = 2
    max_sites: int = 8
    min_length: float = 3.0
    max_length: float = 8.0
    min_angle: float = 70.0
    max_angle: float = 110.0
    min_separation: float = 1.5
    element_pool: tuple[str, ...] = DEFAULT_ELEMENT_POOL
    max_species: int = 3
    # uniform over the seven systems unless given
    system_probs: tuple[float, ...] = field(default_factory=lambda: (1 / 7,) * 7)
    sharing_probs: tuple[float, float, float] = (0.5, 0.4, 0.3)
    noble_gas_prob: float = 0.0

    def __post_init__(self):
        if not 2 <= self.min_sites <= self.max_sites <= 8:
            raise ValueError("site bounds must satisfy 2 <= min <= max <= 8")
        if not 3.0 <= self.min_length <= self.max_length <= 8.0:
            raise ValueError("lattice length bounds must lie in [3, 8] angstrom")
        if len(self.system_probs) != len(CRYSTAL_SYSTEMS) or abs(sum(self.system_probs) - 1) > 1e-9:
            raise ValueError("system_probs must be 7 probabilities summing to 1")
        for sym in self.element_pool:
            element_id(sym)


def _lattice(rng: np.random.Generator, cfg: GenConfig) -> Lattice:
    a, b, c = rng.uniform(cfg.min_length, cfg.max_length, size=3)
    al, be, ga = np.radians(rng.uniform(cfg.min_angle, cfg.max_angle, size=3))
    # standard a-along-x construction
    cx = c * np.cos(be)
    cy = c * (np.cos(al) - np.cos(be) * np.cos(ga)) / np.sin(ga)
    cz2 = c * c - cx * cx - cy * cy
    if cz2 <= (0.2 * c) ** 2:
        return None
    basis = np.array(
        [[a, 0.0, 0.0], [b * np.cos(ga), b * np.sin(ga), 0.0], [cx, cy, np.sqrt(cz2)]]
    )
    return Lattice(basis)


def _place_sites(rng, lattice: Lattice, n: int, min_sep: float) -> np.ndarray | None:
    frac = []
    for _ in range(n):
        for _attempt in range(200):
            f = rng.random(3)
            if frac:
                d = np.asarray(frac) - f
                d -= np.round(d)
                if np.min(np.linalg.norm(d @ lattice.basis, axis=1)) < min_sep:
                    continue
            frac.append(f)
            break
        else:
            return None
    return np.asarray(frac)


def generate_crystal(rng_seed, gen_config: GenConfig | None = None, id: str | None = None) -> CrystalStructure:
    """Draw one crystal; identical seeds give identical structures."""
    cfg = gen_config or GenConfig()
    rng = np.random.default_rng(rng_seed)
    n_sites = int(rng.integers(cfg.min_sites, cfg.max_sites + 1))
    n_species = int(rng.integers(1, min(cfg.max_species, n_sites) + 1))
    species = list(rng.choice(cfg.element_pool, size=n_species, replace=False))
    if rng.random() < cfg.noble_gas_prob:
        species[-1] = str(rng.choice(sorted(NOBLE_GASES)))
    # every species appears at least once
    labels = species + list(rng.choice(species, size=n_sites - n_species))

    while True:
        lattice = _lattice(rng, cfg)
        if lattice is None:
            continue
        frac = _place_sites(rng, lattice, n_sites, cfg.min_separation)
        if frac is not None:
            break

    system = CRYSTAL_SYSTEMS[int(rng.choice(len(CRYSTAL_SYSTEMS), p=cfg.system_probs))]
    sg = str(rng.choice(SPACE_GROUPS[system]))
    flags = rng.random(3) < np.asarray(cfg.sharing_probs)

    sites = tuple(AtomSite(element_id(str(el)), tuple(f)) for el, f in zip(labels, frac))
    placeholder = GlobalTags(system, sg)
    draft = CrystalStructure(id or f"seed-{rng_seed}", lattice, sites, placeholder)
    nn = nearest_neighbor_distances(draft)
    tags = GlobalTags(
        crystal_system=system,
        space_group_label=sg,
        edge_sharing=bool(flags[0]),
        corner_sharing=bool(flags[1]),
        face_sharing=bool(flags[2]),
        bond_range=(round(float(nn.min()), 2), round(float(nn.max()), 2)),
    )
    return CrystalStructure(draft.id, lattice, sites, tags)


def sample_seed(base_seed: int, index: int) -> int:
    """Independent per-sample stream derived from (base_seed, index)."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])

