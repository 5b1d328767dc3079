"""Periodic crystal structures and their conversion to cutoff graphs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from castmm.tags import GlobalTags

# fmt: off
ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm",
)
# fmt: on
N_ELEMENTS = len(ELEMENTS)
ELEMENT_INDEX = {sym: i for i, sym in enumerate(ELEMENTS)}
NOBLE_GASES = frozenset({"He", "Ne", "Ar", "Kr", "Xe", "Rn"})


class StructureError(ValueError):
    """Raised for invalid lattices, sites or structures."""


def element_id(symbol: str) -> int:
    try:
        return ELEMENT_INDEX[symbol]
    except KeyError:
        raise StructureError(f"unknown element {symbol!r}") from None


@dataclass(frozen=True)
class Lattice:
    """Rows of ``basis`` are the three lattice vectors in angstroms."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.array(self.basis, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(b)):
            raise StructureError("lattice has non-finite entries")
        det = float(np.linalg.det(b))
        if not det > 1e-8:
            raise StructureError(f"degenerate or left-handed lattice (det={det:.3g})")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @classmethod
    def cubic(cls, a: float) -> "Lattice":
        return cls(np.eye(3) * a)

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.basis))

    def plane_spacings(self) -> np.ndarray:
        """Distances between adjacent lattice planes along each reciprocal axis."""
        recip = np.linalg.inv(self.basis).T
        return 1.0 / np.linalg.norm(recip, axis=1)

    def __eq__(self, other):
        return isinstance(other, Lattice) and np.array_equal(self.basis, other.basis)

    def __hash__(self):
        return hash(self.basis.tobytes())


@dataclass(frozen=True)
class AtomSite:
    element: int
    frac_coords: tuple[float, float, float]

    def __post_init__(self):
        if not 0 <= int(self.element) < N_ELEMENTS:
            raise StructureError(f"element id {self.element} outside element table")
        f = np.asarray(self.frac_coords, dtype=np.float64)
        if f.shape != (3,) or not np.all(np.isfinite(f)):
            raise StructureError(f"bad fractional coordinates {self.frac_coords}")
        f = f - np.floor(f)
        # x - floor(x) can round up to exactly 1.0 for tiny negative x
        f[f >= 1.0] = 0.0
        object.__setattr__(self, "element", int(self.element))
        object.__setattr__(self, "frac_coords", tuple(float(x) for x in f))

    @property
    def symbol(self) -> str:
        return ELEMENTS[self.element]


@dataclass(frozen=True)
class CrystalStructure:
    id: str
    lattice: Lattice
    sites: tuple[AtomSite, ...]
    global_tags: GlobalTags

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if len(self.sites) < 1:
            raise StructureError("structure needs at least one site")

    def __len__(self):
        return len(self.sites)

    @property
    def elements(self) -> list[int]:
        return [s.element for s in self.sites]

    @property
    def symbols(self) -> list[str]:
        return [s.symbol for s in self.sites]

    def frac_array(self) -> np.ndarray:
        return np.array([s.frac_coords for s in self.sites], dtype=np.float64)

    def formula(self) -> str:
        counts: dict[str, int] = {}
        for sym in self.symbols:
            counts[sym] = counts.get(sym, 0) + 1
        return "".join(sym + (str(n) if n > 1 else "") for sym, n in counts.items())

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lattice": self.lattice.basis.tolist(),
            "sites": [{"element": s.symbol, "frac": list(s.frac_coords)} for s in self.sites],
            "tags": self.global_tags.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrystalStructure":
        return cls(
            id=str(d["id"]),
            lattice=Lattice(np.array(d["lattice"], dtype=np.float64)),
            sites=tuple(AtomSite(element_id(s["element"]), tuple(s["frac"])) for s in d["sites"]),
            global_tags=GlobalTags.from_dict(d["tags"]),
        )


def write_structures(path, structures: Iterable[CrystalStructure]) -> None:
    with open(path, "w") as fh:
        for s in structures:
            fh.write(json.dumps(s.to_dict()) + "\n")


def read_structures(path) -> list[CrystalStructure]:
    with open(path) as fh:
        return [CrystalStructure.from_dict(json.loads(line)) for line in fh if line.strip()]


def permute_structure(structure: CrystalStructure, perm: Sequence[int]) -> CrystalStructure:
    """Reorder sites so that new site ``k`` is old site ``perm[k]``."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(len(structure))):
        raise StructureError(f"not a permutation of {len(structure)} sites: {perm}")
    return CrystalStructure(
        id=structure.id,
        lattice=structure.lattice,
        sites=tuple(structure.sites[p] for p in perm),
        global_tags=structure.global_tags,
    )


@dataclass(frozen=True)
class RbfSpec:
    centers: tuple[float, ...]
    gamma: float

    def __post_init__(self):
        c = tuple(float(x) for x in self.centers)
        if not c:
            raise ValueError("rbf needs at least one center")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("rbf centers must be strictly increasing")
        if not self.gamma > 0:
            raise ValueError("rbf gamma must be positive")
        object.__setattr__(self, "centers", c)

    @classmethod
    def default(cls, cutoff: float, n_centers: int = 16) -> "RbfSpec":
        return cls(tuple(np.linspace(0.0, cutoff, n_centers)), (n_centers / cutoff) ** 2)

    @property
    def size(self) -> int:
        return len(self.centers)


def rbf_expand(distance, centers, gamma: float) -> np.ndarray:
    """Gaussian bumps ``exp(-gamma * (d - c_k)^2)``; vectorises over ``distance``."""
    spec = RbfSpec(tuple(centers), gamma)
    d = np.asarray(distance, dtype=np.float64)
    c = np.asarray(spec.centers)
    return np.exp(-spec.gamma * (d[..., None] - c) ** 2)


@dataclass(frozen=True)
class PeriodicGraph:
    node_elements: np.ndarray  # (N,) int
    src: np.ndarray  # (E,) int
    dst: np.ndarray  # (E,) int
    distance: np.ndarray  # (E,) float
    offset: np.ndarray  # (E, 3) int
    edge_features: np.ndarray  # (E, K) float
    cutoff: float
    isolated_nodes: tuple[int, ...] = field(default=())

    @property
    def n_nodes(self) -> int:
        return len(self.node_elements)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> list[tuple[int, int, float, tuple[int, int, int]]]:
        return [
            (int(i), int(j), float(d), tuple(int(x) for x in o))
            for i, j, d, o in zip(self.src, self.dst, self.distance, self.offset)
        ]


def build_periodic_graph(
    structure: CrystalStructure, cutoff: float = 5.0, rbf: RbfSpec | None = None
) -> PeriodicGraph:
    """All site pairs (periodic images included) within ``cutoff``.

    An edge ``(i, j, d, n)`` joins site ``i`` to the copy of site ``j`` shifted by
    lattice translation ``n``; zero-distance self pairs are skipped.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    rbf = rbf or RbfSpec.default(cutoff)
    basis = structure.lattice.basis
    frac = structure.frac_array()
    n = len(frac)

    # fractional differences lie in (-1, 1), hence the +1
    reach = np.ceil(cutoff / structure.lattice.plane_spacings()).astype(int) + 1
    grids = [np.arange(-r, r + 1) for r in reach]
    images = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 3)

    diff = frac[None, :, None, :] - frac[:, None, None, :] + images[None, None, :, :]
    dist = np.linalg.norm(diff @ basis, axis=-1)  # (n, n, images)
    ok = (dist <= cutoff) & (dist > 1e-8)
    ii, jj, kk = np.nonzero(ok)
    offs = images[kk]
    order = np.lexsort((offs[:, 2], offs[:, 1], offs[:, 0], jj, ii))
    ii, jj, kk, offs = ii[order], jj[order], kk[order], offs[order]
    d = dist[ii, jj, kk]

    degree = np.bincount(ii, minlength=n)
    return PeriodicGraph(
        node_elements=np.array(structure.elements, dtype=np.int64),
        src=ii.astype(np.int64),
        dst=jj.astype(np.int64),
        distance=d,
        offset=offs.astype(np.int64),
        edge_features=rbf_expand(d, rbf.centers, rbf.gamma),
        cutoff=float(cutoff),
        isolated_nodes=tuple(int(i) for i in np.nonzero(degree == 0)[0]),
    )


def mean_inverse_distance(graph: PeriodicGraph) -> float:
    if graph.n_edges == 0:
        return 0.0
    return float(np.mean(1.0 / graph.distance))


def nearest_neighbor_distances(structure: CrystalStructure) -> np.ndarray:
    """Per-site distance to the closest other atom (any periodic image)."""
    spacing = structure.lattice.plane_spacings()
    reach = float(np.max(np.linalg.norm(structure.lattice.basis, axis=1))) + 1e-9
    g = build_periodic_graph(structure, cutoff=max(reach, float(spacing.max())))
    out = np.full(len(structure), math.inf)
    np.minimum.at(out, g.src, g.distance)
    return out
