"""Global (material-level) tags attached to every crystal."""

from __future__ import annotations

import math
from dataclasses import dataclass

CRYSTAL_SYSTEMS = (
    "triclinic",
    "monoclinic",
    "orthorhombic",
    "tetragonal",
    "trigonal",
    "hexagonal",
    "cubic",
)

SHARING_MODES = ("edge_sharing", "corner_sharing", "face_sharing")


@dataclass(frozen=True)
class GlobalTags:
    crystal_system: str
    space_group_label: str
    edge_sharing: bool = False
    corner_sharing: bool = False
    face_sharing: bool = False
    bond_range: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.crystal_system not in CRYSTAL_SYSTEMS:
            raise ValueError(f"unknown crystal system {self.crystal_system!r}")
        lo, hi = self.bond_range
        if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo <= hi):
            raise ValueError(f"invalid bond_range {self.bond_range}")

    def sharing(self) -> dict[str, bool]:
        return {m: bool(getattr(self, m)) for m in SHARING_MODES}

    def to_dict(self) -> dict:
        return {
            "crystal_system": self.crystal_system,
            "space_group_label": self.space_group_label,
            **self.sharing(),
            "bond_range": [float(self.bond_range[0]), float(self.bond_range[1])],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalTags":
        return cls(
            crystal_system=d["crystal_system"],
            space_group_label=d["space_group_label"],
            edge_sharing=bool(d.get("edge_sharing", False)),
            corner_sharing=bool(d.get("corner_sharing", False)),
            face_sharing=bool(d.get("face_sharing", False)),
            bond_range=tuple(float(x) for x in d["bond_range"]),
        )
