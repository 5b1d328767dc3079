"""Per-step and per-evaluation training records."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


class TrainingError(RuntimeError):
    pass


@dataclass
class RunLog:
    steps: list[tuple[int, float, float]] = field(default_factory=list)
    evals: list[tuple[int, str, float]] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def add_step(self, step: int, lr: float, loss: float) -> None:
        if self.steps and step <= self.steps[-1][0]:
            raise TrainingError(f"step {step} is not after {self.steps[-1][0]}")
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step}")
        self.steps.append((int(step), float(lr), float(loss)))

    def add_eval(self, step: int, split: str, value: float) -> None:
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {split} metric at step {step}")
        self.evals.append((int(step), split, float(value)))

    def write(self, out_dir, stem: str = "runlog") -> None:
        out = Path(out_dir)
        with open(out / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "lr", "loss"])
            for s, lr, loss in self.steps:
                w.writerow([s, repr(lr), repr(loss)])
        summary = {
            "evals": [{"step": s, "split": sp, "mae": v} for s, sp, v in self.evals],
            "final": self.final,
        }
        (out / f"{stem}.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, out_dir, stem: str = "runlog") -> "RunLog":
        out = Path(out_dir)
        log = cls()
        with open(out / f"{stem}.csv") as fh:
            for row in csv.DictReader(fh):
                log.add_step(int(row["step"]), float(row["lr"]), float(row["loss"]))
        summary = json.loads((out / f"{stem}.json").read_text())
        log.evals = [(e["step"], e["split"], e["mae"]) for e in summary["evals"]]
        log.final = summary["final"]
        return log
