"""Result container and file output shared by the experiment drivers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InfeasibleExperiment(RuntimeError):
    """An experiment's defining optimization problem has no solution."""


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class ExperimentResult:
    """Outcome of one experiment path.

    ``violation_samples`` is the per-sample (shepherd) or per-step
    (navigation, wind) violation record of the executed decision.
    ``slack_table`` has one row per scenario or step.
    """

    mode: str
    decision: dict
    violation_samples: np.ndarray
    objective: float
    slack_table: list
    runtime: float
    status: str = "converged"
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("robust", "resilient"):
            raise ValueError("mode must be robust or resilient")
        self.violation_samples = np.asarray(self.violation_samples, dtype=float)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "status": self.status,
            "decision": _plain(self.decision),
            "objective": float(self.objective),
            "violation_samples": self.violation_samples.tolist(),
            "slack_table": _plain(self.slack_table),
            "runtime": self.runtime,
        }


def write_outputs(out_dir, payload: dict, trace_rows: list) -> None:
    """Write ``result.json`` and ``trace.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(_plain(payload), indent=2))
    columns = []
    for row in trace_rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns or ["step"])
        writer.writeheader()
        for row in trace_rows:
            writer.writerow({k: _plain(v) for k, v in row.items()})
