"""Experiment reports: a JSON document with embedded config for exact replay."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1

# Shape of every serialized report; tests validate emitted documents with it.
REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "config", "cells", "summary"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "kind": {"enum": ["convergence", "klgap", "compare"]},
        "config": {"type": "object"},
        "cells": {"type": "array", "items": {"type": "object"}},
        "summary": {"type": "object"},
    },
}


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    config: dict
    cells: list = field(repr=False)
    summary: dict
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "kind": self.kind,
            "config": self.config,
            "cells": self.cells,
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(
            kind=d["kind"],
            config=d["config"],
            cells=list(d["cells"]),
            summary=d["summary"],
            schema=d["schema"],
        )

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def write_cells_csv(self, path) -> None:
        """Flatten the per-cell rows to CSV with the union of their keys."""
        keys: list = []
        for cell in self.cells:
            for key in cell:
                if key not in keys:
                    keys.append(key)
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.cells)


def _clean(value):
    """Replace NaN with None so reports stay strict JSON."""
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def make_report(kind: str, config: dict, cells: list, summary: dict) -> ExperimentReport:
    return ExperimentReport(
        kind=kind,
        config=_clean(config),
        cells=_clean(cells),
        summary=_clean(summary),
    )
