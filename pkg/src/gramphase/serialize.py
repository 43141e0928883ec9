"""JSON and CSV encodings for specs, signals, Gram tuples, tables and run manifests.

Numbers are written with 17 significant digits so finite doubles round-trip
bit-exactly. Signals and Gram tuples store each block row-major.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Sequence

import numpy as np

from .moments import GramTuple
from .repspec import RepSpec, Signal

CSV_SCHEMA_VERSION = 1


def fmt_number(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


@dataclass
class Table:
    """Column-stable result table rendered as CSV."""

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)

    def append(self, row: Sequence) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} entries, table has {len(self.columns)} columns")
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([fmt_number(v) for v in row])
        return buf.getvalue()


def signal_to_dict(x: Signal) -> dict:
    return {"spec": x.spec.to_dict(), "blocks": [b.ravel().tolist() for b in x.blocks]}


def signal_from_dict(data: dict) -> Signal:
    spec = RepSpec.from_dict(data["spec"])
    blocks = [np.asarray(b, dtype=float).reshape(shape) for b, shape in zip(data["blocks"], spec.blocks)]
    return Signal(spec, tuple(blocks))


def gram_from_dict(data: dict) -> GramTuple:
    spec = RepSpec.from_dict(data["spec"])
    blocks = [np.asarray(b, dtype=float).reshape(r, r) for b, (_, r) in zip(data["blocks"], spec.blocks)]
    return GramTuple(spec, tuple(blocks))


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_schema() -> dict:
    return json.loads(resources.files("gramphase").joinpath("schema.json").read_text())


def validate(instance: dict, definition: str) -> None:
    """Validate ``instance`` against one entry of the bundled JSON schema."""
    import jsonschema

    schema = load_schema()
    sub = dict(schema["definitions"][definition])
    sub["definitions"] = schema["definitions"]
    jsonschema.validate(instance, sub)
