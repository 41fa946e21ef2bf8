"""Metric collection and export.

Every row carries the seed and scenario id so any output line can be
reproduced exactly.  Tables serialize to CSV (one file per table) or a
single JSON document; the sink digest hashes the canonical serialization
for bit-identical reproducibility checks.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

TABLE_HEADERS = {
    "reputation": ("seed", "scenario", "round", "masp", "level", "mean_r", "level_mean_r"),
    "ledger": ("seed", "scenario", "block", "time", "tx_count", "block_bytes", "total_bytes"),
    "rollups": ("seed", "scenario", "sequence", "tx_count", "bytes_raw",
                "bytes_compressed", "root"),
    "latency": ("seed", "scenario", "window", "confirmations",
                "mean_confirmation_s", "channel_mean_s"),
    "settlements": ("seed", "scenario", "channel", "rounds", "total_fees",
                    "refund", "digests"),
    "contracts": ("seed", "scenario", "state_id", "mu_s", "f_s", "c_star",
                  "f_e_star", "u_c", "u_sp", "feasible"),
    "atomicity": ("seed", "scenario", "delay_prob", "rounds", "completed",
                  "rolled_back", "violations"),
    "summary": ("seed", "scenario", "key", "value"),
}


@dataclass
class MetricsSink:
    """Append-only table store for one simulation run."""

    seed: int
    scenario_id: str
    tables: dict[str, list[tuple]] = field(default_factory=dict)

    def add(self, table: str, *values) -> None:
        if table not in TABLE_HEADERS:
            raise KeyError(f"unknown metrics table {table!r}")
        row = (self.seed, self.scenario_id) + values
        if len(row) != len(TABLE_HEADERS[table]):
            raise ValueError(f"row arity mismatch for table {table!r}")
        self.tables.setdefault(table, []).append(row)

    def rows(self, table: str) -> list[tuple]:
        return self.tables.get(table, [])

    def _canonical(self) -> str:
        buffer = io.StringIO()
        for name in sorted(self.tables):
            buffer.write(f"## {name}\n")
            for row in self.tables[name]:
                buffer.write(",".join(_cell(v) for v in row))
                buffer.write("\n")
        return buffer.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self._canonical().encode()).hexdigest()

    def write_csv(self, out_dir: Union[str, Path]) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, rows in sorted(self.tables.items()):
            path = out / f"{name}.csv"
            with path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(TABLE_HEADERS[name])
                for row in rows:
                    writer.writerow([_cell(v) for v in row])
            written.append(path)
        return written

    def write_json(self, out_dir: Union[str, Path]) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        document = {
            name: [dict(zip(TABLE_HEADERS[name], (_jsonable(v) for v in row)))
                   for row in rows]
            for name, rows in sorted(self.tables.items())
        }
        path = out / "metrics.json"
        path.write_text(json.dumps(document, indent=1, sort_keys=True))
        return path


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _jsonable(value):
    if isinstance(value, bytes):
        return value.hex()
    return value
