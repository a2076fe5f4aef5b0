"""Flat result records and atomic CSV/JSON emission.

Every experiment emits rows that carry their full provenance: re-running
the same config and seed reproduces each row (bitwise for deterministic
statistics, stream-deterministic for Monte Carlo ones).  Files are
written to a temp file in the target directory and renamed into place,
so a partial file is never observable at the final path.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

FIELDS = ("experiment", "command", "sequence", "seed", "replicate", "n",
          "statistic", "value", "stderr", "truncation_error")


@dataclass(frozen=True)
class ResultRecord:
    experiment: str
    command: str
    sequence: str
    seed: int | None
    replicate: int | None
    n: int | None
    statistic: str
    value: float
    stderr: float | None = None
    truncation_error: float | None = None


def experiment_id(config: dict) -> str:
    """Deterministic 12-hex id from the canonical config."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records: list[ResultRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(FIELDS)
    for r in records:
        d = asdict(r)
        w.writerow([_cell(d[f]) for f in FIELDS])
    return buf.getvalue()


def records_to_json(records: list[ResultRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=2) + "\n"


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent) or ".",
                               prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_records(records: list[ResultRecord], path: str | Path, fmt: str = "csv") -> None:
    if fmt == "csv":
        text = records_to_csv(records)
    elif fmt == "json":
        text = records_to_json(records)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    atomic_write_text(Path(path), text)
