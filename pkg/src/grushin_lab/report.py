"""Check records, suite reports and their JSON / CSV serialisation."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"
RECORD_FIELDS = ("suite", "check_id", "anchor", "inputs_digest", "residual", "comparator", "tolerance",
                 "status", "reason", "repro", "artifacts")


def digest(*parts) -> str:
    """Short stable hash of arrays, numbers and strings."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part, dtype=float).tobytes())
        else:
            h.update(repr(part).encode())
    return h.hexdigest()[:16]


@dataclass
class CheckRecord:
    suite: str
    check_id: str
    anchor: str
    inputs_digest: str
    residual: float | None
    comparator: str
    tolerance: float | None
    status: str
    reason: str = ""
    repro: str = ""
    artifacts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["residual"] is not None:
            d["residual"] = float(d["residual"])
        return d


@dataclass
class SuiteReport:
    config: dict
    records: list = field(default_factory=list)
    runtime_seconds: float | None = None

    @property
    def summary(self) -> dict:
        out = {"pass": 0, "fail": 0, "skip": 0}
        for r in self.records:
            out[r.status.lower()] += 1
        return out

    @property
    def ok(self) -> bool:
        return self.summary["fail"] == 0

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": self.config,
                "records": [r.to_dict() for r in self.records], "summary": self.summary,
                "runtime_seconds": self.runtime_seconds}

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteReport":
        return cls(data["config"], [CheckRecord(**r) for r in data["records"]], data["runtime_seconds"])


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def emit_report(report: SuiteReport, path, fmt: str = "json") -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n")
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            wr.writeheader()
            for r in report.records:
                row = r.to_dict()
                row["artifacts"] = ";".join(row["artifacts"])
                row["residual"] = "" if row["residual"] is None else repr(row["residual"])
                row["tolerance"] = "" if row["tolerance"] is None else repr(row["tolerance"])
                wr.writerow(row)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report(path) -> SuiteReport:
    return SuiteReport.from_dict(json.loads(Path(path).read_text()))
