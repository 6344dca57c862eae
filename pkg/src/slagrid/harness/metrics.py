"""Scenario results: per-second rows plus a summary, exported as CSV or JSON.

Exports are byte-stable: rows are sorted, JSON keys are sorted and every
number is an int or a float rounded when it is produced, so the same seed
always yields the same file.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..errors import IoError

COLUMNS = (
    "t_sec",
    "function",
    "mode",
    "offered",
    "committed_rps",
    "errors",
    "p50_latency_ms",
    "staleness_max_ms",
    "write_latency_p50_ms",
    "replica_count",
)


@dataclass(frozen=True)
class MetricsRow:
    t_sec: int
    function: str  # "<class>.<function>"
    mode: str
    offered: int
    committed_rps: int
    errors: int
    p50_latency_ms: float | None
    staleness_max_ms: int | None
    write_latency_p50_ms: float | None
    replica_count: int


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    rows: list[MetricsRow] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    def series(self, function: str, column: str = "committed_rps") -> list:
        """One column of one function's rows, in time order."""
        return [getattr(r, column) for r in self.rows if r.function == function]

    def functions(self) -> list[str]:
        return sorted({r.function for r in self.rows})

    # -- serialisation -----------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "rows": [asdict(r) for r in self.rows],
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricsReport:
        doc = json.loads(text)
        names = [f.name for f in fields(MetricsRow)]
        rows = [MetricsRow(**{n: r[n] for n in names}) for r in doc["rows"]]
        return cls(doc["scenario"], doc["seed"], rows, doc["summary"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in COLUMNS])
        return buf.getvalue()


def report_export(report: MetricsReport, path: str | Path, fmt: str = "csv") -> Path:
    """Write ``report`` to ``path`` as ``csv`` or ``json``."""
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "json":
        text = report.to_json()
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or json")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def percentile(values: list[float], q: float) -> float | None:
    """Nearest-rank percentile (``q`` in 0..100); ``None`` for no values."""
    if not values:
        return None
    s = sorted(values)
    k = max(0, min(len(s) - 1, -(-len(s) * q // 100) - 1))
    return s[int(k)]
