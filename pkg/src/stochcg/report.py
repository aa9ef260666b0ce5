"""Run reports, convergence CSVs and cross-run aggregates."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field

SCHEMA = "stochcg.run/1"
AGGREGATE_SCHEMA = "stochcg.aggregate/1"
CSV_COLUMNS = ["iter", "z_rm", "lb", "gap", "cols_added", "cols_shared", "cols_discarded",
               "t_master_ms", "t_pricing_ms", "t_sharing_ms"]
METHODS = ("fullspace", "cg", "cgcs")


class SchemaError(ValueError):
    pass


def _num(v):
    """JSON-safe float: infinities and NaN become null."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class RunReport:
    method: str
    instance_id: str
    seed: int
    dims: list
    status: str
    objective: float | None
    lb: float | None
    ub: float | None
    gap: float | None
    eps: float
    iterations: int
    wall_time_s: float
    perfect_parallel_s: float
    threads: int
    pricing_mode: str
    records: list = field(default_factory=list)
    column_origins: dict = field(default_factory=dict)
    cols_added_total: int = 0
    cols_shared_total: int = 0
    additional_columns_pct: float = 0.0
    schema: str = SCHEMA

    @property
    def solved(self) -> bool:
        return self.status in ("converged", "optimal")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("objective", "lb", "ub", "gap"):
            d[k] = _num(d[k])
        d["records"] = [{k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()}
                        for r in self.records]
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        if data.get("schema") != SCHEMA:
            raise SchemaError(f"expected schema {SCHEMA!r}, got {data.get('schema')!r}")
        names = set(cls.__dataclass_fields__)
        missing = names - set(data)
        extra = set(data) - names
        if missing or extra:
            raise SchemaError(f"report fields differ: missing {sorted(missing)}, extra {sorted(extra)}")
        if data["method"] not in METHODS:
            raise SchemaError(f"unknown method {data['method']!r}")
        return cls(**data)


def record_row(rec) -> dict:
    return {k: getattr(rec, k) for k in CSV_COLUMNS + ["t_pricing_max_ms", "t_sharing_max_ms",
                                                      "pricing_mode", "artificial_mass"]}


def convergence_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        row = []
        for k in CSV_COLUMNS:
            v = r[k]
            row.append(repr(float(v)) if isinstance(v, float) else str(v))
        w.writerow(row)
    return buf.getvalue()


def write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def perfect_parallel_from_records(records) -> float:
    """Seconds: master plus the slowest pricing and sharing job, summed over iterations."""
    return sum(r["t_master_ms"] + r["t_pricing_max_ms"] + r["t_sharing_max_ms"] for r in records) / 1e3


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def aggregate(reports: list) -> dict:
    """Per-dimension statistics: unsolved count, mean gap of unsolved, mean times of solved."""
    if not reports:
        raise SchemaError("no reports to aggregate")
    methods = {r.method for r in reports}
    if len(methods) != 1:
        raise SchemaError(f"mixed methods {sorted(methods)}; aggregate them separately")
    groups: dict = {}
    for r in reports:
        groups.setdefault(tuple(r.dims), []).append(r)
    rows = []
    for dims in sorted(groups):
        rs = groups[dims]
        solved = [r for r in rs if r.solved]
        unsolved = [r for r in rs if not r.solved]
        gaps = [100.0 * r.gap for r in unsolved if r.gap is not None]
        rows.append({
            "dims": list(dims),
            "runs": len(rs),
            "NS": len(unsolved),
            "mean_gap_pct": _mean(gaps),
            "mean_time_s": _mean([r.wall_time_s for r in solved]),
            "mean_perfect_parallel_s": _mean([r.perfect_parallel_s for r in solved]),
            "mean_additional_columns_pct": _mean([r.additional_columns_pct for r in rs]),
        })
    return {"schema": AGGREGATE_SCHEMA, "method": methods.pop(), "rows": rows}
