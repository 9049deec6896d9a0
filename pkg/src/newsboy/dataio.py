"""Sales CSV ingestion and report serialization (CSV, JSON lines, markdown).

Every writer produces deterministic text: fixed column order, ``repr`` floats,
LF line endings.  Undefined metrics are empty CSV fields and JSON nulls.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .allocator import AllocationDecision
from .backtest import R_FREE_POLICIES, BacktestConfig, BacktestResult, PolicyComparison, SalesRecord
from .errors import DataError
from .metrics import ClusterMetrics

SALES_COLUMNS = ("cluster_id", "sku_id", "week", "units")
TOKEN_RE = re.compile(r"^[A-Za-z0-9_-]+$")
ISO_WEEK_RE = re.compile(r"^(\d{4})-W(\d{2})$")
INT_RE = re.compile(r"^\d+$")
MAX_REPORTED_ERRORS = 20


# ---------------------------------------------------------------------------
# Weeks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeekIndex:
    """Maps week labels to consecutive integer indices.

    Integer labels are used as indices directly.  ISO labels ``YYYY-Www`` are
    numbered by calendar weeks since ``origin`` (the Monday of the earliest
    week seen), so gaps in the data stay gaps in the index.
    """

    kind: str = "int"
    origin: date | None = None

    def label(self, index: int) -> str:
        if self.kind == "int":
            return str(index)
        year, week, _ = (self.origin + timedelta(weeks=index)).isocalendar()
        return f"{year:04d}-W{week:02d}"

    def index(self, label) -> int:
        text = str(label).strip()
        if self.kind == "int":
            if not INT_RE.match(text):
                raise DataError(f"expected an integer week index, got {label!r}")
            return int(text)
        monday = _iso_monday(text)
        if monday is None:
            raise DataError(f"expected an ISO week YYYY-Www, got {label!r}")
        return (monday - self.origin).days // 7

    def mapping(self, indices: Iterable[int]) -> dict[str, str]:
        return {str(i): self.label(i) for i in sorted(set(indices))}


def _iso_monday(text: str) -> date | None:
    m = ISO_WEEK_RE.match(text)
    if not m:
        return None
    try:
        return date.fromisocalendar(int(m.group(1)), int(m.group(2)), 1)
    except ValueError:
        return None


@dataclass
class SalesData:
    """Parsed sales file: records with integer week indices, plus the week mapping."""

    records: list[SalesRecord]
    weeks: WeekIndex = field(default_factory=WeekIndex)

    def __iter__(self) -> Iterator[SalesRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def week_range(self) -> tuple[int, int] | None:
        if not self.records:
            return None
        ws = [r.week for r in self.records]
        return min(ws), max(ws)


# ---------------------------------------------------------------------------
# Sales CSV
# ---------------------------------------------------------------------------


def load_sales(path) -> SalesData:
    """Read and validate a sales CSV with header ``cluster_id,sku_id,week,units``.

    All row-level problems are collected and reported together, each with its
    line number and column.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_sales(text, source=str(path))


def parse_sales(text: str, source: str = "<sales>") -> SalesData:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{source}: empty file, expected header {','.join(SALES_COLUMNS)}") from None
    unknown = [h for h in header if h not in SALES_COLUMNS]
    missing = [c for c in SALES_COLUMNS if c not in header]
    if unknown or missing or len(header) != len(set(header)):
        parts = []
        if unknown:
            parts.append(f"unknown columns {unknown}")
        if missing:
            parts.append(f"missing columns {missing}")
        if len(header) != len(set(header)):
            parts.append("repeated columns")
        raise DataError(f"{source}: line 1: bad header ({'; '.join(parts)})")
    col = {name: header.index(name) for name in SALES_COLUMNS}

    errors: list[str] = []
    rows: list[tuple[int, str, str, str, int]] = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            errors.append(f"line {line}: expected {len(header)} fields, got {len(row)}")
            continue
        cluster, sku, week, units = (row[col[c]].strip() for c in SALES_COLUMNS)
        bad = False
        for name, value in (("cluster_id", cluster), ("sku_id", sku)):
            if not TOKEN_RE.match(value):
                errors.append(f"line {line}, column {name}: invalid token {value!r}")
                bad = True
        if not INT_RE.match(units):
            errors.append(f"line {line}, column units: expected a non-negative integer, got {units!r}")
            bad = True
        if not (INT_RE.match(week) or _iso_monday(week)):
            errors.append(f"line {line}, column week: expected YYYY-Www or a non-negative integer, got {week!r}")
            bad = True
        if not bad:
            rows.append((line, cluster, sku, week, int(units)))

    kinds = {"int" if INT_RE.match(w) else "iso" for _, _, _, w, _ in rows}
    if len(kinds) > 1:
        errors.append("column week: mixes ISO weeks and integer indices")
    if errors:
        _raise_collected(source, errors)

    weeks = WeekIndex()
    if kinds == {"iso"}:
        weeks = WeekIndex("iso", min(_iso_monday(w) for _, _, _, w, _ in rows))

    seen: dict[tuple[str, str, int], int] = {}
    records = []
    for line, cluster, sku, week, units in rows:
        idx = weeks.index(week)
        key = (cluster, sku, idx)
        if key in seen:
            errors.append(f"lines {seen[key]} and {line}: duplicate key ({cluster}, {sku}, {week})")
            continue
        seen[key] = line
        records.append(SalesRecord(cluster, sku, idx, units))
    if errors:
        _raise_collected(source, errors)
    return SalesData(records, weeks)


def _raise_collected(source: str, errors: list[str]):
    shown = errors[:MAX_REPORTED_ERRORS]
    more = len(errors) - len(shown)
    tail = f"\n  ... and {more} more" if more > 0 else ""
    raise DataError(f"{source}: {len(errors)} invalid rows\n  " + "\n  ".join(shown) + tail)


def sales_to_csv(records: Iterable[SalesRecord], weeks: WeekIndex | None = None) -> str:
    weeks = weeks or WeekIndex()
    lines = [",".join(SALES_COLUMNS)]
    lines.extend(f"{r.cluster_id},{r.sku_id},{weeks.label(r.week)},{r.units}" for r in records)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Backtest results
# ---------------------------------------------------------------------------

RESULT_COLUMNS = (
    "policy", "r", "cluster_id", "fi", "ui",
    "delivered_total", "ordered_total", "predicted_total", "prev_sold_total",
)


def _num(x) -> str:
    return "" if x is None else repr(x)


def _as_comparison(result: BacktestResult | PolicyComparison) -> PolicyComparison:
    if isinstance(result, BacktestResult):
        return PolicyComparison({result.policy: result})
    return result


def results_to_csv(result: BacktestResult | PolicyComparison) -> str:
    """Long format: one row per (policy, r, cluster) with the unit totals."""
    comp = _as_comparison(result)
    lines = [",".join(RESULT_COLUMNS)]
    for policy, res in comp.results.items():
        for r in res.config.r_values:
            for c in res.clusters:
                m = res.get(c, r)
                lines.append(",".join([
                    policy, repr(r), c, _num(m.fi), _num(m.ui),
                    str(m.delivered_total), str(m.ordered_total), str(m.predicted_total), str(m.prev_sold_total),
                ]))
    return "\n".join(lines) + "\n"


def read_results_csv(text: str) -> dict[tuple[str, str, float], ClusterMetrics]:
    """Parse :func:`results_to_csv` output, keyed by (policy, cluster, r)."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise DataError(f"unexpected results header {reader.fieldnames}")
    out = {}
    for row in reader:
        out[(row["policy"], row["cluster_id"], float(row["r"]))] = ClusterMetrics(
            cluster_id=row["cluster_id"],
            fi=float(row["fi"]) if row["fi"] else None,
            ui=float(row["ui"]) if row["ui"] else None,
            delivered_total=int(row["delivered_total"]),
            ordered_total=int(row["ordered_total"]),
            predicted_total=int(row["predicted_total"]),
            prev_sold_total=int(row["prev_sold_total"]),
        )
    return out


def results_to_jsonl(result: BacktestResult | PolicyComparison) -> str:
    """A run header line per policy followed by one line per (r, cluster)."""
    comp = _as_comparison(result)
    lines = []
    for policy, res in comp.results.items():
        cfg = asdict(res.config)
        cfg["r_values"] = list(cfg["r_values"])
        lines.append(json.dumps(
            {"kind": "run", "policy": policy, "config": cfg, "clusters": res.clusters, "metadata": res.metadata},
            sort_keys=True,
        ))
        for r in res.config.r_values:
            for c in res.clusters:
                row = {"kind": "metrics", "policy": policy, "r": r, **asdict(res.get(c, r))}
                lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + "\n"


def read_results_jsonl(text: str) -> PolicyComparison:
    results: dict[str, BacktestResult] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {n}: invalid JSON ({exc.msg})") from None
        if obj.get("kind") == "run":
            cfg = dict(obj["config"])
            cfg["r_values"] = tuple(cfg["r_values"])
            results[obj["policy"]] = BacktestResult(
                config=BacktestConfig(**cfg), clusters=list(obj["clusters"]), metrics={}, metadata=obj["metadata"]
            )
        elif obj.get("kind") == "metrics":
            res = results.get(obj["policy"])
            if res is None:
                raise DataError(f"line {n}: metrics row before its run header")
            fields = {k: obj[k] for k in ClusterMetrics.__dataclass_fields__}
            res.metrics[(obj["cluster_id"], obj["r"])] = ClusterMetrics(**fields)
        else:
            raise DataError(f"line {n}: unknown record kind {obj.get('kind')!r}")
    if not results:
        raise DataError("no run records found")
    return PolicyComparison(results)


def _pct(fi: float | None) -> str:
    return "n/a" if fi is None else f"{100.0 * fi:.0f}%"


def _ui(ui: float | None) -> str:
    return "n/a" if ui is None else f"{ui:.2f}"


def _markdown_table(header: list[str], rows: list[list[str]]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(out) + "\n"


def results_to_markdown(result: BacktestResult | PolicyComparison) -> str:
    """Clusters as rows, an (FI, UI) column pair per r.

    With several policies, each policy contributes its own column pairs; a
    policy that ignores r contributes a single pair.
    """
    comp = _as_comparison(result)
    multi = len(comp.results) > 1
    columns: list[tuple[str, float]] = []
    header = ["Region"]
    for policy, res in comp.results.items():
        rs = res.config.r_values[:1] if policy in R_FREE_POLICIES and multi else res.config.r_values
        for r in rs:
            columns.append((policy, r))
            if policy in R_FREE_POLICIES and multi:
                tag = policy
            else:
                tag = f"{policy} r={r!r}" if multi else f"r={r!r}"
            header += [f"{tag} FI", f"{tag} UI"]
    rows = []
    for c in comp.clusters:
        row = [c]
        for policy, r in columns:
            m = comp[policy].get(c, r)
            row += [_pct(m.fi), _ui(m.ui)]
        rows.append(row)
    return _markdown_table(header, rows)


# ---------------------------------------------------------------------------
# Allocation decisions
# ---------------------------------------------------------------------------

DECISION_COLUMNS = ("cluster_id", "sku_id", "q_star", "eligible", "lambda_hat", "s", "fractile", "r")


def decisions_to_csv(decisions: Sequence[AllocationDecision]) -> str:
    lines = [",".join(DECISION_COLUMNS)]
    for d in decisions:
        lines.append(",".join([
            d.cluster_id, d.sku_id, str(d.q_star), "true" if d.eligible else "false",
            repr(d.lambda_hat), str(d.s), _num(d.fractile), repr(d.r),
        ]))
    return "\n".join(lines) + "\n"


def read_decisions_csv(text: str) -> list[AllocationDecision]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != DECISION_COLUMNS:
        raise DataError(f"unexpected decisions header {reader.fieldnames}")
    return [
        AllocationDecision(
            cluster_id=row["cluster_id"],
            sku_id=row["sku_id"],
            q_star=int(row["q_star"]),
            eligible=row["eligible"] == "true",
            fractile=float(row["fractile"]) if row["fractile"] else None,
            lambda_hat=float(row["lambda_hat"]),
            s=int(row["s"]),
            r=float(row["r"]),
        )
        for row in reader
    ]


def decisions_to_jsonl(decisions: Sequence[AllocationDecision]) -> str:
    return "".join(json.dumps(asdict(d), sort_keys=True) + "\n" for d in decisions)


def read_decisions_jsonl(text: str) -> list[AllocationDecision]:
    return [AllocationDecision(**json.loads(line)) for line in text.splitlines() if line.strip()]


def decisions_to_markdown(decisions: Sequence[AllocationDecision]) -> str:
    header = ["Cluster", "SKU", "q*", "eligible", "lambda_hat", "s", "fractile"]
    rows = [
        [d.cluster_id, d.sku_id, str(d.q_star), "yes" if d.eligible else "no",
         f"{d.lambda_hat:.3f}", str(d.s), "" if d.fractile is None else f"{d.fractile:.4f}"]
        for d in decisions
    ]
    return _markdown_table(header, rows)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the target directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
