"""CSV and structured-text (JSON) output for a ReportTable."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .runner import CSV_COLUMNS, ReportRow, ReportTable

_INT = ("cells", "nsub", "nsink", "n_pi", "iters", "seed_mesh", "seed_sinkers")
_FLOAT = ("tol", "k2", "rel_residual")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(table: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in table.rows:
        w.writerow([_cell(v) for v in row.values()])
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    """Inverse of :func:`csv_text`: typed dicts, blanks read back as None."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for rec in reader:
        d = {}
        for k, v in zip(header, rec):
            if v == "":
                d[k] = None
            elif k in _INT:
                d[k] = int(v)
            elif k in _FLOAT:
                d[k] = float(v)
            else:
                d[k] = v
        out.append(d)
    return out


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):  # numpy scalars
        return _jsonable(v.item())
    return v


def _row_detail(row: ReportRow) -> dict:
    d = dict(zip(CSV_COLUMNS, row.values()))
    rep = row.report
    if rep is not None:
        d.update(lambda_min=rep.lambda_min, lambda_max=rep.lambda_max, dropped=rep.dropped,
                 residuals=list(rep.residuals), precond_residuals=list(rep.precond_residuals),
                 meta={k: v for k, v in rep.meta.items() if k != "seconds"})
    if row.extra:
        d["error"] = row.extra
    return d


def details_text(table: ReportTable) -> str:
    """Residual histories plus the resolved config; no timings so reruns compare equal."""
    doc = {"config": table.config, "runs": [_row_detail(r) for r in table.rows]}
    return json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n"


def emit_report(table: ReportTable, path, format: str = "csv") -> None:
    if format == "csv":
        text = csv_text(table)
    elif format in ("structured-text", "json"):
        text = details_text(table)
    else:
        raise ValueError(f"unknown report format {format!r}")
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
