"""CSV interchange for datasets and weight diagnostics.

Dataset files hold one row per visit (the time-0 record included)::

    id,time,y,treatment,censor_time,k_<name>...,z_<name>...

``treatment``, ``censor_time`` and the ``k_`` columns are per-subject values
repeated on every row.  Floats are written with ``repr`` so a round trip is
exact.
"""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from pathlib import Path

from .errors import MissingBaselineVisit, OffGridTime, SchemaMismatch, ValidationError
from .panel import GridSpec, PanelDataset, SubjectPath, VisitRecord, build_dataset
from .weights import PathWeights

FIXED_COLUMNS = ("id", "time", "y", "treatment", "censor_time")
WEIGHT_COLUMNS = ("id", "time", "usw", "sw1", "sw2", "point_intensity", "ipt")


def _fmt(x) -> str:
    return repr(float(x))


def dataset_header(dataset: PanelDataset) -> list[str]:
    return list(FIXED_COLUMNS) + [f"k_{n}" for n in dataset.baseline_names] + [f"z_{n}" for n in dataset.covariate_names]


def export_csv(dataset: PanelDataset, path=None) -> str:
    """Write ``dataset`` as CSV to ``path`` (if given) and return the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_header(dataset))
    for s in dataset.subjects:
        k = [_fmt(v) for v in s.baseline_covariates]
        for v in s.visits:
            w.writerow([s.id, _fmt(v.time), _fmt(v.outcome), s.treatment, _fmt(s.censor_time), *k, *(_fmt(c) for c in v.covariates)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _float(raw: str, col: str, line: int) -> float:
    try:
        x = float(raw)
    except ValueError:
        raise SchemaMismatch(f"row {line}: column {col!r} value {raw!r} is not a number") from None
    if not math.isfinite(x):
        raise SchemaMismatch(f"row {line}: column {col!r} value {raw!r} is not finite")
    return x


def _auto_grid(censor_max: float, dt: float) -> GridSpec:
    cells = math.ceil(censor_max / dt - 1e-9)
    return GridSpec(dt, max(cells, 1) * dt)


def parse_csv(text: str, *, dt: float = 0.01, tau: float | None = None, source: str = "<csv>") -> PanelDataset:
    """Parse dataset CSV text; errors name the offending row (header is row 1)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaMismatch(f"{source}: empty file") from None
    missing = [c for c in FIXED_COLUMNS if c not in header]
    if missing:
        raise SchemaMismatch(f"{source}: missing required columns {missing}")
    if len(set(header)) != len(header):
        raise SchemaMismatch(f"{source}: duplicate column names")
    extra = [h for h in header if h not in FIXED_COLUMNS]
    bad = [h for h in extra if not (h.startswith("k_") or h.startswith("z_")) or len(h) < 3]
    if bad:
        raise SchemaMismatch(f"{source}: unexpected columns {bad} (extra columns must start with k_ or z_)")
    kcols = [h for h in extra if h.startswith("k_")]
    zcols = [h for h in extra if h.startswith("z_")]
    pos = {h: j for j, h in enumerate(header)}

    subjects: OrderedDict[str, dict] = OrderedDict()
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaMismatch(f"{source}: row {line} has {len(row)} fields, header has {len(header)}")
        sid = row[pos["id"]].strip()
        if not sid:
            raise SchemaMismatch(f"{source}: row {line}: empty id")
        t = _float(row[pos["time"]], "time", line)
        trt_raw = row[pos["treatment"]].strip()
        if trt_raw not in ("0", "1"):
            raise SchemaMismatch(f"{source}: row {line}: treatment must be 0 or 1, got {trt_raw!r}")
        censor = _float(row[pos["censor_time"]], "censor_time", line)
        kv = tuple(_float(row[pos[c]], c, line) for c in kcols)
        zv = tuple(_float(row[pos[c]], c, line) for c in zcols)
        y = _float(row[pos["y"]], "y", line)
        rec = subjects.setdefault(sid, {"treatment": int(trt_raw), "censor": censor, "k": kv, "visits": [], "line": line})
        if rec["visits"] and (rec["treatment"] != int(trt_raw) or rec["censor"] != censor or rec["k"] != kv):
            raise SchemaMismatch(f"{source}: row {line}: subject {sid!r} changes a per-subject column (treatment, censor_time or k_)")
        rec["visits"].append((line, t, y, zv))

    if not subjects:
        raise ValidationError(f"{source}: no data rows")
    grid = GridSpec(dt, tau) if tau is not None else _auto_grid(max(r["censor"] for r in subjects.values()), dt)
    records = []
    for sid, rec in subjects.items():
        visits = []
        for line, t, y, zv in rec["visits"]:
            try:
                grid.cell(t)
            except OffGridTime:
                raise OffGridTime(f"{source}: row {line}: time {t!r} is not on the grid (dt={grid.dt}, tau={grid.tau})") from None
            visits.append(VisitRecord(t, y, zv))
        if not any(abs(v.time) < 1e-12 for v in visits):
            raise MissingBaselineVisit(f"{source}: subject {sid!r} (first row {rec['line']}) has no time-0 row")
        records.append(SubjectPath(sid, rec["treatment"], rec["k"], rec["censor"], tuple(visits)))
    return build_dataset(records, grid, [c[2:] for c in zcols], [c[2:] for c in kcols])


def ingest_csv(path, *, dt: float = 0.01, tau: float | None = None) -> PanelDataset:
    """Read a dataset CSV file.  ``tau`` defaults to the smallest grid point covering every censoring time."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_csv(text, dt=dt, tau=tau, source=str(path))


def export_weights_csv(weights: PathWeights, dataset: PanelDataset, path=None) -> str:
    """Per-visit weights (post-truncation if ``weights`` was truncated)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(WEIGHT_COLUMNS)
    for sid, *vals in weights.to_rows(dataset):
        w.writerow([sid, *(_fmt(v) for v in vals)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
