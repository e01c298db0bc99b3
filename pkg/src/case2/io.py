"""Reading and writing matched studies, populations and result tables.

CSV dialect: comma separated, double-quote escaping, LF or CRLF accepted on
input, LF emitted on output. Treatment and narrow flags must be literally
``0`` or ``1``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .errors import BadValue, DuplicateId, MalformedCsv, MissingColumn
from .model import Study, Unit, validate_study

MISSING = "missing"
RESULT_COLUMNS = ("gamma", "theta", "delta", "alpha", "a_star", "p_at_a_star", "method")

Source = Union[bytes, str, os.PathLike, io.IOBase]


@dataclass
class PopulationRecord:
    unit_id: str
    case_type: str
    treated: int
    covariates: dict = field(default_factory=dict)
    truth: Optional[dict] = None

    def __post_init__(self):
        if self.case_type not in ("narrow", "marginal"):
            raise BadValue(f"unit {self.unit_id!r}: case_type must be narrow or marginal")
        if self.treated not in (0, 1):
            raise BadValue(f"unit {self.unit_id!r}: treated must be 0 or 1")

    @property
    def narrow(self) -> int:
        return int(self.case_type == "narrow")


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedCsv(f"input is not UTF-8: {exc}") from None
    return text.lstrip("﻿")


def _read_rows(source: Source):
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        rows = [r for r in reader if r]
    except csv.Error as exc:
        raise MalformedCsv(str(exc)) from None
    if not rows:
        raise MalformedCsv("missing header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise MalformedCsv("duplicate column names in header")
    body = rows[1:]
    for k, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"line {k}: expected {len(header)} fields, got {len(row)}")
    return header, body


def _flag(value: str, column: str, line: int) -> int:
    value = value.strip()
    if value not in ("0", "1"):
        raise BadValue(f"line {line}: {column}={value!r} is not 0 or 1")
    return int(value)


def _is_number(value: str) -> bool:
    try:
        return math.isfinite(float(value))
    except ValueError:
        return False


def infer_covariates(header: Sequence[str], body, columns: Sequence[str]) -> list:
    """Typed covariate values per row; type decided per column over the file."""
    idx = {name: header.index(name) for name in columns}
    numeric = {}
    for name in columns:
        values = [row[idx[name]].strip() for row in body]
        present = [v for v in values if v != ""]
        numeric[name] = bool(present) and all(_is_number(v) for v in present)
    out = []
    for row in body:
        values = {}
        for name in columns:
            raw = row[idx[name]].strip()
            if numeric[name]:
                values[name] = float(raw) if raw != "" else None
            else:
                values[name] = raw if raw != "" else MISSING
        out.append(values)
    return out


def parse_matched_csv(source: Source) -> Study:
    header, body = _read_rows(source)
    for col in ("set_id", "treated", "narrow"):
        if col not in header:
            raise MissingColumn(f"required column {col!r} not found")
    reserved = {"set_id", "treated", "narrow", "unit_id"}
    cov_names = [h for h in header if h not in reserved]
    covs = infer_covariates(header, body, cov_names)
    i_set, i_z, i_n = header.index("set_id"), header.index("treated"), header.index("narrow")
    i_id = header.index("unit_id") if "unit_id" in header else None
    units = []
    for k, (row, cv) in enumerate(zip(body, covs), start=2):
        set_id = row[i_set].strip()
        if set_id == "":
            raise BadValue(f"line {k}: empty set_id")
        units.append(Unit(
            set_id=set_id,
            unit_index=0,
            treated=_flag(row[i_z], "treated", k),
            narrow=_flag(row[i_n], "narrow", k),
            covariates=tuple(cv.items()),
            unit_id=row[i_id].strip() if i_id is not None else None,
        ))
    return validate_study(units)


def parse_population_csv(source: Source) -> list:
    header, body = _read_rows(source)
    for col in ("unit_id", "case_type", "treated"):
        if col not in header:
            raise MissingColumn(f"required column {col!r} not found")
    cov_names = [h for h in header if h not in ("unit_id", "case_type", "treated")]
    covs = infer_covariates(header, body, cov_names)
    i_id, i_ct, i_z = (header.index(c) for c in ("unit_id", "case_type", "treated"))
    seen = set()
    records = []
    for k, (row, cv) in enumerate(zip(body, covs), start=2):
        uid = row[i_id].strip()
        if uid in seen:
            raise DuplicateId(f"line {k}: unit_id {uid!r} repeated")
        seen.add(uid)
        case_type = row[i_ct].strip()
        if case_type not in ("narrow", "marginal"):
            raise BadValue(f"line {k}: case_type={case_type!r}")
        records.append(PopulationRecord(uid, case_type, _flag(row[i_z], "treated", k), cv))
    return records


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def _result_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return format_value(value)


def _csv_text(header, rows, fmt=format_value) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_study_csv(study: Study) -> bytes:
    """Canonical CSV for a study: one row per unit, narrow unit first in each set."""
    cov_names = [name for name, _ in study.sets[0].units[0].covariates]
    has_ids = any(u.unit_id is not None for u in study.units())
    header = ["set_id"] + (["unit_id"] if has_ids else []) + ["treated", "narrow"] + cov_names
    rows = []
    for u in study.units():
        cov = dict(u.covariates)
        rows.append([u.set_id] + ([u.unit_id] if has_ids else [])
                    + [u.treated, u.narrow] + [cov.get(n) for n in cov_names])
    return _csv_text(header, rows).encode("utf-8")


def write_population_csv(records: Sequence[PopulationRecord], truth: bool = False) -> bytes:
    cov_names = list(records[0].covariates) if records else []
    truth_names = []
    if truth:
        truth_names = sorted({k for r in records if r.truth for k in r.truth})
    header = ["unit_id", "case_type", "treated"] + cov_names + truth_names
    rows = []
    for r in records:
        row = [r.unit_id, r.case_type, r.treated] + [r.covariates.get(n) for n in cov_names]
        if truth:
            row += [(r.truth or {}).get(n) for n in truth_names]
        rows.append(row)
    return _csv_text(header, rows).encode("utf-8")


def _result_dict(row) -> dict:
    if isinstance(row, dict):
        return dict(row)
    if hasattr(row, "as_dict"):
        return row.as_dict()
    return {c: getattr(row, c) for c in RESULT_COLUMNS}


def write_results(rows: Iterable, format: str = "csv") -> bytes:
    """Serialize result rows with a stable column order.

    Sweep rows use ``gamma, theta, delta, alpha, a_star, p_at_a_star, method``;
    plain dicts keep the key order of the first row.
    """
    dicts = [_result_dict(r) for r in rows]
    if not dicts:
        raise ValueError("no rows to write")
    first = dicts[0]
    columns = [c for c in RESULT_COLUMNS if c in first] or list(first)
    columns += [c for c in first if c not in columns]
    if format == "csv":
        table = [[d.get(c) for c in columns] for d in dicts]
        return _csv_text(columns, table, _result_value).encode("utf-8")
    if format == "json":
        ordered = [{c: d.get(c) for c in columns} for d in dicts]
        return (json.dumps(ordered, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    raise ValueError(f"unknown format {format!r}")


def study_records(study: Study) -> list:
    """Population-style records for a matched study, with ``set_id`` as a covariate."""
    out = []
    for u in study.units():
        uid = u.unit_id if u.unit_id is not None else f"{u.set_id}:{u.unit_index}"
        cov = {"set_id": u.set_id, **dict(u.covariates)}
        out.append(PopulationRecord(uid, "narrow" if u.narrow else "marginal", u.treated, cov))
    return out


def parse_any_csv(source: Source) -> list:
    """Population records from either a population or a matched-study CSV."""
    text = _read_text(source)
    header = next(csv.reader(io.StringIO(text, newline="")), [])
    if "case_type" in [h.strip() for h in header]:
        return parse_population_csv(text.encode("utf-8"))
    return study_records(parse_matched_csv(text.encode("utf-8")))
