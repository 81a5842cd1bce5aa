"""Write a BenchmarkReport to disk: CSV tables, JSON master report, SVG heatmaps."""
from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .bench import REPORT_SCHEMA_VERSION, BenchmarkReport
from .plotting import render_heatmap

REPORT_JSON = "report.json"


def load_schema(name: str) -> dict:
    text = resources.files("thalbench.schemas").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


def _plain(value):
    """Convert numpy scalars and non-finite floats to JSON-safe values."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    return value


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_table(path: Path, rows: list) -> None:
    header = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(k)) for k in header])


def _matrix_kind(name: str) -> str:
    if name.startswith("group_ahd"):
        return "distance"
    if name.startswith("effect"):
        return "effect"
    return "dice"


def report_document(report: BenchmarkReport, files: list) -> dict:
    matrices = {}
    for name, (rows, cols, values, absent) in report.matrices.items():
        values = np.asarray(values, dtype=float)
        absent = np.asarray(absent, dtype=bool)
        matrices[name] = {
            "rows": list(rows), "columns": list(cols),
            "values": [[None if absent[i, j] else _plain(values[i, j])
                        for j in range(values.shape[1])] for i in range(values.shape[0])],
            "absent": absent.tolist(),
        }
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": report.kind,
        "methods": list(report.methods),
        "metadata": _plain(report.metadata),
        "notes": list(report.notes),
        "files": files,
        "tables": {k: _plain(v) for k, v in report.tables.items()},
        "matrices": matrices,
    }


def emit_report(report: BenchmarkReport, out_dir) -> list:
    """Write all report artifacts into ``out_dir``; returns the file names.

    Output is a pure function of the report, so identical inputs give
    byte-identical files.
    """
    if not report.methods:
        raise ValueError("report has no methods")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, rows in report.tables.items():
        if rows:
            _write_table(out / f"{name}.csv", rows)
            files.append(f"{name}.csv")
    for name, (rows, cols, values, absent) in report.matrices.items():
        kind = _matrix_kind(name)
        render_heatmap(out / f"{name}.svg", values, absent, rows, cols, kind=kind,
                       title=name.replace("_", " "),
                       fmt="{:.2f}" if kind != "distance" else "{:.1f}")
        files.append(f"{name}.svg")
        values = np.asarray(values, dtype=float)
        absent = np.asarray(absent, dtype=bool)
        matrix_rows = [{"row": r, **{c: (None if absent[i, j] else float(values[i, j]))
                                     for j, c in enumerate(cols)}}
                       for i, r in enumerate(rows)]
        _write_table(out / f"{name}.csv", matrix_rows)
        files.append(f"{name}.csv")
    files.append(REPORT_JSON)
    doc = report_document(report, sorted(files))
    jsonschema.validate(doc, load_schema("report.schema.json"))
    text = json.dumps(doc, indent=1, allow_nan=False, ensure_ascii=True)
    (out / REPORT_JSON).write_text(text + "\n", encoding="utf-8")
    return sorted(files)
