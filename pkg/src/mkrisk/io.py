"""CSV ingestion, model persistence and report writers."""

from __future__ import annotations

import base64
import csv
import io as _io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .reference import ReferenceSpec
from .solver import FittedPotential, PointCloud, SolveLog

__all__ = [
    "LoadedTable",
    "Standardization",
    "StandardizedMap",
    "load_csv",
    "read_table",
    "write_csv",
    "encode_array",
    "decode_array",
    "potential_to_document",
    "potential_from_document",
    "save_potential",
    "load_potential",
    "format_records",
    "format_contours_csv",
]

MODEL_FORMAT = "mkrisk.fitted-potential"
MODEL_VERSION = 1

# plain decimal numbers only: no nan/inf, no digit separators, no locale commas
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class LoadedTable:
    columns: tuple[str, ...]
    values: np.ndarray


@dataclass(frozen=True)
class Standardization:
    """Per-column affine change of units ``z = (x - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, points: np.ndarray) -> "Standardization":
        scale = points.std(axis=0)
        if np.any(scale == 0):
            raise DataError("cannot standardize a constant column")
        return cls(points.mean(axis=0), scale)

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def inverse(self, z):
        return self.center + self.scale * np.asarray(z, dtype=float)

    def to_dict(self) -> dict:
        return {"center": encode_array(self.center), "scale": encode_array(self.scale)}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardization":
        return cls(decode_array(data["center"]), decode_array(data["scale"]))


class StandardizedMap:
    """A potential fitted on standardized columns, reporting in original units.

    Only a common positive scale commutes with the transport problem; with
    per-column scales the reported maps are the back-transformed maps of the
    standardized fit, not the maps of the raw data.
    """

    def __init__(self, potential: FittedPotential, standardization: Standardization):
        self.fitted = potential
        self.standardization = standardization
        self.reference = potential.reference
        self.d = potential.d
        self.data = PointCloud(standardization.inverse(potential.data.points))

    def quantile(self, u):
        return self.standardization.inverse(self.fitted.quantile(u))

    def backward(self, x):
        return self.fitted.backward(self.standardization.forward(x))


def read_table(path) -> LoadedTable:
    """Parse a headed CSV of decimal numbers, reporting the first bad row."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (a header row is required)") from None
        header = tuple(h.strip() for h in header)
        if not header or all(h == "" for h in header):
            raise DataError(f"{path}: empty header row")
        d = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(field.strip() == "" for field in row):
                continue
            if len(row) != d:
                raise DataError(f"{path}: row {lineno}: expected {d} fields, got {len(row)}")
            parsed = []
            for col, field in enumerate(row):
                text = field.strip()
                if not _NUMBER.match(text):
                    raise DataError(
                        f"{path}: row {lineno}, column {header[col] or col}: not a finite decimal number: {field!r}"
                    )
                value = float(text)
                if not math.isfinite(value):
                    raise DataError(f"{path}: row {lineno}, column {header[col] or col}: value overflows: {field!r}")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return LoadedTable(header, np.array(rows, dtype=float))


def load_csv(path) -> PointCloud:
    """Load a headed numeric CSV as a point cloud (``n >= 2`` rows)."""
    table = read_table(path)
    if len(table.values) < 2:
        raise DataError(f"{path}: n < 2 (need at least two data rows, got {len(table.values)})")
    return PointCloud(table.values)


def write_csv(path, points: np.ndarray, columns=None) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    columns = columns or [f"x{j}" for j in range(points.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in points:
            writer.writerow([repr(float(x)) for x in row])


def encode_array(a) -> dict:
    """Base64 of the little-endian float64 bytes, with the shape alongside."""
    arr = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"shape": list(arr.shape), "dtype": "<f8", "base64": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(record: dict) -> np.ndarray:
    try:
        if record.get("dtype", "<f8") != "<f8":
            raise DataError(f"unsupported array dtype {record.get('dtype')!r}")
        raw = base64.b64decode(record["base64"], validate=True)
        shape = tuple(int(s) for s in record["shape"])
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed array record: {exc}") from None
    return arr.astype(float)


def potential_to_document(potential: FittedPotential, options=None, standardization=None, columns=None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "reference": potential.reference.to_text(),
        "d": potential.d,
        "n": potential.data.n,
        "epsilon": potential.epsilon,
        "anchor_index": potential.anchor_index,
        "psi_zero": potential.psi_zero,
        "rank_grid_size": potential.rank_grid_size,
        "rank_seed": potential.rank_seed,
        "data": encode_array(potential.data.points),
        "v": encode_array(potential.v),
        "solve_log": potential.solve_log.to_dict(),
        "options": None if options is None else options.to_dict(),
        "standardization": None if standardization is None else standardization.to_dict(),
        "columns": None if columns is None else list(columns),
    }
    return doc


def potential_from_document(doc: dict):
    """Rebuild ``(potential, standardization, columns)`` from a model document."""
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError("not a fitted-potential document")
    if doc.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    try:
        reference = ReferenceSpec.parse(doc["reference"], int(doc["d"]))
        potential = FittedPotential(
            data=PointCloud(decode_array(doc["data"])),
            v=decode_array(doc["v"]),
            epsilon=float(doc["epsilon"]),
            reference=reference,
            anchor_index=int(doc["anchor_index"]),
            psi_zero=float(doc["psi_zero"]),
            solve_log=SolveLog.from_dict(doc["solve_log"]),
            rank_grid_size=int(doc.get("rank_grid_size", 4096)),
            rank_seed=int(doc.get("rank_seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model document: missing or invalid {exc}") from None
    except ParameterError as exc:
        raise DataError(f"malformed model document: {exc}") from None
    std = doc.get("standardization")
    standardization = None if std is None else Standardization.from_dict(std)
    columns = doc.get("columns")
    return potential, standardization, None if columns is None else tuple(columns)


def save_potential(path, potential: FittedPotential, options=None, standardization=None, columns=None) -> None:
    """Write the model as sorted-key JSON; equal inputs give identical bytes."""
    doc = potential_to_document(potential, options, standardization, columns)
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_potential(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    return potential_from_document(doc)


# ---------------------------------------------------------------------------
# reports


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_records(records: list[dict], fmt: str) -> str:
    """Render flat records as JSON, an aligned text table, or CSV."""
    if fmt == "json":
        return json.dumps(records, indent=2) + "\n"
    if not records:
        return ""
    columns = list(records[0])
    for rec in records[1:]:
        columns += [c for c in rec if c not in columns]
    if fmt == "csv":
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([repr(rec[c]) if isinstance(rec.get(c), float) else rec.get(c, "") for c in columns])
        return buf.getvalue()
    if fmt == "table":
        cells = [[_cell(rec.get(c, "")) for c in columns] for rec in records]
        widths = [max(len(c), *(len(row[j]) for row in cells)) for j, c in enumerate(columns)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in cells]
        return "\n".join(lines) + "\n"
    raise ParameterError(f"unknown output format {fmt!r}")


def format_contours_csv(contours) -> str:
    """Contour vertices with columns ``level,kind,dir_index,coord_0..coord_{d-1}``."""
    contours = list(contours)
    if not contours:
        return ""
    d = contours[0].d
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", "kind", "dir_index"] + [f"coord_{j}" for j in range(d)])
    for contour in contours:
        for j, vertex in enumerate(contour.vertices):
            writer.writerow([repr(contour.level), contour.kind.value, j] + [repr(float(x)) for x in vertex])
    return buf.getvalue()
