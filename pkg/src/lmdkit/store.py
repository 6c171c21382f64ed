"""Text persistence for models, datasets and report bundles.

Floats are written with Python's ``repr``, the shortest decimal string that
parses back to the same 64-bit value, so every save/load pair is exact.
JSON keys are sorted, files end with a newline, and line endings are LF.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from .graph import DataSet
from .mlp import ConvergenceCertificate, MLPModel

MODEL_FORMAT = "lmd-model/1"
REPORT_FORMAT = "lmd-report/1"
REPORT_KINDS = ("LAYER", "CAPACITY", "ENCODING", "CORRESPONDENCE")


class FormatError(ValueError):
    """A document does not match its declared format."""


def fmt(x: float) -> str:
    return repr(float(x))


def to_jsonable(obj):
    """Recursively convert numpy values, enums and dataclasses to plain JSON types.

    Non-finite floats become ``None`` since JSON has no spelling for them.
    """
    if isinstance(obj, Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(doc) -> str:
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    return doc


# -- models -----------------------------------------------------------------

def model_to_container(model: MLPModel) -> dict:
    doc = {
        "format_version": MODEL_FORMAT,
        "activation": model.activation.value,
        "final_activation": model.final_activation.value,
        "layers": [
            {"rows": int(w.shape[0]), "cols": int(w.shape[1]), "data": [fmt(v) for v in w.ravel()]}
            for w in model.layers
        ],
    }
    if model.certificate is not None:
        doc["certificate"] = to_jsonable(model.certificate)
    return doc


def _parse_float(text, where: str) -> float:
    if not isinstance(text, str):
        raise FormatError(f"{where}: expected a decimal string, got {type(text).__name__}")
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise FormatError(f"{where}: non-finite value {text!r}")
    return v


def container_to_model(doc: dict, source: str = "model") -> MLPModel:
    version = doc.get("format_version")
    if version != MODEL_FORMAT:
        raise FormatError(f"{source}: unsupported format_version {version!r} (expected {MODEL_FORMAT!r})")
    for key in ("activation", "final_activation", "layers"):
        if key not in doc:
            raise FormatError(f"{source}: missing field {key!r}")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise FormatError(f"{source}: field 'layers' must be a nonempty list")
    layers = []
    for li, layer in enumerate(doc["layers"]):
        where = f"{source}: layers[{li}]"
        try:
            rows, cols, data = int(layer["rows"]), int(layer["cols"]), layer["data"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: malformed layer ({exc})") from None
        if not isinstance(data, list) or len(data) != rows * cols:
            raise FormatError(f"{where}.data: expected {rows * cols} values")
        values = [_parse_float(v, f"{where}.data[{k}]") for k, v in enumerate(data)]
        layers.append(np.array(values, dtype=np.float64).reshape(rows, cols))
    cert = None
    if doc.get("certificate") is not None:
        try:
            cert = ConvergenceCertificate(**doc["certificate"])
        except TypeError as exc:
            raise FormatError(f"{source}: certificate: {exc}") from None
    try:
        return MLPModel(layers, doc["activation"], doc["final_activation"], cert)
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_model(model: MLPModel, path) -> None:
    _write_text(path, dumps_json(model_to_container(model)))


def load_model(path) -> MLPModel:
    return container_to_model(_read_json(path), str(path))


# -- datasets ---------------------------------------------------------------

def load_dataset(path) -> DataSet:
    """Read a CSV whose header names feature columns ``x*`` and targets ``y*``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    xcols = [k for k, h in enumerate(header) if h.startswith("x")]
    ycols = [k for k, h in enumerate(header) if h.startswith("y")]
    bad = [h for h in header if not h.startswith(("x", "y"))]
    if bad:
        raise FormatError(f"{path}: row 1: header columns must start with 'x' or 'y', got {bad}")
    if not xcols:
        raise FormatError(f"{path}: row 1: no feature columns (prefix 'x')")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: zero data rows")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}: row {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            parsed = [float(c) for c in row]
        except ValueError:
            raise FormatError(f"{path}: row {lineno}: non-numeric cell in {row}") from None
        if not all(math.isfinite(v) for v in parsed):
            raise FormatError(f"{path}: row {lineno}: non-finite cell in {row}")
        values.append(parsed)
    arr = np.array(values, dtype=np.float64)
    targets = arr[:, ycols] if ycols else None
    return DataSet(arr[:, xcols], targets)


def save_dataset(data: DataSet, path) -> None:
    header = [f"x{k + 1}" for k in range(data.points.shape[1])]
    block = data.points
    if data.targets is not None:
        header += [f"y{k + 1}" for k in range(data.targets.shape[1])]
        block = np.hstack([data.points, data.targets])
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in block]
    _write_text(path, "\n".join(lines) + "\n")


# -- reports ----------------------------------------------------------------

@dataclass
class ReportBundle:
    kind: str
    payload: dict
    provenance: dict = field(default_factory=dict)
    format_version: str = REPORT_FORMAT

    def __post_init__(self):
        if self.kind not in REPORT_KINDS:
            raise ValueError(f"unknown report kind {self.kind!r}")
        self.payload = to_jsonable(self.payload)
        self.provenance = to_jsonable({"tool_version": __version__, **self.provenance})
        self.provenance.setdefault("seed", None)
        self.provenance.setdefault("config", {})

    def to_dict(self) -> dict:
        return to_jsonable({
            "format_version": self.format_version,
            "kind": self.kind,
            "payload": self.payload,
            "provenance": self.provenance,
        })


CSV_COLUMNS = {
    "CAPACITY": ["stored_count", "rate"],
    "LAYER": ["layer", "mode", "n_prime", "rows", "cols", "residual_to_w", "residual_eq4"],
    "ENCODING": ["delta", "epsilon_train", "epsilon_perturbed", "passed"],
    "CORRESPONDENCE": ["layer", "role", "rows", "cols", "frobenius_norm"],
}


def _csv_rows(bundle: ReportBundle) -> list[list]:
    p = bundle.payload
    if bundle.kind == "CAPACITY":
        return [[c, r] for c, r in zip(p["stored_counts"], p["retrieval_rates"])]
    if bundle.kind == "ENCODING":
        return [[q["delta_probe"], q["epsilon_train"], q["epsilon_perturbed"], q["passed"]]
                for q in p["probes"]]
    if bundle.kind == "CORRESPONDENCE":
        return [[rec["layer"], role, m["rows"], m["cols"], m["frobenius_norm"]]
                for rec in p["layers"] for role, m in sorted(rec["matrices"].items())]
    rows = []
    for rec in p["layers"]:
        r, c = rec["shape"]
        curves = [m for m in ("trivial", "graph") if m in rec and "curve" in rec[m]]
        if curves:
            for mode in curves:
                for point in rec[mode]["curve"]:
                    rows.append([rec["layer"], mode, point["n_prime"], r, c,
                                 point["residual_to_w"], point["residual_eq4"]])
        else:
            rows.append([rec["layer"], rec["mode"], rec["n_prime"], r, c,
                         rec["residual_to_w"], rec["residual_eq4"]])
    return rows


def _csv_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def render_csv(bundle: ReportBundle) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS[bundle.kind])
    for row in _csv_rows(bundle):
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def emit_report(bundle: ReportBundle, path, form: str = "json") -> None:
    form = form.lower()
    if form == "json":
        _write_text(path, dumps_json(bundle.to_dict()))
    elif form == "csv":
        _write_text(path, render_csv(bundle))
    else:
        raise ValueError(f"unknown report form {form!r}")


def load_report(path) -> ReportBundle:
    doc = _read_json(path)
    if doc.get("format_version") != REPORT_FORMAT:
        raise FormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    try:
        return ReportBundle(doc["kind"], doc["payload"], doc["provenance"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
