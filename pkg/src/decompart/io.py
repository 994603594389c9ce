"""Model documents (JSON) and result bundles (CSV or JSON plus a manifest)."""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import expr as ex
from .errors import ExprSyntaxError, ModelError, SchemaError, UnknownLabel
from .model import CompartmentalModel
from .pathflow import SubflowPath, parse_path
from .static import StaticSystem

BUNDLED = ("sirs", "hippe", "cone_spring")


@dataclass
class ModelDocument:
    name: str
    labels: tuple[str, ...]
    model: CompartmentalModel | None
    paths: list[SubflowPath] = field(default_factory=list)
    static: StaticSystem | None = None
    source: str = ""


def bundled_path(name: str) -> Path:
    """Path of a bundled model document (``sirs``, ``hippe``, ``cone_spring``)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED:
        raise FileNotFoundError(f"no bundled model {name!r}")
    return Path(str(resources.files("decompart") / "data" / f"{stem}.json"))


def _resolve(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists() and p.name.removesuffix(".json") in BUNDLED and len(p.parts) == 1:
        return bundled_path(p.name)
    return p


def read_document(path: str | Path) -> ModelDocument:
    p = _resolve(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    doc = parse_document(raw)
    doc.source = str(p)
    return doc


def load_model(path: str | Path) -> CompartmentalModel:
    """Load and validate the dynamic model of a document."""
    doc = read_document(path)
    if doc.model is None:
        raise SchemaError("$", "document has no dynamic model (flows, inputs, outputs, x0)")
    return doc.model


def load_static(path: str | Path) -> StaticSystem:
    doc = read_document(path)
    if doc.static is None:
        raise SchemaError("$.static", "document has no static block")
    return doc.static


def _expect(cond: bool, path: str, msg: str):
    if not cond:
        raise SchemaError(path, msg)


def _parse_expr(src: Any, path: str) -> ex.Expr:
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        src = repr(float(src))
    _expect(isinstance(src, str), path, "expected an expression string")
    try:
        return ex.parse(src)
    except ExprSyntaxError as exc:
        raise ExprSyntaxError(f"{path}: {exc.args[0]}", exc.offset, exc.source) from None


def _label_map(obj: Any, labels: Sequence[str], path: str, default) -> list:
    _expect(isinstance(obj, dict), path, "expected an object keyed by compartment label")
    out = [default] * len(labels)
    for key, val in obj.items():
        if key not in labels:
            raise UnknownLabel(f"{path}: unknown compartment {key!r}")
        out[labels.index(key)] = val
    return out


def _vector(obj: Any, labels: Sequence[str], path: str) -> np.ndarray:
    if isinstance(obj, dict):
        vals = _label_map(obj, labels, path, 0.0)
    else:
        _expect(isinstance(obj, list) and len(obj) == len(labels), path, f"expected {len(labels)} numbers")
        vals = obj
    try:
        return np.array([float(v) for v in vals])
    except (TypeError, ValueError):
        raise SchemaError(path, "expected numbers") from None


def parse_document(raw: Any) -> ModelDocument:
    """Validate a decoded JSON document."""
    _expect(isinstance(raw, dict), "$", "expected an object")
    name = raw.get("name", "")
    _expect(isinstance(name, str), "$.name", "expected a string")
    labels = raw.get("compartments")
    _expect(isinstance(labels, list), "$.compartments", "expected a list of labels")
    _expect(all(isinstance(s, str) and s for s in labels), "$.compartments", "labels must be nonempty strings")
    if not labels:
        raise ModelError("a model needs at least one compartment")
    _expect(len(set(labels)) == len(labels), "$.compartments", "labels must be unique")
    _expect("0" not in labels, "$.compartments", "'0' is reserved for the exterior")
    labels = tuple(labels)
    n = len(labels)
    dynamic = any(k in raw for k in ("flows", "inputs", "outputs", "x0"))
    model = None
    if dynamic:
        table = [[ex.ZERO] * n for _ in range(n)]
        flows = raw.get("flows", [])
        _expect(isinstance(flows, list), "$.flows", "expected a list")
        for r, f in enumerate(flows):
            fp = f"$.flows[{r}]"
            _expect(isinstance(f, dict) and {"from", "to", "expr"} <= set(f), fp, "expected {from, to, expr}")
            for end in ("from", "to"):
                if f[end] not in labels:
                    raise UnknownLabel(f"{fp}.{end}: unknown compartment {f[end]!r}")
            i, j = labels.index(f["to"]), labels.index(f["from"])
            _expect(i != j, fp, "a flow needs two different compartments")
            _expect(ex.is_zero(table[i][j]), fp, "duplicate flow")
            table[i][j] = _parse_expr(f["expr"], f"{fp}.expr")
        ins = _label_map(raw.get("inputs", {}), labels, "$.inputs", "0")
        inputs = tuple(_parse_expr(s, f"$.inputs.{labels[i]}") for i, s in enumerate(ins))
        outs = _label_map(raw.get("outputs", {}), labels, "$.outputs", "0")
        outputs, channels = [], []
        for j, spec in enumerate(outs):
            op = f"$.outputs.{labels[j]}"
            if isinstance(spec, dict):
                _expect(bool(spec), op, "empty channel map")
                chans = tuple((str(lab), _parse_expr(s, f"{op}.{lab}")) for lab, s in spec.items())
                channels.append(chans)
                outputs.append(_sum([e for _, e in chans]))
            else:
                channels.append(())
                outputs.append(_parse_expr(spec, op))
        x0 = _vector(raw.get("x0", {}), labels, "$.x0")
        model = CompartmentalModel(labels, tuple(tuple(r) for r in table), inputs, tuple(outputs), x0, name,
                                   tuple(channels))
    paths = []
    for r, text in enumerate(raw.get("paths", [])):
        _expect(isinstance(text, str), f"$.paths[{r}]", "expected a path string")
        paths.append(parse_path(text, labels))
    static = None
    if "static" in raw:
        s = raw["static"]
        _expect(isinstance(s, dict) and {"F", "z", "y"} <= set(s), "$.static", "expected {F, z, y[, x]}")
        F = np.array(s["F"], dtype=float)
        _expect(F.shape == (n, n), "$.static.F", f"expected a {n}x{n} matrix, F[i][j] from j to i")
        x = _vector(s["x"], labels, "$.static.x") if "x" in s else None
        R = _vector(s["R"], labels, "$.static.R") if "R" in s else None
        notes = tuple(s.get("notes", ()))
        static = StaticSystem(F, _vector(s["z"], labels, "$.static.z"), _vector(s["y"], labels, "$.static.y"),
                              x, R, notes=notes)
    return ModelDocument(name, labels, model, paths, static)


def _sum(terms):
    from .model import sum_exprs

    return sum_exprs(terms)


def model_to_document(m: CompartmentalModel, paths: Sequence[SubflowPath] = ()) -> dict:
    labels = list(m.names)
    flows = []
    for j in range(m.n):
        for i in range(m.n):
            e = m.flows[i][j]
            if not ex.is_zero(e):
                flows.append({"from": labels[j], "to": labels[i], "expr": ex.to_source(e)})
    outputs = {}
    for j, lab in enumerate(labels):
        chans = m.output_channels[j]
        if chans:
            outputs[lab] = {c: ex.to_source(e) for c, e in chans}
        elif not ex.is_zero(m.outputs[j]):
            outputs[lab] = ex.to_source(m.outputs[j])
    doc = {
        "name": m.name,
        "compartments": labels,
        "flows": flows,
        "inputs": {lab: ex.to_source(m.inputs[i]) for i, lab in enumerate(labels) if not ex.is_zero(m.inputs[i])},
        "outputs": outputs,
        "x0": {lab: float(v) for lab, v in zip(labels, m.x0)},
    }
    if paths:
        doc["paths"] = [p.to_text(labels) for p in paths]
    return doc


def save_model(m: CompartmentalModel, path: str | Path, paths: Sequence[SubflowPath] = ()) -> None:
    Path(path).write_text(json.dumps(model_to_document(m, paths), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- results


@dataclass
class Table:
    name: str
    header: list[str]
    rows: np.ndarray  # (m, len(header))
    operation: str
    description: str = ""


@dataclass
class ResultBundle:
    run: str
    command: str
    config: dict
    tables: list[Table] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, table: Table) -> None:
        self.tables.append(table)


def fmt(v: float) -> str:
    """17 significant digits, enough to read back the same double."""
    return format(float(v), ".17g")


def vector_table(name: str, times, values, labels: Sequence[str], operation: str, description: str = "") -> Table:
    values = np.asarray(values, dtype=float).reshape(len(times), len(labels))
    return Table(name, ["t", *labels], np.column_stack([np.asarray(times, dtype=float), values]), operation,
                 description)


def matrix_table(name: str, times, mats, symbol: str, operation: str, description: str = "") -> Table:
    """Flatten an ``(m, n, n)`` series column-major with headers ``symbol[i,k]``."""
    mats = np.asarray(mats, dtype=float)
    m = len(times)
    n = mats.shape[1] if mats.ndim == 3 else 0
    header = ["t"] + [f"{symbol}[{i + 1},{k + 1}]" for k in range(n) for i in range(n)]
    flat = mats.reshape(m, n, n).transpose(0, 2, 1).reshape(m, n * n) if m else np.zeros((0, n * n))
    return Table(name, header, np.column_stack([np.asarray(times, dtype=float).reshape(m, 1), flat]), operation,
                 description)


def engine_version() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def emit_tables(bundle: ResultBundle, directory: str | Path, format: str = "csv") -> Path:
    """Write every table of ``bundle`` and a ``manifest.json`` into ``directory``."""
    if format not in ("csv", "json"):
        raise ValueError(f"unknown format {format!r}")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for tab in bundle.tables:
        rows = np.asarray(tab.rows, dtype=float).reshape(-1, len(tab.header))
        fname = f"{tab.name}.{format}"
        if format == "csv":
            with open(d / fname, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(tab.header)
                for row in rows:
                    w.writerow([fmt(v) for v in row])
        else:
            payload = {"columns": tab.header, "rows": [[float(v) for v in row] for row in rows]}
            (d / fname).write_text(json.dumps(payload) + "\n", encoding="utf-8")
        files.append({
            "file": fname,
            "table": tab.name,
            "rows": int(rows.shape[0]),
            "columns": len(tab.header),
            "operation": tab.operation,
            "description": tab.description,
        })
    manifest = {
        "run": bundle.run,
        "command": bundle.command,
        "engine": engine_version(),
        "config": bundle.config,
        "flags": bundle.flags,
        "files": files,
        **bundle.extra,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d / "manifest.json"


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))
