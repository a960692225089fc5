"""Versioned CSV and JSON artifacts.

Every CSV starts with one comment line ``# {json}`` carrying at least
``schema`` and ``version``, followed by a header row and data rows.  Floats
are written with ``repr`` so values round-trip exactly and repeated runs are
byte-identical.  JSON artifacts carry the same two keys at top level.

Schemas with a ``prefix`` have one fixed leading column followed by
``prefix_0 .. prefix_{n-1}``.
"""

import json
import math
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, MissingArtifactError

SCHEMA_VERSION = 1

CSV_SCHEMAS = {
    "dsm_model": {
        "columns": ["state", "atom", "next_state", "probability"],
        "doc": "particle model, one row per (state, atom, next_state)",
    },
    "dp_trace": {
        "columns": ["iteration", "successive_wbar", "ref_wbar", "max_state"],
        "doc": "dynamic-programming convergence trace",
    },
    "td_trace": {
        "columns": ["step", "loss", "full_mmd", "wbar_ref"],
        "doc": "TD training trace",
    },
    "return_distribution": {
        "columns": ["particle", "return", "weight"],
        "doc": "return particles and their weights",
    },
    "trajectories": {
        "columns": ["trajectory_id", "t", "state"],
        "doc": "sampled state sequences",
    },
    "successor_matrix": {"lead": "state", "prefix": "psi", "doc": "normalised successor measure rows"},
    "transition": {"lead": "state", "prefix": "p", "doc": "state-to-state transition matrix"},
    "occupancy": {"lead": "particle", "prefix": "occ", "doc": "Monte Carlo occupancy particles"},
    "gram": {"lead": None, "prefix": "k", "doc": "state-kernel Gram matrix"},
}

JSON_SCHEMAS = {
    "dp_summary": ("final_successive_wbar", "iterations", "projection_residual"),
    "td_summary": ("final_loss", "steps"),
    "nstep_sweep": ("runs",),
    "risk_report": ("reports",),
    "ranking": ("rankings",),
    "cramer_scores": ("scores",),
    "oracle_summary": ("n_traj", "horizon"),
    "recover_summary": ("max_abs_error", "condition_number"),
    "run_config": ("command",),
    "error": ("error",),
}


def expected_columns(schema, n=None):
    spec = CSV_SCHEMAS[schema]
    if "columns" in spec:
        return list(spec["columns"])
    cols = [spec["lead"]] if spec["lead"] else []
    return cols + [f"{spec['prefix']}_{j}" for j in range(n)]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def header_line(schema, meta=None):
    info = {"schema": schema, "version": SCHEMA_VERSION}
    info.update(_jsonable(meta or {}))
    return "# " + json.dumps(info, sort_keys=True)


def write_csv(path_or_buf, schema, rows, meta=None, columns=None):
    """Write ``rows`` (iterables of numbers) under a schema header."""
    if schema not in CSV_SCHEMAS:
        raise ConfigurationError(f"unknown CSV schema {schema!r}")
    rows = list(rows)
    if columns is None:
        width = len(rows[0]) if rows else 0
        lead = 1 if CSV_SCHEMAS[schema].get("lead") else 0
        columns = expected_columns(schema, None if "columns" in CSV_SCHEMAS[schema] else width - lead)
    lines = [header_line(schema, meta), ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)


def write_matrix_csv(path_or_buf, schema, matrix, meta=None):
    """Write a 2-D array; schemas with a lead column get the row index first."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if CSV_SCHEMAS[schema].get("lead"):
        rows = ([i, *row] for i, row in enumerate(matrix))
    else:
        rows = matrix
    write_csv(path_or_buf, schema, rows, meta, expected_columns(schema, matrix.shape[1]))


def model_rows(atoms):
    s, m, _ = atoms.shape
    for x in range(s):
        for i in range(m):
            for y in range(s):
                yield (x, i, y, atoms[x, i, y])


def write_model_csv(path, model, meta=None):
    info = {"gamma": model.gamma, "n_states": model.n_states, "m": model.m}
    info.update(meta or {})
    write_csv(path, "dsm_model", model_rows(np.asarray(model.atoms)), info)


def _open_text(path):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"artifact not found: {path}", path=str(path))
    return path.read_text()


def read_csv(path):
    """Parse a schema CSV.  Returns ``(meta, columns, data)`` with ``data`` a float array."""
    text = _open_text(path)
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ConfigurationError(f"{path}: missing schema header line")
    try:
        meta = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: schema header is not JSON ({exc})") from None
    if len(lines) < 2:
        raise ConfigurationError(f"{path}: missing column header row")
    columns = lines[1].split(",")
    body = [ln.split(",") for ln in lines[2:] if ln]
    try:
        data = np.array(body, dtype=float) if body else np.empty((0, len(columns)))
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric or ragged rows ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ConfigurationError(f"{path}: rows do not match the column header")
    return meta, columns, data


def read_model_csv(path):
    """Load a ``dsm_model`` CSV into a :class:`~distsm.dp.DeltaModel` plus its header metadata."""
    from .dp import DeltaModel

    meta, columns, data = read_csv(path)
    if meta.get("schema") != "dsm_model":
        raise ConfigurationError(f"{path}: expected a dsm_model artifact, found {meta.get('schema')!r}")
    s, m = int(meta["n_states"]), int(meta["m"])
    if data.shape[0] != s * m * s:
        raise ConfigurationError(f"{path}: expected {s * m * s} rows, found {data.shape[0]}")
    atoms = data[:, 3].reshape(s, m, s)
    return DeltaModel(atoms, float(meta["gamma"])), meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, schema, payload):
    doc = {"schema": schema, "version": SCHEMA_VERSION}
    doc.update(_jsonable(payload))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(_open_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


def validate_file(path):
    """Check one artifact against its declared schema.

    Returns ``{"path", "schema", "ok", "problems"}``; a missing file raises
    :class:`MissingArtifactError`.
    """
    path = Path(path)
    problems = []
    schema = None
    if path.suffix == ".json":
        doc = read_json(path)
        schema = doc.get("schema") if isinstance(doc, dict) else None
        if schema not in JSON_SCHEMAS:
            problems.append(f"unknown JSON schema {schema!r}")
        else:
            if doc.get("version") != SCHEMA_VERSION:
                problems.append(f"version {doc.get('version')!r} != {SCHEMA_VERSION}")
            problems += [f"missing key {k!r}" for k in JSON_SCHEMAS[schema] if k not in doc]
    else:
        try:
            meta, columns, data = read_csv(path)
        except ConfigurationError as exc:
            return {"path": str(path), "schema": None, "ok": False, "problems": [str(exc)]}
        schema = meta.get("schema")
        if schema not in CSV_SCHEMAS:
            problems.append(f"unknown CSV schema {schema!r}")
        else:
            if meta.get("version") != SCHEMA_VERSION:
                problems.append(f"version {meta.get('version')!r} != {SCHEMA_VERSION}")
            lead = 1 if CSV_SCHEMAS[schema].get("lead") else 0
            want = expected_columns(schema, None if "columns" in CSV_SCHEMAS[schema] else len(columns) - lead)
            if columns != want:
                problems.append(f"columns {columns} != {want}")
            if schema == "dsm_model" and not problems:
                problems += _check_model(meta, data)
    return {"path": str(path), "schema": schema, "ok": not problems, "problems": problems}


def _check_model(meta, data):
    try:
        s, m = int(meta["n_states"]), int(meta["m"])
    except (KeyError, TypeError, ValueError):
        return ["model header needs n_states and m"]
    if data.shape[0] != s * m * s:
        return [f"expected {s * m * s} rows, found {data.shape[0]}"]
    p = data[:, 3].reshape(s, m, s)
    err = np.abs(p.sum(axis=2) - 1.0).max() if p.size else 0.0
    out = []
    if p.min(initial=0.0) < -1e-12:
        out.append("negative probabilities")
    if err > 1e-9:
        out.append(f"atoms do not sum to one (max error {err:.3e})")
    return out
