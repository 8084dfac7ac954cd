"""Deterministic CSV/JSON persistence: numbers are rendered with 17 significant digits."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import zlib
from pathlib import Path

import numpy as np

from .calculus import MapField
from .variational import TRACE_HEADER, FlowTrace


def render(x) -> str:
    """Round-trip-safe text for one table cell."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if x is None:
        return ""
    if isinstance(x, (tuple, list)):
        return " ".join(render(v) for v in x)
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row of length {len(row)} under a header of length {len(header)}")
            writer.writerow([render(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_trace(path, trace: FlowTrace) -> Path:
    return write_csv(path, TRACE_HEADER, trace.rows)


def field_rows(phi: MapField):
    """One row per node: node indices followed by the ambient components."""
    vals = phi.values.reshape(-1, phi.values.shape[-1])
    for idx, v in zip(np.ndindex(*phi.mesh.shape), vals):
        yield (*idx, *v)


def write_field(path, phi: MapField) -> Path:
    m, k = phi.mesh.dim, phi.values.shape[-1]
    header = [f"i{a}" for a in range(m)] + [f"v{c}" for c in range(k)]
    return write_csv(path, header, field_rows(phi))


def read_field_values(path, mesh, ambient_dim: int) -> np.ndarray:
    _, rows = read_csv(path)
    arr = np.array([[float(x) for x in r[mesh.dim:]] for r in rows])
    return arr.reshape(*mesh.shape, ambient_dim)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def first_difference(a, b) -> str | None:
    """None when the files are byte-identical, else a description of the first differing record."""
    la = Path(a).read_bytes().split(b"\n")
    lb = Path(b).read_bytes().split(b"\n")
    for i, (x, y) in enumerate(zip(la, lb)):
        if x != y:
            return f"line {i + 1}: {x.decode(errors='replace')!r} != {y.decode(errors='replace')!r}"
    if len(la) != len(lb):
        return f"line {min(len(la), len(lb)) + 1}: files differ in length ({len(la)} vs {len(lb)} lines)"
    return None


def sub_seed(seed: int, label: str) -> int:
    """Independent stream seed for a named consumer, fixed across runs and platforms."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]).generate_state(1)[0])
