"""Sample containers and their CSV / JSON serialization."""

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

BATCH_SCHEMA = "guidance-interval/batch/1"
TRAJECTORY_SCHEMA = "guidance-interval/trajectory/1"


@dataclass(frozen=True)
class SampleBatch:
    """Terminal states of ``n`` chains (or exact data draws), shape ``(n, dim)``."""

    vectors: np.ndarray
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0:
            raise InputError(f"batch vectors must be a non-empty (n, dim) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("batch contains non-finite entries")
        object.__setattr__(self, "vectors", v)

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.n


def as_array(batch):
    """Accept a SampleBatch or anything array-like; return an ``(n, dim)`` float array."""
    if isinstance(batch, SampleBatch):
        return batch.vectors
    a = np.asarray(batch, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InputError(f"expected an (n, dim) array, got shape {a.shape}")
    return a


def _fmt(v):
    return repr(float(v))


def batch_to_csv(batch):
    """Render a batch as CSV text: ``index,x0,...`` with round-trip-exact floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index"] + [f"x{k}" for k in range(batch.dim)])
    for i, row in enumerate(batch.vectors):
        w.writerow([i] + [_fmt(v) for v in row])
    return buf.getvalue()


def batch_from_csv(text, seed=None, provenance=None):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "index":
        raise InputError("batch CSV must start with an 'index,x0,...' header")
    header = rows[0]
    dim = len(header) - 1
    if dim < 1 or header[1:] != [f"x{k}" for k in range(dim)]:
        raise InputError(f"malformed batch header: {header}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise InputError("batch CSV has no rows")
    try:
        vectors = np.array([[float(v) for v in r[1:]] for r in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"non-numeric batch entry: {exc}") from None
    if vectors.shape[1] != dim:
        raise InputError("ragged batch CSV")
    return SampleBatch(vectors, seed=seed, provenance=provenance or {})


def save_batch(batch, path):
    """Write ``<path>`` (CSV) and ``<path>.json`` (seed + provenance)."""
    path = Path(path)
    path.write_text(batch_to_csv(batch))
    meta = {"schema": BATCH_SCHEMA, "n": batch.n, "dim": batch.dim, "seed": batch.seed,
            "provenance": batch.provenance}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_batch(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such batch file: {path}")
    meta_path = Path(str(path) + ".json")
    seed, prov = None, {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        seed, prov = meta.get("seed"), meta.get("provenance", {})
    return batch_from_csv(path.read_text(), seed=seed, provenance=prov)
