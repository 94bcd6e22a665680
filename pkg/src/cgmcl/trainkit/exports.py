"""On-disk formats: CSV logs and the ``params.bin`` parameter file.

``params.bin`` layout (all integers little-endian)::

    magic      8 bytes  b"CGMCLPAR"
    version    uint32   currently 1
    count      uint32   number of tensors
    name table count entries of
                 name_len uint16, name utf-8 bytes,
                 ndim uint8, dims uint32 * ndim
    payload    for each entry in table order, prod(dims) float64 (<f8), row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from cgmcl.diffcore import ParamStore
from cgmcl.errors import DataError
from cgmcl.losses import LossReport
from cgmcl.trainkit.metrics import METRIC_NAMES, MetricsReport

MAGIC = b"CGMCLPAR"
VERSION = 1
LOSS_COLUMNS = ("l_image", "l_clinical", "l_pos", "l_neg", "l_contrastive", "l_diag", "l_total")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_params(store: ParamStore, path: str | Path) -> None:
    names = store.names()
    parts = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        raw = name.encode("utf-8")
        shape = store.value(name).shape
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
    for name in names:
        parts.append(np.ascontiguousarray(store.value(name), dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_params(path: str | Path) -> ParamStore:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    pos = 16
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        table.append((name, shape))
    store = ParamStore()
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        store.add(name, arr.astype(np.float64))
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes")
    return store


def write_losses(path: str | Path, reports: Sequence[LossReport], kl: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("epoch", *LOSS_COLUMNS, "kl_alignment")) + "\n")
        for epoch, (rep, k) in enumerate(zip(reports, kl), start=1):
            vals = [getattr(rep, c) for c in LOSS_COLUMNS] + [k]
            fh.write(f"{epoch}," + ",".join(_fmt(v) for v in vals) + "\n")


def write_kl(path: str | Path, kl: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,kl_alignment\n")
        for epoch, k in enumerate(kl, start=1):
            fh.write(f"{epoch},{_fmt(k)}\n")


def write_metrics(path: str | Path, reports: Mapping[str, MetricsReport]) -> None:
    """One row per scope (fused, image, clinical, ...), mean and std columns."""
    header = ["scope", "runs"]
    for name in METRIC_NAMES:
        header += [name, f"{name}_std"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for scope, rep in reports.items():
            cells = [scope, str(rep.runs)]
            for name in METRIC_NAMES:
                cells += [_fmt(getattr(rep, name)), _fmt(rep.std.get(name, 0.0))]
            fh.write(",".join(cells) + "\n")


def write_matrix(path: str | Path, row_ids: Sequence[str], columns: Sequence[str], X: np.ndarray,
                 id_column: str = "patient_id") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join([id_column, *columns]) + "\n")
        for rid, row in zip(row_ids, X):
            fh.write(rid + "," + ",".join(_fmt(v) for v in row) + "\n")


def write_table(path: str | Path, rows: Sequence[Mapping[str, object]]) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    columns = list(rows[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in (row[c] for c in columns)) + "\n")
