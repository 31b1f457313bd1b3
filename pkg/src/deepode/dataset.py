"""Training-pair container and its on-disk formats.

A dataset holds rows (x [, t], u) for one prediction step dt, where
u = x(t+dt) - x(t). Non-autonomous systems carry the phase time (absolute
time reduced modulo the forcing period) as the trailing input column.

Two interchangeable formats:

* text: line 1 ``#deepode-dataset v1 dim=<d> dt=<dt> autonomous=<0|1>``,
  line 2 a column header, then comma-separated rows at 17 significant digits
  with a trailing provenance label;
* binary: magic ``DPD1``, a uint32 length-prefixed copy of the text header
  line (plus row/column counts), then row-major little-endian float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ModelFormatError

PROV_MANIFOLD = -1
PROV_MC = 0

_MAGIC = b"DPD1"


def provenance_label(code: int) -> str:
    if code == PROV_MANIFOLD:
        return "manifold"
    if code == PROV_MC:
        return "mc"
    return f"evolution_step_{code}"


def provenance_code(label: str) -> int:
    if label == "manifold":
        return PROV_MANIFOLD
    if label == "mc":
        return PROV_MC
    if label.startswith("evolution_step_"):
        return int(label[len("evolution_step_"):])
    raise ModelFormatError(f"unknown provenance label '{label}'")


@dataclass
class Dataset:
    dt: float
    dim: int
    autonomous: bool
    inputs: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=float))
        expected_cols = self.dim + (0 if self.autonomous else 1)
        if self.inputs.shape[1] != expected_cols:
            raise InputError(f"inputs must have {expected_cols} columns, got {self.inputs.shape[1]}")
        if self.labels.shape != (self.inputs.shape[0], self.dim):
            raise InputError("labels must be (n_rows, dim) matching inputs")
        if self.provenance is None:
            self.provenance = np.full(self.inputs.shape[0], PROV_MC, dtype=np.int64)
        else:
            self.provenance = np.asarray(self.provenance, dtype=np.int64)
            if self.provenance.shape != (self.inputs.shape[0],):
                raise InputError("provenance must be one code per row")
        if self.dt <= 0:
            raise InputError("dt must be positive")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def states(self) -> np.ndarray:
        """Input rows without the time column."""
        return self.inputs[:, : self.dim]

    @property
    def times(self) -> np.ndarray | None:
        return None if self.autonomous else self.inputs[:, self.dim]

    def take(self, idx) -> "Dataset":
        return Dataset(self.dt, self.dim, self.autonomous,
                       self.inputs[idx], self.labels[idx], self.provenance[idx])

    def header_line(self) -> str:
        return f"#deepode-dataset v1 dim={self.dim} dt={self.dt:.17g} autonomous={int(self.autonomous)}"

    def column_header(self) -> str:
        cols = [f"x{i}" for i in range(self.dim)]
        if not self.autonomous:
            cols.append("t")
        cols += [f"u{i}" for i in range(self.dim)] + ["provenance"]
        return ",".join(cols)


def concat_datasets(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise InputError("nothing to concatenate")
    first = parts[0]
    for p in parts[1:]:
        if (p.dt, p.dim, p.autonomous) != (first.dt, first.dim, first.autonomous):
            raise InputError("datasets disagree on dt/dim/autonomy")
    return Dataset(
        first.dt, first.dim, first.autonomous,
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.provenance for p in parts]),
    )


def _parse_header(line: str):
    parts = line.strip().split()
    if len(parts) < 5 or parts[0] != "#deepode-dataset" or parts[1] != "v1":
        raise ModelFormatError(f"not a v1 dataset header: {line!r}")
    kv = dict(p.split("=", 1) for p in parts[2:])
    return int(kv["dim"]), float(kv["dt"]), bool(int(kv["autonomous"]))


def save_dataset(ds: Dataset, path, fmt: str = "text") -> None:
    path = Path(path)
    if fmt == "text":
        with open(path, "w") as f:
            f.write(ds.header_line() + "\n")
            f.write(ds.column_header() + "\n")
            for row_in, row_u, prov in zip(ds.inputs, ds.labels, ds.provenance):
                nums = ",".join(f"{v:.17g}" for v in row_in) + "," + ",".join(f"{v:.17g}" for v in row_u)
                f.write(nums + "," + provenance_label(int(prov)) + "\n")
    elif fmt == "binary":
        n, ncols = ds.inputs.shape[0], ds.inputs.shape[1] + ds.dim + 1
        header = f"{ds.header_line()} rows={n} cols={ncols}".encode()
        payload = np.column_stack([ds.inputs, ds.labels, ds.provenance.astype(float)])
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(payload.astype("<f8").tobytes())
    else:
        raise InputError(f"unknown dataset format '{fmt}'")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic == _MAGIC:
            return _load_binary(f)
    return _load_text(path)


def _load_binary(f) -> Dataset:
    raw = f.read(4)
    if len(raw) < 4:
        raise ModelFormatError("truncated binary dataset header")
    (hlen,) = struct.unpack("<I", raw)
    header = f.read(hlen).decode()
    parts = header.split()
    dim, dt, autonomous = _parse_header(" ".join(parts[:5]))
    kv = dict(p.split("=", 1) for p in parts[2:])
    n, ncols = int(kv["rows"]), int(kv["cols"])
    body = f.read(n * ncols * 8)
    if len(body) != n * ncols * 8:
        raise ModelFormatError("truncated binary dataset payload")
    data = np.frombuffer(body, dtype="<f8").reshape(n, ncols)
    in_cols = dim + (0 if autonomous else 1)
    return Dataset(dt, dim, autonomous, data[:, :in_cols].copy(),
                   data[:, in_cols : in_cols + dim].copy(),
                   data[:, -1].astype(np.int64))


def _load_text(path) -> Dataset:
    with open(path) as f:
        header = f.readline()
        dim, dt, autonomous = _parse_header(header)
        f.readline()  # column header
        inputs, labels, prov = [], [], []
        in_cols = dim + (0 if autonomous else 1)
        for lineno, line in enumerate(f, start=3):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != in_cols + dim + 1:
                raise ModelFormatError(f"row {lineno}: expected {in_cols + dim + 1} cells, got {len(cells)}")
            vals = [float(c) for c in cells[:-1]]
            inputs.append(vals[:in_cols])
            labels.append(vals[in_cols:])
            prov.append(provenance_code(cells[-1]))
    if not inputs:
        inputs = np.empty((0, in_cols))
        labels = np.empty((0, dim))
    return Dataset(dt, dim, autonomous, np.asarray(inputs), np.asarray(labels),
                   np.asarray(prov, dtype=np.int64))
