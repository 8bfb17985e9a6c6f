"""Plain-text CSV and JSON writers with byte-stable output.

Every float is written with ``%.17g`` so a read/write cycle reproduces the
file exactly.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .exceptions import DimensionMismatch
from .samples import JointSamples

FLOAT_FORMAT = "%.17g"


def format_row(values) -> str:
    return ",".join(FLOAT_FORMAT % float(v) for v in values)


def write_table(path, header, rows) -> None:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header)) if len(header) else np.zeros((0, 0))
    lines = [",".join(header)] + [format_row(r) for r in rows]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{os.fspath(path)} is empty") from None
        header = [h for h in header if h != ""]
        data = [[float(v) for v in row] for row in reader if row]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return header, arr


def sample_header(n: int, m: int) -> list[str]:
    return [f"x{i}" for i in range(n)] + [f"y{j}" for j in range(m)]


def write_samples(path, samples: JointSamples) -> None:
    write_table(path, sample_header(samples.n, samples.m), np.hstack([samples.xs, samples.ys]))


def read_samples(path) -> JointSamples:
    header, data = read_table(path)
    n = sum(h.startswith("x") for h in header)
    if header != sample_header(n, len(header) - n):
        raise DimensionMismatch(f"unexpected sample header {header}")
    return JointSamples(data[:, :n], data[:, n:])


def write_matrix(path, M, prefix: str = "c") -> None:
    M = np.asarray(M, dtype=float)
    write_table(path, [f"{prefix}{j}" for j in range(M.shape[1])], M)


def read_matrix(path) -> np.ndarray:
    return read_table(path)[1]


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")
