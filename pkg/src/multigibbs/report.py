"""Matrix and table writers."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def abundance_order(counts) -> np.ndarray:
    """Type indices by ascending count; ties keep input order."""
    return np.argsort(np.asarray(counts), kind="stable")


def write_matrix_csv(mat, path, labels=None) -> None:
    mat = np.asarray(mat)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if labels is not None:
            w.writerow([""] + list(labels))
        for i, row in enumerate(mat):
            cells = [int(v) if np.issubdtype(mat.dtype, np.integer) else repr(float(v)) for v in row]
            w.writerow(([labels[i]] if labels is not None else []) + cells)


def read_matrix_csv(path, labelled: bool = True) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if labelled:
        rows = [r[1:] for r in rows[1:]]
    return np.array([[float(v) for v in r] for r in rows])


def write_pgm(mat, path) -> None:
    """Plain (P2) greyscale image: absent cells black, present cells white."""
    mat = np.asarray(mat) != 0
    ny, nx = mat.shape
    lines = ["P2", f"{nx} {ny}", "255"]
    lines += [" ".join("255" if v else "0" for v in row) for row in mat]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM file")
    nx, ny, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4:4 + nx * ny]])
    if len(vals) != nx * ny:
        raise ValueError(f"{path}: truncated image")
    return (vals.reshape(ny, nx) * 255 // maxval).astype(np.int64)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
