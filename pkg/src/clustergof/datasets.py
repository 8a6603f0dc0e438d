"""Reading delimited data files and converting the two public datasets.

Data files are comma-delimited with a header row. Categorical columns hold
codes ``0..c-1``; their category counts live in a sidecar file
``<stem>.categories`` holding one comma-separated line of integers.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DataValidationError

VOTE_CODES = {"y": 0, "n": 1, "?": 2}
GVHD_COLUMNS = ("CD4", "CD8b", "CD3", "CD8")


def read_data(path):
    """Return ``(header, X)`` from a header + comma-delimited numeric file."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataValidationError(f"{path}: line {lineno} has a non-numeric field") from None
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    X = np.array(rows)
    if not np.all(np.isfinite(X)):
        bad = int(np.nonzero(~np.all(np.isfinite(X), axis=1))[0][0])
        raise DataValidationError(f"{path}: line {bad + 2} has a non-finite value")
    return header, X


def write_data(path, header, X, fmt=repr):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.asarray(X):
            w.writerow([fmt(float(v)) if fmt is repr else fmt(v) for v in row])


def sidecar_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_suffix(".categories")


def read_categories(path):
    text = Path(path).read_text().replace("\n", ",")
    try:
        counts = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise DataValidationError(f"{path}: category counts must be integers") from None
    if not counts:
        raise DataValidationError(f"{path}: no category counts")
    return counts


def write_categories(path, counts) -> None:
    Path(path).write_text(",".join(str(int(c)) for c in counts) + "\n")


def convert_voting(src, dst) -> int:
    """UCI ``house-votes-84.data`` to a coded CSV plus categories sidecar.

    Each of the 16 votes becomes a code (y=0, n=1, ?=2); the party column is
    written to ``<dst stem>.labels`` and not used for clustering.
    """
    rows, parties = [], []
    with open(src) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 17:
                raise DataValidationError(f"{src}: line {lineno} has {len(fields)} fields, expected 17")
            try:
                rows.append([VOTE_CODES[v] for v in fields[1:]])
            except KeyError as exc:
                raise DataValidationError(f"{src}: line {lineno} has unknown vote {exc.args[0]!r}") from None
            parties.append(fields[0])
    header = [f"v{j}" for j in range(1, 17)]
    write_data(dst, header, np.array(rows, dtype=int), fmt=str)
    write_categories(sidecar_path(dst), [3] * 16)
    Path(dst).with_suffix(".labels").write_text("\n".join(parties) + "\n")
    return len(rows)


def convert_gvhd(sources, dst) -> int:
    """Stack CSV exports of the two flow-cytometry samples (CD4, CD8b, CD3, CD8)."""
    blocks = []
    for src in sources:
        with open(src, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip().strip('"') for h in next(reader)]
            missing = [c for c in GVHD_COLUMNS if c not in header]
            if missing:
                raise DataValidationError(f"{src}: missing columns {missing}")
            idx = [header.index(c) for c in GVHD_COLUMNS]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append([float(row[i]) for i in idx])
                except (ValueError, IndexError):
                    raise DataValidationError(f"{src}: line {lineno} is malformed") from None
        blocks.append(np.array(rows))
    X = np.vstack(blocks)
    write_data(dst, list(GVHD_COLUMNS), X)
    return X.shape[0]
