"""CSV and key-value files for pipeline intermediates.

Floats are written with ``repr`` so every file round-trips bit-exactly,
which is what makes resumed stages reproduce fresh ones.
"""
from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np

from .autoencoder import PatchMatrix
from .cohort import read_table
from .gpr import InterpolatedSeries


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_kv(path, items):
    """``key = value`` lines in the given order."""
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {fmt(v)}\n")


def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_kv(path):
    with open(path) as fh:
        return parse_kv(fh.read())


def write_interpolated(path, series_set):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["hadm_id", "label", "grid_index", "t_days", "mean", "variance"])
        for s in sorted(series_set, key=lambda s: s.hadm_id):
            for i, (t, m, v) in enumerate(zip(s.grid_times, s.means, s.variances)):
                w.writerow([s.hadm_id, s.label, i, fmt(t), fmt(m), fmt(v)])


def read_interpolated(path) -> list[InterpolatedSeries]:
    rows = defaultdict(list)
    labels = {}
    for r in read_table(path, ("hadm_id", "label", "grid_index", "t_days", "mean", "variance")):
        hadm = int(r["hadm_id"])
        labels[hadm] = int(r["label"])
        rows[hadm].append((int(r["grid_index"]), float(r["t_days"]), float(r["mean"]),
                           float(r["variance"])))
    out = []
    for hadm in sorted(rows):
        pts = np.array(sorted(rows[hadm]))
        out.append(InterpolatedSeries(hadm, labels[hadm], pts[:, 1], pts[:, 2], pts[:, 3]))
    return out


def write_patches(path, pm: PatchMatrix):
    P = pm.patch_len
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["patch_id", "hadm_id", "label", "offset"]
                   + [f"m{i + 1}" for i in range(P)] + [f"v{i + 1}" for i in range(P)])
        for i in range(len(pm)):
            w.writerow([i, pm.hadm_ids[i], pm.labels[i], pm.offsets[i]] + [fmt(x) for x in pm.X[i]])


def read_patches(path) -> PatchMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    P = sum(1 for h in header if h.startswith("m"))
    if not rows:
        return PatchMatrix(np.empty((0, 2 * P)), np.empty(0, np.int64), np.empty(0, np.int64),
                           np.empty(0, np.int64), P)
    ids = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in rows], dtype=np.int64)
    X = np.array([[float(x) for x in r[4:]] for r in rows])
    return PatchMatrix(X, ids[:, 0], ids[:, 1], ids[:, 2], P)


def write_features(path, features, hadm_ids, labels):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["patch_id", "hadm_id", "label"]
                   + [f"f{i + 1}" for i in range(features.shape[1])])
        for i, (row, h, l) in enumerate(zip(features, hadm_ids, labels)):
            w.writerow([i, int(h), int(l)] + [fmt(x) for x in row])


def read_features(path):
    """Returns (features, hadm_ids, labels)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n_feat = len(header) - 3
    if not rows:
        return np.empty((0, n_feat)), np.empty(0, np.int64), np.empty(0, np.int64)
    F = np.array([[float(x) for x in r[3:]] for r in rows])
    ids = np.array([[int(r[1]), int(r[2])] for r in rows], dtype=np.int64)
    return F, ids[:, 0], ids[:, 1]


def write_embedding(path, coords, labels, patch_ids=None):
    if patch_ids is None:
        patch_ids = range(len(coords))
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["patch_id", "label", "x", "y"])
        for i, (x, y), l in zip(patch_ids, coords, labels):
            w.writerow([int(i), int(l), fmt(x), fmt(y)])


def read_embedding(path):
    rows = list(read_table(path, ("patch_id", "label", "x", "y")))
    coords = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    return coords, labels
