"""Curve-family files, path snapshots and run manifests.

A family is stored as a CSV with columns ``filament_index, sigma_index,
x_0 .. x_{d-1}`` and a JSON sidecar (same stem) holding ``weights``,
``closed``, ``d``, ``M`` and ``N``.  Floats are written with 17
significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
from pathlib import Path

import numpy as np

from .currents import CurrentPath
from .geometry import CurveFamily


def _fmt(v):
    return f"{float(v):.17g}"


def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def write_family(csv_path, fam: CurveFamily, extra=None):
    csv_path = Path(csv_path)
    N, M, d = fam.points.shape
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filament_index", "sigma_index"] + [f"x_{i}" for i in range(d)])
        for j in range(N):
            for s in range(M):
                w.writerow([j, s] + [_fmt(v) for v in fam.points[j, s]])
    meta = dict(N=N, M=M, d=d, weights=[float(a) for a in fam.weights],
                closed=[bool(c) for c in fam.closed])
    if extra:
        meta.update(extra)
    with open(sidecar_path(csv_path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_family(csv_path) -> CurveFamily:
    with open(sidecar_path(csv_path)) as fh:
        meta = json.load(fh)
    N, M, d = int(meta["N"]), int(meta["M"]), int(meta["d"])
    rows = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape != (N * M, d + 2):
        raise ValueError(f"{csv_path}: expected {N * M} rows of {d + 2} columns, got {rows.shape}")
    pts = np.empty((N, M, d))
    pts[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2:]
    return CurveFamily(pts, np.asarray(meta["weights"], float), np.asarray(meta["closed"], bool))


def write_snapshots(out_dir, path: CurrentPath, stride=0):
    """Write ``snapshots/step_XXXXXX.csv`` every ``stride`` steps.

    ``stride = 0`` writes only the first and last states.  Returns the
    written step indices.
    """
    snap = Path(out_dir) / "snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    last = len(path) - 1
    steps = list(range(0, last + 1, stride)) if stride > 0 else [0]
    if steps[-1] != last:
        steps.append(last)
    for n in steps:
        write_family(snap / f"step_{n:06d}.csv", path.state(n).family,
                     extra={"step": n, "time": float(path.times[n])})
    return steps


def build_id():
    """``git describe`` of the source tree, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
            capture_output=True, text=True, timeout=10, check=True,
        )
        desc = out.stdout.strip()
        if desc:
            return desc
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__

    return "filaments-" + __version__


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir, subcommand, config, **extra):
    manifest = dict(subcommand=subcommand, config=config, build=build_id(), **extra)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)
