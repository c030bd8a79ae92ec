"""CSV and text-report writers.

Floats are written with ``repr`` so that re-running a command reproduces the
files byte for byte.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def write_trajectory(path, traj):
    rows = ([t, *m] for t, m in zip(traj.times, traj.measures))
    return write_csv(path, ["time", *traj.labels], rows)


def write_tagged_paths(path, paths):
    rows = []
    for p in paths:
        rows.extend((t, p.particle_index, int(s)) for t, s in zip(p.jump_times, p.states))
    rows.sort(key=lambda r: (r[0], r[1]))
    return write_csv(path, ["time", "particle_index", "state"], rows)


def write_flow(path, flow, labels=None):
    labels = labels or flow.labels or [str(i) for i in range(flow.points.shape[1])]
    rows = ([t, *p] for t, p in zip(flow.times, flow.points))
    return write_csv(path, ["time", *labels], rows)


def write_fixed_points(path, reports, labels):
    rows = [
        [*r.point, r.residual, r.stability, r.max_real_eigenvalue, r.starts_converged]
        for r in reports
    ]
    return write_csv(
        path, [*labels, "residual", "stability", "max_real_eigenvalue", "starts_converged"], rows
    )


def spectrum_block(reports, labels) -> str:
    lines = []
    for k, r in enumerate(reports):
        point = ", ".join(f"{lab}={x:.12g}" for lab, x in zip(labels, r.point))
        lines.append(f"[fixed_point.{k}]")
        lines.append(f"point: {point}")
        lines.append(f"stability: {r.stability}")
        lines.append(f"residual: {r.residual:.3e}")
        eig = ", ".join(f"{z.real:.12g}{z.imag:+.12g}j" for z in r.spectrum)
        lines.append(f"spectrum: {eig}")
        lines.append("")
    return "\n".join(lines)


def write_table(path, table):
    return write_csv(path, [table.index_name, "statistic", "stderr"], table.rows)


def write_text(path, text: str):
    path = Path(path)
    path.write_text(text if text.endswith("\n") else text + "\n")
    return path
