"""Plot output: delimited tables, VTK-legacy text grids, and optional PNG figures."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows, columns=None, summary=None):
    """Rows of dicts to CSV; ``summary`` lines are appended as '# key=value' comments."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
        for line in ([summary] if isinstance(summary, dict) else summary or []):
            fh.write("# " + ",".join(f"{k}={_fmt(v)}" for k, v in line.items()) + "\n")
    return Path(path)


def read_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_vtk_cells(path, grid, arrays: dict, title="pgl3 field"):
    """Cell-centered scalars as an ASCII STRUCTURED_POINTS dataset (point data at centers)."""
    n = grid.n
    origin = [grid.box_min[k] + 0.5 * grid.h[k] for k in range(3)]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title[:255] + "\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {n[0]} {n[1]} {n[2]}\n")
        fh.write("ORIGIN " + " ".join(repr(float(o)) for o in origin) + "\n")
        fh.write("SPACING " + " ".join(repr(float(h)) for h in grid.h) + "\n")
        fh.write(f"POINT_DATA {int(np.prod(n))}\n")
        for name, vals in arrays.items():
            vals = np.asarray(vals, float).reshape(n)
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            # VTK orders x fastest
            flat = vals.transpose(2, 1, 0).ravel()
            for i in range(0, flat.size, 6):
                fh.write(" ".join(repr(float(x)) for x in flat[i:i + 6]) + "\n")
    return Path(path)


def write_vtk_current(path, current, title="pgl3 current"):
    seg = current.segments
    m = len(seg)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n" + title + "\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {2 * m} double\n")
        for s in seg:
            fh.write(" ".join(repr(float(x)) for x in s[:3]) + "\n")
            fh.write(" ".join(repr(float(x)) for x in s[3:]) + "\n")
        fh.write(f"LINES {m} {3 * m}\n")
        for i in range(m):
            fh.write(f"2 {2 * i} {2 * i + 1}\n")
        fh.write(f"CELL_DATA {m}\nSCALARS multiplicity int 1\nLOOKUP_TABLE default\n")
        for v in current.mult:
            fh.write(f"{int(v)}\n")
    return Path(path)


def current_rows(current):
    return [{"x0": s[0], "y0": s[1], "z0": s[2], "x1": s[3], "y1": s[4], "z1": s[5], "mult": int(m)}
            for s, m in zip(current.segments, current.mult)]


# ------------------------------------------------------------------ figures


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def slice_figure(path, grid, values, title="", axis=2, cmap="viridis"):
    """Mid-plane slice of a cell field."""
    plt = _pyplot()
    vals = np.asarray(values, float).reshape(grid.n)
    k = grid.n[axis] // 2
    sl = np.take(vals, k, axis=axis)
    others = [a for a in range(3) if a != axis]
    ext = [grid.box_min[others[0]], grid.box_max[others[0]],
           grid.box_min[others[1]], grid.box_max[others[1]]]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(sl.T, origin="lower", extent=ext, cmap=cmap)
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("xyz"[others[0]])
    ax.set_ylabel("xyz"[others[1]])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def current_figure(path, current, omega=None, title=""):
    plt = _pyplot()
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="3d")
    for s, m in zip(current.segments, current.mult):
        ax.plot([s[0], s[3]], [s[1], s[4]], [s[2], s[5]], color="C0" if m > 0 else "C3",
                lw=1 + 0.5 * (abs(m) - 1))
    if omega is not None and hasattr(omega, "radius"):
        t = np.linspace(0, 2 * np.pi, 60)
        c, r = np.asarray(omega.center), omega.radius
        for plane in range(3):
            pts = np.zeros((60, 3))
            a, b = [i for i in range(3) if i != plane]
            pts[:, a], pts[:, b] = r * np.cos(t), r * np.sin(t)
            pts += c
            ax.plot(*pts.T, color="0.7", lw=0.5)
    ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def series_figure(path, x, ys: dict, xlabel="", ylabel="", title="", vlines=()):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in ys.items():
        ax.plot(x, y, marker="o", ms=3, label=label)
    for v in vlines:
        ax.axvline(v, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
