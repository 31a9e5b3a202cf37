"""Output files.

Numbers are written with Python's shortest round-trip ``repr``, fields
separated by ``,`` with ``\\n`` line endings, so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import json
import math
import platform
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .report import _jsonable


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def order_label(k: float) -> str:
    k = float(k)
    return str(int(k)) if k.is_integer() else repr(k)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def moments_header(orders: Sequence[float]) -> list[str]:
    return (["t", "dt", "total_mass"] + [f"int_rho_{order_label(k)}" for k in orders]
            + ["gel_fraction", "tail_fraction", "M1_min", "M1_max", "min_concentration",
               "clamped_mass_cum"])


def write_moments_csv(path, run, orders: Sequence[float] | None = None) -> Path:
    """``moments.csv``: one row per sample time."""
    orders = sorted(run.moments) if orders is None else list(orders)
    s = run.series
    cols = ([run.times, s["dt"], s["total_mass"]] + [run.moment_integral(k) for k in orders]
            + [s[k] for k in ("gel_fraction", "tail_fraction", "M1_min", "M1_max",
                              "min_concentration", "clamped_mass_cum")])
    return write_csv(path, moments_header(orders), zip(*cols))


def profile_name(t: float) -> str:
    return f"profile_{float(t):.6g}.csv"


def write_profile_csv(path, grid, c: np.ndarray) -> Path:
    """All species on all cells: ``i, cell_index, x[, y], value``."""
    n = c.shape[0]
    flat = c.reshape(n, -1)
    idx = np.arange(grid.ncells)
    coords = [x.ravel() for x in grid.mesh()]
    header = ["i", "cell_index", "x"] + (["y"] if grid.dim == 2 else []) + ["value"]

    def rows():
        for i in range(n):
            for k in idx:
                yield (i + 1, int(k), *(float(x[k]) for x in coords), flat[i, k])

    return write_csv(path, header, rows())


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")
    return path


def run_meta(command: str, config: dict | None = None, **extra) -> dict:
    """Metadata recorded next to every output: resolved configuration and tool version."""
    meta = {
        "tool": "coagfrag",
        "version": __version__,
        "command": command,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "units": "dimensionless simulation units",
    }
    if config is not None:
        meta["scenario"] = config
    meta.update(extra)
    return meta


def read_moments_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: data[:, k] for k, h in enumerate(header)}
