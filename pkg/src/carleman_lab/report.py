"""CSV, JSON and SVG output with byte-stable formatting."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ReportError(RuntimeError):
    pass


def fmt(value) -> str:
    """17 significant digits for floats; ints and strings verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(value)


def write_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> Path:
    if not rows:
        raise ReportError("nothing to report")
    columns = list(columns or rows[0].keys())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in columns])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else fmt(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_svg_plot(path: str | Path, series: dict, title: str = "", xlabel: str = "",
                   ylabel: str = "", loglog: bool = True, hlines: Iterable[float] = ()) -> Path:
    """Line plot of ``{label: (xs, ys)}`` through matplotlib's SVG backend."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "carleman-lab"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", ms=3, lw=1, label=str(label))
    for y in hlines:
        ax.axhline(y, color="grey", lw=0.8, ls="--")
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if 0 < len(series) <= 12:
        ax.legend(fontsize=6)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_report(rows: Sequence[dict], out_dir: str | Path, name: str,
                columns: Sequence[str] | None = None, summary: dict | None = None,
                plot: dict | None = None) -> list[Path]:
    """Write ``name.csv``, optionally ``name.json`` and ``name.svg``.

    ``plot`` holds keyword arguments for :func:`write_svg_plot`.
    """
    if not rows:
        raise ReportError("nothing to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out}: {exc}") from exc
    paths = [write_csv(out / f"{name}.csv", rows, columns)]
    if summary is not None:
        paths.append(write_json(out / f"{name}.json", summary))
    if plot is not None:
        paths.append(write_svg_plot(out / f"{name}.svg", **plot))
    return paths
