"""CSV tables and SVG line plots written next to each other per experiment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from fedsim.io import fmt  # noqa: E402

# fixed ids and no timestamp so identical input gives identical bytes
_RC = {
    "svg.hashsalt": "fedsim",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


@dataclass
class Table:
    """Named columns of equal length; the first column is the x axis."""

    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def append(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, table has {len(self.columns)} columns")
        self.rows.append(list(values))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, int, str)):
        return str(int(v)) if isinstance(v, bool) else str(v)
    return fmt(v)


def emit_csv(table: Table, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_cell(v) for v in row])
    return path


def load_csv(path) -> Table:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[float(v) if v != "" else None for v in row] for row in reader]
    return Table(columns, rows)


@dataclass
class PlotOptions:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False
    logx: bool = False
    markers: bool = True
    width: float = 5.0
    height: float = 3.4


def emit_svg_lineplot(table: Table, path, options: PlotOptions | None = None,
                      series: list[str] | None = None) -> Path:
    """Plot every column (or ``series``) against the first column."""
    options = options or PlotOptions()
    names = series or table.columns[1:]
    if not names:
        raise ValueError("need at least one series")
    path = Path(path)
    x = table.column(table.columns[0])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(options.width, options.height))
        for name in names:
            pts = [(a, b) for a, b in zip(x, table.column(name)) if b is not None]
            if options.logy:
                pts = [(a, b) for a, b in pts if b > 0]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=name, gid=f"series-{name}",
                    marker="o" if options.markers or len(pts) == 1 else None)
        if options.logy:
            ax.set_yscale("log")
        if options.logx:
            ax.set_xscale("log")
        ax.set_xlabel(options.xlabel or table.columns[0])
        ax.set_ylabel(options.ylabel)
        if options.title:
            ax.set_title(options.title)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
