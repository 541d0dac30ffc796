"""Significance tests, cross-language summaries and result tables/figures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .numeric_core import UsageError
from .probing import ProbeReport

SD_MODES = ("sample", "population")
# calibrated against the published per-language deltas (see calibrate_sd)
DEFAULT_SD_MODE = "sample"


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: float
    degenerate: bool = False  # zero variance: p set by convention


def _two_sided(t: float, df: float) -> float:
    return float(2.0 * special.stdtr(df, -abs(t)))


def paired_ttest(xs: Sequence[float], ys: Sequence[float]) -> TTest:
    if len(xs) != len(ys):
        raise UsageError(f"paired t-test needs equal lengths, got {len(xs)} and {len(ys)}")
    if len(xs) < 2:
        raise UsageError("paired t-test needs at least two pairs")
    d = np.asarray(xs, dtype=np.float64) - np.asarray(ys, dtype=np.float64)
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return TTest(math.nan, 1.0, n - 1, True)
        return TTest(math.copysign(math.inf, mean), 0.0, n - 1, True)
    t = mean / (sd / math.sqrt(n))
    return TTest(float(t), _two_sided(t, n - 1), float(n - 1))


def unpaired_ttest(xs: Sequence[float], ys: Sequence[float]) -> TTest:
    """Welch's t-test with Welch-Satterthwaite degrees of freedom."""
    if len(xs) < 2 or len(ys) < 2:
        raise UsageError("unpaired t-test needs at least two values per group")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    vx, vy = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    diff = x.mean() - y.mean()
    se2 = vx + vy
    if se2 == 0:
        if diff == 0:
            return TTest(math.nan, 1.0, float(x.size + y.size - 2), True)
        return TTest(math.copysign(math.inf, diff), 0.0, float(x.size + y.size - 2), True)
    t = diff / math.sqrt(se2)
    df = se2**2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    return TTest(float(t), _two_sided(t, df), float(df))


def stars(p: Optional[float]) -> str:
    if p is None or math.isnan(p):
        return ""
    return "**" if p < 0.01 else "*" if p < 0.05 else ""


def summary(values: Sequence[float], sd_mode: str = DEFAULT_SD_MODE) -> tuple[float, Optional[float]]:
    """Mean and standard deviation; sd is None for a single value."""
    if sd_mode not in SD_MODES:
        raise UsageError(f"sd mode must be one of {SD_MODES}")
    if not values:
        raise UsageError("no values to summarise")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return float(arr.mean()), None
    return float(arr.mean()), float(arr.std(ddof=1 if sd_mode == "sample" else 0))


def calibrate_sd(rows: Iterable[tuple[Sequence[float], float]]) -> str:
    """Pick the sd convention whose values lie closest to published ones.

    ``rows`` holds (per-language values, published sd) pairs.
    """
    err = {m: 0.0 for m in SD_MODES}
    for values, published in rows:
        for m in SD_MODES:
            err[m] += abs(summary(values, m)[1] - published)
    return min(SD_MODES, key=lambda m: (err[m], SD_MODES.index(m)))


# -- results matrix ----------------------------------------------------------

Column = tuple[str, str, str, str]  # task, layer, target_kind, classifier


@dataclass
class Cell:
    majority: Optional[float]
    accuracy: Optional[float]

    @property
    def delta(self) -> Optional[float]:
        if self.majority is None or self.accuracy is None:
            return None
        return self.accuracy - self.majority


@dataclass
class ResultsMatrix:
    rows: list[str]
    columns: list[Column]
    cells: dict[tuple[str, Column], Cell] = field(default_factory=dict)
    sd_mode: str = DEFAULT_SD_MODE

    def cell(self, row: str, col: Column) -> Optional[Cell]:
        return self.cells.get((row, col))

    def deltas(self, col: Column) -> list[float]:
        out = []
        for r in self.rows:
            c = self.cell(r, col)
            if c is not None and c.delta is not None:
                out.append(c.delta)
        return out

    def missing(self, requested: Optional[Iterable[Column]] = None) -> list[tuple[str, Column]]:
        cols = list(requested) if requested is not None else self.columns
        return [(r, c) for r in self.rows for c in cols if (cell := self.cell(r, c)) is None or cell.delta is None]

    def significance(self, col: Column) -> Optional[TTest]:
        """Paired test of accuracy against majority over the languages having both."""
        pairs = [(c.accuracy, c.majority) for r in self.rows
                 if (c := self.cell(r, col)) is not None and c.delta is not None]
        if len(pairs) < 2:
            return None
        return paired_ttest([a for a, _ in pairs], [m for _, m in pairs])

    def average(self, col: Column) -> tuple[Optional[float], Optional[float]]:
        vals = self.deltas(col)
        if not vals:
            return None, None
        return summary(vals, self.sd_mode)


def build_results(reports: Mapping[str, ProbeReport], sd_mode: str = DEFAULT_SD_MODE) -> ResultsMatrix:
    rows = list(reports)
    cols = sorted({c.key for rep in reports.values() for c in rep.cells})
    m = ResultsMatrix(rows, cols, sd_mode=sd_mode)
    for lang, rep in reports.items():
        for c in rep.cells:
            m.cells[(lang, c.key)] = Cell(c.majority, c.accuracy)
    return m


def compare_columns(m: ResultsMatrix, a: Column, b: Column, paired: bool = False, value: str = "accuracy") -> TTest:
    """Test whether two result columns differ across languages."""
    xs, ys = [], []
    for r in m.rows:
        ca, cb = m.cell(r, a), m.cell(r, b)
        va = getattr(ca, value) if ca else None
        vb = getattr(cb, value) if cb else None
        if paired:
            if va is not None and vb is not None:
                xs.append(va)
                ys.append(vb)
        else:
            if va is not None:
                xs.append(va)
            if vb is not None:
                ys.append(vb)
    return paired_ttest(xs, ys) if paired else unpaired_ttest(xs, ys)


def _num(x: Optional[float]) -> str:
    return "NA" if x is None else f"{x:.1f}"


def table_rows(m: ResultsMatrix) -> tuple[list[str], list[list[str]]]:
    header = ["row"] + ["/".join(c) for c in m.columns]
    body = []
    for r in m.rows:
        body.append([r] + [_num(c.delta if (c := m.cell(r, col)) else None) for col in m.columns])
    if len(m.rows) >= 1:
        av_row, sd_row = ["av"], ["sd"]
        for col in m.columns:
            av, sd = m.average(col)
            test = m.significance(col)
            av_row.append(_num(av) + (stars(test.p) if test and av is not None else ""))
            sd_row.append(_num(sd))
        body.append(av_row)
        if len(m.rows) >= 2:
            body.append(sd_row)
    return header, body


def render(m: ResultsMatrix, fmt: str = "tsv") -> str:
    header, body = table_rows(m)
    if fmt == "tsv":
        return "\n".join("\t".join(r) for r in [header] + body) + "\n"
    if fmt == "md":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in body]
        return "\n".join(lines) + "\n"
    raise UsageError(f"unknown format {fmt!r}; expected tsv or md")


def plot_results(m: ResultsMatrix, out_dir, prefix: str = "deltas") -> list[Path]:
    """Bar charts of per-language deltas and their averages, one figure per task."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for task in sorted({c[0] for c in m.columns}):
        cols = [c for c in m.columns if c[0] == task]
        labels = ["/".join(c[1:]) for c in cols]
        x = np.arange(len(cols))
        width = 0.8 / max(1, len(m.rows))
        fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(cols) + 2), 4))
        for k, r in enumerate(m.rows):
            vals = [(c.delta if (c := m.cell(r, col)) and c.delta is not None else np.nan) for col in cols]
            ax.bar(x - 0.4 + width * (k + 0.5), vals, width, label=r)
        avs = [m.average(col)[0] for col in cols]
        ax.scatter(x, [np.nan if a is None else a for a in avs], color="black", marker="D", zorder=3, label="av")
        ax.axhline(0, color="grey", linewidth=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("accuracy - majority (points)")
        ax.set_title(task)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{prefix}_{task}.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
