"""AP / AF / FaG from accuracy matrices, plus CSV and text reports.

All values are fractions in [0, 1] internally; ``percent=True`` scales
only when writing.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def average_performance(m) -> float:
    """Mean of the last row: accuracy on every task after training on all."""
    m = np.asarray(m, dtype=float)
    return float(np.mean(m[-1, :m.shape[0]]))


def average_forgetting(m):
    """mean_{t<T}(a[T,t] - a[t,t]); None when there is a single task.

    Negative under forgetting. Use ``forgetting_magnitude`` for the
    lower-is-better positive form.
    """
    m = np.asarray(m, dtype=float)
    T = m.shape[0]
    if T < 2:
        return None
    return float(np.mean([m[T - 1, t] - m[t, t] for t in range(T - 1)]))


def forgetting_magnitude(m):
    af = average_forgetting(m)
    return None if af is None else -af


def forgetting_aware_gap(final_acc_finetune: float, final_acc_cl: float) -> float:
    """Final-task accuracy of finetuning minus that of the continual learner."""
    return float(final_acc_finetune) - float(final_acc_cl)


@dataclass
class MetricReport:
    strategy: str
    seed: int
    matrix: np.ndarray
    ap: float
    af: float | None
    af_magnitude: float | None
    fag: float | None = None
    dataset: str = ""
    final_accuracies: list = field(default_factory=list)

    @classmethod
    def from_matrix(cls, m, strategy: str, seed: int, dataset: str = "", fag=None):
        m = np.asarray(m, dtype=float)
        return cls(strategy, seed, m, average_performance(m), average_forgetting(m),
                   forgetting_magnitude(m), fag, dataset, list(m[-1]))

    @property
    def final_task_accuracy(self) -> float:
        return float(self.matrix[-1, -1])


# ------------------------------------------------------------------ matrices

def write_matrix(m, path) -> None:
    """Rows = after training task i; columns = task j; blank above the diagonal."""
    m = np.asarray(m, dtype=float)
    T = m.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["after_task"] + [f"task_{j}" for j in range(T)])
        for i in range(T):
            w.writerow([i] + [repr(float(m[i, j])) if j <= i else "" for j in range(T)])


def read_matrix(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    T = len(rows) - 1
    m = np.full((T, T), np.nan)
    for i, row in enumerate(rows[1:]):
        for j, cell in enumerate(row[1:T + 1]):
            if cell != "":
                m[i, j] = float(cell)
    return m


def render_heatmap(m) -> str:
    """Plain-text heatmap: one shade character per cell plus the value."""
    m = np.asarray(m, dtype=float)
    shades = " .:-=+*#%@"
    lines = []
    for i in range(m.shape[0]):
        cells = []
        for j in range(m.shape[1]):
            if j > i or np.isnan(m[i, j]):
                cells.append("   .   ")
            else:
                s = shades[min(9, int(m[i, j] * 9.999))]
                cells.append(f"{s}{m[i, j] * 100:5.1f} ")
        lines.append(f"after {i:2d} |" + "".join(cells))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- reports

SUMMARY_COLUMNS = ["strategy", "seed", "AP", "AF", "AF_magnitude", "FaG"]


def _fmt(x, percent: bool) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    x = float(x) * (100 if percent else 1) + 0.0   # + 0.0 folds -0.0 into 0.0
    out = f"{x:.4f}" if percent else f"{x:.6f}"
    return out[1:] if out.startswith("-") and float(out) == 0 else out


def aggregate(values: list):
    """(mean, sample std) over the present values; std is 0 for a single value."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = statistics.fmean(vals)
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return mean, std


def emit_report(runs: list, out_dir, percent: bool = False, heatmap: bool = True,
                include_fag: bool | None = None) -> list:
    """Write summary.csv, one matrix_<strategy>_<seed>.csv per run, heatmaps.

    summary.csv holds one row per run (sorted by strategy, seed), then a
    ``mean`` and a ``std`` row per strategy. The FaG column is dropped when
    no run carries a FaG value (unless ``include_fag`` forces it).
    """
    if not runs:
        raise ValueError("no runs to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = sorted(runs, key=lambda r: (r.strategy, r.seed))
    if include_fag is None:
        include_fag = any(r.fag is not None for r in runs)
    cols = SUMMARY_COLUMNS if include_fag else SUMMARY_COLUMNS[:-1]
    written = []

    summary = out / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in runs:
            row = [r.strategy, r.seed, _fmt(r.ap, percent), _fmt(r.af, percent),
                   _fmt(r.af_magnitude, percent)]
            if include_fag:
                row.append(_fmt(r.fag, percent))
            w.writerow(row)
        for strat in sorted({r.strategy for r in runs}):
            group = [r for r in runs if r.strategy == strat]
            stats = [aggregate([getattr(r, a) for r in group])
                     for a in ("ap", "af", "af_magnitude", "fag")[:len(cols) - 2]]
            w.writerow([strat, "mean"] + [_fmt(s[0], percent) for s in stats])
            w.writerow([strat, "std"] + [_fmt(s[1], percent) for s in stats])
    written.append(summary)

    for r in runs:
        p = out / f"matrix_{r.strategy}_{r.seed}.csv"
        write_matrix(r.matrix, p)
        written.append(p)
        if heatmap:
            h = out / f"heatmap_{r.strategy}_{r.seed}.txt"
            h.write_text(render_heatmap(r.matrix), encoding="utf-8")
            written.append(h)
    return written
