"""Pass/fail report rows and their CSV serialization.

A row is a defect measurement: it passes exactly when |value| fits the
declared tolerance band.  Checks that are naturally one-sided clamp the
healthy side to zero before reporting; informational quantities ride along
with an infinite band.  CSV output is comma-separated with a header row,
'.' decimal point and LF line endings, and floats are written with repr
precision so identical runs are identical bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    metric: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.value) <= self.tolerance

    def __post_init__(self):
        if ("," in self.experiment or "," in self.metric
                or "\n" in self.experiment or "\n" in self.metric):
            raise ValueError("experiment and metric must be comma-free")
        if math.isnan(self.tolerance) or self.tolerance < 0:
            raise ValueError("tolerance must be a nonnegative number")


def row(experiment: str, metric: str, value: float,
        tolerance: float) -> ReportRow:
    return ReportRow(experiment, metric, float(value), float(tolerance))


def info(experiment: str, metric: str, value: float) -> ReportRow:
    """Informational quantity; never gates the exit status."""
    return ReportRow(experiment, metric, float(value), math.inf)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def render_rows(rows) -> str:
    lines = ["experiment,metric,value,tolerance,status"]
    for r in rows:
        lines.append(",".join([r.experiment, r.metric, _fmt(r.value),
                               _fmt(r.tolerance),
                               "pass" if r.passed else "FAIL"]))
    return "\n".join(lines) + "\n"


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(render_rows(rows))


def all_pass(rows) -> bool:
    return all(r.passed for r in rows)


def render_table(header, table_rows) -> str:
    """Generic CSV table with the same formatting conventions."""
    lines = [",".join(header)]
    for tr in table_rows:
        cells = []
        for c in tr:
            if isinstance(c, float):
                cells.append(_fmt(c))
            else:
                cells.append(str(c))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_table(path, header, table_rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(render_table(header, table_rows))
