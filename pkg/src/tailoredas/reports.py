"""Per-landmark metric tables and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("method", "landmark", "tau", "tpr", "tnr", "rho", "xi", "value", "ess")


def fmt(x) -> str:
    """Stable text form of a number; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(round(x, 12) + 0.0)


@dataclass(frozen=True)
class LandmarkRow:
    landmark: float | str
    tpr: float
    tnr: float
    rho: float = math.nan
    xi: float = math.nan
    value: float = math.nan
    ess: float = math.nan

    @classmethod
    def make(cls, landmark, tpr, tnr, rho=math.nan, xi=math.nan, ess=math.nan) -> "LandmarkRow":
        xi = math.nan if xi is None else float(xi)
        return cls(landmark, float(tpr), float(tnr), float(rho), xi, tpr + xi * tnr, float(ess))

    @classmethod
    def missing(cls, landmark, xi=math.nan) -> "LandmarkRow":
        return cls(landmark, math.nan, math.nan, xi=math.nan if xi is None else float(xi))

    @property
    def ok(self) -> bool:
        return not (math.isnan(self.tpr) or math.isnan(self.tnr))


@dataclass
class EvaluationReport:
    """Metrics of one rule under one evaluator.

    ``rows`` hold one entry per requested landmark; landmarks the evaluator
    could not handle carry NaN metrics and a note in ``skipped``.
    """

    method: str
    tau: float
    rows: list[LandmarkRow]
    skipped: dict[float, str] = field(default_factory=dict)

    @property
    def used(self) -> list[LandmarkRow]:
        return [r for r in self.rows if r.ok]

    def aggregate(self) -> LandmarkRow:
        """Landmark average over usable landmarks (``landmark="all"``)."""
        rows = self.used
        if not rows:
            return LandmarkRow("all", math.nan, math.nan)
        k = len(rows)
        return LandmarkRow(
            "all",
            tpr=sum(r.tpr for r in rows) / k,
            tnr=sum(r.tnr for r in rows) / k,
            value=sum(r.value for r in rows) / k,
            ess=sum(r.ess for r in rows),
        )

    @property
    def tpr(self) -> float:
        return self.aggregate().tpr

    @property
    def tnr(self) -> float:
        return self.aggregate().tnr

    @property
    def value(self) -> float:
        return self.aggregate().value

    def records(self, include_aggregate: bool = True) -> list[dict]:
        rows = self.rows + ([self.aggregate()] if include_aggregate else [])
        return [
            {
                "method": self.method,
                "landmark": r.landmark,
                "tau": self.tau,
                "tpr": r.tpr,
                "tnr": r.tnr,
                "rho": r.rho,
                "xi": r.xi,
                "value": r.value,
                "ess": r.ess,
            }
            for r in rows
        ]

    def to_csv(self, include_aggregate: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in self.records(include_aggregate):
            w.writerow({k: fmt(v) for k, v in rec.items()})
        return buf.getvalue()

    def write_csv(self, path, include_aggregate: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv(include_aggregate))
