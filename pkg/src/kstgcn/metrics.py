"""RMSE, MAE, accuracy, R^2 and explained variance on speed predictions."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

COLUMNS = ("rmse", "mae", "accuracy", "r2", "var")
UNDEFINED = float("nan")   # written as "*" in CSV


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    accuracy: float
    r2: float
    var: float

    def as_row(self) -> list[str]:
        return [_fmt(v) for v in astuple(self)]

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _fmt(v: float) -> str:
    return "*" if math.isnan(v) else repr(float(v))


def evaluate(pred, truth) -> MetricReport:
    """Metrics pooled over all entries.

    accuracy = 1 - ||truth - pred||_F / ||truth||_F. R^2 and explained variance
    are undefined (NaN) when truth is constant.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, truth {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty inputs")
    err = truth - pred
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    tnorm = np.linalg.norm(truth)
    accuracy = 1.0 - float(np.linalg.norm(err)) / tnorm if tnorm > 0 else UNDEFINED
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = var = UNDEFINED
    else:
        r2 = 1.0 - float(np.sum(err ** 2)) / ss_tot
        var = 1.0 - float(np.var(err)) / float(np.var(truth))
    # guard the power-mean inequality against last-bit rounding
    rmse = max(rmse, mae)
    return MetricReport(rmse, mae, accuracy, r2, var)


def evaluate_per_step(pred, truth) -> list[MetricReport]:
    """One report per horizon step; the step axis is last."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    return [evaluate(pred[..., k], truth[..., k]) for k in range(pred.shape[-1])]


def write_report(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerow(report.as_row())


def read_report(path: str | Path) -> MetricReport:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return MetricReport(*[UNDEFINED if x == "*" else float(x) for x in rows[1]])
