"""Norms, a priori bound monitors, and CSV emission."""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .bounds import BoundReport
from .dynamics import BfedParams, VelocityState, lp_norm_p


def norms(state: VelocityState, p_list: Sequence[float] = ()) -> dict:
    """``l2`` and ``h1_semi`` by Parseval, ``l2_quad`` and ``lp[p]`` by grid quadrature."""
    g, c = state.grid, state.coeffs
    out = {
        "l2": math.sqrt(g.norm_sq(c)),
        "h1_semi": math.sqrt(g.grad_norm_sq(c)),
        "l2_quad": lp_norm_p(g, c, 2.0) ** 0.5,
        "lp": {},
    }
    for p in p_list:
        out["lp"][p] = lp_norm_p(g, c, p) ** (1.0 / p)
    return out


@dataclass
class DiagnosticsRecord:
    t: float
    l2: float
    h1_semi: float
    lp: float
    energy_residual: float = math.nan
    absorbing_ball_margin: float = math.nan
    gradient_margin: float = math.nan
    err_l2: float = math.nan
    err_h1: float = math.nan
    h1_nudged: Optional[float] = None  # gradient norm of a paired nudged state, not in CSV

    @classmethod
    def columns(cls) -> tuple:
        return tuple(f.name for f in fields(cls) if f.name != "h1_nudged")

    def row(self) -> tuple:
        return astuple(self)[:-1]


def _k_at(report: BoundReport, t: float) -> float:
    return report.K1 if t <= 1 else report.K2


def _p_at(report: BoundReport, t: float) -> float:
    return report.P1 if t <= 1 else report.P2


def make_record(state: VelocityState, params: BfedParams, report: Optional[BoundReport] = None,
                energy_residual: float = math.nan,
                paired: Optional[VelocityState] = None) -> DiagnosticsRecord:
    """Build a record; ``paired`` is a nudged state whose error against ``state`` is logged."""
    g, c = state.grid, state.coeffs
    l2_sq = g.norm_sq(c)
    grad = math.sqrt(g.grad_norm_sq(c))
    p = 2 * params.alpha + 2
    rec = DiagnosticsRecord(state.time, math.sqrt(l2_sq), grad, lp_norm_p(g, c, p) ** (1 / p),
                            energy_residual)
    if report is not None:
        rec.absorbing_ball_margin = report.absorbing_rhs(report.inputs["u0_l2"] ** 2,
                                                         state.time) - l2_sq
        rec.gradient_margin = _k_at(report, state.time) ** 2 - grad ** 2
    if paired is not None:
        w = c - paired.coeffs
        rec.err_l2 = math.sqrt(g.norm_sq(w))
        rec.err_h1 = math.sqrt(g.grad_norm_sq(w))
        rec.h1_nudged = math.sqrt(g.grad_norm_sq(paired.coeffs))
    return rec


@dataclass(frozen=True)
class Violation:
    t: float
    kind: str
    value: float
    bound: float


def monitor_bounds(record: DiagnosticsRecord, report: BoundReport) -> list:
    """Sampled-time violations of the absorbing ball, ``||grad u|| <= K`` and ``||grad v|| <= P``.

    The gradient bounds use their short-time form for ``t <= 1``. NaN
    (inapplicable) bounds are skipped.
    """
    out = []
    t = record.t
    ball = report.absorbing_rhs(report.inputs["u0_l2"] ** 2, t)
    if not math.isnan(ball) and record.l2 ** 2 > ball:
        out.append(Violation(t, "absorbing_ball", record.l2 ** 2, ball))
    k = _k_at(report, t)
    if not math.isnan(k) and record.h1_semi > k:
        out.append(Violation(t, "gradient_K", record.h1_semi, k))
    if record.h1_nudged is not None:
        pb = _p_at(report, t)
        if not math.isnan(pb) and record.h1_nudged > pb:
            out.append(Violation(t, "gradient_P", record.h1_nudged, pb))
    return out


def write_diagnostics_csv(path, records: Sequence[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DiagnosticsRecord.columns())
        for r in records:
            w.writerow([repr(float(x)) for x in r.row()])


def read_csv_columns(path) -> dict:
    """Read a numeric CSV written by this package into a dict of arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    data = np.array([[float(x) for x in r] for r in body]).reshape(len(body), len(head))
    return {h: data[:, i] for i, h in enumerate(head)}
