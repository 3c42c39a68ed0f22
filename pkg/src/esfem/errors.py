"""Lifted error norms, their time accumulation, and experimental orders of convergence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .exceptions import DomainError, EmptySeries
from .fem import element_geometry, surface_lift
from .mesh import SurfaceMesh
from .quadrature import QuadratureRule, triangle_rule


def inverse_lift_field(u, mesh: SurfaceMesh, surface, t, rule: QuadratureRule | None = None):
    """Values ``u(p(x_q), t)`` at the quadrature points of every element, shape ``(K, Q)``."""
    rule = rule or triangle_rule(6)
    xq = rule.physical_points(mesh.corners)
    return u(surface_lift(surface)(xq, t), t)


def step_errors(
    U: np.ndarray,
    mesh: SurfaceMesh,
    exact: geo.AmbientField,
    surface: geo.LevelSetSurface,
    t: float,
    rule: QuadratureRule | None = None,
    lifted: np.ndarray | None = None,
) -> tuple[float, float]:
    """L2 error and H1-seminorm error of the P1 function ``U`` against ``u^{-l}``.

    The discrete gradient of ``U`` is compared with the tangential gradient
    of ``u`` at the lifted quadrature point.
    """
    rule = rule or triangle_rule(6)
    corners = mesh.corners
    areas, _, grads = element_geometry(corners)
    if lifted is None:
        lifted = surface_lift(surface)(rule.physical_points(corners), t)
    Ue = np.asarray(U, dtype=float)[mesh.triangles]  # (K, 3)
    uh_q = Ue @ rule.points.T  # (K, Q)
    diff = exact.value(lifted, t) - uh_q
    l2 = np.sum(areas[:, None] * rule.weights * diff**2)
    grad_uh = np.einsum("ki,kid->kd", Ue, grads)
    gdiff = geo.tangential_gradient(exact, surface, lifted, t) - grad_uh[:, None, :]
    h1 = np.sum(areas[:, None] * rule.weights * np.sum(gdiff**2, axis=-1))
    return math.sqrt(l2), math.sqrt(h1)


def accumulate_norms(series, tau: float) -> tuple[float, float]:
    """``(max_n e_L2^n, sqrt(sum_n tau e_H1^n^2))`` over ``(e_L2, e_H1)`` pairs.

    The caller selects the range of steps (from n = 2 for BDF2, n = 1 for BDF1).
    """
    series = list(series)
    if not series:
        raise EmptySeries("no step errors to accumulate")
    l2 = max(e[0] for e in series)
    h1 = math.sqrt(tau * sum(e[1] ** 2 for e in series))
    return l2, h1


def eoc(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """``ln(e_fine / e_coarse) / ln(h_fine / h_coarse)``."""
    if min(e_coarse, e_fine, h_coarse, h_fine) <= 0:
        raise DomainError("errors and mesh sizes must be positive")
    if h_fine == h_coarse:
        raise DomainError("mesh sizes must differ")
    return math.log(e_fine / e_coarse) / math.log(h_fine / h_coarse)


@dataclass
class ErrorRow:
    h: float
    linf_l2: float
    l2_h1: float
    eoc_linf_l2: float | None = None
    eoc_l2_h1: float | None = None


@dataclass
class ErrorReport:
    rows: list[ErrorRow] = field(default_factory=list)

    COLUMNS = ("h", "linf_l2", "eoc_linf_l2", "l2_h1", "eoc_l2_h1")

    def add(self, h: float, linf_l2: float, l2_h1: float) -> ErrorRow:
        row = ErrorRow(h, linf_l2, l2_h1)
        if self.rows:
            prev = self.rows[-1]
            row.eoc_linf_l2 = eoc(prev.linf_l2, linf_l2, prev.h, h)
            row.eoc_l2_h1 = eoc(prev.l2_h1, l2_h1, prev.h, h)
        self.rows.append(row)
        return row

    @classmethod
    def from_rows(cls, rows) -> "ErrorReport":
        """Rebuild a report (recomputing EOCs) from ``(h, linf_l2, l2_h1)`` triples."""
        report = cls()
        for h, a, b in sorted(rows, key=lambda r: -r[0]):
            report.add(h, a, b)
        return report

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r.h), _fmt(r.linf_l2), _fmt(r.eoc_linf_l2), _fmt(r.l2_h1), _fmt(r.eoc_l2_h1)])

    @classmethod
    def from_csv(cls, path) -> "ErrorReport":
        report = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                report.rows.append(
                    ErrorRow(
                        float(rec["h"]),
                        float(rec["linf_l2"]),
                        float(rec["l2_h1"]),
                        _parse(rec["eoc_linf_l2"]),
                        _parse(rec["eoc_l2_h1"]),
                    )
                )
        return report

    def format_table(self) -> str:
        out = [f"{'h':>10} {'Linf(L2)':>12} {'EOC':>8} {'L2(H1)':>12} {'EOC':>8}"]
        for r in self.rows:
            e1 = "-" if r.eoc_linf_l2 is None else f"{r.eoc_linf_l2:.5f}"
            e2 = "-" if r.eoc_l2_h1 is None else f"{r.eoc_l2_h1:.5f}"
            out.append(f"{r.h:>10.5f} {r.linf_l2:>12.5e} {e1:>8} {r.l2_h1:>12.5e} {e2:>8}")
        return "\n".join(out)


def _fmt(x):
    return "" if x is None else repr(float(x))


def _parse(s):
    return None if s in ("", None) else float(s)
