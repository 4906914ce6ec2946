"""Holmes-Thompson volume and the symmetrization comparison.

The Holmes-Thompson volume of a surface is the symplectic area of the unit
co-disc bundle ``{H <= 1}`` divided by ``pi``. In a chart the symplectic
form is ``dx1 dx2 dp1 dp2``, so the integrand is simply the area of the
fiber body ``{p : H_x(p) <= 1}`` with no metric factor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import (
    SPHERE,
    Atlas,
    Chart,
    ChartMetric,
    ChartPoint,
    DomainError,
    MetricSpec,
    Region,
    symmetrized,
)
from .norms import TWO_PI, angle_grid, spectral_derivative, unit

EUCLIDEAN_BALL_2D = np.pi
EQUAL_TOL = 1e-6

# Partition of unity on the sphere: the north chart owns |x| <= 1, hands over
# smoothly until |x| = 1.5, the south chart takes the rest.
_INNER, _OUTER = 1.0, 1.5


def _smooth_step(t):
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


def north_weight(r):
    """Partition weight of the north chart as a function of chart radius."""
    return 1.0 - _smooth_step((np.asarray(r, dtype=float) - _INNER) / (_OUTER - _INNER))


def _radial_areas(cm: ChartMetric, X: np.ndarray, n_fiber: int) -> np.ndarray:
    U = unit(angle_grid(n_fiber))
    H = cm.H(X[:, None, :], U[None, :, :])
    if np.any(~np.isfinite(H)) or np.any(H <= 0):
        raise FloatingPointError("Hamiltonian evaluation failed")
    return 0.5 * np.sum(H**-2.0, axis=-1) * TWO_PI / n_fiber


def _support_areas(cm: ChartMetric, X: np.ndarray, n_fiber: int) -> np.ndarray:
    U = unit(angle_grid(n_fiber))
    h = cm.F(X[:, None, :], U[None, :, :])
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise FloatingPointError("metric evaluation failed")
    dh = np.apply_along_axis(spectral_derivative, -1, h)
    return 0.5 * np.sum(h**2 - dh**2, axis=-1) * TWO_PI / n_fiber


def fiber_areas(cm: ChartMetric, X, n_fiber: int, method: str = "auto") -> np.ndarray:
    """Areas of ``{H_x <= 1}`` at the points ``X`` (shape ``(n, 2)``).

    ``radial`` integrates ``H^-2`` over directions; ``support`` uses the
    support-function formula on samples of ``F``. ``auto`` picks radial when
    ``H`` is closed form and the cheaper support route otherwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if method == "auto":
        method = "radial" if cm.closed_form_hamiltonian else "support"
    if method == "radial":
        return _radial_areas(cm, X, n_fiber)
    if method == "support":
        return _support_areas(cm, X, n_fiber)
    raise ValueError(f"unknown fiber area method {method!r}")


def fiber_dual_area(spec: MetricSpec, pt: ChartPoint, N: int = 512) -> float:
    """Area of the unit co-disc ``{p : H_x(p) <= 1}`` by the radial formula."""
    if N < 256:
        raise ValueError("fiber quadrature needs N >= 256")
    cm = spec.chart(pt.chart)
    if float(cm.margin(pt.arr)) <= 0:
        raise DomainError(f"point {pt.x} outside the domain")
    return float(_radial_areas(cm, pt.arr[None, :], N)[0])


@dataclass
class QuadratureNodes:
    """Base quadrature: per chart, points and weights (partition weights folded in)."""

    charts: list
    points: list
    weights: list


def _gauss(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def base_nodes(spec: MetricSpec, region: Region, n_base: int) -> QuadratureNodes:
    if region.sphere:
        if spec.atlas is not Atlas.SPHERE:
            raise ValueError("sphere region needs the sphere atlas")
        n_ang = 2 * n_base
        ang = angle_grid(n_ang)
        w_ang = TWO_PI / n_ang
        pts, wts = [], []
        for chart, pieces in (
            (Chart.NORTH, [(0.0, _INNER, lambda r: np.ones_like(r)), (_INNER, _OUTER, north_weight)]),
            (Chart.SOUTH, [(0.0, 1 / _OUTER, lambda r: np.ones_like(r)), (1 / _OUTER, 1 / _INNER, lambda r: 1 - north_weight(1 / r))]),
        ):
            rs, ws = [], []
            for a, b, weight in pieces:
                r, w = _gauss(n_base, a, b)
                rs.append(r)
                ws.append(w * r * weight(r))
            r = np.concatenate(rs)
            w = np.concatenate(ws)
            R, A = np.meshgrid(r, ang, indexing="ij")
            W = np.broadcast_to(w[:, None] * w_ang, R.shape)
            pts.append(np.stack([R * np.cos(A), R * np.sin(A)], axis=-1).reshape(-1, 2))
            wts.append(W.reshape(-1))
        return QuadratureNodes([Chart.NORTH, Chart.SOUTH], pts, wts)
    if spec.atlas is not Atlas.PLANE:
        raise ValueError("rectangle regions live in the plane chart")
    x1a, x1b, x2a, x2b = region.rect
    x1, w1 = _gauss(n_base, x1a, x1b)
    x2, w2 = _gauss(n_base, x2a, x2b)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    W = np.outer(w1, w2)
    return QuadratureNodes([Chart.PLANE], [np.stack([X1, X2], axis=-1).reshape(-1, 2)], [W.reshape(-1)])


def _check_region(spec: MetricSpec, region: Region) -> None:
    if region.sphere:
        return
    cm = spec.chart(Chart.PLANE)
    if not cm.has_boundary:
        return
    x1a, x1b, x2a, x2b = region.rect
    t = np.linspace(0.0, 1.0, 65)
    edge = np.concatenate(
        [
            np.stack([x1a + (x1b - x1a) * t, np.full_like(t, x2a)], -1),
            np.stack([x1a + (x1b - x1a) * t, np.full_like(t, x2b)], -1),
            np.stack([np.full_like(t, x1a), x2a + (x2b - x2a) * t], -1),
            np.stack([np.full_like(t, x1b), x2a + (x2b - x2a) * t], -1),
        ]
    )
    if np.min(cm.margin(edge)) <= 0:
        raise DomainError("region touches the domain boundary; inset it")


@dataclass
class VolumeReport:
    ht_volume: float
    error_estimate: float
    fiber_area_field: list
    nodes: QuadratureNodes = field(repr=False)
    quadrature: dict = field(default_factory=dict)
    euclidean_ball_constant: float = EUCLIDEAN_BALL_2D

    def base_integral(self) -> float:
        return float(sum(np.sum(w * a) for w, a in zip(self.nodes.weights, self.fiber_area_field)))

    def per_fiber_stats(self) -> dict:
        allv = np.concatenate(self.fiber_area_field)
        return {"min": float(allv.min()), "max": float(allv.max()), "mean": float(allv.mean()), "count": int(allv.size)}

    def to_dict(self) -> dict:
        return {
            "ht_volume": self.ht_volume,
            "error_estimate": self.error_estimate,
            "euclidean_ball_constant": self.euclidean_ball_constant,
            "quadrature": self.quadrature,
            "per_fiber_stats": self.per_fiber_stats(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _volume_on(spec, nodes, n_fiber, method):
    areas = [fiber_areas(spec.chart(c), X, n_fiber, method) for c, X in zip(nodes.charts, nodes.points)]
    total = sum(np.sum(w * a) for w, a in zip(nodes.weights, areas))
    return float(total / EUCLIDEAN_BALL_2D), areas


def ht_volume(
    spec: MetricSpec,
    region: Region = SPHERE,
    N_base: int = 32,
    N_fiber: int = 256,
    method: str = "auto",
) -> VolumeReport:
    """Holmes-Thompson volume of ``region``; the error estimate compares against half resolution."""
    _check_region(spec, region)
    nodes = base_nodes(spec, region, N_base)
    vol, areas = _volume_on(spec, nodes, N_fiber, method)
    coarse, _ = _volume_on(spec, base_nodes(spec, region, max(N_base // 2, 2)), max(N_fiber // 2, 64), method)
    quad = {
        "base": "gauss-legendre" + (" polar, two-chart partition" if region.sphere else " tensor"),
        "N_base": N_base,
        "N_fiber": N_fiber,
        "fiber_method": method,
        "nodes": int(sum(len(p) for p in nodes.points)),
        "region": "sphere" if region.sphere else list(region.rect),
    }
    return VolumeReport(vol, abs(vol - coarse), areas, nodes, quad)


@dataclass
class BMReport:
    vol_F: float
    vol_symF: float
    relative_gap: float
    error_estimate: float
    verdict: str
    deficit_field: list = field(repr=False, default_factory=list)
    nodes: Optional[QuadratureNodes] = field(repr=False, default=None)

    def to_dict(self) -> dict:
        allv = np.concatenate(self.deficit_field) if self.deficit_field else np.zeros(1)
        return {
            "vol_F": self.vol_F,
            "vol_symF": self.vol_symF,
            "relative_gap": self.relative_gap,
            "error_estimate": self.error_estimate,
            "verdict": self.verdict,
            "deficit": {"min": float(allv.min()), "max": float(allv.max())},
        }


def bm_compare(
    spec: MetricSpec,
    region: Region = SPHERE,
    N_base: int = 32,
    N_fiber: int = 256,
    method: str = "auto",
    equal_tol: float = EQUAL_TOL,
) -> BMReport:
    """Compare the volume of a metric with that of its symmetrization on shared nodes.

    EQUAL when the relative gap is within ``equal_tol``, STRICT when the gap
    exceeds ten times the quadrature error estimate, INCONCLUSIVE otherwise.
    """
    sym = symmetrized(spec)
    rep_F = ht_volume(spec, region, N_base, N_fiber, method)
    rep_S = rep_F if sym is spec else ht_volume(sym, region, N_base, N_fiber, method)
    deficit = [s - f for s, f in zip(rep_S.fiber_area_field, rep_F.fiber_area_field)]
    gap = (rep_S.ht_volume - rep_F.ht_volume) / rep_S.ht_volume
    err = max(rep_F.error_estimate, rep_S.error_estimate)
    if abs(gap) <= equal_tol:
        verdict = "EQUAL"
    elif rep_S.ht_volume - rep_F.ht_volume > 10 * err:
        verdict = "STRICT"
    else:
        verdict = "INCONCLUSIVE"
    return BMReport(rep_F.ht_volume, rep_S.ht_volume, float(gap), float(err), verdict, deficit, rep_F.nodes)
