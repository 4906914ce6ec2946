"""Geodesic flow, closed-geodesic detection and reversibility tests.

The flow is the Hamiltonian flow of ``K = H^2 / 2`` on the unit co-sphere
bundle ``H = 1``, so the flow parameter is Finsler arclength:

    x' = H dH/dp,    p' = -H dH/dx.

Integration uses the Dormand-Prince 5(4) pair with the momentum pulled back
radially onto ``H = 1`` every few accepted steps, and switches sphere charts
when the point leaves the switch radius.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .metrics import (
    SWITCH_RADIUS,
    Atlas,
    Chart,
    ChartPoint,
    DomainError,
    MetricSpec,
    chart_transition,
    from_ambient,
    inversion,
    inversion_jacobian,
    to_ambient,
)

log = logging.getLogger(__name__)

RENORMALIZE_EVERY = 10
DEFAULT_TOL = 1e-10
CLOSE_TOL = 1e-5
LENGTH_TOL = 1e-4
REVERSIBLE_TOL = 1e-4
# Funk geodesics approach the boundary like exp(-s) without reaching it; below
# this interior margin positions stop resolving in double precision.
BOUNDARY_FLOOR = 1e-10

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [0.0],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class IntegrationError(RuntimeError):
    """Step size underflow; carries the last accepted state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class GeodesicTrace:
    s: np.ndarray
    chart: list
    x: np.ndarray
    p: np.ndarray
    v: np.ndarray
    H: np.ndarray
    spec: MetricSpec = field(repr=False)
    tol: float = DEFAULT_TOL
    status: str = "ok"

    def __len__(self):
        return self.s.size

    @property
    def total_length(self) -> float:
        return float(self.s[-1])

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.H - 1.0)))

    def measured_length(self) -> float:
        """Trapezoid integral of ``F(x, v)`` over the samples."""
        vals = np.array([float(self.spec.chart(c).F(x, v)) for c, x, v in zip(self.chart, self.x, self.v)])
        return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(self.s)))

    def points(self) -> np.ndarray:
        """Sample positions: ambient R^3 on the sphere, chart coordinates on the plane."""
        if self.spec.atlas is Atlas.PLANE:
            return self.x.copy()
        return np.array([to_ambient(c, x) for c, x in zip(self.chart, self.x)])

    def dense_points(self, per_step: int = 16) -> np.ndarray:
        """Cubic Hermite interpolation between samples, using ``x' = v``."""
        out = []
        tau = np.linspace(0.0, 1.0, per_step, endpoint=False)[:, None]
        h00 = 2 * tau**3 - 3 * tau**2 + 1
        h10 = tau**3 - 2 * tau**2 + tau
        h01 = -2 * tau**3 + 3 * tau**2
        h11 = tau**3 - tau**2
        for k in range(len(self) - 1):
            c = self.chart[k]
            x0, v0 = self.x[k], self.v[k]
            x1, v1 = self.x[k + 1], self.v[k + 1]
            if self.chart[k + 1] is not c:
                pt, v1, _ = chart_transition(ChartPoint(self.chart[k + 1], tuple(x1)), v1)
                x1 = pt.arr
            ds = self.s[k + 1] - self.s[k]
            seg = h00 * x0 + h10 * ds * v0 + h01 * x1 + h11 * ds * v1
            out.append(seg if self.spec.atlas is Atlas.PLANE else to_ambient(c, seg))
        last = self.x[-1] if self.spec.atlas is Atlas.PLANE else to_ambient(self.chart[-1], self.x[-1])
        out.append(np.atleast_2d(last))
        return np.concatenate(out, axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "chart", "x1", "x2", "p1", "p2", "v1", "v2", "H"])
            for k in range(len(self)):
                row = [self.s[k], self.x[k, 0], self.x[k, 1], self.p[k, 0], self.p[k, 1], self.v[k, 0], self.v[k, 1], self.H[k]]
                w.writerow([f"{row[0]:.17g}", self.chart[k].value] + [f"{r:.17g}" for r in row[1:]])


def _rhs(cm, y):
    H, Hx, Hp = cm.H_grad(y[:2], y[2:])
    H = float(H)
    return np.concatenate([H * Hp, -H * Hx]), H


def _inside(cm, x) -> bool:
    if not (np.isfinite(x[0]) and np.isfinite(x[1])):
        return False
    if not cm.has_boundary:
        return True
    margin = cm.margin(x)
    return bool(np.isinf(margin) or margin > 1e-12)


class _Integrator:
    """Adaptive (or fixed-step) integration of the cogeodesic flow in an atlas."""

    def __init__(self, spec: MetricSpec, tol: float, max_step: float, method: str = "dp45", fixed_step: float = 1e-2):
        if not 1e-12 <= tol <= 1e-4:
            raise ValueError("tol must lie in [1e-12, 1e-4]")
        if method not in ("dp45", "rk4"):
            raise ValueError(f"unknown method {method!r}")
        self.spec = spec
        self.tol = tol
        self.max_step = max_step
        self.method = method
        self.fixed_step = fixed_step
        self.sphere = spec.atlas is Atlas.SPHERE

    def _dp_step(self, cm, y, k1, h):
        ks = np.empty((7, y.size))
        ks[0] = k1
        for i in range(1, 7):
            yi = y + h * (np.asarray(_A[i]) @ ks[:i])
            if not _inside(cm, yi[:2]):
                return None, None, None
            ks[i] = _rhs(cm, yi)[0]
        y5 = y + h * (_B5 @ ks)
        y4 = y + h * (_B4 @ ks)
        scale = self.tol * (1.0 + np.abs(y))
        err = float(np.max(np.abs(y5 - y4) / scale))
        return y5, err, ks[-1]

    def _rk4_step(self, cm, y, k1, h):
        k2 = _rhs(cm, y + h / 2 * k1)[0]
        k3 = _rhs(cm, y + h / 2 * k2)[0]
        k4 = _rhs(cm, y + h * k3)[0]
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def run(self, chart: Chart, x, p, s0: float, s_end: float):
        spec = self.spec
        cm = spec.chart(chart)
        y = np.concatenate([np.asarray(x, dtype=float), np.asarray(p, dtype=float)])
        k1, H = _rhs(cm, y)
        s = s0
        rec = {"s": [s], "chart": [chart], "x": [y[:2].copy()], "p": [y[2:].copy()], "v": [k1[:2].copy()], "H": [H]}
        status = "ok"
        h = min(self.max_step, 1e-2) if self.method == "dp45" else self.fixed_step
        accepted = 0
        while s < s_end - 1e-14 * max(1.0, abs(s_end)):
            h = min(h, s_end - s)
            if self.method == "rk4":
                y_new = self._rk4_step(cm, y, k1, h)
                if not _inside(cm, y_new[:2]):
                    status = "domain_exit"
                    break
                err = 0.0
            else:
                y_new, err, k_last = self._dp_step(cm, y, k1, h)
                if y_new is None or not np.all(np.isfinite(y_new)) or not _inside(cm, y_new[:2]):
                    h *= 0.25
                    if h < 1e-13 * max(1.0, abs(s)):
                        if np.isfinite(cm.margin(y[:2])):
                            status = "domain_exit"
                            break
                        raise IntegrationError("step size underflow", (chart, y.copy(), s))
                    continue
                if err > 1.0:
                    h *= max(0.2, 0.9 * err ** -0.2)
                    if h < 1e-13 * max(1.0, abs(s)):
                        raise IntegrationError("step size underflow", (chart, y.copy(), s))
                    continue
            s += h
            y = y_new
            accepted += 1
            if self.method == "dp45":
                grow = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                h = min(self.max_step, h * grow)
            k1, H = _rhs(cm, y)
            rec["s"].append(s)
            rec["chart"].append(chart)
            rec["x"].append(y[:2].copy())
            rec["p"].append(y[2:].copy())
            rec["v"].append(k1[:2].copy())
            rec["H"].append(H)
            if cm.has_boundary and float(cm.margin(y[:2])) < BOUNDARY_FLOOR:
                status = "boundary_limit"
                break
            changed = False
            if accepted % RENORMALIZE_EVERY == 0:
                y[2:] /= H
                changed = True
            if self.sphere and np.hypot(y[0], y[1]) > SWITCH_RADIUS:
                pt, _, pn = chart_transition(ChartPoint(chart, (y[0], y[1])), None, y[2:])
                chart = pt.chart
                cm = spec.chart(chart)
                y = np.concatenate([pt.arr, pn])
                changed = True
            if changed:
                k1, _ = _rhs(cm, y)
        trace = GeodesicTrace(
            np.array(rec["s"]),
            rec["chart"],
            np.array(rec["x"]),
            np.array(rec["p"]),
            np.array(rec["v"]),
            np.array(rec["H"]),
            spec,
            self.tol,
            status,
        )
        return trace, (chart, y, s)


def initial_covector(spec: MetricSpec, x0: ChartPoint, v0) -> np.ndarray:
    cm = spec.chart(x0.chart)
    v0 = np.asarray(v0, dtype=float)
    F0 = float(cm.F(x0.arr, v0))
    if not F0 > 0:
        raise ValueError("initial vector must have positive length")
    return np.asarray(cm.F_dv(x0.arr, v0 / F0), dtype=float)


def integrate_geodesic(
    spec: MetricSpec,
    x0: ChartPoint,
    v0,
    s_max: float,
    tol: float = DEFAULT_TOL,
    max_step: float = 0.25,
    method: str = "dp45",
    fixed_step: float = 1e-2,
) -> GeodesicTrace:
    """Unit-speed geodesic from ``x0`` in the direction ``v0`` up to arclength ``s_max``."""
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    cm = spec.chart(x0.chart)
    if not _inside(cm, x0.arr):
        raise DomainError(f"initial point {x0.x} outside the domain")
    p0 = initial_covector(spec, x0, v0)
    trace, _ = _Integrator(spec, tol, max_step, method, fixed_step).run(x0.chart, x0.arr, p0, 0.0, s_max)
    return trace


# --- closure --------------------------------------------------------------

@dataclass
class ClosureReport:
    closed: bool
    length: Optional[float]
    return_gap: float


def _in_chart(chart_from: Chart, x, v, chart_to: Chart):
    if chart_from is chart_to:
        return x, v
    if np.dot(x, x) < 1e-16:
        return None, None
    J = inversion_jacobian(x)
    return inversion(x), J @ v


def _phase_distance(x, v, x0, d0) -> float:
    n = np.linalg.norm(v)
    c = np.clip(np.dot(v, d0) / n, -1.0, 1.0)
    return float(np.linalg.norm(x - x0) + np.arccos(c))


def _distances(trace: GeodesicTrace) -> np.ndarray:
    c0, x0, v0 = trace.chart[0], trace.x[0], trace.v[0]
    d0 = v0 / np.linalg.norm(v0)
    out = np.full(len(trace), np.inf)
    for k in range(len(trace)):
        x, v = _in_chart(trace.chart[k], trace.x[k], trace.v[k], c0)
        if x is not None:
            out[k] = _phase_distance(x, v, x0, d0)
    return out


def detect_closure(trace: GeodesicTrace, tol_close: float = CLOSE_TOL, coarse: float = 0.3) -> ClosureReport:
    """First return of the trace to its initial phase point.

    Candidate returns are local minima of the sampled phase distance; each is
    polished by re-integrating from the preceding sample to the parameter
    where the chart displacement is orthogonal to the velocity.
    """
    d = _distances(trace)
    left = np.nonzero(d > coarse)[0]
    if left.size == 0:
        return ClosureReport(False, None, float("inf"))
    start = left[0]
    best_gap = float("inf")
    integ = _Integrator(trace.spec, trace.tol, 0.25)
    c0, x0 = trace.chart[0], trace.x[0]
    d0 = trace.v[0] / np.linalg.norm(trace.v[0])
    for k in range(start + 1, len(trace)):
        if not d[k] < coarse:
            continue
        prev_ok = d[k] <= d[k - 1]
        next_ok = k == len(trace) - 1 or d[k] <= d[k + 1]
        if not (prev_ok and next_ok):
            continue
        gap, s_star = _refine_return(trace, integ, k, c0, x0, d0)
        best_gap = min(best_gap, gap)
        if gap <= tol_close:
            return ClosureReport(True, s_star, gap)
    return ClosureReport(False, None, best_gap)


def _refine_return(trace, integ, k, c0, x0, d0, iters: int = 4):
    j = max(k - 1, 1)
    s_target = trace.s[k]
    x, v = _in_chart(trace.chart[k], trace.x[k], trace.v[k], c0)
    gap = float("inf")
    for _ in range(iters):
        if x is None:
            break
        s_target = s_target + float(np.dot(x0 - x, v) / np.dot(v, v))
        j = int(np.searchsorted(trace.s, s_target) - 1)
        j = min(max(j, 1), len(trace) - 1)
        if s_target <= trace.s[j]:
            x, v = _in_chart(trace.chart[j], trace.x[j], trace.v[j], c0)
            s_target = trace.s[j]
        else:
            seg, (c_end, y_end, _) = integ.run(trace.chart[j], trace.x[j], trace.p[j], trace.s[j], s_target)
            x, v = _in_chart(seg.chart[-1], seg.x[-1], seg.v[-1], c0)
        if x is not None:
            gap = _phase_distance(x, v, x0, d0)
    return gap, float(s_target)


# --- Zoll scan ------------------------------------------------------------

@dataclass
class ZollReport:
    verdict: str
    closures: list
    lengths: list
    spread: Optional[float]
    median_length: Optional[float]
    failures: list
    seed: int
    n_geodesics: int

    @property
    def zoll(self) -> Optional[bool]:
        return {"ZOLL": True, "NOT_ZOLL": False}.get(self.verdict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "n_geodesics": self.n_geodesics,
            "seed": self.seed,
            "median_length": self.median_length,
            "spread": self.spread,
            "geodesics": [
                {"index": i, "closed": c.closed, "length": c.length, "return_gap": c.return_gap}
                for i, c in enumerate(self.closures)
            ],
            "failures": self.failures,
        }


def sphere_launches(n: int, seed: int = 0) -> list:
    """Low-discrepancy initial conditions: uniform points on the sphere and chart directions."""
    u = qmc.Halton(d=3, scramble=True, seed=seed).random(n)
    z = 2 * u[:, 0] - 1
    phi = 2 * np.pi * u[:, 1]
    rho = np.sqrt(1 - z**2)
    out = []
    for k in range(n):
        pt = from_ambient([rho[k] * np.cos(phi[k]), rho[k] * np.sin(phi[k]), z[k]])
        ang = 2 * np.pi * u[k, 2]
        out.append((pt, np.array([np.cos(ang), np.sin(ang)])))
    return out


def _one_launch(args):
    spec, pt, v, s_max, tol, tol_close = args
    try:
        trace = integrate_geodesic(spec, pt, v, s_max, tol)
    except (IntegrationError, DomainError, FloatingPointError) as exc:
        return None, f"{pt.chart.value} {pt.x}: {exc}"
    return detect_closure(trace, tol_close), None


def zoll_scan(
    spec: MetricSpec,
    n_geodesics: int = 50,
    s_max: float = 8.0,
    tol: float = DEFAULT_TOL,
    tol_close: float = CLOSE_TOL,
    length_tol: float = LENGTH_TOL,
    seed: int = 0,
    threads: int = 1,
) -> ZollReport:
    """Launch geodesics from quasi-random phase points and test that all close with a common length."""
    if spec.atlas is not Atlas.SPHERE:
        raise ValueError("Zoll scan needs the sphere atlas")
    jobs = [(spec, pt, v, s_max, tol, tol_close) for pt, v in sphere_launches(n_geodesics, seed)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(_one_launch, jobs))
    else:
        results = [_one_launch(j) for j in jobs]
    closures, failures = [], []
    for i, (rep, err) in enumerate(results):
        if err is not None:
            failures.append(f"geodesic {i}: {err}")
            closures.append(ClosureReport(False, None, float("inf")))
        else:
            closures.append(rep)
    lengths = [c.length for c in closures if c.closed]
    median = float(np.median(lengths)) if lengths else None
    spread = float(np.max(np.abs(np.array(lengths) - median))) if lengths else None
    if failures:
        verdict = "INCONCLUSIVE"
    elif all(c.closed for c in closures) and spread <= length_tol:
        verdict = "ZOLL"
    else:
        verdict = "NOT_ZOLL"
    return ZollReport(verdict, closures, lengths, spread, median, failures, seed, n_geodesics)


# --- reversibility and straightness --------------------------------------

def _segment_distances(points: np.ndarray, poly: np.ndarray, chunk: int = 64) -> np.ndarray:
    a = poly[:-1]
    ab = poly[1:] - a
    L2 = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    out = np.empty(len(points))
    for i in range(0, len(points), chunk):
        q = points[i : i + chunk, None, :]
        t = np.clip(np.sum((q - a) * ab, axis=-1) / L2, 0.0, 1.0)
        d = np.linalg.norm(q - (a + t[..., None] * ab), axis=-1)
        out[i : i + chunk] = d.min(axis=1)
    return out


def reverse_launch(trace: GeodesicTrace):
    """Start point and unit direction of the reversed end of ``trace``."""
    c, x, v = trace.chart[-1], trace.x[-1], trace.v[-1]
    cm = trace.spec.chart(c)
    w = -v / float(cm.F(x, -v))
    return ChartPoint(c, (float(x[0]), float(x[1]))), w


def reversed_length(trace: GeodesicTrace) -> float:
    """Length of the trace run backwards: the integral of ``F(x, -x')``."""
    vals = np.array([float(trace.spec.chart(c).F(x, -v)) for c, x, v in zip(trace.chart, trace.x, trace.v)])
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(trace.s)))


def reversibility_residual(spec: MetricSpec, trace: GeodesicTrace, overshoot: float = 0.05) -> float:
    """One-sided Hausdorff distance from the trace's point set to the geodesic launched backwards from its end.

    The backward geodesic is integrated slightly past the reversed length of
    the trace so that it covers the whole point set when the metric is
    geodesically reversible.
    """
    pt, w = reverse_launch(trace)
    length = reversed_length(trace)
    back = integrate_geodesic(spec, pt, w, length * (1 + overshoot) + 1e-3, trace.tol)
    return float(np.max(_segment_distances(trace.points(), back.dense_points())))


def straightness_residual(trace: GeodesicTrace) -> float:
    """Largest distance from a sample to the chord through the trace endpoints."""
    if len(trace) < 3:
        raise ValueError("trace needs at least 3 samples")
    if trace.spec.atlas is not Atlas.PLANE:
        raise ValueError("straightness is measured in a planar chart")
    a, b = trace.x[0], trace.x[-1]
    d = b - a
    n = np.linalg.norm(d)
    if n == 0:
        return float(np.max(np.linalg.norm(trace.x - a, axis=-1)))
    rel = trace.x - a
    return float(np.max(np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / n))


def hausdorff_one_sided(a: GeodesicTrace, b: GeodesicTrace) -> float:
    """Max over samples of ``a`` of the distance to the densified polyline of ``b``."""
    return float(np.max(_segment_distances(a.points(), b.dense_points())))
