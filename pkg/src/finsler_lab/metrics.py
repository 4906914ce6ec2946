"""Metric catalog and chart machinery.

A :class:`MetricSpec` describes a Finsler metric on the plane, on a convex
domain, or on the two-sphere (two stereographic charts glued by inversion).
Each chart of a spec compiles to a :class:`ChartMetric` that evaluates the
Lagrangian ``F(x, v)``, the Hamiltonian ``H(x, p)`` and their derivatives,
vectorized over leading axes.

Riemannian and Randers metrics (and the round sphere, and any of these plus a
1-form) are handled symbolically: coefficient fields are sympy expressions,
the south-chart fields are exact pullbacks, and ``H`` is the closed-form
gauge of the translated ellipse. Everything else is numeric, with ``H``
computed as a maximum over directions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np
import sympy as sp

from . import expr as ex
from .norms import (
    AsymNorm,
    FourierSupport,
    SupportBody,
    TWO_PI,
    angle_grid,
    check_norm_validity,
    circle_argmax,
    unit,
    unit_perp,
)

SWITCH_RADIUS = 1.5
FUNK_SCAN = 64


class DomainError(ValueError):
    """Evaluation point outside the domain of the metric."""


class ConfigError(ValueError):
    """Inconsistent or invalid metric description."""


class Chart(str, enum.Enum):
    PLANE = "PLANE"
    NORTH = "NORTH"
    SOUTH = "SOUTH"


class Atlas(str, enum.Enum):
    PLANE = "PLANE_CHART"
    SPHERE = "SPHERE_TWO_CHARTS"


class Kind(str, enum.Enum):
    EUCLIDEAN = "EUCLIDEAN"
    MINKOWSKI = "MINKOWSKI"
    RIEMANNIAN = "RIEMANNIAN"
    RANDERS = "RANDERS"
    FUNK = "FUNK"
    HILBERT = "HILBERT"
    SPHERE_ROUND = "SPHERE_ROUND"
    PLUS_ONE_FORM = "PLUS_ONE_FORM"
    SYMMETRIZED = "SYMMETRIZED"


@dataclass(frozen=True)
class ChartPoint:
    chart: Chart
    x: tuple

    @property
    def arr(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)


def plane_point(x1: float, x2: float) -> ChartPoint:
    return ChartPoint(Chart.PLANE, (float(x1), float(x2)))


# --- sphere atlas ---------------------------------------------------------

def other_chart(chart: Chart) -> Chart:
    if chart is Chart.NORTH:
        return Chart.SOUTH
    if chart is Chart.SOUTH:
        return Chart.NORTH
    raise ValueError("plane chart has no partner")


def inversion(x: np.ndarray) -> np.ndarray:
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    return x / r2


def inversion_jacobian(x: np.ndarray) -> np.ndarray:
    """Jacobian of ``x -> x / |x|^2``, shape ``(..., 2, 2)``."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)[..., None, None]
    outer = x[..., :, None] * x[..., None, :]
    return (np.eye(2) * r2 - 2 * outer) / r2**2


def chart_transition(pt: ChartPoint, v=None, p=None):
    """Move a point (and optionally a tangent vector and a covector) to the other sphere chart.

    Returns ``(new_point, v_new, p_new)``; vectors go by the Jacobian,
    covectors by its inverse transpose.
    """
    if pt.chart is Chart.PLANE:
        raise ValueError("plane chart has no transition")
    x = pt.arr
    if np.dot(x, x) == 0.0:
        raise ValueError("chart transition undefined at the chart origin")
    y = inversion(x)
    J = inversion_jacobian(x)
    v_new = None if v is None else J @ np.asarray(v, dtype=float)
    # Inverse of the inversion Jacobian is the Jacobian at the image point.
    p_new = None if p is None else inversion_jacobian(y).T @ np.asarray(p, dtype=float)
    return ChartPoint(other_chart(pt.chart), (float(y[0]), float(y[1]))), v_new, p_new


def to_ambient(chart: Chart, x) -> np.ndarray:
    """Points of the unit sphere in R^3; the north chart's origin is the south pole."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    if chart is Chart.NORTH:
        return np.concatenate([2 * x, r2 - 1], axis=-1) / (1 + r2)
    if chart is Chart.SOUTH:
        return np.concatenate([2 * x, 1 - r2], axis=-1) / (1 + r2)
    return np.concatenate([x, np.zeros_like(r2)], axis=-1)


def from_ambient(X) -> ChartPoint:
    """Chart point for an ambient sphere point, using the chart where it is within radius 1."""
    X = np.asarray(X, dtype=float)
    X = X / np.linalg.norm(X)
    if X[2] <= 0:
        x = X[:2] / (1 - X[2])
        return ChartPoint(Chart.NORTH, (float(x[0]), float(x[1])))
    y = X[:2] / (1 + X[2])
    return ChartPoint(Chart.SOUTH, (float(y[0]), float(y[1])))


# --- convex domains -------------------------------------------------------

@dataclass(frozen=True)
class ConvexDomain:
    """Bounded convex domain given by support-function samples of its boundary."""

    body: SupportBody
    basepoint: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.interior_margin(np.asarray(self.basepoint, dtype=float)) <= 0:
            raise ConfigError("domain basepoint is not interior")

    @classmethod
    def from_expr(cls, text: str, samples: int = 512, basepoint=(0.0, 0.0)) -> "ConvexDomain":
        h = ex.to_numpy(ex.parse(text), (ex.T,))
        return cls(SupportBody(h(angle_grid(samples))), tuple(float(c) for c in basepoint))

    @classmethod
    def disc(cls, radius: float = 1.0, samples: int = 512) -> "ConvexDomain":
        return cls(SupportBody(np.full(samples, float(radius))))

    def support(self, theta):
        return self.body.interp(theta)

    def support_deriv(self, theta):
        return self.body.interp.deriv(theta)

    def interior_margin(self, x) -> np.ndarray:
        """``min over directions of h(t) - x.u(t)``; positive iff ``x`` is interior."""
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0, None], x[..., 1, None]
        val, _ = circle_argmax(lambda t: x1 * np.cos(t) + x2 * np.sin(t) - self.support(t), x.shape[:-1])
        return -val

    def boundary_points(self, n: int) -> np.ndarray:
        return self.body.boundary(angle_grid(n))


@dataclass(frozen=True)
class Region:
    """Integration region: a chart rectangle or the whole sphere."""

    sphere: bool = False
    rect: tuple = (0.0, 1.0, 0.0, 1.0)

    @classmethod
    def square(cls, lo: float = 0.0, hi: float = 1.0) -> "Region":
        return cls(False, (lo, hi, lo, hi))


SPHERE = Region(sphere=True)


# --- chart metrics --------------------------------------------------------

def _bcast(x, v):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(x.shape, v.shape)
    return np.broadcast_to(x, shape), np.broadcast_to(v, shape)


class ChartMetric:
    """Finsler metric in one chart. Subclasses supply ``F`` and its derivatives."""

    chart: Chart = Chart.PLANE
    closed_form_hamiltonian = False
    has_boundary = False

    def F(self, x, v):
        raise NotImplementedError

    def F_dv(self, x, v):
        raise NotImplementedError

    def F_dx(self, x, v):
        raise NotImplementedError

    def margin(self, x):
        """Positive inside the chart domain."""
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], np.inf)

    def _H_sup(self, x, p):
        x, p = _bcast(x, p)
        xe = x[..., None, :]
        p1, p2 = p[..., 0, None], p[..., 1, None]

        def g(theta):
            c, s = np.cos(theta), np.sin(theta)
            return (p1 * c + p2 * s) / self.F(xe, np.stack([c, s], axis=-1))

        return circle_argmax(g, x.shape[:-1])

    def H(self, x, p):
        return self._H_sup(x, p)[0]

    def H_grad(self, x, p):
        """``(H, dH/dx, dH/dp)``; derivatives from the maximizing direction."""
        x, p = _bcast(x, p)
        H, theta = self._H_sup(x, p)
        u = unit(theta)
        Fu = self.F(x, u)[..., None]
        return H, -H[..., None] * self.F_dx(x, u) / Fu, u / Fu

    def norm_at(self, x) -> AsymNorm:
        x = np.asarray(x, dtype=float)
        return AsymNorm(lambda v: self.F(x, v), lambda v: self.F_dv(x, v))

    def hamiltonian_at(self, x) -> AsymNorm:
        x = np.asarray(x, dtype=float)
        return AsymNorm(lambda p: self.H(x, p), lambda p: self.H_grad(x, p)[2])


V1, V2, P1, P2 = sp.symbols("v1 v2 p1 p2", real=True)


class RandersChart(ChartMetric):
    """``F = sqrt(v.a v) + b.v`` with symbolic coefficient fields.

    The dual body is the ellipse ``{q : q.a^-1 q <= 1}`` translated by ``b``,
    so ``H`` is its gauge, in closed form.
    """

    closed_form_hamiltonian = True

    def __init__(self, a: sp.Matrix, b: sp.Matrix, chart: Chart = Chart.PLANE):
        self.chart = chart
        self.a_expr = a
        self.b_expr = b
        X = (ex.X1, ex.X2)
        v = sp.Matrix([V1, V2])
        p = sp.Matrix([P1, P2])
        F = sp.sqrt((v.T * a * v)[0]) + (b.T * v)[0]
        ainv = a.inv()
        pp = (p.T * ainv * p)[0]
        pb = (p.T * ainv * b)[0]
        bb = (b.T * ainv * b)[0]
        H = (sp.sqrt(pb**2 + (1 - bb) * pp) - pb) / (1 - bb)
        xv = X + (V1, V2)
        xp = X + (P1, P2)
        self._F = sp.lambdify(xv, F, "numpy", cse=True)
        self._F_dx = sp.lambdify(xv, [sp.diff(F, s) for s in X], "numpy", cse=True)
        self._F_dv = sp.lambdify(xv, [sp.diff(F, s) for s in (V1, V2)], "numpy", cse=True)
        self._H = sp.lambdify(xp, H, "numpy", cse=True)
        grads = [H] + [sp.diff(H, s) for s in X] + [sp.diff(H, s) for s in (P1, P2)]
        self._H_grad = sp.lambdify(xp, grads, "numpy", cse=True)
        # Scalar fast path for the flow integrator.
        self._H_grad_math = sp.lambdify(xp, grads, "math", cse=True)
        self._bnorm = sp.lambdify(X, sp.sqrt(bb), "numpy", cse=True)
        self._a = sp.lambdify(X, [a[0, 0], a[0, 1], a[1, 1]], "numpy")
        self._b = sp.lambdify(X, [b[0], b[1]], "numpy")

    @staticmethod
    def _scalar(fn, x, v):
        x, v = _bcast(x, v)
        out = fn(x[..., 0], x[..., 1], v[..., 0], v[..., 1])
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]) + 0.0

    @staticmethod
    def _vector(fn, x, v, n=2):
        x, v = _bcast(x, v)
        outs = fn(x[..., 0], x[..., 1], v[..., 0], v[..., 1])
        shape = x.shape[:-1]
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), shape) for o in outs], axis=-1)

    def F(self, x, v):
        return self._scalar(self._F, x, v)

    def F_dx(self, x, v):
        return self._vector(self._F_dx, x, v)

    def F_dv(self, x, v):
        return self._vector(self._F_dv, x, v)

    def H(self, x, p):
        return self._scalar(self._H, x, p)

    def H_grad(self, x, p):
        if np.ndim(x) == 1 and np.ndim(p) == 1:
            g = self._H_grad_math(float(x[0]), float(x[1]), float(p[0]), float(p[1]))
            return np.float64(g[0]), np.array(g[1:3]), np.array(g[3:5])
        g = self._vector(self._H_grad, x, p)
        return g[..., 0], g[..., 1:3], g[..., 3:5]

    def b_norm(self, x):
        """``|b|`` measured in the dual of ``a``; below 1 for a valid metric."""
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self._bnorm(x[..., 0], x[..., 1]), dtype=float), x.shape[:-1]) + 0.0

    def one_form(self, x):
        x = np.asarray(x, dtype=float)
        out = self._b(x[..., 0], x[..., 1])
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), x.shape[:-1]) for o in out], axis=-1)


class MinkowskiChart(ChartMetric):
    """Translation-invariant norm with support function ``h`` on unit directions."""

    def __init__(self, body: SupportBody):
        self.body = body
        self.h = body.interp

    def F(self, x, v):
        x, v = _bcast(x, v)
        r = np.hypot(v[..., 0], v[..., 1])
        return r * self.h(np.arctan2(v[..., 1], v[..., 0]))

    def F_dv(self, x, v):
        x, v = _bcast(x, v)
        t = np.arctan2(v[..., 1], v[..., 0])
        return self.h(t)[..., None] * unit(t) + self.h.deriv(t)[..., None] * unit_perp(t)

    def F_dx(self, x, v):
        x, v = _bcast(x, v)
        return np.zeros(x.shape)


class FunkChart(ChartMetric):
    """Funk metric of a convex domain: the unit ball at ``x`` is ``domain - x``.

    ``H(x, p) = h(p) - p.x`` is closed form; ``F`` is the maximum of
    ``v.u / (h(u) - x.u)`` over unit directions ``u``, i.e. ``1/s`` for the
    exit parameter ``s`` of the ray ``x + s v``.
    """

    closed_form_hamiltonian = True
    has_boundary = True

    def __init__(self, domain: ConvexDomain):
        self.domain = domain

    def margin(self, x):
        return self.domain.interior_margin(x)

    def _sup(self, x, v):
        x, v = _bcast(x, v)
        x1, x2 = x[..., 0, None], x[..., 1, None]
        v1, v2 = v[..., 0, None], v[..., 1, None]
        h = self.domain.support

        def g(theta):
            c, s = np.cos(theta), np.sin(theta)
            return (v1 * c + v2 * s) / (h(theta) - x1 * c - x2 * s)

        # The ratio has a single local maximum on the circle, so a coarse scan
        # only has to land Newton in the right basin.
        val, theta = circle_argmax(g, x.shape[:-1], n_grid=FUNK_SCAN)
        return x, val, theta

    def F(self, x, v):
        return self._sup(x, v)[1]

    def _F_with_grads(self, x, v):
        x, val, theta = self._sup(x, v)
        u = unit(theta)
        denom = (self.domain.support(theta) - np.sum(x * u, axis=-1))[..., None]
        return val, val[..., None] * u / denom, u / denom

    def F_dx(self, x, v):
        return self._F_with_grads(x, v)[1]

    def F_dv(self, x, v):
        return self._F_with_grads(x, v)[2]

    def H(self, x, p):
        x, p = _bcast(x, p)
        r = np.hypot(p[..., 0], p[..., 1])
        t = np.arctan2(p[..., 1], p[..., 0])
        return r * self.domain.support(t) - np.sum(p * x, axis=-1)

    def H_grad(self, x, p):
        x, p = _bcast(x, p)
        t = np.arctan2(p[..., 1], p[..., 0])
        boundary = self.domain.support(t)[..., None] * unit(t) + self.domain.support_deriv(t)[..., None] * unit_perp(t)
        return self.H(x, p), -p.copy(), boundary - x


class HilbertChart(ChartMetric):
    """Symmetrized Funk metric."""

    has_boundary = True

    def __init__(self, domain: ConvexDomain):
        self.domain = domain
        self.funk = FunkChart(domain)

    def margin(self, x):
        return self.domain.interior_margin(x)

    def F(self, x, v):
        x, v = _bcast(x, v)
        return (self.funk.F(x, v) + self.funk.F(x, -v)) / 2

    def F_dx(self, x, v):
        x, v = _bcast(x, v)
        return (self.funk.F_dx(x, v) + self.funk.F_dx(x, -v)) / 2

    def F_dv(self, x, v):
        x, v = _bcast(x, v)
        return (self.funk.F_dv(x, v) - self.funk.F_dv(x, -v)) / 2


class OneFormChart(ChartMetric):
    """A numeric chart metric plus a symbolic 1-form field."""

    def __init__(self, base: ChartMetric, beta: sp.Matrix):
        self.base = base
        self.chart = base.chart
        self.has_boundary = base.has_boundary
        X = (ex.X1, ex.X2)
        self._beta = sp.lambdify(X, [beta[0], beta[1]], "numpy")
        self._dbeta = sp.lambdify(X, [[sp.diff(beta[j], X[i]) for j in range(2)] for i in range(2)], "numpy")

    def margin(self, x):
        return self.base.margin(x)

    def one_form(self, x):
        x = np.asarray(x, dtype=float)
        out = self._beta(x[..., 0], x[..., 1])
        return np.stack([np.broadcast_to(np.asarray(o, dtype=float), x.shape[:-1]) for o in out], axis=-1)

    def F(self, x, v):
        x, v = _bcast(x, v)
        return self.base.F(x, v) + np.sum(self.one_form(x) * v, axis=-1)

    def F_dv(self, x, v):
        x, v = _bcast(x, v)
        return self.base.F_dv(x, v) + self.one_form(x)

    def F_dx(self, x, v):
        x, v = _bcast(x, v)
        rows = self._dbeta(x[..., 0], x[..., 1])
        shape = x.shape[:-1]
        D = np.stack(
            [np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in row], axis=-1) for row in rows],
            axis=-2,
        )
        return self.base.F_dx(x, v) + np.einsum("...ij,...j->...i", D, v)


class SymmetrizedChart(ChartMetric):
    """``(F(v) + F(-v)) / 2`` of a numeric chart metric."""

    def __init__(self, base: ChartMetric):
        self.base = base
        self.chart = base.chart
        self.has_boundary = base.has_boundary

    def margin(self, x):
        return self.base.margin(x)

    def F(self, x, v):
        x, v = _bcast(x, v)
        return (self.base.F(x, v) + self.base.F(x, -v)) / 2

    def F_dx(self, x, v):
        x, v = _bcast(x, v)
        return (self.base.F_dx(x, v) + self.base.F_dx(x, -v)) / 2

    def F_dv(self, x, v):
        x, v = _bcast(x, v)
        return (self.base.F_dv(x, v) - self.base.F_dv(x, -v)) / 2


# --- specs ----------------------------------------------------------------

def _field_matrix(a) -> sp.Matrix:
    a11, a12, a22 = (ex.parse(s) for s in a)
    return sp.Matrix([[a11, a12], [a12, a22]])


def _field_vector(b) -> sp.Matrix:
    return sp.Matrix([ex.parse(s) for s in b])


def _pullback_south(a: sp.Matrix, b: sp.Matrix):
    """Express north-chart fields in the south chart ``y = x / |x|^2``."""
    y1, y2 = ex.X1, ex.X2
    r2 = y1**2 + y2**2
    sub = {ex.X1: y1 / r2, ex.X2: y2 / r2}
    J = sp.Matrix([[r2 - 2 * y1**2, -2 * y1 * y2], [-2 * y1 * y2, r2 - 2 * y2**2]]) / r2**2
    a_n = a.xreplace(sub)
    b_n = b.xreplace(sub)
    a_s = (J.T * a_n * J).applyfunc(lambda e: sp.factor(sp.cancel(e)))
    b_s = (J.T * b_n).applyfunc(lambda e: sp.factor(sp.cancel(e)))
    return a_s, b_s


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Description of a Finsler metric.

    Coefficient fields are expression strings in the plane (or north-chart)
    coordinates: ``a = (a11, a12, a22)``, ``b`` and ``beta`` covector
    components. ``potential`` records ``f`` when ``beta = df``.
    """

    kind: Kind
    atlas: Atlas = Atlas.PLANE
    a: Optional[tuple] = None
    b: Optional[tuple] = None
    h: Optional[SupportBody] = None
    domain: Optional[ConvexDomain] = None
    base: Optional["MetricSpec"] = None
    beta: Optional[tuple] = None
    potential: Optional[str] = None
    antipodal: bool = False
    label: str = ""

    def __post_init__(self):
        need = {
            Kind.MINKOWSKI: self.h is not None,
            Kind.RIEMANNIAN: self.a is not None,
            Kind.RANDERS: self.a is not None and self.b is not None,
            Kind.FUNK: self.domain is not None,
            Kind.HILBERT: self.domain is not None,
            Kind.PLUS_ONE_FORM: self.base is not None and self.beta is not None,
            Kind.SYMMETRIZED: self.base is not None,
        }
        if not need.get(self.kind, True):
            raise ConfigError(f"{self.kind.value} spec is missing required fields")
        planar_only = (Kind.EUCLIDEAN, Kind.MINKOWSKI, Kind.FUNK, Kind.HILBERT)
        if self.atlas is Atlas.SPHERE and self.kind in planar_only:
            raise ConfigError(f"{self.kind.value} lives on the plane, not on the sphere")
        if self.kind is Kind.SPHERE_ROUND and self.atlas is not Atlas.SPHERE:
            raise ConfigError("SPHERE_ROUND requires the sphere atlas")
        if self.base is not None and self.base.atlas is not self.atlas:
            raise ConfigError("base metric and derived metric use different atlases")

    @property
    def charts_ids(self) -> tuple:
        return (Chart.NORTH, Chart.SOUTH) if self.atlas is Atlas.SPHERE else (Chart.PLANE,)

    def symbolic_fields(self):
        """``(a, b)`` sympy fields in the plane/north chart, or None for numeric metrics."""
        if self.kind is Kind.EUCLIDEAN:
            return sp.eye(2), sp.zeros(2, 1)
        if self.kind is Kind.SPHERE_ROUND:
            r2 = ex.X1**2 + ex.X2**2
            return 4 / (1 + r2) ** 2 * sp.eye(2), sp.zeros(2, 1)
        if self.kind is Kind.RIEMANNIAN:
            return _field_matrix(self.a), sp.zeros(2, 1)
        if self.kind is Kind.RANDERS:
            return _field_matrix(self.a), _field_vector(self.b)
        if self.kind is Kind.PLUS_ONE_FORM:
            inner = self.base.symbolic_fields()
            if inner is None:
                return None
            return inner[0], inner[1] + _field_vector(self.beta)
        if self.kind is Kind.SYMMETRIZED:
            inner = self.base.symbolic_fields()
            return None if inner is None else (inner[0], sp.zeros(2, 1))
        return None

    @cached_property
    def _charts(self) -> dict:
        fields = self.symbolic_fields()
        if fields is not None:
            a, b = fields
            if self.atlas is Atlas.PLANE:
                return {Chart.PLANE: RandersChart(a, b, Chart.PLANE)}
            a_s, b_s = _pullback_south(a, b)
            return {Chart.NORTH: RandersChart(a, b, Chart.NORTH), Chart.SOUTH: RandersChart(a_s, b_s, Chart.SOUTH)}
        return {Chart.PLANE: self._numeric_chart()}

    def _numeric_chart(self) -> ChartMetric:
        if self.kind is Kind.MINKOWSKI:
            return MinkowskiChart(self.h)
        if self.kind is Kind.FUNK:
            return FunkChart(self.domain)
        if self.kind is Kind.HILBERT:
            return HilbertChart(self.domain)
        if self.kind is Kind.PLUS_ONE_FORM:
            return OneFormChart(self.base.chart(Chart.PLANE), _field_vector(self.beta))
        if self.kind is Kind.SYMMETRIZED:
            base = self.base
            if base.kind is Kind.FUNK:
                return HilbertChart(base.domain)
            return SymmetrizedChart(base.chart(Chart.PLANE))
        raise ConfigError(f"no numeric chart for {self.kind.value}")

    def chart(self, chart: Chart) -> ChartMetric:
        try:
            return self._charts[chart]
        except KeyError:
            raise ConfigError(f"{chart.value} chart is not part of the {self.atlas.value} atlas") from None

    @property
    def is_symbolic(self) -> bool:
        return self.symbolic_fields() is not None

    @property
    def planar_domain(self) -> Optional[ConvexDomain]:
        if self.domain is not None:
            return self.domain
        return None if self.base is None else self.base.planar_domain

    def describe(self) -> str:
        return self.label or self.kind.value


# Catalog constructors.

def euclidean() -> MetricSpec:
    return MetricSpec(Kind.EUCLIDEAN, label="euclidean")


def sphere_round(antipodal: bool = False) -> MetricSpec:
    return MetricSpec(Kind.SPHERE_ROUND, Atlas.SPHERE, antipodal=antipodal, label="round sphere")


def conformal(factor: str) -> tuple:
    return (factor, "0", factor)


def grad(f: str) -> tuple:
    g1, g2 = ex.grad(ex.parse(f))
    return (str(g1), str(g2))


def riemannian(a: tuple, atlas: Atlas = Atlas.PLANE, label: str = "") -> MetricSpec:
    return MetricSpec(Kind.RIEMANNIAN, atlas, a=tuple(a), label=label or "riemannian")


def randers(a: tuple, b: tuple, atlas: Atlas = Atlas.PLANE, label: str = "") -> MetricSpec:
    return MetricSpec(Kind.RANDERS, atlas, a=tuple(a), b=tuple(b), label=label or "randers")


def minkowski(h: str, samples: int = 512) -> MetricSpec:
    body = SupportBody(ex.to_numpy(ex.parse(h), (ex.T,))(angle_grid(samples)))
    return MetricSpec(Kind.MINKOWSKI, h=body, label=f"minkowski({h})")


def funk(domain: ConvexDomain) -> MetricSpec:
    return MetricSpec(Kind.FUNK, domain=domain, label="funk")


def hilbert(domain: ConvexDomain) -> MetricSpec:
    return MetricSpec(Kind.HILBERT, domain=domain, label="hilbert")


def plus_one_form(base: MetricSpec, beta: tuple, potential: Optional[str] = None, label: str = "") -> MetricSpec:
    return MetricSpec(
        Kind.PLUS_ONE_FORM,
        base.atlas,
        base=base,
        beta=tuple(beta),
        potential=potential,
        antipodal=base.antipodal,
        label=label or f"{base.describe()} + 1-form",
    )


def plus_exact_form(base: MetricSpec, f: str) -> MetricSpec:
    return plus_one_form(base, grad(f), potential=f, label=f"{base.describe()} + d({f})")


def symmetrized(spec: MetricSpec) -> MetricSpec:
    """The metric ``(L + L o a) / 2``."""
    if spec.kind is Kind.SYMMETRIZED:
        return spec
    if spec.kind is Kind.FUNK:
        return hilbert(spec.domain)
    if spec.kind in (Kind.EUCLIDEAN, Kind.RIEMANNIAN, Kind.SPHERE_ROUND, Kind.HILBERT):
        return spec
    if spec.kind is Kind.MINKOWSKI:
        return MetricSpec(Kind.SYMMETRIZED, base=spec, label=f"sym({spec.describe()})")
    return MetricSpec(Kind.SYMMETRIZED, spec.atlas, base=spec, antipodal=spec.antipodal, label=f"sym({spec.describe()})")


# --- evaluation -----------------------------------------------------------

def _check_point(spec: MetricSpec, pt: ChartPoint) -> ChartMetric:
    cm = spec.chart(pt.chart)
    if not np.all(np.isfinite(pt.arr)):
        raise DomainError("non-finite chart point")
    if float(cm.margin(pt.arr)) <= 0:
        raise DomainError(f"point {pt.x} is outside the domain of {spec.describe()}")
    return cm


def eval_metric(spec: MetricSpec, pt: ChartPoint, v) -> float:
    """``F(x, v)`` at a chart point."""
    cm = _check_point(spec, pt)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite tangent vector")
    return float(cm.F(pt.arr, v))


def eval_hamiltonian(spec: MetricSpec, pt: ChartPoint, p) -> float:
    cm = _check_point(spec, pt)
    return float(cm.H(pt.arr, np.asarray(p, dtype=float)))


def norm_at(spec: MetricSpec, pt: ChartPoint) -> AsymNorm:
    return _check_point(spec, pt).norm_at(pt.arr)


def funk_eval(domain: ConvexDomain, x, v) -> float:
    """Funk metric: ``1/s`` where ``x + s v`` is the boundary exit of the ray."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("Funk metric needs a nonzero vector")
    if domain.interior_margin(x) <= 0:
        raise DomainError(f"point {tuple(x)} is not interior to the domain")
    return float(FunkChart(domain).F(x, v))


def hilbert_eval(domain: ConvexDomain, x, v) -> float:
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return (funk_eval(domain, x, v) + funk_eval(domain, x, -v)) / 2


# --- validity -------------------------------------------------------------

@dataclass
class SpecValidity:
    valid: bool
    n_points: int
    min_convexity_margin: float
    max_homogeneity_residual: float
    one_form_margin: float
    failures: list = field(default_factory=list)


def sample_points(spec: MetricSpec, n: int, seed: int = 0, region: Optional[Region] = None) -> list:
    """Random chart points in the spec's domain (uniform on the sphere for the sphere atlas)."""
    rng = np.random.default_rng(seed)
    if spec.atlas is Atlas.SPHERE:
        X = rng.normal(size=(n, 3))
        return [from_ambient(row) for row in X]
    dom = spec.planar_domain
    pts = []
    if dom is not None:
        lo = np.min(dom.boundary_points(256), axis=0)
        hi = np.max(dom.boundary_points(256), axis=0)
        scale = float(np.max(hi - lo))
        while len(pts) < n:
            x = rng.uniform(lo, hi)
            if dom.interior_margin(x) > 0.05 * scale:
                pts.append(plane_point(*x))
        return pts
    r = region.rect if region is not None and not region.sphere else (-1.0, 1.0, -1.0, 1.0)
    xs = rng.uniform([r[0], r[2]], [r[1], r[3]], size=(n, 2))
    return [plane_point(*x) for x in xs]


def validate_spec(spec: MetricSpec, n_points: int = 100, seed: int = 0, region: Optional[Region] = None) -> SpecValidity:
    """Run the fiber validity check at random base points."""
    conv, homog, form_margin = np.inf, 0.0, np.inf
    failures = []
    for pt in sample_points(spec, n_points, seed, region):
        cm = spec.chart(pt.chart)
        rep = check_norm_validity(cm.norm_at(pt.arr), 256)
        conv = min(conv, rep.convexity_margin)
        homog = max(homog, rep.homogeneity_residual)
        if isinstance(cm, RandersChart):
            form_margin = min(form_margin, 1.0 - float(cm.b_norm(pt.arr)))
        if not rep.valid:
            failures.append(f"{pt.chart.value} {pt.x}: {rep.reason}")
    if form_margin <= 0:
        failures.append(f"1-form too large: margin {form_margin:.3g}")
    return SpecValidity(not failures, n_points, float(conv), float(homog), float(form_margin), failures)


def antipodal_residual(spec: MetricSpec, n: int = 100, seed: int = 0) -> float:
    """``max |F(x, v) - F(A x, dA v)|`` for the antipodal map ``A`` of the sphere.

    In the two stereographic charts, ``A`` sends north-chart ``x`` to
    south-chart ``-x`` with differential ``-1``.
    """
    if spec.atlas is not Atlas.SPHERE:
        raise ConfigError("antipodal symmetry only makes sense on the sphere")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.5, 1.5, size=(n, 2))
    v = rng.normal(size=(n, 2))
    fn = spec.chart(Chart.NORTH).F(x, v)
    fs = spec.chart(Chart.SOUTH).F(-x, -v)
    return float(np.max(np.abs(fn - fs)))


def with_label(spec: MetricSpec, label: str) -> MetricSpec:
    return replace(spec, label=label)
