"""Splitting a metric into its symmetrization plus a 1-form, and the verify pipeline.

``L - Lbar = (L - L o a) / 2`` is odd in each fiber. When the dual bodies are
translates of centrally symmetric ones this odd part is linear, i.e. a
1-form ``beta``; we fit it by first-harmonic projection, test ``d beta = 0``,
and integrate it back to a potential.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy as sp
from scipy.interpolate import RegularGridInterpolator

from . import expr as ex
from .flow import (
    DEFAULT_TOL,
    IntegrationError,
    integrate_geodesic,
    reversibility_residual,
    sphere_launches,
    zoll_scan,
)
from .metrics import (
    Atlas,
    Chart,
    ChartPoint,
    DomainError,
    MetricSpec,
    Region,
    SPHERE,
    inversion,
    sample_points,
    symmetrized,
)
from .norms import angle_grid, unit
from .volume import bm_compare

log = logging.getLogger(__name__)


class NotClosedError(ValueError):
    """The 1-form has a curl above the closedness threshold."""

    code = "NOT_CLOSED"


def extract_beta_at(spec: MetricSpec, pt: ChartPoint, N: int = 512):
    """Least-squares 1-form ``b`` with ``F(x,u) - Fbar(x,u) ~ b.u``; returns ``(b, max residual)``."""
    if N < 256:
        raise ValueError("need N >= 256 directions")
    b, res = _extract(spec.chart(pt.chart), pt.arr[None, :], N)
    return b[0], float(res[0])


def _extract(cm, X, N):
    U = unit(angle_grid(N))
    Xe = X[..., None, :]
    g = (cm.F(Xe, U) - cm.F(Xe, -U)) / 2
    b = (2.0 / N) * np.einsum("...k,kj->...j", g, U)
    resid = np.max(np.abs(g - np.einsum("...j,kj->...k", b, U)), axis=-1)
    return b, resid


@dataclass
class OneFormField:
    """Covector components on a regular chart grid, with per-node fit residuals."""

    chart: Chart
    x1: np.ndarray
    x2: np.ndarray
    b: np.ndarray
    linearity_residual: np.ndarray

    @property
    def shape(self):
        return (self.x1.size, self.x2.size)

    def nodes(self) -> np.ndarray:
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    @classmethod
    def from_callable(cls, fn, x1, x2, chart: Chart = Chart.PLANE) -> "OneFormField":
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        b1, b2 = fn(X1, X2)
        b = np.stack([np.broadcast_to(b1, X1.shape), np.broadcast_to(b2, X1.shape)], axis=-1).astype(float)
        return cls(chart, np.asarray(x1, float), np.asarray(x2, float), b, np.zeros(X1.shape))


def extract_beta_field(spec: MetricSpec, chart: Chart, x1, x2, N: int = 512) -> OneFormField:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    X = np.stack([X1, X2], axis=-1)
    cm = spec.chart(chart)
    if cm.has_boundary and np.min(cm.margin(X.reshape(-1, 2))) <= 0:
        raise DomainError("grid leaves the domain")
    rows = [_extract(cm, X[i], N) for i in range(x1.size)]
    b = np.stack([r[0] for r in rows])
    res = np.stack([r[1] for r in rows])
    return OneFormField(chart, x1, x2, b, res)


def _d(f, h, axis, trim):
    """Centered derivative on interior nodes, ``trim`` nodes dropped per side (order ``2 trim``)."""
    f = np.moveaxis(f, axis, 0)
    if trim == 3:
        d = (-f[:-6] + 9 * f[1:-5] - 45 * f[2:-4] + 45 * f[4:-2] - 9 * f[5:-1] + f[6:]) / (60 * h)
    else:
        d = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    return np.moveaxis(d, 0, axis)


def curl_field(beta: OneFormField) -> np.ndarray:
    """``d1 b2 - d2 b1`` on interior nodes: sixth order from 7 points per axis, fourth order on 5 or 6."""
    n1, n2 = beta.shape
    if n1 < 5 or n2 < 5:
        raise ValueError("grid too coarse: need at least 5 points per axis")
    t = 3 if min(n1, n2) >= 7 else 2
    h1 = beta.x1[1] - beta.x1[0]
    h2 = beta.x2[1] - beta.x2[0]
    d1b2 = _d(beta.b[..., 1], h1, 0, t)[:, t:-t]
    d2b1 = _d(beta.b[..., 0], h2, 1, t)[t:-t, :]
    return d1b2 - d2b1


def curl_residual(beta: OneFormField) -> float:
    """``max |d1 b2 - d2 b1|`` over interior nodes."""
    return float(np.max(np.abs(curl_field(beta))))


def _cell_integrals(f, h, order):
    """Integrals of ``f`` over consecutive grid cells along axis 0."""
    if order == 2 or f.shape[0] < 4:
        return h * (f[1:] + f[:-1]) / 2
    out = np.empty((f.shape[0] - 1,) + f.shape[1:])
    out[1:-1] = h / 24 * (-f[:-3] + 13 * f[1:-2] + 13 * f[2:-1] - f[3:])
    out[0] = h / 24 * (9 * f[0] + 19 * f[1] - 5 * f[2] + f[3])
    out[-1] = h / 24 * (9 * f[-1] + 19 * f[-2] - 5 * f[-3] + f[-4])
    return out


def _cumulative(f, h, i0, order):
    cells = _cell_integrals(f, h, order)
    F = np.concatenate([np.zeros((1,) + f.shape[1:]), np.cumsum(cells, axis=0)])
    return F - F[i0]


def loop_residual(beta: OneFormField) -> float:
    """Largest circulation of ``beta`` around a single grid cell (trapezoid edges)."""
    h1 = beta.x1[1] - beta.x1[0]
    h2 = beta.x2[1] - beta.x2[0]
    b1, b2 = beta.b[..., 0], beta.b[..., 1]
    bottom = h1 * (b1[1:, :-1] + b1[:-1, :-1]) / 2
    top = h1 * (b1[1:, 1:] + b1[:-1, 1:]) / 2
    left = h2 * (b2[:-1, 1:] + b2[:-1, :-1]) / 2
    right = h2 * (b2[1:, 1:] + b2[1:, :-1]) / 2
    return float(np.max(np.abs(bottom + right - top - left)))


def reconstruct_potential(beta: OneFormField, basepoint=None, curl_tol: float = 1e-4, order: int = 4):
    """Integrate a closed 1-form along axis-first paths from the basepoint.

    The basepoint snaps to the nearest grid node, where ``f`` is zero.
    ``order=2`` is the plain trapezoid rule; ``order=4`` adds the cubic
    end corrections. Returns ``(f, loop_residual)``.
    """
    curl = curl_residual(beta)
    if curl > curl_tol:
        raise NotClosedError(f"NOT_CLOSED: curl residual {curl:.3g} exceeds {curl_tol:.3g}")
    if basepoint is None:
        x0 = np.zeros(2)
    else:
        x0 = np.asarray(basepoint.x if isinstance(basepoint, ChartPoint) else basepoint, dtype=float)
    i0 = int(np.argmin(np.abs(beta.x1 - x0[0])))
    j0 = int(np.argmin(np.abs(beta.x2 - x0[1])))
    h1 = beta.x1[1] - beta.x1[0]
    h2 = beta.x2[1] - beta.x2[0]
    along_x1 = _cumulative(beta.b[:, j0, 0], h1, i0, order)
    along_x2 = _cumulative(beta.b[..., 1].T, h2, j0, order).T
    f = along_x1[:, None] + along_x2
    return f, loop_residual(beta)


# --- verify pipeline ------------------------------------------------------

@dataclass
class VerifyConfig:
    seed: int = 0
    threads: int = 1
    tol: float = DEFAULT_TOL
    n_geodesics: int = 20
    s_max: float = 8.0
    tol_close: float = 1e-5
    length_tol: float = 1e-4
    n_reversal: int = 6
    reversal_length: float = 3.0
    reversible_tol: float = 1e-4
    N_base: int = 24
    N_fiber: int = 256
    equal_tol: float = 1e-6
    grid: int = 41
    core: float = 1.1
    fiber_N: int = 512
    linearity_tol: float = 1e-6
    curl_tol: float = 1e-4
    overlap_tol: float = 1e-4
    roundtrip_tol: float = 1e-4
    region: Optional[Region] = None

    def update(self, overrides: dict) -> "VerifyConfig":
        for key, val in overrides.items():
            if not hasattr(self, key) or key == "region":
                raise KeyError(f"unknown tolerance key {key!r}")
            setattr(self, key, type(getattr(self, key))(val))
        return self


@dataclass
class Stage:
    name: str
    verdict: str
    values: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "verdict": self.verdict, **self.values}


@dataclass
class TheoremReport:
    spec_label: str
    mode: str
    stages: list
    verdict: str
    potential: dict = field(default_factory=dict, repr=False)
    fields: dict = field(default_factory=dict, repr=False)
    config: dict = field(default_factory=dict, repr=False)

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec_label,
            "mode": self.mode,
            "verdict": self.verdict,
            "stages": [s.to_dict() for s in self.stages],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(jsonable(self.to_dict()), indent=2, sort_keys=True)


def jsonable(obj):
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _stage_zoll(spec, cfg):
    if spec.atlas is not Atlas.SPHERE:
        return Stage("zoll", "SKIPPED", {"reason": "planar chart: no closed-geodesic stage"}), None
    rep = zoll_scan(spec, cfg.n_geodesics, cfg.s_max, cfg.tol, cfg.tol_close, cfg.length_tol, cfg.seed, cfg.threads)
    verdict = {"ZOLL": "PASS", "NOT_ZOLL": "FAIL"}.get(rep.verdict, "INCONCLUSIVE")
    vals = {
        "zoll": rep.verdict,
        "median_length": rep.median_length,
        "length_spread": rep.spread,
        "closed": sum(c.closed for c in rep.closures),
        "n_geodesics": rep.n_geodesics,
        "max_return_gap": max(c.return_gap for c in rep.closures),
        "failures": rep.failures,
        "length_tol": cfg.length_tol,
    }
    return Stage("zoll", verdict, vals), rep


def _reversal_launches(spec, cfg):
    rng = np.random.default_rng(cfg.seed + 1)
    if spec.atlas is Atlas.SPHERE:
        return sphere_launches(cfg.n_reversal, cfg.seed + 1)
    pts = sample_points(spec, cfg.n_reversal, cfg.seed + 1, _planar_region(spec, cfg))
    ang = rng.uniform(0, 2 * np.pi, cfg.n_reversal)
    return [(pt, np.array([np.cos(a), np.sin(a)])) for pt, a in zip(pts, ang)]


def _stage_reversibility(spec, cfg):
    residuals, failures = [], []
    length = cfg.reversal_length if spec.atlas is Atlas.SPHERE else min(cfg.reversal_length, 1.0)
    for k, (pt, v) in enumerate(_reversal_launches(spec, cfg)):
        try:
            trace = integrate_geodesic(spec, pt, v, length, cfg.tol)
            residuals.append(reversibility_residual(spec, trace))
        except (IntegrationError, DomainError, FloatingPointError) as exc:
            failures.append(f"trace {k}: {exc}")
    if failures or not residuals:
        return Stage("reversibility", "INCONCLUSIVE", {"failures": failures, "residuals": residuals})
    worst = max(residuals)
    verdict = "PASS" if worst <= cfg.reversible_tol else "FAIL"
    return Stage("reversibility", verdict, {"max_residual": worst, "residuals": residuals, "tolerance": cfg.reversible_tol})


def _planar_region(spec, cfg) -> Region:
    if cfg.region is not None and not cfg.region.sphere:
        return cfg.region
    dom = spec.planar_domain
    if dom is not None:
        # Square inset of the domain around its basepoint.
        c = np.asarray(dom.basepoint, dtype=float)
        r = 0.5 * float(dom.interior_margin(c))
        return Region(False, (c[0] - r, c[0] + r, c[1] - r, c[1] + r))
    return Region(False, (-1.0, 1.0, -1.0, 1.0))


def _stage_volume(spec, cfg):
    region = SPHERE if spec.atlas is Atlas.SPHERE else _planar_region(spec, cfg)
    try:
        rep = bm_compare(spec, region, cfg.N_base, cfg.N_fiber, equal_tol=cfg.equal_tol)
    except (FloatingPointError, DomainError) as exc:
        return Stage("volume_equality", "INCONCLUSIVE", {"error": str(exc)}), None
    verdict = {"EQUAL": "PASS", "STRICT": "FAIL"}.get(rep.verdict, "INCONCLUSIVE")
    vals = rep.to_dict()
    vals["bm_verdict"] = vals.pop("verdict")
    vals["tolerance"] = cfg.equal_tol
    return Stage("volume_equality", verdict, vals), rep


def default_grids(spec, cfg):
    if spec.atlas is Atlas.SPHERE:
        g = np.linspace(-cfg.core, cfg.core, cfg.grid)
        return {Chart.NORTH: (g, g), Chart.SOUTH: (g, g)}
    x1a, x1b, x2a, x2b = _planar_region(spec, cfg).rect
    return {Chart.PLANE: (np.linspace(x1a, x1b, cfg.grid), np.linspace(x2a, x2b, cfg.grid))}


def _stage_beta(spec, cfg):
    fields = {}
    for chart, (g1, g2) in default_grids(spec, cfg).items():
        fields[chart] = extract_beta_field(spec, chart, g1, g2, cfg.fiber_N)
    worst = max(float(np.max(f.linearity_residual)) for f in fields.values())
    verdict = "PASS" if worst <= cfg.linearity_tol else "FAIL"
    return Stage("one_form", verdict, {"max_linearity_residual": worst, "tolerance": cfg.linearity_tol}), fields


def _potential_truth(spec: MetricSpec, chart: Chart):
    """Known potential of a ``base + df`` spec, expressed in ``chart``."""
    if spec.potential is None:
        return None
    f = ex.parse(spec.potential)
    if chart is Chart.SOUTH:
        r2 = ex.X1**2 + ex.X2**2
        f = sp.factor(sp.cancel(f.xreplace({ex.X1: ex.X1 / r2, ex.X2: ex.X2 / r2})))
    return ex.to_numpy(f)


def _overlap_residual(fields, potentials):
    """Agreement of the two chart potentials on the overlap, up to one constant."""
    fn, fs = potentials[Chart.NORTH], potentials[Chart.SOUTH]
    south = fields[Chart.SOUTH]
    interp = RegularGridInterpolator((south.x1, south.x2), fs, method="cubic")
    X = fields[Chart.NORTH].nodes()
    r = np.linalg.norm(X, axis=-1)
    lim = min(south.x1[-1], south.x2[-1])
    mask = (r > 0) & (r <= SQRT2 * lim)
    Y = np.where(mask[..., None], X, 1.0)
    Y = inversion(Y)
    mask &= (np.abs(Y[..., 0]) <= lim) & (np.abs(Y[..., 1]) <= lim)
    if not np.any(mask):
        return None, None
    diff = fn[mask] - interp(Y[mask])
    offset = float(np.mean(diff))
    return float(np.max(np.abs(diff - offset))), offset


SQRT2 = np.sqrt(2.0)


def _stage_exactness(spec, cfg, fields):
    curls = {c.value: curl_residual(f) for c, f in fields.items()}
    worst_curl = max(curls.values())
    vals = {"curl_residual": worst_curl, "curl_by_chart": curls, "curl_tol": cfg.curl_tol}
    potentials = {}
    try:
        for chart, fld in fields.items():
            potentials[chart], loop = reconstruct_potential(fld, (0.0, 0.0), cfg.curl_tol)
            vals.setdefault("loop_residual", {})[chart.value] = loop
    except NotClosedError as exc:
        vals["error"] = str(exc)
        return Stage("exactness", "FAIL", vals), {}
    ok = True
    if spec.atlas is Atlas.SPHERE:
        resid, offset = _overlap_residual(fields, potentials)
        vals["overlap_residual"] = resid
        vals["overlap_offset"] = offset
        ok = resid is not None and resid <= cfg.overlap_tol
        if spec.antipodal and offset is not None:
            # Antipodal map: north x <-> south -x; f must be even for an RP^2 metric.
            fs_aligned = potentials[Chart.SOUTH][::-1, ::-1] + offset
            vals["antipodal_discrepancy"] = float(np.max(np.abs(potentials[Chart.NORTH] - fs_aligned)))
    errors = {}
    for chart, fld in fields.items():
        truth = _potential_truth(spec, chart)
        if truth is None:
            continue
        X = fld.nodes()
        ft = truth(X[..., 0], X[..., 1])
        i0 = int(np.argmin(np.abs(fld.x1)))
        j0 = int(np.argmin(np.abs(fld.x2)))
        errors[chart.value] = float(np.max(np.abs(potentials[chart] - (ft - ft[i0, j0]))))
    if errors:
        vals["roundtrip_error"] = errors
        vals["roundtrip_tol"] = cfg.roundtrip_tol
        ok = ok and max(errors.values()) <= cfg.roundtrip_tol
    ok = ok and worst_curl <= cfg.curl_tol
    return Stage("exactness", "PASS" if ok else "FAIL", vals), potentials


def _reversible_part(spec: MetricSpec) -> str:
    base = spec.base
    if base is not None and symmetrized(base) is base:
        return base.describe()
    return symmetrized(spec).describe()


def verify_theorem(spec: MetricSpec, config: Optional[VerifyConfig] = None) -> TheoremReport:
    """Run the five stages: Zoll scan, geodesic reversibility, volume equality,
    1-form extraction, closedness and exactness.

    Planar specs skip the Zoll stage and are reported in PARTIAL mode. Every
    stage runs even if an earlier one fails, so the report shows all evidence.
    """
    cfg = config or VerifyConfig()
    stages = []
    zoll_stage, _ = _stage_zoll(spec, cfg)
    stages.append(zoll_stage)
    stages.append(_stage_reversibility(spec, cfg))
    vol_stage, _ = _stage_volume(spec, cfg)
    stages.append(vol_stage)
    beta_stage, fields = _stage_beta(spec, cfg)
    stages.append(beta_stage)
    exact_stage, potentials = _stage_exactness(spec, cfg, fields)
    stages.append(exact_stage)

    run = [s for s in stages if s.verdict != "SKIPPED"]
    if any(s.verdict == "FAIL" for s in run):
        verdict = "FAIL"
    elif all(s.verdict == "PASS" for s in run):
        verdict = "PASS"
    else:
        verdict = "INCONCLUSIVE"
    mode = "FULL" if spec.atlas is Atlas.SPHERE else "PARTIAL"
    pot = {
        c.value: {"x1": fields[c].x1, "x2": fields[c].x2, "f": potentials[c]} for c in potentials
    }
    cfg_dict = {k: v for k, v in vars(cfg).items() if k not in ("region", "threads")}
    if verdict == "PASS":
        cfg_dict["decomposition"] = f"{spec.describe()} = {_reversible_part(spec)} + df"
    return TheoremReport(spec.describe(), mode, stages, verdict, pot, fields, cfg_dict)
