from __future__ import annotations

import csv

import numpy as np
import pytest

from finsler_lab import flow as G
from finsler_lab import metrics as M
from finsler_lab.metrics import Chart, ChartPoint


def fit_circle(P):
    # Algebraic (Kasa) fit: x^2 + y^2 + D x + E y + F = 0.
    A = np.column_stack([P[:, 0], P[:, 1], np.ones(len(P))])
    rhs = -(P[:, 0] ** 2 + P[:, 1] ** 2)
    D, E, F = np.linalg.lstsq(A, rhs, rcond=None)[0]
    c = np.array([-D / 2, -E / 2])
    return c, float(np.sqrt(c @ c - F))


def test_great_circle_closes_at_two_pi():
    spec = M.sphere_round()
    x0 = ChartPoint(Chart.NORTH, (0.3, -0.2))
    tr = G.integrate_geodesic(spec, x0, (0.4, 1.0), 8.0)
    rep = G.detect_closure(tr)
    assert rep.closed
    assert rep.length == pytest.approx(2 * np.pi, abs=1e-8)
    # Oracle: points lie on the plane through 0 spanned by the start point and velocity.
    X = tr.points()
    X0 = M.to_ambient(Chart.NORTH, tr.x[0])
    eps = 1e-6
    V0 = (M.to_ambient(Chart.NORTH, tr.x[0] + eps * tr.v[0]) - M.to_ambient(Chart.NORTH, tr.x[0] - eps * tr.v[0])) / (2 * eps)
    n = np.cross(X0, V0)
    n /= np.linalg.norm(n)
    assert np.max(np.abs(X @ n)) < 1e-8
    assert tr.energy_drift <= 10 * tr.tol
    assert any(c is Chart.SOUTH for c in tr.chart)


def test_euclidean_line_exact():
    tr = G.integrate_geodesic(M.euclidean(), M.plane_point(0.1, 0.2), (3, 4), 2.0)
    expect = np.array([0.1, 0.2]) + tr.s[:, None] * np.array([0.6, 0.8])
    assert np.max(np.abs(tr.x - expect)) < 1e-12
    assert tr.measured_length() == pytest.approx(2.0, rel=1e-12)
    assert not G.detect_closure(tr).closed


def test_rotational_form_geodesics_are_circles(rotational):
    # |v| + beta with d beta = 0.6 dx1^dx2: unit speed curves of curvature 0.6.
    tr = G.integrate_geodesic(rotational, M.plane_point(0.0, 0.0), (1, 0), 1.0)
    _, R = fit_circle(tr.dense_points())
    assert R == pytest.approx(1 / 0.6, rel=1e-6)
    assert G.reversibility_residual(rotational, tr) > 1e-2


def test_exact_form_does_not_change_geodesics():
    a = M.conformal("1+0.3*x1^2")
    R = M.riemannian(a)
    D = M.randers(a, M.grad("0.2*x1*x2"))
    x0 = M.plane_point(0.1, -0.2)
    t1 = G.integrate_geodesic(R, x0, (1, 0.5), 1.5)
    # Lengths differ by f(end) - f(start), so run the second trace a bit longer.
    t2 = G.integrate_geodesic(D, x0, (1, 0.5), 2.0)
    assert G.hausdorff_one_sided(t1, t2) < 1e-5
    assert G.reversibility_residual(D, t2) < 1e-6


def test_funk_and_hilbert_straight(unit_disc, rng):
    for spec in (M.funk(unit_disc), M.hilbert(unit_disc)):
        x = rng.uniform(-0.4, 0.4, 2)
        tr = G.integrate_geodesic(spec, M.plane_point(*x), rng.normal(size=2), 1.0, tol=1e-8)
        assert G.straightness_residual(tr) < 1e-5
        assert tr.energy_drift <= 10 * tr.tol


def test_funk_geodesically_reversible(unit_disc):
    spec = M.funk(unit_disc)
    tr = G.integrate_geodesic(spec, M.plane_point(0.2, 0.1), (1, -0.3), 1.0, tol=1e-9)
    assert G.reversibility_residual(spec, tr) < 1e-4


def test_funk_radial_geodesic_analytic(unit_disc):
    # Along a diameter from the centre F(x, v) = 1/(1 - |x|), so 1 - |x(s)| = exp(-s).
    tr = G.integrate_geodesic(M.funk(unit_disc), M.plane_point(0.0, 0.0), (-1, 0), 10.0, tol=1e-10)
    assert tr.status == "ok"
    assert np.max(np.abs((1 + tr.x[:, 0]) / np.exp(-tr.s) - 1)) < 1e-7


def test_funk_stops_near_boundary(unit_disc):
    tr = G.integrate_geodesic(M.funk(unit_disc), M.plane_point(0.0, 0.0), (-1, 0), 50.0, tol=1e-8)
    assert tr.status == "boundary_limit"
    assert tr.total_length < 50
    assert np.all(np.hypot(tr.x[:, 0], tr.x[:, 1]) < 1)


def test_rk4_agrees_with_adaptive():
    spec = M.sphere_round()
    x0 = ChartPoint(Chart.NORTH, (0.2, 0.1))
    a = G.integrate_geodesic(spec, x0, (1, 0), 3.0)
    b = G.integrate_geodesic(spec, x0, (1, 0), 3.0, method="rk4", fixed_step=1e-3)
    assert np.linalg.norm(a.points()[-1] - b.points()[-1]) < 1e-9


def test_bad_arguments():
    with pytest.raises(ValueError):
        G.integrate_geodesic(M.euclidean(), M.plane_point(0, 0), (1, 0), 1.0, tol=1e-2)
    with pytest.raises(ValueError):
        G.integrate_geodesic(M.euclidean(), M.plane_point(0, 0), (1, 0), -1.0)
    with pytest.raises(M.DomainError):
        G.integrate_geodesic(M.funk(M.ConvexDomain.disc()), M.plane_point(2, 0), (1, 0), 1.0)


def test_zoll_scan_round_and_perturbed():
    rep = G.zoll_scan(M.sphere_round(), n_geodesics=8, seed=3)
    assert rep.verdict == "ZOLL"
    assert rep.median_length == pytest.approx(2 * np.pi, abs=1e-8)
    bumpy = M.riemannian(M.conformal("4*(1+0.3*(2*x1/(1+r2))^2)/(1+r2)^2"), M.Atlas.SPHERE)
    rep = G.zoll_scan(bumpy, n_geodesics=6, seed=3)
    assert rep.verdict == "NOT_ZOLL"


def test_zoll_scan_thread_independent():
    a = G.zoll_scan(M.sphere_round(), n_geodesics=4, seed=1, threads=1).to_dict()
    b = G.zoll_scan(M.sphere_round(), n_geodesics=4, seed=1, threads=3).to_dict()
    assert a == b


def test_trace_csv(tmp_path):
    tr = G.integrate_geodesic(M.euclidean(), M.plane_point(0, 0), (1, 0), 0.5)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["s", "chart", "x1", "x2", "p1", "p2", "v1", "v2", "H"]
    assert len(rows) == len(tr) + 1
    assert float(rows[-1][0]) == pytest.approx(0.5)
