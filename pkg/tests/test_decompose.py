from __future__ import annotations

import json

import numpy as np
import pytest

from finsler_lab import decompose as D
from finsler_lab import metrics as M
from finsler_lab import volume as V
from finsler_lab.metrics import Chart, ChartPoint, Region

GRID = np.linspace(-1, 1, 41)


def fast_config(**kw):
    base = dict(n_geodesics=4, n_reversal=3, N_base=12, grid=31)
    base.update(kw)
    return D.VerifyConfig(**base)


def test_extract_beta_examples(trefoil):
    pt = M.plane_point(0.2, -0.4)
    b, res = D.extract_beta_at(M.randers(M.conformal("1"), ("0.3", "0")), pt)
    assert np.allclose(b, [0.3, 0.0], atol=1e-14) and res <= 1e-12
    b, res = D.extract_beta_at(M.euclidean(), pt)
    assert np.all(b == 0) and res == 0
    # cos 3t is orthogonal to the first harmonics on the grid; its odd part is itself.
    b, res = D.extract_beta_at(trefoil, pt)
    assert np.allclose(b, 0, atol=1e-14)
    assert res == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        D.extract_beta_at(trefoil, pt, N=128)


def test_curl_examples():
    exact = D.OneFormField.from_callable(lambda x, y: (2 * x * y, x**2), GRID, GRID)
    assert D.curl_residual(exact) <= 1e-6
    rot = D.OneFormField.from_callable(lambda x, y: (0 * x, x), GRID, GRID)
    assert D.curl_residual(rot) == pytest.approx(1.0, abs=1e-6)
    coarse = D.OneFormField.from_callable(lambda x, y: (0 * x, x), GRID[:4], GRID)
    with pytest.raises(ValueError):
        D.curl_residual(coarse)


def test_reconstruct_examples():
    exact = D.OneFormField.from_callable(lambda x, y: (2 * x * y, x**2), GRID, GRID)
    f, loop = D.reconstruct_potential(exact, ChartPoint(Chart.PLANE, (0.0, 0.0)))
    X = exact.nodes()
    assert np.max(np.abs(f - X[..., 0] ** 2 * X[..., 1])) <= 1e-6
    assert loop <= 1e-8
    const = D.OneFormField.from_callable(lambda x, y: (0.3 + 0 * x, 0 * x), GRID, GRID)
    f, _ = D.reconstruct_potential(const)
    assert np.allclose(f, 0.3 * X[..., 0], atol=1e-14)
    rot = D.OneFormField.from_callable(lambda x, y: (0 * x, x), GRID, GRID)
    with pytest.raises(D.NotClosedError, match="NOT_CLOSED"):
        D.reconstruct_potential(rot)


def test_basepoint_normalization():
    exact = D.OneFormField.from_callable(lambda x, y: (np.cos(x) * y, np.sin(x)), GRID, GRID)
    f, _ = D.reconstruct_potential(exact, (0.5, -0.5))
    i, j = np.argmin(np.abs(GRID - 0.5)), np.argmin(np.abs(GRID + 0.5))
    assert f[i, j] == 0.0
    X = exact.nodes()
    truth = np.sin(X[..., 0]) * X[..., 1]
    assert np.max(np.abs(f - (truth - truth[i, j]))) < 1e-6


def test_fourth_order_beats_trapezoid():
    # f = 0.15 (r2 - 1)/(r2 + 1); both rules converge, the cell rule much faster.
    def grad(x, y):
        r2 = x * x + y * y
        g = 0.6 / (1 + r2) ** 2
        return g * x, g * y

    fld = D.OneFormField.from_callable(grad, GRID, GRID)
    X = fld.nodes()
    r2 = np.sum(X * X, -1)
    truth = 0.15 * (r2 - 1) / (r2 + 1) + 0.15
    e2 = np.max(np.abs(D.reconstruct_potential(fld, order=2)[0] - truth))
    e4 = np.max(np.abs(D.reconstruct_potential(fld, order=4)[0] - truth))
    assert e4 < 1e-5 < e2
    assert e4 < e2 / 20


def test_beta_from_sphere_exact_form_closed(round_df):
    g = np.linspace(-1.1, 1.1, 41)
    for chart in (Chart.NORTH, Chart.SOUTH):
        fld = D.extract_beta_field(round_df, chart, g, g)
        assert np.max(fld.linearity_residual) < 1e-12
        assert D.curl_residual(fld) <= 1e-5


def test_beta_smoothness(round_df):
    # Second differences of the extracted field stay within 10x those of grad f.
    g = np.linspace(-1.1, 1.1, 41)
    fld = D.extract_beta_field(round_df, Chart.NORTH, g, g)
    truth = D.OneFormField.from_callable(
        lambda x, y: (0.2 * (1 - x * x + y * y) / (1 + x * x + y * y) ** 2, -0.4 * x * y / (1 + x * x + y * y) ** 2), g, g
    )
    assert np.allclose(fld.b, truth.b, atol=1e-13)
    for axis in (0, 1):
        d2 = np.max(np.abs(np.diff(fld.b, 2, axis=axis)))
        d2t = np.max(np.abs(np.diff(truth.b, 2, axis=axis)))
        assert d2 <= 10 * d2t


@pytest.mark.parametrize(
    "spec",
    [
        M.euclidean(),
        M.minkowski("1+0.1*cos(3*t)"),
        M.minkowski("1+0.05*cos(2*t)+0.1*cos(t)"),
        M.randers(M.conformal("1+0.2*x1^2"), ("0.3", "0.1*x1")),
        M.funk(M.ConvexDomain.disc()),
        M.funk(M.ConvexDomain.from_expr("1+0.08*cos(3*t)")),
        M.plus_one_form(M.euclidean(), ("-0.3*x2", "0.3*x1")),
    ],
    ids=lambda s: s.describe(),
)
def test_equality_case_consistency(spec):
    # Volume equality with the symmetrization holds iff the odd part is linear.
    region = Region.square(-0.3, 0.3)
    bm = V.bm_compare(spec, region, N_base=12)
    g = np.linspace(-0.3, 0.3, 7)
    fld = D.extract_beta_field(spec, Chart.PLANE, g, g)
    linear = float(np.max(fld.linearity_residual)) <= 1e-6
    assert bm.verdict in ("EQUAL", "STRICT")
    assert (bm.verdict == "EQUAL") == linear


def test_verify_round_plus_df(round_df):
    rep = D.verify_theorem(round_df, fast_config())
    assert rep.verdict == "PASS", rep.to_json()
    assert rep.mode == "FULL"
    ex = rep.stage("exactness").values
    assert max(ex["roundtrip_error"].values()) <= 1e-4
    assert "decomposition" in rep.config


def test_verify_round_sphere_zero_form():
    rep = D.verify_theorem(M.sphere_round(), fast_config())
    assert rep.verdict == "PASS"
    assert all(np.max(np.abs(f.b)) == 0 for f in rep.fields.values())


def test_verify_minkowski_fails(trefoil):
    rep = D.verify_theorem(trefoil, fast_config())
    assert rep.mode == "PARTIAL" and rep.verdict == "FAIL"
    assert rep.stage("zoll").verdict == "SKIPPED"
    assert rep.stage("volume_equality").values["bm_verdict"] == "STRICT"
    assert rep.stage("one_form").values["max_linearity_residual"] == pytest.approx(0.1, abs=1e-9)


def test_verify_rotational_form_fails(rotational):
    rep = D.verify_theorem(rotational, fast_config())
    assert rep.stage("reversibility").verdict == "FAIL"
    assert rep.stage("reversibility").values["max_residual"] > 1e-2
    assert rep.stage("exactness").values["curl_residual"] == pytest.approx(0.6, abs=1e-3)
    assert "NOT_CLOSED" in rep.stage("exactness").values["error"]


def test_verify_antipodal_report():
    spec = M.plus_exact_form(M.sphere_round(antipodal=True), "0.1*(2*x1/(1+r2))^2")
    rep = D.verify_theorem(spec, fast_config(n_geodesics=2))
    vals = rep.stage("exactness").values
    assert vals["antipodal_discrepancy"] < 1e-4
    odd = M.plus_exact_form(M.sphere_round(antipodal=True), "0.2*x1/(1+r2)")
    rep = D.verify_theorem(odd, fast_config(n_geodesics=2))
    assert rep.stage("exactness").values["antipodal_discrepancy"] > 1e-2


def test_report_json_deterministic(trefoil):
    a = D.verify_theorem(trefoil, fast_config()).to_json()
    b = D.verify_theorem(trefoil, fast_config()).to_json()
    assert a == b
    data = json.loads(a)
    assert [s["name"] for s in data["stages"]] == ["zoll", "reversibility", "volume_equality", "one_form", "exactness"]


def test_config_update():
    cfg = D.VerifyConfig().update({"curl_tol": "1e-3", "grid": "21"})
    assert cfg.curl_tol == 1e-3 and cfg.grid == 21
    with pytest.raises(KeyError):
        D.VerifyConfig().update({"bogus": 1})
