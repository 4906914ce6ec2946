"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python3 tests/test_acceptance.py``. The lines are also repeated in the
pytest terminal summary.
"""
from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest

from finsler_lab import decompose as D
from finsler_lab import flow as G
from finsler_lab import metrics as M
from finsler_lab import norms as N
from finsler_lab import volume as V
from finsler_lab.cli import main as cli_main
from finsler_lab.metrics import Chart, ChartPoint, Region

SPECS = Path(__file__).resolve().parents[1] / "specs"
RESULTS: dict = {}


def report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[num] = line
    print(line)


# --- 1 -------------------------------------------------------------------

def test_criterion_1_riemannian_ht_volume(capsys, tmp_path):
    t0 = time.perf_counter()
    vals = {}
    for name, spec in (("sphere", "round_sphere.spec"), ("square", "euclid_square.spec")):
        code = cli_main(["htvol", "--spec", str(SPECS / spec), "--out", str(tmp_path / name)])
        out = capsys.readouterr().out.strip()
        assert code == 0
        vals[name] = V.ht_volume(*_spec_and_region(spec)).ht_volume
        assert out == f"{vals[name]:.6f}"
    elapsed = time.perf_counter() - t0
    err_s = abs(vals["sphere"] / (4 * np.pi) - 1)
    err_q = abs(vals["square"] - 1)
    ok = err_s <= 1e-3 and err_q <= 1e-6 and elapsed < 30
    with capsys.disabled():
        report(1, ok, f"sphere rel err {err_s:.2e} (<=1e-3), square err {err_q:.2e} (<=1e-6), {elapsed:.1f}s (<30s)")
    assert ok


def _spec_and_region(name):
    from finsler_lab.specfile import load_spec

    sf = load_spec(SPECS / name)
    return sf.spec, sf.default_region()


# --- 2 -------------------------------------------------------------------

def _random_support(rng, first_harmonic_only: bool):
    """Random truncated Fourier support function; odd part first-harmonic iff requested."""
    t = N.angle_grid(512)
    h = np.ones_like(t)
    for k in (2, 4):
        a, b = rng.uniform(-0.04, 0.04, 2)
        h += a * np.cos(k * t) + b * np.sin(k * t)
    a, b = rng.uniform(-0.3, 0.3, 2)
    h += a * np.cos(t) + b * np.sin(t)
    if not first_harmonic_only:
        for k in (3, 5):
            amp = rng.uniform(0.005, 0.03) / (k - 2)
            ph = rng.uniform(0, 2 * np.pi)
            h += amp * np.cos(k * t + ph)
    return h


def test_criterion_2_brunn_minkowski(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    suite = []
    while len(suite) < 60:
        first_only = len(suite) % 3 == 0
        h = _random_support(rng, first_only)
        F = N.norm_from_support(N.SupportBody(h).interp)
        if not N.check_norm_validity(F, 256).valid:
            continue
        suite.append((first_only, N.SupportBody(h)))
    worst_slack, mismatches, n_eq = np.inf, 0, 0
    for first_only, K in suite:
        a, s = N.body_area(K), N.body_area(N.central_symmetrize_body(K))
        worst_slack = min(worst_slack, s - a)
        equal = abs(s - a) <= 1e-9 * s
        n_eq += equal
        mismatches += equal != first_only
    elapsed = time.perf_counter() - t0
    ok = worst_slack >= -1e-9 and mismatches == 0 and elapsed < 10
    with capsys.disabled():
        report(
            2, ok,
            f"{len(suite)} norms, min slack {worst_slack:.2e} (>=-1e-9), equality on {n_eq} "
            f"(first-harmonic subsuite {sum(f for f, _ in suite)}), mismatches {mismatches}, {elapsed:.1f}s (<10s)",
        )
    assert ok


# --- 3 -------------------------------------------------------------------

def _randers_suite():
    rng = np.random.default_rng(3)
    out = []
    a_plane = ("1+0.2*x1^2", "0.1*x1*x2", "1+0.3*x2^2")
    for k in range(7):
        c = rng.uniform(-1, 1, 4)
        b = (f"{c[0]:.4f}+{c[1]:.4f}*x2", f"{c[2]:.4f}+{c[3]:.4f}*sin(x1)")
        out.append((M.randers(a_plane, b), M.riemannian(a_plane), Region.square(-1, 1)))
    a_sph = M.conformal("4/(1+r2)^2")
    for f in ("x1/(1+r2)", "x1*x2/(1+r2)^2", "(r2-1)/(r2+1)"):
        amp = rng.uniform(0.2, 0.6)
        out.append((M.randers(a_sph, M.grad(f"{amp:.4f}*{f}"), M.Atlas.SPHERE), M.sphere_round(), M.SPHERE))
    return out


def _max_b_norm(spec, region):
    cm = spec.chart(spec.charts_ids[0])
    if region.sphere:
        pts = M.sample_points(spec, 400, 0)
        return max(float(spec.chart(p.chart).b_norm(p.arr)) for p in pts)
    g = np.linspace(region.rect[0], region.rect[1], 41)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    return float(np.max(cm.b_norm(X)))


def test_criterion_3_randers_equality(capsys):
    t0 = time.perf_counter()
    worst_gap, worst_b = 0.0, 0.0
    suite = []
    for spec, base, region in _randers_suite():
        bn = _max_b_norm(spec, region)
        if bn > 0.7:
            # Rescale into the allowed range: b -> 0.65 b / |b|_max.
            spec = M.randers(spec.a, tuple(f"({0.65 / bn:.6f})*({c})" for c in spec.b), spec.atlas)
            bn = _max_b_norm(spec, region)
        suite.append((spec, base, region))
        worst_b = max(worst_b, bn)
    for spec, base, region in suite:
        vF = V.ht_volume(spec, region).ht_volume
        v0 = V.ht_volume(base, region).ht_volume
        worst_gap = max(worst_gap, abs(vF / v0 - 1))
    elapsed = time.perf_counter() - t0
    ok = len(suite) == 10 and worst_b <= 0.7 and worst_gap <= 1e-6 and elapsed < 60
    with capsys.disabled():
        report(3, ok, f"10 Randers specs, max |b|_a {worst_b:.3f} (<=0.7), max rel gap {worst_gap:.2e} (<=1e-6), {elapsed:.1f}s (<60s)")
    assert ok


# --- 4 -------------------------------------------------------------------

def test_criterion_4_zoll_pair_volumes(capsys):
    round_, zoll = M.sphere_round(), M.plus_exact_form(M.sphere_round(), "0.2*x1/(1+r2)")
    r1 = G.zoll_scan(round_, 50, seed=4)
    r2 = G.zoll_scan(zoll, 50, seed=4)
    v1 = V.ht_volume(round_).ht_volume
    v2 = V.ht_volume(zoll).ht_volume
    len_gap = abs(r1.median_length - r2.median_length) if r1.zoll and r2.zoll else np.inf
    vol_gap = abs(v2 / v1 - 1)
    ok = r1.zoll and r2.zoll and r1.spread <= 1e-4 and r2.spread <= 1e-4 and len_gap <= 1e-4 and vol_gap <= 1e-3
    with capsys.disabled():
        report(
            4, bool(ok),
            f"spreads {r1.spread:.1e}/{r2.spread:.1e} (<=1e-4), lengths {r1.median_length:.8f}/{r2.median_length:.8f}, "
            f"volumes {v1:.8f}/{v2:.8f} rel gap {vol_gap:.1e} (<=1e-3)",
        )
    assert ok


# --- 5 -------------------------------------------------------------------

POTENTIALS = ("0.2*x1/(1+r2)", "0.3*x1*x2/(1+r2)^2", "0.15*(r2-1)/(r2+1)")


@pytest.mark.parametrize("f", POTENTIALS)
def test_criterion_5_round_trip(f, capsys):
    t0 = time.perf_counter()
    rep = D.verify_theorem(M.plus_exact_form(M.sphere_round(), f))
    elapsed = time.perf_counter() - t0
    stages = {s.name: s.verdict for s in rep.stages}
    err = max(rep.stage("exactness").values.get("roundtrip_error", {"-": np.inf}).values())
    ok = all(v == "PASS" for v in stages.values()) and err <= 1e-4 and elapsed < 300
    RESULTS.setdefault("5parts", []).append((f, ok, err, elapsed))
    parts = RESULTS["5parts"]
    if len(parts) == len(POTENTIALS):
        all_ok = all(p[1] for p in parts)
        detail = ", ".join(f"f={p[0]}: err {p[2]:.1e} {p[3]:.0f}s" for p in parts)
        with capsys.disabled():
            report(5, all_ok, f"all five stages PASS for {sum(p[1] for p in parts)}/3 potentials (err<=1e-4, <300s each); {detail}")
    assert ok, rep.to_json()


# --- 6 -------------------------------------------------------------------

def test_criterion_6_nonclosed_form(capsys):
    spec = M.plus_one_form(M.euclidean(), ("-0.3*x2", "0.3*x1"), label="euclidean + rotational form")
    rep = D.verify_theorem(spec)
    rev = rep.stage("reversibility")
    curl = rep.stage("exactness").values["curl_residual"]
    ok = rev.verdict == "FAIL" and rev.values["max_residual"] > 1e-2 and abs(curl - 0.6) <= 1e-3
    with capsys.disabled():
        report(6, ok, f"reversibility {rev.verdict} residual {rev.values['max_residual']:.3f} (>1e-2), curl {curl:.6f} (0.6 +- 1e-3)")
    assert ok


# --- 7 -------------------------------------------------------------------

def test_criterion_7_projective(capsys, unit_disc):
    rng = np.random.default_rng(7)
    funk, hilb = M.funk(unit_disc), M.hilbert(unit_disc)
    worst_straight, worst_rev = 0.0, 0.0
    for spec in (funk, hilb):
        for _ in range(50):
            r, a = 0.7 * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
            x0 = M.plane_point(r * np.cos(a), r * np.sin(a))
            tr = G.integrate_geodesic(spec, x0, rng.normal(size=2), 1.0, tol=1e-9)
            worst_straight = max(worst_straight, G.straightness_residual(tr))
            if spec is funk:
                worst_rev = max(worst_rev, G.reversibility_residual(spec, tr))
    # Non-reversibility of the fibres at x = (0.5, 0): closed form gap is 4 v1 / 3.
    x = np.array([0.5, 0.0])
    ang = rng.uniform(0, 2 * np.pi, 100)
    Vs = np.stack([np.cos(ang), np.sin(ang)], 1)
    gaps = np.array([abs(M.funk_eval(unit_disc, x, v) - M.funk_eval(unit_disc, x, -v)) for v in Vs])
    oracle_err = float(np.max(np.abs(gaps - 4 * np.abs(Vs[:, 0]) / 3)))
    n_big = int(np.sum(gaps > 0.1))
    ok = worst_straight <= 1e-5 and worst_rev <= 1e-4 and oracle_err < 1e-9 and n_big >= 90
    with capsys.disabled():
        report(
            7, ok,
            f"100 geodesics max straightness {worst_straight:.1e} (<=1e-5), Funk reversibility {worst_rev:.1e} (<=1e-4), "
            f"fibre gap >0.1 at {n_big}/100 samples, max gap {gaps.max():.3f} (oracle err {oracle_err:.0e})",
        )
    assert ok


# --- 8 -------------------------------------------------------------------

CATALOG = [
    M.euclidean(),
    M.sphere_round(),
    M.minkowski("1+0.1*cos(3*t)"),
    M.riemannian(("1+0.2*x1^2", "0.1*x1*x2", "1+0.3*x2^2")),
    M.randers(M.conformal("1+0.2*x1^2"), ("0.3", "0.1*x1")),
    M.randers(M.conformal("4/(1+r2)^2"), M.grad("0.2*x1*x2/(1+r2)^2"), M.Atlas.SPHERE),
    M.funk(M.ConvexDomain.from_expr("1+0.05*cos(3*t)")),
    M.hilbert(M.ConvexDomain.from_expr("1+0.05*cos(3*t)")),
    M.plus_exact_form(M.sphere_round(), "0.2*x1/(1+r2)"),
    M.plus_one_form(M.euclidean(), ("-0.3*x2", "0.3*x1")),
]


def test_criterion_8_hygiene(capsys):
    rng = np.random.default_rng(8)
    tol = 1e-9
    worst_drift, worst_bidual, worst_area = 0.0, 0.0, 0.0
    for spec in CATALOG:
        pts = M.sample_points(spec, 3, seed=8, region=Region.square(-0.4, 0.4))
        for pt in pts:
            cm = spec.chart(pt.chart)
            tr = G.integrate_geodesic(spec, pt, rng.normal(size=2), 1.0, tol=tol)
            worst_drift = max(worst_drift, tr.energy_drift / tr.tol)
            F = cm.norm_at(pt.arr)
            H = N.dual_norm_as_norm(F)
            Vs = N.unit(rng.uniform(0, 2 * np.pi, 8))
            worst_bidual = max(worst_bidual, float(np.max(np.abs(N.dual_norm(H, Vs) / F(Vs) - 1))))
            a = V.fiber_areas(cm, pt.arr, 512, "radial")[0]
            b = V.fiber_areas(cm, pt.arr, 512, "support")[0]
            worst_area = max(worst_area, abs(a / b - 1))
    ok = worst_drift <= 10 and worst_bidual <= 1e-6 and worst_area <= 1e-6
    with capsys.disabled():
        report(
            8, ok,
            f"{len(CATALOG)} catalog metrics: max drift/tol {worst_drift:.2f} (<=10), biduality {worst_bidual:.1e} (<=1e-6), "
            f"fibre-area formulas {worst_area:.1e} (<=1e-6)",
        )
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
