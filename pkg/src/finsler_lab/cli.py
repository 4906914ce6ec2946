"""Command-line entry point: ``finsler-lab COMMAND --spec FILE [options]``.

Exit status: 0 success or PASS, 1 FAIL verdict, 2 usage or config error,
3 numerical failure (integration, quadrature, or an INCONCLUSIVE verdict).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import svg
from .decompose import (
    NotClosedError,
    VerifyConfig,
    curl_residual,
    extract_beta_field,
    reconstruct_potential,
    verify_theorem,
    default_grids,
    jsonable,
)
from .flow import IntegrationError, detect_closure, integrate_geodesic, reversibility_residual, straightness_residual, zoll_scan
from .metrics import (
    Atlas,
    Chart,
    ChartPoint,
    ConfigError,
    DomainError,
    antipodal_residual,
    sample_points,
    symmetrized,
    validate_spec,
)
from .norms import body_area, central_symmetrize_body, support_body_of
from .specfile import load_spec
from .volume import bm_compare, ht_volume

log = logging.getLogger("finsler_lab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("validate", "trace", "zoll", "htvol", "symmetrize", "decompose", "verify", "bm-demo")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    spec_paths: list
    output_dir: Path
    seed: int = 0
    threads: int = 1
    tolerances: dict = field(default_factory=dict)
    x0: Optional[tuple] = None
    v0: tuple = (1.0, 0.0)
    chart: Optional[str] = None
    s_max: Optional[float] = None

    def verify_config(self) -> VerifyConfig:
        cfg = VerifyConfig(seed=self.seed, threads=self.threads)
        try:
            return cfg.update(self.tolerances)
        except (KeyError, ValueError) as exc:
            raise UsageError(str(exc).strip("'\"")) from None


def _default_threads() -> int:
    env = os.environ.get("FINSLER_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"FINSLER_LAB_THREADS must be an integer, got {env!r}") from None
    return max(1, os.cpu_count() or 1)


def _parse_tol(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--tol expects KEY=VAL, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _pair(text: str, what: str) -> tuple:
    try:
        a, b = (float(s) for s in text.split(","))
    except ValueError:
        raise UsageError(f"{what} expects two comma-separated numbers, got {text!r}") from None
    return (a, b)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finsler-lab", description="Numerical laboratory for non-reversible Finsler metrics.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--spec", action="append", required=True, help="metric spec file (twice for bm-demo)")
    p.add_argument("--out", default="finsler_out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (env FINSLER_LAB_THREADS)")
    p.add_argument("--tol", action="append", metavar="KEY=VAL", help="tolerance or budget override")
    p.add_argument("--x0", help="trace: launch point x1,x2")
    p.add_argument("--v0", default="1,0", help="trace: launch direction v1,v2")
    p.add_argument("--chart", choices=[c.value for c in Chart], help="trace: chart of x0")
    p.add_argument("--s-max", type=float, help="trace: length to integrate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_json(cfg: RunConfig, name: str, data: dict, printed: list) -> Path:
    data = dict(data)
    data["printed"] = printed
    path = cfg.output_dir / name
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _emit(lines):
    for line in lines:
        print(line)


# --- commands ---------------------------------------------------------------

def cmd_validate(cfg, sf):
    spec = sf.spec
    region = sf.region if sf.region is not None and not sf.region.sphere else None
    rep = validate_spec(spec, 100, cfg.seed, region)
    data = {
        "spec": spec.describe(),
        "valid": rep.valid,
        "n_points": rep.n_points,
        "min_convexity_margin": rep.min_convexity_margin,
        "max_homogeneity_residual": rep.max_homogeneity_residual,
        "one_form_margin": rep.one_form_margin,
        "failures": rep.failures,
    }
    lines = [
        f"spec: {spec.describe()}",
        f"valid: {rep.valid}",
        f"min_convexity_margin: {rep.min_convexity_margin:.6g}",
        f"max_homogeneity_residual: {rep.max_homogeneity_residual:.6g}",
    ]
    ok = rep.valid
    if spec.antipodal:
        res = antipodal_residual(spec, 100, cfg.seed)
        data["antipodal_residual"] = res
        lines.append(f"antipodal_residual: {res:.6g}")
        ok = ok and res <= 1e-9
    lines += [f"failure: {f}" for f in rep.failures]
    _write_json(cfg, "validate.json", data, lines)
    _emit(lines)
    return EXIT_OK if ok else EXIT_FAIL


def _launch(cfg, spec):
    if cfg.x0 is not None:
        chart = Chart(cfg.chart) if cfg.chart else spec.charts_ids[0]
        return ChartPoint(chart, cfg.x0)
    if spec.atlas is Atlas.SPHERE:
        return ChartPoint(Chart.NORTH, (0.0, 0.0))
    dom = spec.planar_domain
    return ChartPoint(Chart.PLANE, tuple(dom.basepoint) if dom is not None else (0.0, 0.0))


def cmd_trace(cfg, sf):
    spec = sf.spec
    vc = cfg.verify_config()
    pt = _launch(cfg, spec)
    s_max = cfg.s_max if cfg.s_max is not None else (8.0 if spec.atlas is Atlas.SPHERE else 1.0)
    trace = integrate_geodesic(spec, pt, cfg.v0, s_max, vc.tol)
    trace.to_csv(cfg.output_dir / "trace.csv")
    svg.traces_svg([trace], cfg.output_dir / "trace.svg")
    data = {
        "spec": spec.describe(),
        "start": {"chart": pt.chart.value, "x": list(pt.x), "v": list(cfg.v0)},
        "status": trace.status,
        "length": trace.total_length,
        "energy_drift": trace.energy_drift,
        "samples": len(trace),
        "reversibility_residual": reversibility_residual(spec, trace),
    }
    if spec.atlas is Atlas.SPHERE:
        c = detect_closure(trace, vc.tol_close)
        data["closure"] = {"closed": c.closed, "length": c.length, "return_gap": c.return_gap}
    else:
        data["straightness_residual"] = straightness_residual(trace) if len(trace) >= 3 else None
    lines = [f"{k}: {data[k]}" for k in ("status", "length", "energy_drift", "reversibility_residual")]
    if "closure" in data:
        lines.append(f"closed: {data['closure']['closed']} length: {data['closure']['length']}")
    _write_json(cfg, "trace.json", data, lines)
    _emit(lines)
    return EXIT_OK


def cmd_zoll(cfg, sf):
    spec = sf.spec
    if spec.atlas is not Atlas.SPHERE:
        raise UsageError("zoll needs a sphere-atlas metric")
    vc = cfg.verify_config()
    rep = zoll_scan(spec, vc.n_geodesics, vc.s_max, vc.tol, vc.tol_close, vc.length_tol, cfg.seed, cfg.threads)
    lines = [f"verdict: {rep.verdict}", f"median_length: {rep.median_length}", f"spread: {rep.spread}"]
    for i, c in enumerate(rep.closures):
        if not c.closed:
            lines.append(f"not closed: geodesic {i} return_gap {c.return_gap:.6g}")
    _write_json(cfg, "zoll.json", {"spec": spec.describe(), **rep.to_dict()}, lines)
    _emit(lines)
    return {"ZOLL": EXIT_OK, "NOT_ZOLL": EXIT_FAIL}.get(rep.verdict, EXIT_NUMERIC)


def cmd_htvol(cfg, sf):
    vc = cfg.verify_config()
    rep = ht_volume(sf.spec, sf.default_region(), vc.N_base, vc.N_fiber)
    printed = f"{rep.ht_volume:.6f}"
    data = {"spec": sf.spec.describe(), **rep.to_dict(), "ht_volume_rounded": printed}
    _write_json(cfg, "htvol.json", data, [printed])
    print(printed)
    return EXIT_OK


def cmd_symmetrize(cfg, sf):
    spec = sf.spec
    sym = symmetrized(spec)
    region = sf.region if sf.region is not None and not sf.region.sphere else None
    rows = []
    for pt in sample_points(spec, 20, cfg.seed, region):
        F = spec.chart(pt.chart).norm_at(pt.arr)
        K = support_body_of(F)
        Ks = central_symmetrize_body(K)
        U = np.stack([np.cos(K.theta), np.sin(K.theta)], -1)
        rows.append(
            {
                "chart": pt.chart.value,
                "x": list(pt.x),
                "area": body_area(K),
                "sym_area": body_area(Ks),
                "asymmetry": float(np.max(np.abs(F(U) - F(-U)))),
            }
        )
    worst = max(r["asymmetry"] for r in rows)
    deficit = min(r["sym_area"] - r["area"] for r in rows)
    lines = [f"symmetrized: {sym.describe()}", f"max_asymmetry: {worst:.6g}", f"min_area_deficit: {deficit:.6g}"]
    _write_json(cfg, "symmetrize.json", {"spec": spec.describe(), "symmetrized": sym.describe(), "samples": rows,
                                         "max_asymmetry": worst, "min_area_deficit": deficit}, lines)
    _emit(lines)
    return EXIT_OK


def _write_fields(cfg, fields, potentials):
    for chart, fld in fields.items():
        f = potentials.get(chart)
        tag = chart.value.lower()
        svg.write_grid_csv(cfg.output_dir / f"grid_{tag}.csv", fld, f)
        svg.quiver_svg(fld, cfg.output_dir / f"beta_{tag}.svg")
        if f is not None:
            svg.heatmap_svg(fld.x1, fld.x2, f, cfg.output_dir / f"potential_{tag}.svg")


def cmd_decompose(cfg, sf):
    spec = sf.spec
    vc = cfg.verify_config()
    if sf.region is not None and not sf.region.sphere:
        vc.region = sf.region
    fields, potentials, charts = {}, {}, {}
    ok = True
    for chart, (g1, g2) in default_grids(spec, vc).items():
        fld = extract_beta_field(spec, chart, g1, g2, vc.fiber_N)
        fields[chart] = fld
        lin = float(np.max(fld.linearity_residual))
        info = {"max_linearity_residual": lin, "curl_residual": curl_residual(fld)}
        ok = ok and lin <= vc.linearity_tol
        try:
            potentials[chart], info["loop_residual"] = reconstruct_potential(fld, (0.0, 0.0), vc.curl_tol)
        except NotClosedError as exc:
            info["error"] = str(exc)
            ok = False
        charts[chart.value] = info
    _write_fields(cfg, fields, potentials)
    lines = []
    for name, info in sorted(charts.items()):
        lines.append(f"{name}: linearity {info['max_linearity_residual']:.6g} curl {info['curl_residual']:.6g}")
        if "error" in info:
            lines.append(f"{name}: {info['error']}")
    lines.append(f"decomposable: {ok}")
    _write_json(cfg, "decompose.json", {"spec": spec.describe(), "charts": charts, "decomposable": ok}, lines)
    _emit(lines)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(cfg, sf):
    vc = cfg.verify_config()
    if sf.region is not None and not sf.region.sphere:
        vc.region = sf.region
    rep = verify_theorem(sf.spec, vc)
    chart_of = {c.value: c for c in rep.fields}
    _write_fields(cfg, rep.fields, {chart_of[k]: v["f"] for k, v in rep.potential.items()})
    lines = [f"{s.name}: {s.verdict}" for s in rep.stages] + [f"mode: {rep.mode}", f"verdict: {rep.verdict}"]
    _write_json(cfg, "verify.json", rep.to_dict(), lines)
    _emit(lines)
    return {"PASS": EXIT_OK, "FAIL": EXIT_FAIL}.get(rep.verdict, EXIT_NUMERIC)


def cmd_bm_demo(cfg, sfs):
    vc = cfg.verify_config()
    out, lines = [], []
    for sf in sfs:
        rep = bm_compare(sf.spec, sf.default_region(), vc.N_base, vc.N_fiber, equal_tol=vc.equal_tol)
        d = {"spec": sf.spec.describe(), **rep.to_dict()}
        out.append(d)
        lines.append(f"{d['spec']}: vol {rep.vol_F:.6f} sym {rep.vol_symF:.6f} gap {rep.relative_gap:.6g} {rep.verdict}")
    _write_json(cfg, "bm_demo.json", {"comparisons": out}, lines)
    _emit(lines)
    return EXIT_OK


_DISPATCH = {
    "validate": cmd_validate,
    "trace": cmd_trace,
    "zoll": cmd_zoll,
    "htvol": cmd_htvol,
    "symmetrize": cmd_symmetrize,
    "decompose": cmd_decompose,
    "verify": cmd_verify,
}


def run(cfg: RunConfig) -> int:
    """Dispatch one command; returns the exit status."""
    try:
        if cfg.command == "bm-demo":
            if len(cfg.spec_paths) != 2:
                raise UsageError("bm-demo takes exactly two --spec flags")
        elif len(cfg.spec_paths) != 1:
            raise UsageError(f"{cfg.command} takes exactly one --spec")
        specs = [load_spec(p) for p in cfg.spec_paths]
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        if cfg.command == "bm-demo":
            return cmd_bm_demo(cfg, specs)
        return _DISPATCH[cfg.command](cfg, specs[0])
    except (UsageError, ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = args.threads if args.threads is not None else _default_threads()
        cfg = RunConfig(
            args.command,
            args.spec,
            Path(args.out),
            args.seed,
            max(1, threads),
            _parse_tol(args.tol),
            _pair(args.x0, "--x0") if args.x0 else None,
            _pair(args.v0, "--v0"),
            args.chart,
            args.s_max,
        )
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
