"""Metric spec files.

A spec file holds one metric. Sections are bracketed; entries are
``key = value`` and may share a line when separated by ``;``. ``#`` starts a
comment. Example::

    [metric]
    kind = sphere_round
    [one_form]
    beta = grad(0.2*x1/(1+r2))

Sections and keys:

``[metric]``
    ``kind``: euclidean, sphere_round, riemannian, randers, minkowski, funk,
    hilbert. ``atlas``: plane or sphere (riemannian/randers only; default
    plane). ``a``: ``conformal(f)`` or ``matrix(a11, a12, a22)``. ``b``:
    ``grad(f)`` or ``covector(b1, b2)``. ``h``: support function in ``t``
    (minkowski). ``samples``: support samples (default 512). ``label``.
``[one_form]``
    ``beta``: ``grad(f)`` or ``covector(b1, b2)``, added to the metric.
``[domain]``
    ``h``: boundary support function in ``t`` (funk/hilbert). ``samples``,
    ``basepoint = (x1, x2)``.
``[region]``
    ``rect = x1min, x1max, x2min, x2max`` or ``sphere = true``.
``[flags]``
    ``antipodal = true`` marks an RP^2 metric (sphere atlas only).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import expr as ex
from . import metrics as m
from .metrics import SPHERE, Atlas, ConfigError, ConvexDomain, MetricSpec, Region

_KEYS = {
    "metric": {"kind", "atlas", "a", "b", "h", "samples", "label"},
    "one_form": {"beta"},
    "domain": {"h", "samples", "basepoint"},
    "region": {"rect", "sphere"},
    "flags": {"antipodal"},
}
_KINDS = {"euclidean", "sphere_round", "riemannian", "randers", "minkowski", "funk", "hilbert"}
_ATLASES = {"plane": Atlas.PLANE, "plane_chart": Atlas.PLANE, "sphere": Atlas.SPHERE, "sphere_two_charts": Atlas.SPHERE}
_CALL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$", re.S)


class SpecFileError(ConfigError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SpecFile:
    spec: MetricSpec
    region: Optional[Region] = None
    path: Optional[str] = None

    def default_region(self) -> Region:
        if self.region is not None:
            return self.region
        return SPHERE if self.spec.atlas is Atlas.SPHERE else Region.square(0.0, 1.0)


def split_args(text: str) -> list:
    """Split on commas that are not nested inside parentheses."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
            continue
        depth += (ch == "(") - (ch == ")")
        if depth < 0:
            raise ValueError("unbalanced parentheses")
        cur.append(ch)
    if depth:
        raise ValueError("unbalanced parentheses")
    out.append("".join(cur).strip())
    return [a for a in out if a] if out != [""] else []


def _call(value: str, names: dict, line: int):
    mt = _CALL.match(value)
    if not mt or mt.group(1) not in names:
        raise SpecFileError(f"expected one of {', '.join(sorted(names))}(...), got {value!r}", line)
    fn, arity = names[mt.group(1)]
    args = split_args(mt.group(2))
    if len(args) != arity:
        raise SpecFileError(f"{mt.group(1)} takes {arity} argument(s)", line)
    for arg in args:
        _expr(arg, line)
    return fn(*args)


def _expr(text, line):
    try:
        ex.parse(text)
    except ex.ExpressionError as exc:
        raise SpecFileError(str(exc), line) from None
    return text


def _tensor(value, line):
    return _call(value, {"conformal": (m.conformal, 1), "matrix": (lambda *a: tuple(a), 3)}, line)


def _covector(value, line):
    return _call(value, {"grad": (lambda f: ("grad", f), 1), "covector": (lambda *b: ("covector", b), 2)}, line)


def _bool(value, line):
    v = value.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise SpecFileError(f"expected true or false, got {value!r}", line)


def _numbers(value, n, line):
    parts = split_args(value.strip().strip("()"))
    try:
        nums = tuple(float(p) for p in parts)
    except ValueError:
        raise SpecFileError(f"expected {n} numbers, got {value!r}", line) from None
    if len(nums) != n:
        raise SpecFileError(f"expected {n} numbers, got {len(nums)}", line)
    return nums


def read_entries(text: str) -> dict:
    """``{section: {key: (value, line)}}`` with duplicate and unknown keys rejected."""
    out: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        hdr = re.match(r"^\[([a-z_]+)\]\s*(.*)$", line)
        if hdr:
            section = hdr.group(1)
            if section not in _KEYS:
                raise SpecFileError(f"unknown section [{section}]", lineno)
            if section in out:
                raise SpecFileError(f"duplicate section [{section}]", lineno)
            out[section] = {}
            line = hdr.group(2).strip()
            if not line:
                continue
        if section is None:
            raise SpecFileError("entry outside of a section", lineno)
        for entry in (e.strip() for e in line.split(";")):
            if not entry:
                continue
            if "=" not in entry:
                raise SpecFileError(f"expected key = value, got {entry!r}", lineno)
            key, value = (s.strip() for s in entry.split("=", 1))
            key = key.lower()
            if key not in _KEYS[section]:
                raise SpecFileError(f"unknown key {key!r} in [{section}]", lineno)
            if key in out[section]:
                raise SpecFileError(f"duplicate key {key!r}", lineno)
            out[section][key] = (value, lineno)
    return out


def _beta_components(cov):
    tag, val = cov
    return m.grad(val) if tag == "grad" else tuple(val), (val if tag == "grad" else None)


def _build_metric(sec: dict, dom_sec: dict) -> MetricSpec:
    if "kind" not in sec:
        raise SpecFileError("[metric] needs a kind")
    kind_raw, kline = sec["kind"]
    kind = kind_raw.strip().lower()
    if kind not in _KINDS:
        raise SpecFileError(f"unknown metric kind {kind_raw!r}", kline)

    def need(key):
        if key not in sec:
            raise SpecFileError(f"kind {kind} needs key {key!r}", kline)
        return sec[key]

    atlas = Atlas.PLANE
    if "atlas" in sec:
        val, line = sec["atlas"]
        if val.strip().lower() not in _ATLASES:
            raise SpecFileError(f"unknown atlas {val!r}", line)
        atlas = _ATLASES[val.strip().lower()]
    label = sec.get("label", ("", 0))[0]
    if kind == "euclidean":
        spec = m.euclidean()
    elif kind == "sphere_round":
        spec = m.sphere_round()
    elif kind == "riemannian":
        spec = m.riemannian(_tensor(*need("a")), atlas, label)
    elif kind == "randers":
        a = _tensor(*need("a"))
        b, _ = _beta_components(_covector(*need("b")))
        spec = m.randers(a, b, atlas, label)
    elif kind == "minkowski":
        h = _expr(*need("h"))
        samples = int(float(sec.get("samples", ("512", 0))[0]))
        spec = m.minkowski(h, samples)
    else:
        if "h" not in dom_sec:
            raise SpecFileError(f"kind {kind} needs a [domain] section with h", kline)
        h = _expr(*dom_sec["h"])
        samples = int(float(dom_sec.get("samples", ("512", 0))[0]))
        bp = (0.0, 0.0)
        if "basepoint" in dom_sec:
            bp = _numbers(*dom_sec["basepoint"][:1], 2, dom_sec["basepoint"][1])
        domain = ConvexDomain.from_expr(h, samples, bp)
        spec = m.funk(domain) if kind == "funk" else m.hilbert(domain)
    if kind in ("euclidean", "sphere_round", "minkowski", "funk", "hilbert") and "atlas" in sec:
        want = Atlas.SPHERE if kind == "sphere_round" else Atlas.PLANE
        if atlas is not want:
            raise SpecFileError(f"kind {kind} requires atlas {want.value}", sec["atlas"][1])
    if label and kind not in ("riemannian", "randers"):
        spec = m.with_label(spec, label)
    return spec


def parse_spec(text: str, path: Optional[str] = None) -> SpecFile:
    """Parse spec text. Errors raise :class:`SpecFileError` naming the line."""
    try:
        entries = read_entries(text)
        if "metric" not in entries:
            raise SpecFileError("missing [metric] section")
        spec = _build_metric(entries["metric"], entries.get("domain", {}))
        if "one_form" in entries:
            if "beta" not in entries["one_form"]:
                raise SpecFileError("[one_form] needs beta")
            val, line = entries["one_form"]["beta"]
            comps, potential = _beta_components(_covector(val, line))
            if potential is not None:
                spec = m.plus_exact_form(spec, potential)
            else:
                spec = m.plus_one_form(spec, comps, label=f"{spec.describe()} + ({comps[0]}) dx1 + ({comps[1]}) dx2")
        flags = entries.get("flags", {})
        if "antipodal" in flags and _bool(*flags["antipodal"]):
            if spec.atlas is not Atlas.SPHERE:
                raise SpecFileError("antipodal flag needs the sphere atlas", flags["antipodal"][1])
            spec = replace(spec, antipodal=True)
        region = None
        reg = entries.get("region", {})
        if "rect" in reg and "sphere" in reg:
            raise SpecFileError("[region] takes rect or sphere, not both", reg["sphere"][1])
        if "rect" in reg:
            val, line = reg["rect"]
            r = _numbers(val, 4, line)
            if not (r[0] < r[1] and r[2] < r[3]):
                raise SpecFileError("rect needs x1min < x1max and x2min < x2max", line)
            region = Region(False, r)
        elif "sphere" in reg and _bool(*reg["sphere"]):
            region = SPHERE
        if region is not None and region.sphere != (spec.atlas is Atlas.SPHERE):
            raise SpecFileError("region does not match the metric's atlas")
    except ex.ExpressionError as exc:
        raise SpecFileError(str(exc)) from None
    except SpecFileError:
        raise
    except ConfigError as exc:
        raise SpecFileError(str(exc)) from None
    return SpecFile(spec, region, path)


def load_spec(path) -> SpecFile:
    p = Path(path)
    if not p.is_file():
        raise SpecFileError(f"spec file not found: {p}")
    return parse_spec(p.read_text(), str(p))
