from __future__ import annotations

import numpy as np
import pytest

from finsler_lab import metrics as M
from finsler_lab.metrics import Chart, ChartPoint
from finsler_lab.specfile import SpecFileError, load_spec, parse_spec


def test_randers_one_line_form():
    sf = parse_spec("[metric] kind=randers; atlas=sphere; a=conformal(4/(1+r2)^2); b=grad(0.2*x1*x2)")
    spec = sf.spec
    assert spec.kind is M.Kind.RANDERS and spec.atlas is M.Atlas.SPHERE
    x, v = np.array([0.3, 0.4]), np.array([1.0, -0.5])
    alpha = 2 * np.linalg.norm(v) / (1 + x @ x)
    beta = 0.2 * (x[1] * v[0] + x[0] * v[1])
    assert M.eval_metric(spec, ChartPoint(Chart.NORTH, tuple(x)), v) == pytest.approx(alpha + beta, rel=1e-14)
    assert sf.default_region() is M.SPHERE


def test_plus_exact_form_records_potential():
    sf = parse_spec("[metric]\nkind = sphere_round\n[one_form]\nbeta = grad(0.2*x1/(1+r2))  # exact\n")
    assert sf.spec.kind is M.Kind.PLUS_ONE_FORM
    assert sf.spec.potential == "0.2*x1/(1+r2)"


def test_covector_and_matrix():
    sf = parse_spec(
        "[metric]\nkind = riemannian\na = matrix(1+x1^2, 0.1, 2)\n[one_form]\nbeta = covector(-0.3*x2, 0.3*x1)\n[region]\nrect = -1, 1, -1, 1"
    )
    assert sf.spec.potential is None
    assert sf.region.rect == (-1.0, 1.0, -1.0, 1.0)
    x, v = np.array([0.5, 0.2]), np.array([1.0, 0.0])
    a = np.array([[1.25, 0.1], [0.1, 2]])
    want = np.sqrt(v @ a @ v) + (-0.3 * x[1])
    assert M.eval_metric(sf.spec, M.plane_point(*x), v) == pytest.approx(want, rel=1e-14)


def test_domain_and_minkowski():
    sf = parse_spec("[metric]\nkind = funk\n[domain]\nh = 1; basepoint = (0.1, 0)")
    assert sf.spec.domain.basepoint == (0.1, 0.0)
    assert M.eval_metric(sf.spec, M.plane_point(0.5, 0), (1, 0)) == pytest.approx(2.0)
    mk = parse_spec("[metric]\nkind = minkowski\nh = 1 + 0.1*cos(3*t)\nsamples = 256")
    assert mk.spec.h.N == 256


def test_antipodal_flag():
    sf = parse_spec("[metric]\nkind = sphere_round\n[flags]\nantipodal = true")
    assert sf.spec.antipodal
    with pytest.raises(SpecFileError):
        parse_spec("[metric]\nkind = euclidean\n[flags]\nantipodal = true")


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("[metric]\nkind = bogus", 2, "unknown metric kind"),
        ("[metric]\nkind = euclidean\ncolour = red", 3, "unknown key"),
        ("[metric]\n\nkind = minkowski\nh = 1+zz", 4, "unknown name"),
        ("[nonsense]\nkind = euclidean", 1, "unknown section"),
        ("kind = euclidean", 1, "outside of a section"),
        ("[metric]\nkind = randers\na = conformal(1)\nb = curl(x1)", 4, "grad"),
        ("[metric]\nkind = riemannian\na = matrix(1, 2)", 3, "3 argument"),
        ("[metric]\nkind = euclidean; kind = funk", 2, "duplicate key"),
        ("[metric]\nkind = euclidean\n[region]\nrect = 1, 0, 0, 1", 4, "x1min < x1max"),
    ],
)
def test_errors_name_line(text, line, fragment):
    with pytest.raises(SpecFileError) as err:
        parse_spec(text)
    assert err.value.line == line
    assert fragment in str(err.value)


def test_missing_pieces():
    with pytest.raises(SpecFileError):
        parse_spec("[region]\nsphere = true")
    with pytest.raises(SpecFileError, match="needs key 'a'"):
        parse_spec("[metric]\nkind = riemannian")
    with pytest.raises(SpecFileError, match="domain"):
        parse_spec("[metric]\nkind = hilbert")
    with pytest.raises(SpecFileError, match="atlas"):
        parse_spec("[metric]\nkind = sphere_round\natlas = plane")
    with pytest.raises(SpecFileError, match="not found"):
        load_spec("/nonexistent/file.spec")
