import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import toy_model
from neuralabs.asm import build_mesh, certify_asm, report_csv
from neuralabs.errors import SingularSimplex
from neuralabs.polylib import Box


@given(st.integers(1, 3), st.integers(1, 4))
def test_kuhn_mesh_tiles_the_box(n, g):
    dom = Box(-np.ones(n), np.ones(n))
    mesh = build_mesh(dom, g)
    fact = [1, 1, 2, 6][n]
    assert mesh.count == fact * g**n
    assert mesh.volumes().sum() == pytest.approx(dom.volume)
    X = np.random.default_rng(0).uniform(-1, 1, (100, n))
    for x in X:
        i = mesh.locate(x)
        assert np.all(mesh.simplices[i].A_ub @ x <= mesh.simplices[i].c_ub + 1e-12)


def test_interpolant_is_exact_at_vertices_and_on_affine_fields():
    model = toy_model(["2*x - y + 0.5", "x + 3*y"], [[-1, 1], [-1, 1]])
    mesh = build_mesh(model.domain, 3, model.f)
    X = np.random.default_rng(1).uniform(-1, 1, (200, 2))
    np.testing.assert_allclose(mesh.interpolate(X), model.f(X), atol=1e-12)
    np.testing.assert_allclose(mesh.interpolate(mesh.points), model.f(mesh.points), atol=1e-12)


@pytest.mark.parametrize("g", [1, 2, 4])
def test_square_interpolation_error_is_a_quarter_cell_squared(g):
    # on a cell of width w the chord of x^2 is off by at most w^2 / 4
    model = toy_model(["x^2"], [[-1, 1]])
    rep = certify_asm(model, build_mesh(model.domain, g, model.f), rel_tol=1e-3)
    w = 2.0 / g
    assert w * w / 4 <= rep.global_bound[0] <= w * w / 4 * (1 + 2e-3)


def test_csv_has_one_row_per_resolution():
    model = toy_model(["x^2"], [[-1, 1]])
    rows = [certify_asm(model, build_mesh(model.domain, g, model.f)) for g in (1, 2)]
    text = report_csv(rows)
    assert text.splitlines()[0] == "g,N_p,eps,seconds"
    assert [line.split(",")[:2] for line in text.splitlines()[1:]] == [["1", "1"], ["2", "2"]]


def test_zero_resolution_rejected():
    with pytest.raises(ValueError):
        build_mesh(Box(np.zeros(1), np.ones(1)), 0)
    with pytest.raises(SingularSimplex):
        build_mesh(Box(np.zeros(2), np.array([1.0, 0.0])), 1)
