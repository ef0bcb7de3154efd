import numpy as np
import pytest
import scipy.optimize
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from neuralabs.polylib import Box, Polyhedron, bbox, chebyshev, clip_polygon, lp_feasible, maximize, polygon_2d, remove_redundant
from neuralabs.simplex import linprog


@st.composite
def lps(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(1, 5))
    m = draw(st.integers(0, 10))
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m) + draw(st.floats(-0.5, 1.0))
    c = rng.normal(size=n)
    lb = -rng.uniform(0.5, 2, n)
    ub = rng.uniform(0.5, 2, n)
    return c, A, b, lb, ub


@given(lps())
def test_simplex_agrees_with_highs(problem):
    c, A, b, lb, ub = problem
    ours = linprog(c, A, b, lb, ub)
    ref = scipy.optimize.linprog(c, A_ub=A if A.size else None, b_ub=b if A.size else None, bounds=list(zip(lb, ub)), method="highs")
    if ref.status == 2:
        assert ours.status == "infeasible"
        return
    assert ref.status == 0
    assert ours.status == "optimal"
    assert ours.fun == pytest.approx(ref.fun, abs=1e-7)
    assert np.all(A @ ours.x <= b + 1e-7) and np.all(ours.x >= lb - 1e-9) and np.all(ours.x <= ub + 1e-9)


def test_degenerate_cycling_example_terminates():
    # Beale's cycling example, which loops under the textbook pivot rule
    c = np.array([-0.75, 150, -0.02, 6])
    A = np.array([[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]])
    b = np.array([0, 0, 1.0])
    res = linprog(c, A, b, np.zeros(4), np.full(4, 1e3))
    assert res.status == "optimal"
    assert res.fun == pytest.approx(-0.05, abs=1e-9)


def test_unbounded_ray():
    res = linprog([-1.0], np.zeros((0, 1)), np.zeros(0), [0.0], [np.inf])
    assert res.status == "unbounded"


def _scipy_chebyshev(A, c, box):
    n = box.n
    rows = np.vstack([A, np.eye(n), -np.eye(n)])
    rhs = np.concatenate([c, box.hi, -box.lo])
    norms = np.linalg.norm(rows, axis=1)
    res = scipy.optimize.linprog(np.r_[np.zeros(n), -1.0], A_ub=np.hstack([rows, norms[:, None]]), b_ub=rhs, bounds=[(None, None)] * n + [(0, None)], method="highs")
    return -res.fun if res.status == 0 else -np.inf


@st.composite
def polyhedra(draw, n=None):
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    n = n or draw(st.integers(1, 3))
    m = draw(st.integers(0, 6))
    A = rng.normal(size=(m, n))
    c = rng.normal(size=m) * 0.5
    return Polyhedron(A, c, Box(-np.ones(n), np.ones(n)))


@given(polyhedra())
def test_chebyshev_radius_matches_oracle(p):
    ours = chebyshev(p)
    ref = _scipy_chebyshev(p.A, p.c, p.box)
    if ref < 0 or ref == -np.inf:
        assert ours.radius <= 1e-9
        return
    assert ours.radius == pytest.approx(ref, abs=1e-7)
    assert p.contains(ours.center, 1e-7)
    assert lp_feasible(p).feasible == (ref >= 0)


@given(polyhedra())
def test_bbox_and_support(p):
    box = bbox(p)
    probe = np.random.default_rng(0).uniform(-1, 1, (4000, p.n))
    inside = probe[p.contains(probe, 0.0)]
    if box is None:
        assert inside.size == 0
        return
    assert np.all(inside >= box.lo - 1e-9) and np.all(inside <= box.hi + 1e-9)
    for k in range(p.n):
        e = np.eye(p.n)[k]
        assert maximize(p, e) == pytest.approx(box.hi[k], abs=1e-9)
    d = np.ones(p.n)
    if inside.size:
        assert maximize(p, d) >= (inside @ d).max() - 1e-9


@given(polyhedra())
def test_removing_redundant_rows_keeps_the_set(p):
    q = remove_redundant(p)
    pts = np.random.default_rng(2).uniform(-1, 1, (3000, p.n))
    assert np.array_equal(p.contains(pts, 1e-7), q.contains(pts, 1e-7))


@given(polyhedra(n=2))
def test_polygon_area_matches_convex_hull_of_samples(p):
    V = polygon_2d(p)
    if chebyshev(p).radius < 1e-6:
        return
    area = ConvexHull(V).volume
    pts = np.random.default_rng(3).uniform(-1, 1, (40000, 2))
    frac = p.contains(pts, 0.0).mean() * 4.0
    assert area == pytest.approx(frac, abs=0.06)
    assert np.all(p.contains(V, 1e-9))


def test_clip_square_by_diagonal():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tri = clip_polygon(sq, np.array([[1.0, 1.0]]), np.array([1.0]))
    assert ConvexHull(tri).volume == pytest.approx(0.5)


def test_box_helpers():
    a = Box.from_bounds([[0, 2], [-1, 1]])
    b = Box.from_bounds([[1, 3], [0, 4]])
    assert a.intersection(b).bounds() == [[1.0, 2.0], [0.0, 1.0]]
    assert a.hull(b).bounds() == [[0.0, 3.0], [-1.0, 4.0]]
    assert a.volume == pytest.approx(4.0)
    assert a.corners().shape == (4, 2)
    assert not a.intersects(Box.from_bounds([[5, 6], [0, 1]]))
