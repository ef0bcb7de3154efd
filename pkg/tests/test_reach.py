import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from conftest import toy_model
from neuralabs.hybridizer import Configuration, HybridAutomaton, Mode, build_transitions
from neuralabs.polylib import Box, Polyhedron
from neuralabs.reach import (
    SAFE,
    UNKNOWN,
    ReachConfig,
    Zonotope,
    expm,
    hull_enclosure,
    phi_gamma,
    reach,
    simulate_concrete,
)


def single_mode(A, b, e, init, bad, horizon=1.0, domain=(-5.0, 5.0)):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    dom = Box(np.full(n, domain[0]), np.full(n, domain[1]))
    e = np.broadcast_to(np.asarray(e, dtype=float), (n,))
    mode = Mode(Configuration(()), dom.as_polyhedron(), A, np.asarray(b, dtype=float).reshape(n), Box(-e, e))
    return HybridAutomaton([mode], [], dom, Box.from_bounds(init), Box.from_bounds(bad), horizon)


def state_box_at(fp, t):
    boxes = [s.box for s in fp.segments_at(t)]
    out = boxes[0]
    for b in boxes[1:]:
        out = out.hull(b)
    return out


matrices = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).normal(size=(3, 3)) * np.random.default_rng(s + 1).uniform(0.1, 4))


@given(matrices)
def test_matrix_exponential_matches_scipy(M):
    ref = scipy.linalg.expm(M)
    # entrywise checks are meaningless for entries produced by cancellation
    assert np.abs(expm(M) - ref).max() <= 1e-11 * np.abs(ref).max()


@given(matrices, st.floats(0.001, 0.5))
def test_integrated_exponential_matches_quadrature(A, h):
    _, gamma = phi_gamma(A, h)
    s = np.linspace(0, h, 2001)
    vals = np.array([scipy.linalg.expm(A * t) for t in s])
    np.testing.assert_allclose(gamma, scipy.integrate.simpson(vals, x=s, axis=0), rtol=1e-8, atol=1e-12)


@st.composite
def zonotopes(draw, n=2):
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    m = draw(st.integers(1, 8))
    return Zonotope(rng.normal(size=n), rng.normal(size=(n, m)))


@given(zonotopes())
def test_support_and_halfspaces_agree_on_generator_combinations(Z):
    rng = np.random.default_rng(0)
    pts = Z.center + (Z.generators @ rng.uniform(-1, 1, (Z.generators.shape[1], 200))).T
    A, c = Z.halfspaces()
    assert np.all(pts @ A.T <= c + 1e-9)
    for d in rng.normal(size=(10, 2)):
        assert (pts @ d).max() <= Z.support(d) + 1e-9
    B = Z.box()
    assert np.all(B.contains(pts, 1e-9))


@given(zonotopes(), st.integers(2, 4))
def test_order_reduction_encloses(Z, order):
    R = Z.reduce(order)
    assert R.generators.shape[1] <= order * Z.n
    for d in np.random.default_rng(1).normal(size=(20, 2)):
        assert R.support(d) >= Z.support(d) - 1e-9


@given(zonotopes())
def test_hull_enclosure_covers_segment(Z):
    M = np.array([[0.9, 0.1], [-0.2, 1.05]])
    W = Z.linear_map(M).translate([0.3, -0.1])
    H = hull_enclosure(Z, W)
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = rng.uniform(-1, 1, Z.generators.shape[1])
        lam = rng.uniform()
        x = Z.center + Z.generators @ a
        y = W.center + W.generators @ a
        assert H.contains_point((1 - lam) * x + lam * y, 1e-9)


def test_decay_matches_the_closed_form():
    ha = single_mode([[-1.0]], [0.0], 0.0, [[0.9, 1.0]], [[4.0, 5.0]])
    fp = reach(ha, ReachConfig(step=0.01))
    box = state_box_at(fp, 1.0)
    exact = np.exp(-1.0) * np.array([0.9, 1.0])
    assert box.lo[0] <= exact[0] and box.hi[0] >= exact[1]
    assert exact[0] - box.lo[0] <= 5e-3 and box.hi[0] - exact[1] <= 5e-3
    assert fp.verdict == SAFE


def test_disturbance_widens_linearly():
    ha = single_mode([[0.0]], [1.0], 0.1, [[0.0, 0.0]], [[4.0, 5.0]])
    box = state_box_at(reach(ha), 1.0)
    assert box.lo[0] <= 0.9 and box.hi[0] >= 1.1


def test_rotation_flowpipe_contains_simulations():
    ha = single_mode([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0], 0.0, [[0.9, 1.0], [-0.05, 0.05]], [[-0.2, 0.2], [-0.2, 0.2]], horizon=3.0)
    fp = reach(ha)
    assert fp.verdict == SAFE
    t = np.linspace(0, 3, 61)
    x0 = np.random.default_rng(0).uniform([0.9, -0.05], [1.0, 0.05], (40, 2))
    states = np.array([[[np.cos(tk) * x[0] - np.sin(tk) * x[1], np.sin(tk) * x[0] + np.cos(tk) * x[1]] for x in x0] for tk in t])
    assert fp.covers(t, states).all()


def test_reaching_the_bad_set_is_unknown():
    ha = single_mode([[0.0]], [1.0], 0.0, [[0.0, 0.1]], [[0.5, 0.6]])
    assert reach(ha).verdict == UNKNOWN


# the branch scheme re-propagates on every hull growth, so it gets a shorter run
@pytest.mark.parametrize("switching, horizon", [("enclosure", 2.0), ("branch", 1.0)])
def test_switched_system_contains_simulations(switching, horizon):
    # two affine modes split at x = 0, glued along the switching line
    dom = Box(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
    left = Polyhedron(np.array([[1.0, 0.0]]), np.array([0.0]), dom)
    right = Polyhedron(np.array([[-1.0, 0.0]]), np.array([0.0]), dom)
    e = Box(-np.full(2, 0.01), np.full(2, 0.01))
    A = np.array([[-0.5, -1.0], [1.0, -0.5]])
    modes = [Mode(Configuration(((0,),)), left, A, np.array([0.2, 0.0]), e), Mode(Configuration(((1,),)), right, A, np.array([-0.2, 0.0]), e)]
    ha = HybridAutomaton(modes, build_transitions(modes), dom, Box.from_bounds([[0.5, 0.6], [0.0, 0.1]]), Box.from_bounds([[1.8, 2], [1.8, 2]]), horizon)
    fp = reach(ha, ReachConfig(switching=switching))

    def f(X):
        return X @ A.T + np.where(X[:, :1] <= 0, [0.2, 0.0], [-0.2, 0.0])

    x = np.random.default_rng(3).uniform([0.5, 0.0], [0.6, 0.1], (30, 2))
    h = 1e-3
    times, states = [0.0], [x.copy()]
    for k in range(int(round(horizon / h))):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (k + 1) % 20 == 0:
            times.append((k + 1) * h)
            states.append(x.copy())
    assert fp.covers(np.array(times), np.array(states)).all()


def test_concrete_simulation_stops_at_the_domain_edge():
    model = toy_model(["1"], [[0, 1]])
    tr = simulate_concrete(model, [[0.5]], 1.0, 1e-2)
    # x reaches 1 after 50 steps, up to rounding in the accumulated position
    assert tr.exit_time[0] in (pytest.approx(0.50), pytest.approx(0.51))
    assert np.isnan(tr.states[-1, 0, 0])
