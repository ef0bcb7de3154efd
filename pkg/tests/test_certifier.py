import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_net, toy_model
from neuralabs.certifier import (
    CERTIFIED,
    COUNTEREXAMPLE,
    AffineApproximant,
    CertBudget,
    ErrorBound,
    bound_residual,
    certify,
    pick_split,
)
from neuralabs.netlearn import forward
from neuralabs.polylib import Box

# f(x) = x^2 against the zero map on [-1, 1]: the worst residual is exactly 1 at x = +-1
SQUARE = toy_model(["x^2"], [[-1, 1]])
ZERO = AffineApproximant(np.zeros((1, 1)), np.zeros(1))


def test_square_certifies_just_above_the_true_maximum():
    res = certify(SQUARE, ZERO, ErrorBound(np.array([1.001])))
    assert res.verdict == CERTIFIED
    assert res.max_residual_upper_bound[0] <= 1.001


def test_square_refuted_just_below_with_a_checkable_witness():
    res = certify(SQUARE, ZERO, ErrorBound(np.array([0.999])))
    assert res.verdict == COUNTEREXAMPLE
    x = res.point
    assert abs(x[0] ** 2) > 0.999
    assert res.margin > 0


def test_bound_residual_brackets_the_true_maximum():
    rb = bound_residual(SQUARE, ZERO, rel_tol=1e-3)
    assert rb.lower[0] <= 1.0 <= rb.upper[0] <= 1.0 * (1 + 2e-3)


def test_secant_line_residual():
    # x^2 - x on [0, 1] peaks at x = 1/2 with value 1/4
    model = toy_model(["x^2"], [[0, 1]])
    rb = bound_residual(model, AffineApproximant(np.ones((1, 1)), np.zeros(1)), rel_tol=1e-4)
    assert rb.lower[0] <= 0.25 <= rb.upper[0] <= 0.25 * (1 + 1e-3)


def test_delta_eats_into_the_budget():
    model = toy_model(["x^2"], [[-1, 1]], delta=0.1)
    assert certify(model, ZERO, ErrorBound(np.array([1.05]), 0.1)).verdict == COUNTEREXAMPLE
    assert certify(model, ZERO, ErrorBound(np.array([1.11]), 0.1)).verdict == CERTIFIED


def test_even_split_of_a_two_norm_budget():
    e = ErrorBound.from_eps(0.5, 2)
    np.testing.assert_allclose(e.per_component, [0.5 / np.sqrt(2)] * 2)
    assert e.reported_eps == pytest.approx(0.5)


def test_split_axis_prefers_the_widest_contributor():
    box = Box(np.zeros(2), np.array([1.0, 4.0]))
    assert pick_split(box, [1.0, 1.0]) == 1


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(["sin(x)*y", "x^2 - y", "exp(0.5*x) - cos(y)"]))
def test_certificates_survive_dense_sampling(seed, flow0):
    model = toy_model([flow0, "x*y"], [[-1, 1], [-1, 1]])
    net = random_net(np.random.default_rng(seed), 2, [6], scale=0.5)
    rb = bound_residual(model, net, rel_tol=0.05)
    target = ErrorBound(rb.upper * 1.01 + 1e-6)
    res = certify(model, net, target, CertBudget(max_boxes=200_000))
    X = np.random.default_rng(seed + 1).uniform(-1, 1, (20_000, 2))
    resid = np.abs(model.f(X) - forward(net, X)).max(axis=0)
    assert np.all(resid <= rb.upper + 1e-12)
    if res.verdict == CERTIFIED:
        assert np.all(resid <= target.per_component)
    elif res.verdict == COUNTEREXAMPLE:
        r = np.abs(model.f(res.point) - forward(net, res.point))
        assert np.any(r > target.per_component)


def test_constraints_restrict_the_domain():
    # on the triangle x <= 0.5 the residual of x^2 vs 0 is at most 1 (from x = -1) ...
    tri = (np.array([[1.0]]), np.array([0.5]))
    res = certify(SQUARE, ZERO, ErrorBound(np.array([1.001])), domain=Box(np.array([-1.0]), np.array([1.0])), constraints=tri)
    assert res.verdict == CERTIFIED
    # ... and at most 0.25 on [0, 0.5]
    rb = bound_residual(SQUARE, ZERO, domain=Box(np.array([0.0]), np.array([1.0])), constraints=tri, rel_tol=1e-3)
    assert rb.upper[0] == pytest.approx(0.25, rel=2e-3)


def test_proof_needs_recording():
    res = certify(SQUARE, ZERO, ErrorBound(np.array([1.01])))
    with pytest.raises(ValueError):
        res.proof_json()
    res = certify(SQUARE, ZERO, ErrorBound(np.array([1.01])), CertBudget(keep_proof=True))
    assert '"leaves"' in res.proof_json()
