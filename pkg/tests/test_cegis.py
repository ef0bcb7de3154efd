import numpy as np
import pytest

from conftest import toy_model
from neuralabs.cegis import Failure, LoopConfig, NeuralAbstraction, augment, synthesize, tighten
from neuralabs.certifier import ErrorBound
from neuralabs.netlearn import Dataset, forward

LINEAR = toy_model(["-x + 0.5*y", "x - y"], [[-1, 1], [-1, 1]])
CURVED = toy_model(["y", "-sin(x) - 0.5*y"], [[-1, 1], [-1, 1]])


def test_synthesis_certifies_an_easy_target():
    out = synthesize(LINEAR, [6], 0.3, LoopConfig(seed=0, time_budget=60))
    assert isinstance(out, NeuralAbstraction)
    assert out.eps <= 0.3 + 1e-12
    X = np.random.default_rng(0).uniform(-1, 1, (20_000, 2))
    assert np.all(np.abs(LINEAR.f(X) - forward(out.net, X)) <= out.bound.per_component)


def test_abstraction_json_round_trip():
    out = synthesize(LINEAR, [4], 0.4, LoopConfig(seed=1, time_budget=60))
    back = NeuralAbstraction.loads(out.dumps())
    assert back.dumps() == out.dumps()


def test_unreachable_target_fails_cleanly():
    out = synthesize(CURVED, [2], 1e-4, LoopConfig(seed=0, time_budget=5, max_iterations=3))
    assert isinstance(out, Failure)
    assert out.iterations <= 3
    assert out.reason


def test_bad_targets_are_rejected():
    with pytest.raises(ValueError):
        synthesize(LINEAR, [4], ErrorBound(np.array([0.1, 0.1, 0.1])))
    model = toy_model(["x"], [[-1, 1]], delta=0.2)
    with pytest.raises(ValueError):
        synthesize(model, [4], ErrorBound(np.array([0.1]), 0.2))


def test_augmentation_stays_in_the_domain():
    data = Dataset(np.zeros((1, 2)), np.zeros((1, 2)))
    cfg = LoopConfig()
    out = augment(data, np.array([0.99, -0.99]), LINEAR, cfg, np.random.default_rng(0))
    assert len(out) == 1 + 1 + cfg.n_aug
    assert np.all(np.abs(out.points) <= 1.0)
    np.testing.assert_allclose(out.values, LINEAR.f(out.points))


def test_tightening_is_monotone():
    res = tighten(CURVED, [8], 0.5, LoopConfig(seed=0, time_budget=40))
    ok = [h["eps"] for h in res.history if h["success"]]
    assert ok == sorted(ok, reverse=True)
    assert res.best is not None and res.best.eps <= 0.5
