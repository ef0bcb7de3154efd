import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from neuralabs.model import loads
from neuralabs.netlearn import NeuralNet

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", deadline=None, max_examples=15)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_net(rng: np.random.Generator, n: int, hidden, scale: float = 1.0) -> NeuralNet:
    dims = [n, *hidden, n]
    ws = [rng.normal(0.0, scale / np.sqrt(a), (b, a)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [rng.normal(0.0, 0.3 * scale, b) for b in dims[1:]]
    return NeuralNet(ws, bs)


def toy_model(flow, domain, *, init=None, bad=None, horizon=1.0, delta=0.0, variables=None):
    n = len(flow)
    variables = variables or ["x", "y", "z"][:n]
    init = init or [[lo, lo + 0.01 * (hi - lo)] for lo, hi in domain]
    bad = bad or [[hi - 0.01 * (hi - lo), hi] for lo, hi in domain]
    quoted = ", ".join(f'"{f}"' for f in flow)
    text = (
        f"name = toy\nvars = [{', '.join(variables)}]\nflow = [{quoted}]\n"
        f"domain = {domain}\ninit = {init}\nbad = {bad}\ndelta = {delta}\nhorizon = {horizon}\n"
    )
    return loads(text)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        if mark is not None and call.when == "setup" and call.excinfo is not None:
            _CRITERIA[mark.args[0]] = (mark.args[1], False, str(call.excinfo.value).splitlines()[0][:120])
        return
    ok = call.excinfo is None
    detail = "" if ok else str(call.excinfo.value).splitlines()[0][:120]
    _CRITERIA[mark.args[0]] = (mark.args[1], ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        text, ok, detail = _CRITERIA[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
