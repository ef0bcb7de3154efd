"""End-to-end acceptance checks; each test carries the criterion it covers.

The pass/fail summary is printed by the terminal-summary hook in conftest.
"""

import json
import time

import numpy as np
import pytest
import scipy.optimize

from conftest import random_net
from neuralabs import cli
from neuralabs.asm import build_mesh, certify_asm
from neuralabs.cegis import LoopConfig, NeuralAbstraction, synthesize, tighten
from neuralabs.certifier import COUNTEREXAMPLE, ErrorBound, certify
from neuralabs.hybridizer import DEGENERACY, Configuration, affine_restriction, enumerate_modes
from neuralabs.model import load_benchmark
from neuralabs.netlearn import forward
from neuralabs.pipeline import TABLE1, run_pipeline, table1_config
from neuralabs.polylib import Box
from neuralabs.reach import SAFE, reach, simulate_concrete

from test_reach import single_mode, state_box_at

PRIMARY = ("water_tank", "nl1", "nl2", "jet_engine")
STRETCH = ("steam_governor", "exponential")
ARCHS = {"water_tank": (12,), "nl1": (10,), "nl2": (12, 10), "jet_engine": (10, 16)}


@pytest.fixture(scope="session")
def table1_runs():
    runs = {}
    for name in PRIMARY + STRETCH:
        budget = 600.0 if name in PRIMARY else 1800.0
        cfg = table1_config(name, seed=0, retries=5, timeout=budget, threads=1)
        t = time.perf_counter()
        res = run_pipeline(load_benchmark(name), cfg)
        runs[name] = (res, time.perf_counter() - t)
        print(f"{name}: {res.verdict}, eps {res.report['eps']}, modes {res.report['modes']}, {runs[name][1]:.1f} s")
    return runs


def _bits(net, X):
    """Activation pattern of each row of X, one boolean vector per layer, concatenated."""
    out, y = [], X
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = y @ w.T + b
        out.append(z >= 0)
        y = np.maximum(z, 0.0)
    return np.hstack(out)


@pytest.mark.criterion(1, "translation exactness: 1000 nets x 1000 points, error <= 1e-9, < 30 s")
def test_translation_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(1000):
        n = 2 + k % 2
        depth = 1 + (k // 2) % 2
        hidden = [int(h) for h in rng.integers(1, 17, depth)]
        net = random_net(rng, n, hidden)
        X = rng.uniform(-1, 1, (1000, n))
        Y = forward(net, X)
        bits = _bits(net, X)
        patterns, inverse = np.unique(bits, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for p_idx, pat in enumerate(patterns):
            splits = np.cumsum(hidden)[:-1]
            C = Configuration(tuple(tuple(int(v) for v in part) for part in np.split(pat, splits)))
            A, b = affine_restriction(net, C)
            rows = inverse == p_idx
            worst = max(worst, float(np.abs(X[rows] @ A.T + b - Y[rows]).max()))
    elapsed = time.perf_counter() - t0
    print(f"max deviation {worst:.3e} in {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 30


def _oracle_radius(net, code, n):
    """Chebyshev radius of the region with activation pattern ``code`` (scipy LP)."""
    rows, rhs = [], []
    M, v = np.eye(n), np.zeros(n)
    pos = 0
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a, beta = w @ M, w @ v + b
        d = np.array([(code >> (pos + j)) & 1 for j in range(w.shape[0])], dtype=float)
        pos += w.shape[0]
        s = 2 * d - 1
        rows.append(-s[:, None] * a)
        rhs.append(s * beta)
        M, v = d[:, None] * a, d * beta
    A = np.vstack(rows + [np.eye(n), -np.eye(n)])
    c = np.concatenate(rhs + [np.ones(n), np.ones(n)])
    norms = np.linalg.norm(A, axis=1)
    res = scipy.optimize.linprog(np.r_[np.zeros(n), -1.0], A_ub=np.hstack([A, norms[:, None]]), b_ub=c, bounds=[(None, None)] * n + [(None, None)], method="highs")
    return -res.fun if res.status == 0 else -np.inf


def _code(C):
    flat = [bit for layer in C.bits for bit in layer]
    return sum(bit << i for i, bit in enumerate(flat))


@pytest.mark.criterion(2, "mode enumeration equals 2^H brute force on 50 nets, H <= 12, < 120 s")
def test_mode_enumeration_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    domain2, domain3 = Box(-np.ones(2), np.ones(2)), Box(-np.ones(3), np.ones(3))
    thr = DEGENERACY * 2.0
    sizes = []
    for k in range(50):
        H = 2 + k % 11
        n = 2 + (k // 11) % 2
        if k % 3 == 0 and H >= 4:
            first = int(rng.integers(2, H - 1))
            hidden = [first, H - first]
        else:
            hidden = [H]
        net = random_net(rng, n, hidden)
        ours = {_code(C) for C, _ in enumerate_modes(net, domain2 if n == 2 else domain3)}
        radius = {code: _oracle_radius(net, code, n) for code in range(2**H)}
        interior = {code for code, r in radius.items() if r > thr + 1e-9}
        assert interior <= ours, f"net {k}: missing modes {sorted(interior - ours)[:5]}"
        # anything extra must be a sliver, never an empty pattern
        assert all(radius[code] >= thr - 1e-9 for code in ours - interior), f"net {k}: spurious modes"
        sizes.append(H)
    elapsed = time.perf_counter() - t0
    print(f"hidden sizes {sorted(set(sizes))}, {elapsed:.1f} s")
    assert len(set(sizes)) >= 10
    assert elapsed < 120


@pytest.mark.criterion(3, "certifier soundness: 1e5 samples per certificate, counterexamples re-validate, < 10 min")
def test_certifier_soundness(table1_runs):
    t0 = time.perf_counter()
    checked = refuted = 0
    for name, (res, _) in table1_runs.items():
        model = load_benchmark(name)
        rng = np.random.default_rng(5)
        for abs_ in res.certified:
            X = rng.uniform(model.domain.lo, model.domain.hi, (100_000, model.n))
            F = model.f(X)
            ok = np.all(np.isfinite(F), axis=1)
            resid = np.abs(F[ok] - forward(abs_.net, X[ok])) + model.delta
            assert np.all(resid <= abs_.bound.per_component), f"{name}: violation {resid.max(axis=0)} > {abs_.bound.per_component}"
            checked += 1
        # ask for half the certified bound to provoke counterexamples, then replay them exactly
        if res.abstraction is not None:
            net = res.abstraction.net
            tight = ErrorBound(np.maximum(res.abstraction.bound.per_component * 0.5, 2 * model.delta + 1e-6), model.delta)
            cex = certify(model, net, tight)
            if cex.verdict == COUNTEREXAMPLE:
                r = np.abs(model.f(cex.point) - forward(net, cex.point)) + model.delta
                gap = r - tight.per_component
                assert gap.max() > 0 and cex.margin > 0
                refuted += 1
    elapsed = time.perf_counter() - t0
    print(f"{checked} certificates sampled, {refuted} counterexamples replayed, {elapsed:.1f} s")
    assert checked >= 6 and refuted >= 1
    assert elapsed < 600


@pytest.mark.criterion(4, "CEGIS robustness: Jet [10] ratio >= 0.8 and mean eps <= 0.30; Exponential [10] ratio >= 0.3")
def test_cegis_robustness():
    jet = load_benchmark("jet_engine")
    wins, best = 0, []
    for seed in range(10):
        res = tighten(jet, [10], 0.5, LoopConfig(seed=seed, time_budget=300))
        if res.first_success:
            wins += 1
            best.append(res.best.eps)
    expo = load_benchmark("exponential")
    expo_wins = sum(isinstance(synthesize(expo, [10], 0.5, LoopConfig(seed=s, time_budget=300)), NeuralAbstraction) for s in range(10))
    print(f"jet: {wins}/10, mean eps {np.mean(best):.3f}, range [{min(best):.3f}, {max(best):.3f}]; exponential: {expo_wins}/10")
    assert wins / 10 >= 0.8
    assert np.mean(best) <= 0.30
    assert expo_wins / 10 >= 0.3


@pytest.mark.criterion(5, "ASM: 8/32/128 simplices, Jet g=2 bound <= 1.33, monotone refinement")
def test_asm_baseline():
    for name in ("jet_engine", "exponential", "nl2"):
        model = load_benchmark(name)
        eps = []
        for g, count in ((2, 8), (4, 32), (8, 128)):
            rep = certify_asm(model, build_mesh(model.domain, g, model.f))
            assert rep.partitions == count
            eps.append(rep.eps)
        print(f"{name}: {[round(e, 4) for e in eps]}")
        assert eps[0] >= eps[1] >= eps[2]
        if name == "jet_engine":
            assert eps[0] <= 1.33


@pytest.mark.criterion(6, "flowpipe soundness: 100 RK4 trajectories per Safe run, zero containment failures")
def test_flowpipe_soundness(table1_runs):
    safe_runs = [(name, res) for name, (res, _) in table1_runs.items() if res.verdict == SAFE]
    assert safe_runs
    for name, res in safe_runs:
        model = load_benchmark(name)
        x0 = np.random.default_rng(11).uniform(model.init.lo, model.init.hi, (100, model.n))
        tr = simulate_concrete(model, x0, model.horizon, 1e-4)
        covered = res.flowpipe.covers(tr.times, tr.states)
        misses = int((~covered).sum())
        in_bad = np.all((tr.states >= model.bad.lo) & (tr.states <= model.bad.hi), axis=2)
        print(f"{name}: {misses} uncovered states, {int(in_bad.sum())} in the bad set")
        assert misses == 0
        assert not in_bad.any()


@pytest.mark.criterion(7, "benchmark suite: four primary benchmarks Safe in 600 s, one stretch benchmark Safe in 1800 s")
def test_benchmark_suite_verdicts(table1_runs):
    for name in PRIMARY:
        res, secs = table1_runs[name]
        assert tuple(res.report["arch"]) == ARCHS[name] == TABLE1[name]["arch"]
        assert len(res.report["seeds_tried"]) <= 5
        assert res.verdict == SAFE, f"{name}: {res.verdict}"
        assert secs < 600, f"{name}: {secs:.0f} s"
    stretch = [name for name in STRETCH if table1_runs[name][0].verdict == SAFE and table1_runs[name][1] < 1800]
    assert stretch, "neither stretch benchmark is Safe"


@pytest.mark.criterion(8, "analytic reach: x' = -x within 5e-3 at t = 1; x' = 1 + d covers [0.9, 1.1]")
def test_analytic_reachability():
    decay = single_mode([[-1.0]], [0.0], 0.0, [[0.9, 1.0]], [[4.0, 5.0]])
    box = state_box_at(reach(decay), 1.0)
    exact = np.exp(-1.0) * np.array([0.9, 1.0])
    assert box.lo[0] <= exact[0] and box.hi[0] >= exact[1]
    assert max(exact[0] - box.lo[0], box.hi[0] - exact[1]) <= 5e-3
    drift = single_mode([[0.0]], [1.0], 0.1, [[0.0, 0.0]], [[4.0, 5.0]])
    box = state_box_at(reach(drift), 1.0)
    assert box.lo[0] <= 0.9 and box.hi[0] >= 1.1


@pytest.mark.criterion(9, "determinism: two --threads 1 runs give byte-identical report and automaton")
def test_determinism(tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cli.main(["run", "nl2", "--arch", "12,10", "--eps", "0.2", "--seed", "3", "--threads", "1", "--json-out", str(out)])
        outputs.append(((out / "report.json").read_bytes(), (out / "automaton.json").read_bytes()))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
    assert json.loads(outputs[0][0])["modes"] > 1
