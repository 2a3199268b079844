import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficdbn.cpd import (
    NoisyOrKernel,
    NoisyOrParams,
    SatPatKernel,
    SatPatParams,
    init_params,
    make_kernel,
    make_params,
    noisyor_congestion_prob,
    noisyor_factor,
    noisyor_sample_step,
    satpat_congestion_prob,
    satpat_sample_step,
)
from trafficdbn.generator import grid20_network


def test_noisyor_examples():
    assert noisyor_congestion_prob([0.8, 1.0, 1.0], [0, 0]) == pytest.approx(0.2)
    assert noisyor_congestion_prob([1.0, 0.3, 0.3], [0, 0]) == 0.0
    assert noisyor_congestion_prob([1.0, 0.5, 0.5], [1, 1]) == pytest.approx(0.75)


def test_length_mismatch():
    with pytest.raises(ValueError):
        noisyor_congestion_prob([0.5, 0.5], [1, 1])
    with pytest.raises(ValueError):
        satpat_congestion_prob([0.5, 0.5], [1, 1])


@settings(max_examples=100, deadline=None)
@given(
    q=st.lists(st.floats(0.0, 0.999), min_size=2, max_size=7),
    data=st.data(),
)
def test_noisyor_monotone_in_eta(q, data):
    eta = data.draw(st.lists(st.booleans(), min_size=len(q) - 1, max_size=len(q) - 1))
    base = noisyor_congestion_prob(q, eta)
    for j in range(len(eta)):
        if not eta[j]:
            flipped = list(eta)
            flipped[j] = True
            assert noisyor_congestion_prob(q, flipped) >= base - 1e-15


def test_sample_all_zero_p(rng):
    for _ in range(50):
        s, aux = noisyor_sample_step([1.0, 1.0, 1.0], [1, 1], rng)
        assert s == 0 and not aux.any()


def test_sample_deterministic_line(rng):
    for _ in range(50):
        s, aux = noisyor_sample_step([1.0, 0.0, 1.0], [1, 0], rng)
        assert s == 1 and aux[1]


def test_sample_frequency(rng):
    q, eta = [0.7, 0.6, 0.5, 0.9], [1, 0, 1]
    n = 100_000
    freq = np.mean([noisyor_sample_step(q, eta, rng)[0] for _ in range(n)])
    p = noisyor_congestion_prob(q, eta)
    assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_factor_cases():
    q = [0.7, 0.4, 0.2]
    assert noisyor_factor(q, [1, 1], [0, 1, 0], 0) == 0.0
    assert noisyor_factor(q, [0, 0], [0, 0, 0], 0) == pytest.approx(0.7)
    assert noisyor_factor(q, [0, 1], [0, 1, 0], 1) == 0.0  # line on for a quiet neighbour
    assert noisyor_factor(q, [1, 1], [1, 0, 1], 1) == pytest.approx(0.3 * 0.4 * 0.8)


@settings(max_examples=100, deadline=None)
@given(q=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6), data=st.data())
def test_factor_marginalizes_to_cpd(q, data):
    eta = data.draw(st.lists(st.booleans(), min_size=len(q) - 1, max_size=len(q) - 1))
    total = {0: 0.0, 1: 0.0}
    for aux in itertools.product((0, 1), repeat=len(q)):
        for s in (0, 1):
            total[s] += noisyor_factor(q, eta, aux, s)
    assert total[0] + total[1] == pytest.approx(1.0, abs=1e-12)
    assert total[1] == pytest.approx(noisyor_congestion_prob(q, eta), abs=1e-12)


def test_satpat_examples():
    assert satpat_congestion_prob([0.1, 0.4, 0.9], [1, 0]) == 0.4
    assert satpat_congestion_prob([0.1, 0.4, 0.9], [0, 0]) == 0.1
    assert satpat_congestion_prob([0.1, 0.4, 0.9], [1, 1]) == 0.9


def test_satpat_sampling(rng):
    assert all(satpat_sample_step([0.0, 1.0], [0], rng) == 0 for _ in range(50))
    assert all(satpat_sample_step([0.0, 1.0], [1], rng) == 1 for _ in range(50))
    n = 100_000
    freq = np.mean([satpat_sample_step([0.2, 0.35, 0.9], [1, 0], rng) for _ in range(n)])
    assert abs(freq - 0.35) <= 3 * np.sqrt(0.35 * 0.65 / n)


def test_params_validation():
    with pytest.raises(ValueError):
        NoisyOrParams(([0.5, 1.2],))
    with pytest.raises(ValueError):
        SatPatParams(([0.5],))
    with pytest.raises(ValueError):
        make_params("bogus", [[0.5, 0.5]])
    net = grid20_network()
    with pytest.raises(ValueError):
        NoisyOrParams(tuple([0.5, 0.5] for _ in range(20))).check(net)


@pytest.mark.parametrize("kind", ["noisyor", "satpat"])
def test_kernel_matches_row_functions(kind, rng):
    net = grid20_network()
    params = init_params(kind, net, rng)
    if kind == "satpat":
        params = SatPatParams(tuple(rng.uniform(0, 1, len(nb) + 1) for nb in net.neighbors))
    kernel = make_kernel(params, net)
    states = rng.random((30, 20)) < 0.4
    got = kernel.prob_congested(states)
    row_fn = noisyor_congestion_prob if kind == "noisyor" else satpat_congestion_prob
    for r in range(states.shape[0]):
        for i, lid in enumerate(net.ids):
            eta = [states[r, net.index(j)] for j in net.pi(lid)]
            assert got[r, i] == pytest.approx(row_fn(params.rows[i], eta), abs=1e-14)


def test_kernel_step_consistency(rng):
    net = grid20_network()
    params = init_params("noisyor", net, rng)
    kernel = NoisyOrKernel(params, net)
    states = rng.random((500, 20)) < 0.5
    step = kernel.step(states, rng)
    assert np.array_equal(step.states, step.aux0 | step.auxj.any(axis=-1))
    assert not np.any(step.auxj & ~step.eta)
    sp = SatPatKernel(SatPatParams(tuple(np.full(len(nb) + 1, 0.5) for nb in net.neighbors)), net)
    assert np.array_equal(sp.step(states, rng).count, step.eta.sum(axis=-1))


def test_init_params_range(rng):
    net = grid20_network()
    p = init_params("noisyor", net, rng)
    flat = np.concatenate(p.q)
    assert flat.min() >= 0.3 and flat.max() <= 0.7
    assert all(np.all(r == 0.5) for r in init_params("satpat", net, rng).a)
