import logging

import numpy as np
import pytest

from trafficdbn.cpd import NoisyOrParams, make_kernel
from trafficdbn.generator import Observation, build_ring3, evolve_states, ring3_network, ring3_theta
from trafficdbn.oracle import exact_forward
from trafficdbn.particle_filter import (
    NoisyOrEss,
    SatPatEss,
    filter_day,
    merge_ess,
    resample_indices,
    zero_ess,
)
from trafficdbn.rng import substream
from trafficdbn.travel_time import PathSegment


def _deterministic_ring():
    # link 1 always congested, 2 copies 1, 3 copies 2
    q1 = np.array([0.0, 1.0, 1.0, 1.0])
    q2 = np.array([1.0, 1.0, 0.0, 1.0])
    q3 = np.array([1.0, 1.0, 0.0, 1.0])
    return ring3_theta().with_cpd(NoisyOrParams((q1, q2, q3)))


@pytest.mark.parametrize("n_particles", [1, 7, 100])
def test_no_observations_deterministic_chain(n_particles, rng):
    net = ring3_network()
    theta = _deterministic_ring()
    chain = evolve_states(theta.cpd, net, 5, rng)
    res = filter_day([[] for _ in range(5)], theta, net, n_particles, rng)
    assert np.array_equal(res.marginals, chain.astype(float))


def test_two_epochs_against_exact():
    net, theta, data = build_ring3(seed=3, n_days=1, n_epochs=2)
    exact = exact_forward(theta, net, data.days[0])
    res = filter_day(data.days[0], theta, net, 100_000, np.random.default_rng(0))
    assert np.max(np.abs(res.marginals - exact.marginals)) <= 0.02
    assert res.loglik == pytest.approx(exact.loglik, abs=0.05)


def test_quiet_neighbour_has_zero_ess(rng):
    net = ring3_network()
    q = tuple(np.ones(4) for _ in range(3))
    theta = ring3_theta().with_cpd(NoisyOrParams(q))
    res = filter_day([[] for _ in range(4)], theta, net, 50, rng)
    assert np.all(res.ess.c == 0) and np.all(res.ess.d == 0)
    assert res.ess.bias0 == pytest.approx(np.full(3, 4.0))
    assert np.all(res.ess.bias1 == 0)


def test_ess_totals_per_epoch(ring3_data):
    net, theta, data = ring3_data
    res = filter_day(data.days[0], theta, net, 300, np.random.default_rng(1))
    # weights sum to one each epoch, so bias counts total T per link
    assert res.ess.bias0 + res.ess.bias1 == pytest.approx(np.full(3, data.n_epochs))


def test_merge_equals_sequential(ring3_data):
    net, theta, data = ring3_data
    parts, seq = [], zero_ess("noisyor", net)
    for d in range(data.n_days):
        for r in range(4):
            acc = filter_day(data.days[d], theta, net, 50, substream(0, d, r)).ess
            parts.append(acc)
            for a, b in zip(seq.arrays(), acc.arrays()):
                a += b
    merged = merge_ess(parts)
    assert len(parts) == 8
    for a, b in zip(merged.arrays(), seq.arrays()):
        assert np.allclose(a, b, rtol=0, atol=1e-12)
    before = [a.copy() for a in parts[0].arrays()]
    merge_ess(parts)
    assert all(np.array_equal(a, b) for a, b in zip(before, parts[0].arrays()))


def test_merge_rejects_mixed(ring3):
    with pytest.raises(ValueError):
        merge_ess([NoisyOrEss.zeros(ring3), SatPatEss.zeros(ring3)])
    with pytest.raises(ValueError):
        merge_ess([])


def test_degenerate_epoch_falls_back(caplog, ring3, ring3_truth, rng):
    day = [[Observation(1, np.inf, PathSegment((1,)))]]
    with caplog.at_level(logging.WARNING):
        res = filter_day(day, ring3_truth, ring3, 20, rng)
    assert res.n_degenerate == 1
    assert "uniform weights" in caplog.text


@pytest.mark.parametrize("method", ["multinomial", "systematic"])
def test_resampling(method, rng):
    idx = resample_indices(np.array([0.0, 1.0, 0.0]), rng, method)
    assert np.all(idx == 1)
    w = np.array([0.1, 0.2, 0.7])
    draws = np.concatenate([resample_indices(w, rng, method) for _ in range(2000)])
    counts = np.bincount(draws, minlength=3)
    assert counts / counts.sum() == pytest.approx(w, abs=0.02)


def test_unknown_resampling(rng):
    with pytest.raises(ValueError):
        resample_indices(np.ones(3) / 3, rng, "stratified-ish")


def test_deterministic_given_rng(ring3_data):
    net, theta, data = ring3_data
    a = filter_day(data.days[1], theta, net, 200, np.random.default_rng(4))
    b = filter_day(data.days[1], theta, net, 200, np.random.default_rng(4))
    assert np.array_equal(a.marginals, b.marginals) and a.loglik == b.loglik


def test_satpat_ess_counts(ring3, rng):
    from trafficdbn.cpd import SatPatParams

    theta = ring3_theta().with_cpd(SatPatParams(tuple(np.array([0.3, 0.6, 0.8, 0.9]) for _ in range(3))))
    res = filter_day([[] for _ in range(3)], theta, ring3, 1000, rng)
    assert isinstance(res.ess, SatPatEss)
    assert (res.ess.cong + res.ess.uncong).sum(axis=1) == pytest.approx(np.full(3, 3.0))
