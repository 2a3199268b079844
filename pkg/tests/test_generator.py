import numpy as np
import pytest

from trafficdbn.cpd import NoisyOrParams
from trafficdbn.generator import (
    GeneratorError,
    VehicleRoute,
    _draw_time,
    advance_vehicle,
    build_benchmark,
    dump_crossings,
    dump_traces,
    evolve_states,
    generate,
    grid20_network,
    grid20_routes,
    grid20_theta,
    load_traces,
    read_dataset,
    write_dataset,
)
from trafficdbn.network import build_network
from trafficdbn.travel_time import ObservationParams


class ScriptedRng:
    """Returns prescribed travel times from ``normal``."""

    def __init__(self, draws):
        self.draws = list(draws)

    def normal(self, mu, sigma):
        return self.draws.pop(0)


def _loop1():
    net = build_network({1: 1000.0}, {1: (1,)}, {1: (1,)}, {1: (1,)})
    obs = ObservationParams.uniform((1,), 90.0, 180.0, 6.0)
    return net, obs, VehicleRoute(1, (1,), (0, 1000.0))


def test_crossing_leaves_residual():
    net, obs, route = _loop1()
    rec, pos, exits = advance_vehicle(route, (0, 1000.0), np.array([False]), net, obs, 300.0, ScriptedRng([90, 1000]))
    assert exits == [(1, 90.0)]
    # the remaining 210 s are spent on the next traversal
    assert pos == (0, pytest.approx(790.0))
    assert rec.segment.links == (1, 1)
    assert rec.segment.alpha_s == 1.0
    assert rec.segment.alpha_e == pytest.approx(0.21)
    assert rec.y == 300.0


def test_boundary_counts_as_crossed():
    net, obs, route = _loop1()
    rec, pos, exits = advance_vehicle(route, (0, 500.0), np.array([False]), net, obs, 300.0, ScriptedRng([600]))
    assert exits == [(1, 300.0)]
    assert pos == (0, 1000.0)
    assert rec.segment.links == (1,)
    assert rec.segment.fractions() == pytest.approx([0.5])


def test_negative_draws_give_up():
    with pytest.raises(GeneratorError):
        _draw_time(-1e6, 1.0, np.random.default_rng(0))


def test_all_zero_p_stays_quiet(rng):
    net = grid20_network()
    params = NoisyOrParams(tuple(np.ones(len(nb) + 1) for nb in net.neighbors))
    assert not evolve_states(params, net, 50, rng).any()


def test_short_lived_moves_downstream(rng):
    net = grid20_network()
    states = evolve_states(grid20_theta("short").cpd, net, 400, rng)
    assert states[1:, net.index(1)].any()
    for lid in net.ids:
        if lid in (1, 6, 11, 16):
            continue
        up = net.index(net.upstream[net.index(lid)][0])
        assert np.array_equal(states[1:, net.index(lid)], states[:-1, up])


def _mean_run_length(x):
    runs, cur = [], 0
    for v in x:
        if v:
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    return np.mean(runs)


def test_persisting_runs_longer():
    net = grid20_network()
    lens = {}
    for pattern in ("short", "persist"):
        s = evolve_states(grid20_theta(pattern).cpd, net, 10_000, np.random.default_rng(3))
        lens[pattern] = np.mean([_mean_run_length(s[:, k]) for k in range(20) if k not in (0, 5, 10, 15)])
    assert lens["persist"] > lens["short"]


def test_benchmark_parameters():
    net = grid20_network()
    short, persist = grid20_theta("short"), grid20_theta("persist")
    for lid, nb, qs, qp in zip(net.ids, net.neighbors, short.cpd.q, persist.cpd.q):
        self_line = 1 + nb.index(lid)
        assert qs[self_line] == 1.0
        assert qp[self_line] == pytest.approx(0.9)
        assert net.length(lid) == 1000.0
    assert np.all(short.obs.mu == [90.0, 180.0])
    with pytest.raises(ValueError):
        grid20_theta("bogus")


@pytest.fixture(scope="module")
def benchmark_data():
    return build_benchmark("short", seed=4)


def test_every_link_observed_each_day(benchmark_data):
    net, _, data = benchmark_data
    assert data.n_days == 8 and data.n_epochs == 60
    for day in data.days:
        seen = {lid for epoch in day for rec in epoch for lid in rec.segment.links}
        assert seen == set(net.ids)
        assert all(len(epoch) == 16 for epoch in day)


def test_records_are_contiguous(benchmark_data):
    net, _, data = benchmark_data
    for epoch in data.days[0]:
        for rec in epoch:
            assert net.is_path(rec.segment.links)


def test_crossings_consistent(benchmark_data):
    _, _, data = benchmark_data
    for d in range(data.n_days):
        for c in data.crossings[d]:
            assert (c.epoch - 1) * data.delta < c.time <= c.epoch * data.delta


def test_determinism():
    a = build_benchmark("persist", seed=9, n_days=2, n_epochs=10)[2]
    b = build_benchmark("persist", seed=9, n_days=2, n_epochs=10)[2]
    c = build_benchmark("persist", seed=10, n_days=2, n_epochs=10)[2]
    assert dump_traces(a) == dump_traces(b)
    assert dump_traces(a) != dump_traces(c)


def test_days_use_independent_streams():
    two = build_benchmark("short", seed=9, n_days=2, n_epochs=10)[2]
    one = build_benchmark("short", seed=9, n_days=1, n_epochs=10)[2]
    assert dump_traces(one.subset([0])) == dump_traces(two.subset([0]))


def test_dataset_round_trip(tmp_path):
    net, theta, data = build_benchmark("short", seed=2, n_days=2, n_epochs=5)
    write_dataset(tmp_path, net, theta, data)
    net2, theta2, data2 = read_dataset(tmp_path)
    assert net2 == net
    assert dump_traces(data2) == dump_traces(data)
    assert np.array_equal(data2.states, data.states)
    assert dump_crossings(data2.crossings) == dump_crossings(data.crossings)
    assert np.array_equal(theta2.obs.mu, theta.obs.mu)


def test_trace_parse_errors():
    with pytest.raises(ValueError):
        load_traces("0 1 1 300 1 1 1,2\n")
    with pytest.raises(ValueError):
        load_traces("# delta 300\n# epochs 2\n# days 1\n0 5 1 300 1 1 1,2\n")


def test_routes_are_valid():
    net = grid20_network()
    for r in grid20_routes():
        net.check_path(list(r.links) + [r.links[0]])
    with pytest.raises(ValueError):
        generate(grid20_theta("short"), net, [VehicleRoute(1, (1, 3), (0, 1000.0))], 1, 2, 0)
