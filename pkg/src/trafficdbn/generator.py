"""Synthetic probe-vehicle traces from a ground-truth DBN.

Link states evolve under a transition CPD; probe vehicles loop over fixed
routes and, in each epoch, consume exactly ``delta`` seconds of travel.
Every link entered during an epoch gets a fresh travel-time draw from the
Gaussian of its current state, and partial traversals are scaled linearly
with distance.

Files written by :func:`write_dataset`:

``network.txt``    topology (see :mod:`trafficdbn.network`)
``params.txt``     ground-truth parameters (see :mod:`trafficdbn.params`)
``traces.txt``     ``day epoch vehicle y_seconds alpha_s alpha_e link1,link2,...``
``states.txt``     sidecar, ``day epoch s_1 ... s_N`` (evaluation only)
``crossings.txt``  sidecar, ``day vehicle epoch link exit_time_seconds`` (evaluation only)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cpd import NoisyOrParams, make_kernel
from .network import RoadNetwork, build_network, dump_network, load_network
from .params import ThetaParams, dump_theta, load_theta
from .rng import STREAM_STATES, STREAM_VEHICLES, substream
from .travel_time import ObservationParams, PathSegment

MAX_RESAMPLES = 100

SHORT_LIVED = "short"
PERSISTING = "persist"
PATTERNS = (SHORT_LIVED, PERSISTING)


class GeneratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Observation:
    """One probe record: ``y`` seconds spent traversing ``segment`` in an epoch."""

    vehicle: int
    y: float
    segment: PathSegment


@dataclass(frozen=True)
class Crossing:
    vehicle: int
    epoch: int
    link: int
    time: float  # seconds since the start of the day


@dataclass(frozen=True)
class VehicleRoute:
    vehicle: int
    links: tuple[int, ...]  # traversed cyclically
    start: tuple[int, float]  # (position in links, distance to downstream end in metres)


@dataclass
class TraceDataset:
    delta: float
    n_epochs: int
    days: list[list[list[Observation]]]  # days[d][t - 1] holds epoch t
    states: np.ndarray | None = None  # (n_days, n_epochs + 1, n_links), ground truth
    crossings: list[list[Crossing]] | None = None  # per day
    link_ids: tuple[int, ...] = field(default=())

    @property
    def n_days(self) -> int:
        return len(self.days)

    def subset(self, day_indices: Sequence[int]) -> "TraceDataset":
        days = [self.days[d] for d in day_indices]
        states = None if self.states is None else self.states[list(day_indices)]
        crossings = None if self.crossings is None else [self.crossings[d] for d in day_indices]
        return TraceDataset(self.delta, self.n_epochs, days, states, crossings, self.link_ids)


# --------------------------------------------------------------------------
# benchmark topologies


def grid20_network(length: float = 1000.0) -> RoadNetwork:
    """Two one-way corridor loops crossing at a downtown core.

    Links 1-5 run north to south and 6-10 return north; 11-15 and 16-20 do
    the same east-west. Links 3 and 8 cross 13 and 18. Neighbour order is
    self, upstream, downstream, then crossing links.
    """
    lengths, nbrs, up, down = {}, {}, {}, {}
    crossing = {3: (13, 18), 8: (13, 18), 13: (3, 8), 18: (3, 8)}
    for base in (1, 11):
        loop = list(range(base, base + 10))
        for k, lid in enumerate(loop):
            prev, nxt = loop[k - 1], loop[(k + 1) % 10]
            lengths[lid] = length
            up[lid] = (prev,)
            down[lid] = (nxt,)
            nbrs[lid] = (lid, prev, nxt) + crossing.get(lid, ())
    order = sorted(lengths)
    return build_network(
        {i: lengths[i] for i in order}, {i: nbrs[i] for i in order}, up, down
    )


def grid20_theta(pattern: str, delta: float = 300.0, self_influence: float = 0.1, origin_bias: float = 0.2) -> ThetaParams:
    """Ground-truth NoisyOR parameters for the 20-link benchmark.

    Congestion starts at 1, 6, 11 or 16 with probability ``origin_bias``
    per epoch and moves one link downstream per epoch with certainty. The
    persisting pattern adds ``self_influence`` on every self line.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"pattern must be one of {PATTERNS}")
    net = grid20_network()
    origins = {1, 6, 11, 16}
    rows = []
    for lid, nb, up in zip(net.ids, net.neighbors, net.upstream):
        q = np.ones(len(nb) + 1)
        if lid in origins:
            q[0] = 1.0 - origin_bias
        else:
            q[1 + nb.index(up[0])] = 0.0
        if pattern == PERSISTING:
            q[1 + nb.index(lid)] = 1.0 - self_influence
        rows.append(q)
    obs = ObservationParams.uniform(net.ids, mu0=90.0, mu1=180.0, sigma0=6.0)
    return ThetaParams(NoisyOrParams(tuple(rows)), obs, delta)


def grid20_routes(per_corridor: int = 8) -> list[VehicleRoute]:
    routes = []
    vid = 1
    for base in (1, 11):
        loop = tuple(range(base, base + 10))
        spacing = 10_000.0 / per_corridor
        for v in range(per_corridor):
            arc = v * spacing
            k = int(arc // 1000.0)
            routes.append(VehicleRoute(vid, loop, (k, 1000.0 - (arc - 1000.0 * k))))
            vid += 1
    return routes


def ring3_network(length: float = 1000.0) -> RoadNetwork:
    """Three links in a loop 1 -> 2 -> 3 -> 1; every link neighbours every other."""
    return build_network(
        {1: length, 2: length, 3: length},
        {1: (1, 3, 2), 2: (2, 1, 3), 3: (3, 2, 1)},
        {1: (3,), 2: (1,), 3: (2,)},
        {1: (2,), 2: (3,), 3: (1,)},
    )


def ring3_theta(delta: float = 120.0, origin_bias: float = 0.3) -> ThetaParams:
    """Congestion germinates on link 1, moves to 2, then 3, then dies out."""
    q1 = np.array([1.0 - origin_bias, 1.0, 1.0, 1.0])
    q2 = np.array([1.0, 1.0, 0.0, 1.0])  # p(2 <- 1) = 1
    q3 = np.array([1.0, 1.0, 0.0, 1.0])  # p(3 <- 2) = 1
    obs = ObservationParams.uniform((1, 2, 3), mu0=90.0, mu1=150.0, sigma0=6.0)
    return ThetaParams(NoisyOrParams((q1, q2, q3)), obs, delta)


def ring3_routes(n_vehicles: int = 4) -> list[VehicleRoute]:
    spacing = 3000.0 / n_vehicles
    routes = []
    for v in range(n_vehicles):
        arc = v * spacing
        k = int(arc // 1000.0)
        routes.append(VehicleRoute(v + 1, (1, 2, 3), (k, 1000.0 - (arc - 1000.0 * k))))
    return routes


# --------------------------------------------------------------------------
# simulation


def evolve_states(cpd_params, net: RoadNetwork, n_epochs: int, rng: np.random.Generator) -> np.ndarray:
    """Sample s^{i,t} for t = 0..n_epochs starting from all-uncongested."""
    if n_epochs < 1:
        raise ValueError("need at least one epoch")
    kernel = make_kernel(cpd_params, net)
    states = np.zeros((n_epochs + 1, net.n_links), dtype=bool)
    for t in range(n_epochs):
        states[t + 1] = kernel.step(states[t : t + 1], rng).states[0]
    return states


def _draw_time(mu: float, sigma: float, rng: np.random.Generator) -> float:
    for _ in range(MAX_RESAMPLES):
        y = rng.normal(mu, sigma)
        if y > 0:
            return float(y)
    raise GeneratorError(f"no positive travel time in {MAX_RESAMPLES} draws from N({mu}, {sigma}^2)")


def advance_vehicle(
    route: VehicleRoute,
    pos: tuple[int, float],
    states: np.ndarray,
    net: RoadNetwork,
    obs: ObservationParams,
    delta: float,
    rng: np.random.Generator,
) -> tuple[Observation, tuple[int, float], list[tuple[int, float]]]:
    """Move a vehicle for one epoch.

    ``pos`` is (index into ``route.links``, metres to the downstream end).
    Returns the emitted record, the new position and the links completed
    during the epoch with their exit times (seconds after epoch start).
    """
    k, d_e = pos
    residual = float(delta)
    first_len = net.length(route.links[k])
    alpha_s = d_e / first_len
    visited: list[int] = []
    exits: list[tuple[int, float]] = []
    while True:
        lid = route.links[k]
        length = net.length(lid)
        row = net.index(lid)
        s = int(states[row])
        y = _draw_time(obs.mu[row, s], obs.sigma[row, s], rng)
        visited.append(lid)
        finish = y * d_e / length
        if finish > residual:
            d_e = max(d_e - length * residual / y, 1e-9 * length)
            alpha_e = (length - d_e) / length
            break
        residual -= finish
        exits.append((lid, delta - residual))
        k = (k + 1) % len(route.links)
        d_e = net.length(route.links[k])
        if residual <= 0.0:
            alpha_e = 1.0
            break
    seg = PathSegment(tuple(visited), min(alpha_s, 1.0), alpha_e)
    return Observation(route.vehicle, float(delta), seg), (k, d_e), exits


def simulate_day(
    theta: ThetaParams,
    net: RoadNetwork,
    routes: Sequence[VehicleRoute],
    n_epochs: int,
    state_rng: np.random.Generator,
    vehicle_rng: np.random.Generator,
) -> tuple[list[list[Observation]], np.ndarray, list[Crossing]]:
    states = evolve_states(theta.cpd, net, n_epochs, state_rng)
    positions = {r.vehicle: r.start for r in routes}
    epochs: list[list[Observation]] = []
    crossings: list[Crossing] = []
    for t in range(1, n_epochs + 1):
        records = []
        for route in routes:
            rec, positions[route.vehicle], exits = advance_vehicle(
                route, positions[route.vehicle], states[t], net, theta.obs, theta.delta, vehicle_rng
            )
            records.append(rec)
            t0 = (t - 1) * theta.delta
            crossings.extend(Crossing(route.vehicle, t, lid, t0 + dt) for lid, dt in exits)
        epochs.append(records)
    return epochs, states, crossings


def generate(
    theta: ThetaParams,
    net: RoadNetwork,
    routes: Sequence[VehicleRoute],
    n_days: int,
    n_epochs: int,
    seed: int,
) -> TraceDataset:
    theta.check(net)
    for r in routes:
        net.check_path(list(r.links) + [r.links[0]])
    days, all_states, all_cross = [], [], []
    for d in range(n_days):
        epochs, states, cross = simulate_day(
            theta, net, routes, n_epochs, substream(seed, STREAM_STATES, d), substream(seed, STREAM_VEHICLES, d)
        )
        days.append(epochs)
        all_states.append(states)
        all_cross.append(cross)
    return TraceDataset(theta.delta, n_epochs, days, np.array(all_states), all_cross, tuple(net.ids))


def build_benchmark(
    pattern: str,
    seed: int,
    n_days: int = 8,
    n_epochs: int = 60,
    delta: float = 300.0,
    per_corridor: int = 8,
) -> tuple[RoadNetwork, ThetaParams, TraceDataset]:
    net = grid20_network()
    theta = grid20_theta(pattern, delta=delta)
    data = generate(theta, net, grid20_routes(per_corridor), n_days, n_epochs, seed)
    return net, theta, data


def build_ring3(
    seed: int, n_days: int = 4, n_epochs: int = 50, n_vehicles: int = 4, delta: float = 120.0
) -> tuple[RoadNetwork, ThetaParams, TraceDataset]:
    net = ring3_network()
    theta = ring3_theta(delta=delta)
    data = generate(theta, net, ring3_routes(n_vehicles), n_days, n_epochs, seed)
    return net, theta, data


# --------------------------------------------------------------------------
# file I/O


def _num(x: float) -> str:
    return repr(float(x))


def dump_traces(data: TraceDataset) -> str:
    lines = [f"# delta {_num(data.delta)}", f"# epochs {data.n_epochs}", f"# days {data.n_days}"]
    for d, epochs in enumerate(data.days):
        for t, records in enumerate(epochs, start=1):
            for rec in sorted(records, key=lambda r: r.vehicle):
                seg = rec.segment
                lines.append(
                    f"{d} {t} {rec.vehicle} {_num(rec.y)} {_num(seg.alpha_s)} {_num(seg.alpha_e)} "
                    + ",".join(map(str, seg.links))
                )
    return "\n".join(lines) + "\n"


def load_traces(text: str) -> TraceDataset:
    header: dict[str, float] = {}
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2:
                header[parts[0]] = float(parts[1])
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"line {lineno}: expected 7 fields")
        d, t, v = int(parts[0]), int(parts[1]), int(parts[2])
        seg = PathSegment(tuple(int(x) for x in parts[6].split(",")), float(parts[4]), float(parts[5]))
        rows.append((d, t, Observation(v, float(parts[3]), seg)))
    if "delta" not in header:
        raise ValueError("trace file lacks '# delta' header")
    n_days = int(header.get("days", 1 + max((r[0] for r in rows), default=-1)))
    n_epochs = int(header.get("epochs", max((r[1] for r in rows), default=0)))
    days: list[list[list[Observation]]] = [[[] for _ in range(n_epochs)] for _ in range(n_days)]
    for d, t, rec in rows:
        if not (0 <= d < n_days and 1 <= t <= n_epochs):
            raise ValueError(f"record day {d} epoch {t} outside header range")
        days[d][t - 1].append(rec)
    return TraceDataset(header["delta"], n_epochs, days)


def dump_states(states: np.ndarray) -> str:
    lines = []
    for d, day in enumerate(states):
        for t, row in enumerate(day):
            lines.append(f"{d} {t} " + " ".join(str(int(s)) for s in row))
    return "\n".join(lines) + "\n"


def load_states(text: str) -> np.ndarray:
    rows = [list(map(int, line.split())) for line in text.splitlines() if line.strip()]
    n_days = 1 + max(r[0] for r in rows)
    n_t = 1 + max(r[1] for r in rows)
    n = len(rows[0]) - 2
    out = np.zeros((n_days, n_t, n), dtype=bool)
    for r in rows:
        out[r[0], r[1]] = np.array(r[2:], dtype=bool)
    return out


def dump_crossings(crossings: list[list[Crossing]]) -> str:
    lines = []
    for d, day in enumerate(crossings):
        for c in sorted(day, key=lambda c: (c.vehicle, c.time)):
            lines.append(f"{d} {c.vehicle} {c.epoch} {c.link} {_num(c.time)}")
    return "\n".join(lines) + "\n"


def load_crossings(text: str, n_days: int) -> list[list[Crossing]]:
    out: list[list[Crossing]] = [[] for _ in range(n_days)]
    for line in text.splitlines():
        if not line.strip():
            continue
        d, v, t, lid, tm = line.split()
        out[int(d)].append(Crossing(int(v), int(t), int(lid), float(tm)))
    return out


def write_dataset(directory: str | os.PathLike, net: RoadNetwork, theta: ThetaParams, data: TraceDataset) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "network.txt").write_text(dump_network(net))
    (out / "params.txt").write_text(dump_theta(theta))
    (out / "traces.txt").write_text(dump_traces(data))
    if data.states is not None:
        (out / "states.txt").write_text(dump_states(data.states))
    if data.crossings is not None:
        (out / "crossings.txt").write_text(dump_crossings(data.crossings))


def read_dataset(directory: str | os.PathLike) -> tuple[RoadNetwork, ThetaParams | None, TraceDataset]:
    src = Path(directory)
    net = load_network((src / "network.txt").read_text())
    params_path = src / "params.txt"
    theta = load_theta(params_path.read_text(), net) if params_path.exists() else None
    data = load_traces((src / "traces.txt").read_text())
    data.link_ids = tuple(net.ids)
    if (src / "states.txt").exists():
        data.states = load_states((src / "states.txt").read_text())
    if (src / "crossings.txt").exists():
        data.crossings = load_crossings((src / "crossings.txt").read_text(), data.n_days)
    return net, theta, data
