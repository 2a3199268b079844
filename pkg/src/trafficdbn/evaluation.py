"""Trip-level evaluation of learned models on held-out days.

A test trip starts where a vehicle stands at the beginning of an epoch and
ends at the exit of a link, about ``m`` epochs later. Its true duration comes
from the generator's link-exit sidecar, so trips end on link boundaries as
the predictor expects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .generator import TraceDataset
from .network import RoadNetwork
from .params import ThetaParams
from .particle_filter import ParticleSet, filter_day
from .predictor import RouteQuery, predict_route
from .rng import STREAM_FILTER, STREAM_PREDICT, STREAM_TRIPS, substream

log = logging.getLogger(__name__)

DEFAULT_HORIZONS = (1, 2, 3, 4, 6)  # in epochs


@dataclass(frozen=True)
class TestTrip:
    day: int  # index into the dataset passed to extract_trips
    vehicle: int
    start_epoch: int  # last epoch whose records may be used; the trip starts at its end
    route: tuple[int, ...]
    alpha_s: float
    true_duration: float  # seconds
    n_records: int

    @property
    def epochs(self) -> range:
        return range(self.start_epoch + 1, self.start_epoch + 1 + self.n_records)


def _trip_at(data: TraceDataset, d: int, vehicle: int, t0: int, m: int, by_vehicle) -> TestTrip | None:
    delta = data.delta
    record = next((r for r in data.days[d][t0] if r.vehicle == vehicle), None)
    if record is None:
        return None
    start = t0 * delta
    stop = (t0 + m) * delta
    cross = [c for c in by_vehicle if start < c.time <= stop]
    if not cross or cross[-1].time <= stop - delta:
        return None
    route = tuple(c.link for c in cross)
    if route[0] != record.segment.links[0]:
        return None
    return TestTrip(d, vehicle, t0, route, record.segment.alpha_s, cross[-1].time - start, m)


def extract_trips(
    data: TraceDataset,
    horizon: float,
    rng: np.random.Generator,
    max_trips: int | None = None,
) -> list[TestTrip]:
    """Non-overlapping trips of ``horizon`` seconds (a multiple of delta) per vehicle.

    Each trip covers exactly ``horizon / delta`` consecutive records of one
    vehicle and ends at the last link exit inside the final record, so its
    true duration lies within one epoch of the horizon.
    """
    if data.crossings is None:
        raise ValueError("trip extraction needs the link-exit sidecar")
    m = horizon / data.delta
    if m < 1 or abs(m - round(m)) > 1e-9:
        raise ValueError("horizon must be a positive multiple of delta")
    m = int(round(m))
    if m > data.n_epochs:
        log.warning("horizon of %d epochs exceeds the %d available; no trips", m, data.n_epochs)
        return []
    trips: list[TestTrip] = []
    for d in range(data.n_days):
        vehicles = sorted({r.vehicle for epoch in data.days[d] for r in epoch})
        for v in vehicles:
            mine = sorted((c for c in data.crossings[d] if c.vehicle == v), key=lambda c: c.time)
            offset = int(rng.integers(m))
            for t0 in range(offset, data.n_epochs - m + 1, m):
                trip = _trip_at(data, d, v, t0, m, mine)
                if trip is not None:
                    trips.append(trip)
    if max_trips is not None and len(trips) > max_trips:
        keep = np.sort(rng.choice(len(trips), size=max_trips, replace=False))
        trips = [trips[k] for k in keep]
    return trips


def relative_abs_error(predicted: float, true: float) -> float:
    if not true > 0:
        raise ValueError("true trip time must be positive")
    return abs(predicted - true) / true


def empirical_cdf(errors: Sequence[float]) -> np.ndarray:
    """Sorted (error, cumulative fraction) pairs."""
    e = np.sort(np.asarray(errors, dtype=float))
    return np.column_stack([e, np.arange(1, e.size + 1) / e.size])


@dataclass
class WorstCase:
    trip: TestTrip
    errors: dict[str, float]
    difference: float  # error of the second model minus the first


@dataclass
class ComparisonReport:
    models: tuple[str, ...]
    horizons: tuple[int, ...]  # epochs
    delta: float
    errors: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    predictions: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    trips: dict[int, list[TestTrip]] = field(default_factory=dict)
    worst: dict[int, WorstCase] = field(default_factory=dict)
    header: str = ""

    def mae(self, horizon: int, model: str) -> float:
        e = self.errors[(horizon, model)]
        return float(e.mean()) if e.size else float("nan")

    def cdf(self, horizon: int, model: str) -> np.ndarray:
        return empirical_cdf(self.errors[(horizon, model)])

    def table(self) -> str:
        lines = [f"# {self.header}"] if self.header else []
        lines.append("horizon model mae n_trips")
        for h in self.horizons:
            for m in self.models:
                lines.append(f"{h * self.delta:g} {m} {self.mae(h, m):.6f} {len(self.trips[h])}")
        return "\n".join(lines) + "\n"

    def worst_block(self) -> str:
        a, b = self.models
        lines = [f"horizon day vehicle start_epoch true_s err_{a} err_{b} diff"]
        for h in self.horizons:
            w = self.worst.get(h)
            if w is None:
                continue
            t = w.trip
            lines.append(
                f"{h * self.delta:g} {t.day} {t.vehicle} {t.start_epoch} {t.true_duration:.3f} "
                f"{w.errors[a]:.6f} {w.errors[b]:.6f} {w.difference:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.table())
        (out / "worst_case.txt").write_text(self.worst_block())
        for m in self.models:
            lines = []
            for h in self.horizons:
                lines.append(f"# horizon {h * self.delta:g}")
                lines.append("error cumfrac")
                lines.extend(f"{e:.6f} {f:.6f}" for e, f in self.cdf(h, m))
            (out / f"cdf_{m}.txt").write_text("\n".join(lines) + "\n")


def filtered_histories(
    theta: ThetaParams, net: RoadNetwork, data: TraceDataset, n_particles: int, seed: int
) -> list[list[np.ndarray]]:
    """Resampled particle states after every epoch of every day."""
    return [
        filter_day(day, theta, net, n_particles, substream(seed, STREAM_FILTER, 0, d), keep_history=True).history
        for d, day in enumerate(data.days)
    ]


def predict_trips(
    theta: ThetaParams,
    net: RoadNetwork,
    data: TraceDataset,
    trips: Sequence[TestTrip],
    n_particles: int,
    seed: int,
    histories: list[list[np.ndarray]] | None = None,
    trip_keys: Sequence[int] | None = None,
) -> np.ndarray:
    if histories is None:
        histories = filtered_histories(theta, net, data, n_particles, seed)
    keys = range(len(trips)) if trip_keys is None else trip_keys
    out = np.empty(len(trips))
    for k, (key, trip) in enumerate(zip(keys, trips)):
        states = histories[trip.day][trip.start_epoch]
        particles = ParticleSet(states.copy(), np.full(states.shape[0], 1.0 / states.shape[0]))
        query = RouteQuery(trip.route, trip.alpha_s, trip.start_epoch)
        out[k] = predict_route(query, theta, net, particles, substream(seed, STREAM_PREDICT, key)).mtt
    return out


def compare_models(
    models: dict[str, ThetaParams],
    net: RoadNetwork,
    data: TraceDataset,
    trips_by_horizon: dict[int, list[TestTrip]],
    n_particles: int,
    seed: int,
) -> ComparisonReport:
    """Relative errors of two models on the same trips.

    Both models use identical random substreams, so identical parameters
    give identical predictions.
    """
    if len(models) != 2:
        raise ValueError("compare_models takes exactly two models")
    names = tuple(models)
    horizons = tuple(sorted(trips_by_horizon))
    report = ComparisonReport(names, horizons, data.delta, trips=dict(trips_by_horizon))
    for name, theta in models.items():
        hist = filtered_histories(theta, net, data, n_particles, seed)
        key = 0
        for h in horizons:
            trips = trips_by_horizon[h]
            keys = range(key, key + len(trips))
            key += len(trips)
            pred = predict_trips(theta, net, data, trips, n_particles, seed, hist, keys)
            true = np.array([t.true_duration for t in trips])
            report.predictions[(h, name)] = pred
            report.errors[(h, name)] = np.abs(pred - true) / true if trips else np.zeros(0)
    a, b = names
    for h in horizons:
        if not trips_by_horizon[h]:
            continue
        diff = report.errors[(h, b)] - report.errors[(h, a)]
        k = int(np.argmax(diff))
        report.worst[h] = WorstCase(
            trips_by_horizon[h][k], {m: float(report.errors[(h, m)][k]) for m in names}, float(diff[k])
        )
    return report


def trips_for_horizons(
    data: TraceDataset, horizons: Sequence[int], seed: int, max_trips: int | None = None
) -> dict[int, list[TestTrip]]:
    return {
        h: extract_trips(data, h * data.delta, substream(seed, STREAM_TRIPS, h), max_trips)
        for h in horizons
    }
