"""Mean travel time of routes that may take longer than one epoch.

The route is cut into consecutive pieces whose expected traversal time is
one epoch each, using the state distribution one epoch further ahead for
every piece. Expected prefix times are linear in the per-link congestion
marginals, so only marginals are needed; the exponential-size enumeration
lives in :mod:`trafficdbn.oracle` for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .cpd import make_kernel
from .network import RoadNetwork
from .params import ThetaParams
from .particle_filter import ParticleSet, grow
from .travel_time import ObservationParams


@dataclass(frozen=True)
class RouteQuery:
    route: tuple[int, ...]
    alpha_s: float = 1.0  # fraction of the first link still ahead
    start_epoch: int = 0  # last epoch with observations

    def __post_init__(self):
        object.__setattr__(self, "route", tuple(int(x) for x in self.route))
        if not self.route:
            raise ValueError("empty route")
        if not 0.0 < self.alpha_s <= 1.0:
            raise ValueError(f"alpha_s must lie in (0, 1], got {self.alpha_s}")


@dataclass
class PredictionState:
    mtt: float
    suffix: tuple[int, ...]  # CurSuff
    cur_st: float  # CurSt
    fut_step: int  # FutStep


@dataclass
class Prediction:
    mtt: float  # seconds
    segments: int  # full epoch-long pieces consumed
    trace: list[PredictionState] = field(default_factory=list)


def link_means(rows: np.ndarray, marginals: np.ndarray, obs: ObservationParams) -> np.ndarray:
    rho = marginals[rows]
    mu = obs.mu[rows]
    return mu[:, 0] * (1.0 - rho) + mu[:, 1] * rho


def prefix_expected_time(
    rows: Sequence[int], cur_st: float, marginals: np.ndarray, obs: ObservationParams
) -> np.ndarray:
    """Expected time to cover each prefix of the remaining route.

    Element ``l - 1`` is the expected time for the first ``l`` links, the
    first of which only over the fraction ``cur_st``.
    """
    m = link_means(np.asarray(rows, dtype=np.intp), marginals, obs)
    m[0] *= cur_st
    return np.cumsum(m)


def _least_exceeding(cum: np.ndarray, delta: float) -> int | None:
    """Least 1-based prefix length whose expected time is strictly above delta."""
    k = int(np.searchsorted(cum, delta, side="right"))
    return None if k >= cum.size else k + 1


def segment_route(
    query: RouteQuery,
    obs: ObservationParams,
    delta: float,
    marginal_stream: Iterator[np.ndarray],
    net: RoadNetwork,
    keep_trace: bool = False,
) -> Prediction:
    """Run the segmentation loop.

    ``marginal_stream`` yields P(s^{t+1}=1), P(s^{t+2}=1), ... as arrays over
    link positions; one value is drawn per loop iteration.
    """
    net.check_path(query.route)
    rows = [net.index(lid) for lid in query.route]
    state = PredictionState(0.0, query.route, query.alpha_s, 1)
    pos = 0
    segments = 0
    trace = []
    while pos < len(rows):
        marg = next(marginal_stream)
        remaining = rows[pos:]
        cum = prefix_expected_time(remaining, state.cur_st, marg, obs)
        c = _least_exceeding(cum, delta)
        if c is None:
            state.mtt += float(cum[-1])
            pos = len(rows)
            state.suffix = ()
        else:
            if c > 1:
                before = cum[c - 2]
                link_c = link_means(np.array([remaining[c - 1]]), marg, obs)[0]
                alpha_c = (delta - before) / link_c
                state.cur_st = 1.0 - alpha_c
                pos += c - 1
                if state.cur_st <= 0.0:
                    # prefix ended exactly on a link boundary
                    pos += 1
                    state.cur_st = 1.0
            else:
                state.cur_st *= 1.0 - delta / cum[0]
            state.mtt += delta
            state.fut_step += 1
            state.suffix = query.route[pos:]
            segments += 1
        if keep_trace:
            trace.append(PredictionState(state.mtt, state.suffix, state.cur_st, state.fut_step))
    return Prediction(state.mtt, segments, trace)


def particle_marginal_stream(
    particles: ParticleSet, theta: ThetaParams, net: RoadNetwork, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    kernel = make_kernel(theta.cpd, net)
    current = particles
    while True:
        current = grow(current, kernel, rng)
        yield current.marginals()


def predict_route(
    query: RouteQuery,
    theta: ThetaParams,
    net: RoadNetwork,
    particles: ParticleSet,
    rng: np.random.Generator,
    keep_trace: bool = False,
) -> Prediction:
    """Predict the mean travel time of ``query`` from filtered particles at its start epoch."""
    stream = particle_marginal_stream(particles, theta, net, rng)
    return segment_route(query, theta.obs, theta.delta, stream, net, keep_trace)
