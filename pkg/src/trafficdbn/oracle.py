"""Exact inference on small networks, used to check the sampling code.

Stacking all link states into one integer (bit ``i`` is link position ``i``)
turns the DBN into an ordinary Markov chain over ``2**N`` joint states, so
the forward algorithm gives the exact observed-data likelihood and the
exact filtered marginals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .cpd import make_kernel
from .generator import Observation, TraceDataset
from .network import RoadNetwork
from .params import ThetaParams
from .particle_filter import ParticleSet, compile_epoch, epoch_loglik
from .predictor import Prediction, PredictionState, RouteQuery, segment_route
from .travel_time import ObservationParams

MAX_LINKS = 14


class OracleCapError(ValueError):
    pass


def _check_cap(net: RoadNetwork) -> None:
    if net.n_links > MAX_LINKS:
        raise OracleCapError(f"exact inference is capped at {MAX_LINKS} links; network has {net.n_links}")


def joint_states(n_links: int) -> np.ndarray:
    """(2**n, n) boolean table; row u holds the bits of u, link position i at bit i."""
    u = np.arange(2**n_links)[:, None]
    return ((u >> np.arange(n_links)) & 1).astype(bool)


def build_joint_transition(theta: ThetaParams, net: RoadNetwork) -> np.ndarray:
    """Row-stochastic matrix P[u, v] = P(s^{t+1} = v | s^t = u)."""
    _check_cap(net)
    bits = joint_states(net.n_links)
    p1 = make_kernel(theta.cpd, net).prob_congested(bits)  # (2^N, N)
    mat = np.ones((bits.shape[0], bits.shape[0]))
    for i in range(net.n_links):
        mat *= np.where(bits[None, :, i], p1[:, i, None], 1.0 - p1[:, i, None])
    return mat


@dataclass
class ExactResult:
    loglik: float
    marginals: np.ndarray  # (T + 1, N)
    log_norms: np.ndarray  # per-epoch log p(y_t | y^{t-1})
    final_dist: np.ndarray  # filtered joint distribution at the last epoch


def exact_forward(
    theta: ThetaParams,
    net: RoadNetwork,
    day: Sequence[Sequence[Observation]],
    transition: np.ndarray | None = None,
) -> ExactResult:
    _check_cap(net)
    trans = build_joint_transition(theta, net) if transition is None else transition
    bits = joint_states(net.n_links)
    index = {lid: k for k, lid in enumerate(net.ids)}
    dist = np.zeros(bits.shape[0])
    dist[0] = 1.0  # everything uncongested at t = 0
    marginals = np.zeros((len(day) + 1, net.n_links))
    log_norms = np.zeros(len(day))
    for t, records in enumerate(day, start=1):
        pred = dist @ trans
        lw = epoch_loglik(bits, compile_epoch(records, theta, index))
        top = lw.max()
        unnorm = pred * np.exp(lw - top)
        z = unnorm.sum()
        log_norms[t - 1] = np.log(z) + top
        dist = unnorm / z
        marginals[t] = dist @ bits
    return ExactResult(float(log_norms.sum()), marginals, log_norms, dist)


def exact_loglik(theta: ThetaParams, net: RoadNetwork, data: TraceDataset) -> float:
    trans = build_joint_transition(theta, net)
    return float(sum(exact_forward(theta, net, day, trans).loglik for day in data.days))


def exact_marginal_stream(dist: np.ndarray, transition: np.ndarray, n_links: int) -> Iterator[np.ndarray]:
    bits = joint_states(n_links)
    for d in joint_distribution_stream(dist, transition):
        yield d @ bits


def joint_distribution_stream(dist: np.ndarray, transition: np.ndarray) -> Iterator[np.ndarray]:
    current = np.asarray(dist, dtype=float)
    while True:
        current = current @ transition
        yield current


def particle_joint_distribution(particles: ParticleSet) -> np.ndarray:
    n = particles.states.shape[1]
    codes = particles.states.astype(np.int64) @ (1 << np.arange(n))
    return np.bincount(codes, weights=particles.weights, minlength=2**n)


# --------------------------------------------------------------------------
# literal 2^l formulation of the segmentation loop


def _prefix_vectors(
    rows: Sequence[int], cur_st: float, dist: np.ndarray, obs: ObservationParams, n_links: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mixture weights p_l and component means M_l over 2**l prefix state strings.

    String index k - 1 is read MSB first: bit (l - 1 - j) of k - 1 is the
    state of the j-th prefix link.
    """
    l = len(rows)
    bits = joint_states(n_links)
    code = np.zeros(bits.shape[0], dtype=np.int64)
    for j, r in enumerate(rows):
        code |= bits[:, r].astype(np.int64) << (l - 1 - j)
    p = np.bincount(code, weights=dist, minlength=2**l)
    k = np.arange(2**l)
    mean = np.zeros(2**l)
    for j, r in enumerate(rows):
        b = (k >> (l - 1 - j)) & 1
        scale = cur_st if j == 0 else 1.0
        mean += scale * obs.mu[r, b]
    return p, mean


def predict_route_enumerated(
    query: RouteQuery,
    obs: ObservationParams,
    delta: float,
    dist_stream: Iterator[np.ndarray],
    net: RoadNetwork,
) -> Prediction:
    """Segmentation with explicit 2**l mixture vectors and a binary search over l.

    ``dist_stream`` yields joint-state distributions at t+1, t+2, ...
    """
    _check_cap(net)
    net.check_path(query.route)
    rows = [net.index(lid) for lid in query.route]
    mtt, cur_st, fut, segments = 0.0, query.alpha_s, 1, 0
    suffix = rows
    trace = []
    while suffix:
        dist = next(dist_stream)

        def expected(l: int) -> float:
            p, m = _prefix_vectors(suffix[:l], cur_st, dist, obs, net.n_links)
            return float(p @ m)

        if expected(len(suffix)) > delta:
            lo, hi = 1, len(suffix)
            while lo < hi:
                mid = (lo + hi) // 2
                if expected(mid) > delta:
                    hi = mid
                else:
                    lo = mid + 1
            c = lo
            if c > 1:
                p, _ = _prefix_vectors(suffix[:c], cur_st, dist, obs, net.n_links)
                _, m_before = _prefix_vectors(suffix[: c - 1], cur_st, dist, obs, net.n_links)
                m_minus = np.repeat(m_before, 2)
                m_e = obs.mu[suffix[c - 1], np.arange(2**c) % 2]
                alpha_c = (delta - p @ m_minus) / (p @ m_e)
                cur_st = 1.0 - alpha_c
                suffix = suffix[c - 1 :]
            else:
                cur_st = cur_st * (1.0 - delta / expected(1))
            mtt += delta
            fut += 1
            segments += 1
        else:
            mtt += expected(len(suffix))
            suffix = []
        trace.append(PredictionState(mtt, tuple(net.ids[r] for r in suffix), cur_st, fut))
    return Prediction(mtt, segments, trace)


# --------------------------------------------------------------------------
# Monte Carlo trip oracle


def mc_trip_oracle(
    theta: ThetaParams,
    net: RoadNetwork,
    query: RouteQuery,
    start_dist: np.ndarray | ParticleSet,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Average of the segmentation arithmetic over sampled state chains.

    Each sample draws a joint state at the start epoch, grows one chain with
    the transition CPD and runs the segmentation loop against that chain's
    0/1 states. Returns (mean, standard error) in seconds.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if isinstance(start_dist, ParticleSet):
        w = start_dist.weights
        starts = start_dist.states[rng.choice(w.size, size=n_samples, p=w / w.sum())]
    else:
        _check_cap(net)
        probs = np.asarray(start_dist, dtype=float)
        starts = joint_states(net.n_links)[rng.choice(probs.size, size=n_samples, p=probs / probs.sum())]
    kernel = make_kernel(theta.cpd, net)
    results = np.empty(n_samples)
    for k in range(n_samples):
        chain = starts[k : k + 1].copy()

        def stream(chain=chain):
            cur = chain
            while True:
                cur = kernel.step(cur, rng).states
                yield cur[0].astype(float)

        results[k] = segment_route(query, theta.obs, theta.delta, stream(), net).mtt
    stderr = float(results.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return float(results.mean()), stderr
