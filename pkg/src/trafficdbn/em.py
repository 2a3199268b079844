"""EM for the transition parameters.

The E-step runs the particle filter on every day independently and sums
the per-day expected counts; the M-step is the closed-form
complete-data estimate with counts replaced by expected counts. Observation
parameters stay fixed throughout.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cpd import NOISYOR, SATPAT, NoisyOrParams, SatPatParams
from .generator import TraceDataset
from .network import RoadNetwork
from .oracle import _check_cap, exact_loglik
from .params import ThetaParams
from .particle_filter import NoisyOrEss, SatPatEss, filter_day, merge_ess
from .rng import STREAM_FILTER, substream

log = logging.getLogger(__name__)

THREADS_ENV = "TRAFFICDBN_THREADS"


def _ratio(num: np.ndarray, den: np.ndarray, previous: np.ndarray) -> tuple[np.ndarray, int]:
    out = previous.copy()
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return np.clip(out, 0.0, 1.0), int((~ok).sum())


def m_step_noisyor(ess: NoisyOrEss, previous: NoisyOrParams) -> tuple[NoisyOrParams, int]:
    """q_ij = c_ij / (c_ij + d_ij); bias q_i0 = (#bias off) / (#bias total).

    Entries whose conditioning event has zero expected count keep their
    previous value; the second return value counts them.
    """
    rows = []
    retained = 0
    for i, prev in enumerate(previous.q):
        k = prev.size - 1
        num = np.concatenate(([ess.bias0[i]], ess.c[i, :k]))
        den = np.concatenate(([ess.bias0[i] + ess.bias1[i]], ess.c[i, :k] + ess.d[i, :k]))
        row, n = _ratio(num, den, prev)
        rows.append(row)
        retained += n
    return NoisyOrParams(tuple(rows)), retained


def m_step_satpat(ess: SatPatEss, previous: SatPatParams) -> tuple[SatPatParams, int]:
    """a_ij = (#j congested neighbours -> congested) / (#j congested neighbours)."""
    rows = []
    retained = 0
    for i, prev in enumerate(previous.a):
        k = prev.size
        row, n = _ratio(ess.cong[i, :k], ess.cong[i, :k] + ess.uncong[i, :k], prev)
        rows.append(row)
        retained += n
    return SatPatParams(tuple(rows)), retained


def m_step(ess, previous):
    if isinstance(previous, NoisyOrParams):
        return m_step_noisyor(ess, previous)
    return m_step_satpat(ess, previous)


def max_param_delta(a, b) -> float:
    return float(max(np.max(np.abs(x - y)) for x, y in zip(a.rows, b.rows)))


@dataclass
class EmIteration:
    iteration: int
    cpd: NoisyOrParams | SatPatParams
    max_delta: float
    particle_loglik: float
    retained: int
    exact_loglik: float | None = None


@dataclass
class EmReport:
    initial_exact_loglik: float | None = None
    iterations: list[EmIteration] = field(default_factory=list)
    converged: bool = False

    def exact_logliks(self) -> list[float]:
        """Initial value followed by one value per iteration (monitoring runs only)."""
        vals = [self.initial_exact_loglik] + [it.exact_loglik for it in self.iterations]
        return [v for v in vals if v is not None]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def e_step(theta: ThetaParams, net: RoadNetwork, data: TraceDataset, n_particles: int, seed: int, iteration: int, workers: int | None = None):
    """Filter every day and merge the expected counts in day order."""

    def run(d: int):
        return filter_day(data.days[d], theta, net, n_particles, substream(seed, STREAM_FILTER, iteration, d))

    workers = workers or default_workers()
    if workers > 1 and data.n_days > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(data.n_days)))
    else:
        results = [run(d) for d in range(data.n_days)]
    return merge_ess([r.ess for r in results]), results


def run_em(
    data: TraceDataset,
    net: RoadNetwork,
    init: ThetaParams,
    n_particles: int,
    iters: int,
    seed: int,
    *,
    tol: float = 1e-4,
    exact_monitor: bool = False,
    workers: int | None = None,
) -> tuple[ThetaParams, EmReport]:
    if data.n_days == 0:
        raise ValueError("dataset has no days")
    init.check(net)
    if exact_monitor:
        _check_cap(net)
    report = EmReport()
    if exact_monitor:
        report.initial_exact_loglik = exact_loglik(init, net, data)
    theta = init
    for it in range(1, iters + 1):
        ess, results = e_step(theta, net, data, n_particles, seed, it, workers)
        cpd, retained = m_step(ess, theta.cpd)
        delta = max_param_delta(cpd, theta.cpd)
        theta = theta.with_cpd(cpd)
        entry = EmIteration(it, cpd, delta, float(sum(r.loglik for r in results)), retained)
        if exact_monitor:
            entry.exact_loglik = exact_loglik(theta, net, data)
        report.iterations.append(entry)
        log.info("EM iteration %d: max delta %.3g, particle loglik %.3f", it, delta, entry.particle_loglik)
        if delta < tol:
            report.converged = True
            break
    return theta, report


@dataclass
class LikelihoodCheck:
    logliks: list[float]  # exact log-likelihood of the initial point and each iterate
    true_loglik: float
    slack: float
    final_gap_limit: float
    min_fraction: float

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.logliks)

    @property
    def n_ok(self) -> int:
        return int((self.increments >= -self.slack).sum())

    @property
    def final_gap(self) -> float:
        return abs(self.logliks[-1] - self.true_loglik)

    @property
    def passed(self) -> bool:
        n = self.increments.size
        return n > 0 and self.n_ok >= self.min_fraction * n and self.final_gap <= self.final_gap_limit


RING3_SEED = 1  # fixture seed declared before the multi-seed study


def likelihood_check(
    seed: int = RING3_SEED,
    iters: int = 20,
    n_particles: int = 2000,
    slack: float = 1e-2,
    final_gap_limit: float = 0.5,
    min_fraction: float = 0.9,
    n_days: int = 4,
    n_epochs: int = 50,
) -> LikelihoodCheck:
    """EM on the 3-link ring fixture with exact likelihood monitoring.

    Passes when at least ``min_fraction`` of the iterations do not lower the
    exact log-likelihood by more than ``slack`` nats and the last iterate
    ends within ``final_gap_limit`` nats of the generating parameters.
    """
    from .cpd import init_params
    from .generator import build_ring3
    from .rng import STREAM_INIT

    net, truth, data = build_ring3(seed, n_days=n_days, n_epochs=n_epochs)
    init = truth.with_cpd(init_params(NOISYOR, net, substream(seed, STREAM_INIT)))
    _, report = run_em(data, net, init, n_particles, iters, seed, tol=0.0, exact_monitor=True)
    return LikelihoodCheck(report.exact_logliks(), exact_loglik(truth, net, data), slack, final_gap_limit, min_fraction)
