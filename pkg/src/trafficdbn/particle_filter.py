"""Sequential importance resampling over joint link states.

Each epoch the particles are grown by the transition CPD, reweighted by the
probability of that epoch's probe records, and resampled. Expected
sufficient statistics for the transition step into epoch ``t`` are read off
the reweighted particles before resampling, so they are conditioned on the
observations up to and including ``t``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cpd import NOISYOR, SATPAT, NoisyOrStep, SatPatStep, make_kernel
from .generator import Observation
from .network import RoadNetwork
from .params import ThetaParams
from .travel_time import CompiledSegment

log = logging.getLogger(__name__)


@dataclass
class NoisyOrEss:
    """``c[i, j]``: expected count of (neighbour j congested, line j failed);
    ``d[i, j]``: (neighbour j congested, line j transmitted); bias counts for
    the bias line off/on. Padding columns stay zero."""

    c: np.ndarray
    d: np.ndarray
    bias0: np.ndarray
    bias1: np.ndarray
    kind = NOISYOR

    @classmethod
    def zeros(cls, net: RoadNetwork) -> "NoisyOrEss":
        n, k = net.n_links, net.max_degree
        return cls(np.zeros((n, k)), np.zeros((n, k)), np.zeros(n), np.zeros(n))

    def accumulate(self, w: np.ndarray, step: NoisyOrStep) -> None:
        on = step.eta & step.auxj
        off = step.eta & ~step.auxj
        self.c += np.einsum("r,rnk->nk", w, off.astype(float))
        self.d += np.einsum("r,rnk->nk", w, on.astype(float))
        a0 = step.aux0.astype(float)
        self.bias1 += w @ a0
        self.bias0 += w @ (1.0 - a0)

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.c, self.d, self.bias0, self.bias1

    def __add__(self, other: "NoisyOrEss") -> "NoisyOrEss":
        _check_compatible(self, other)
        return NoisyOrEss(*(a + b for a, b in zip(self.arrays(), other.arrays())))


@dataclass
class SatPatEss:
    """Expected counts of (exactly j neighbours congested, next state 1 / 0)."""

    cong: np.ndarray
    uncong: np.ndarray
    kind = SATPAT

    @classmethod
    def zeros(cls, net: RoadNetwork) -> "SatPatEss":
        n, k = net.n_links, net.max_degree
        return cls(np.zeros((n, k + 1)), np.zeros((n, k + 1)))

    def accumulate(self, w: np.ndarray, step: SatPatStep) -> None:
        n, width = self.cong.shape
        flat = (np.arange(n) * width + step.count).ravel()
        wr = np.broadcast_to(w[:, None], step.count.shape).ravel()
        nxt = step.states.ravel()
        self.cong += np.bincount(flat, weights=wr * nxt, minlength=n * width).reshape(n, width)
        self.uncong += np.bincount(flat, weights=wr * ~nxt, minlength=n * width).reshape(n, width)

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.cong, self.uncong

    def __add__(self, other: "SatPatEss") -> "SatPatEss":
        _check_compatible(self, other)
        return SatPatEss(*(a + b for a, b in zip(self.arrays(), other.arrays())))


EssAccumulator = NoisyOrEss | SatPatEss


def _check_compatible(a, b) -> None:
    if type(a) is not type(b):
        raise ValueError(f"cannot merge {a.kind} and {b.kind} statistics")
    if any(x.shape != y.shape for x, y in zip(a.arrays(), b.arrays())):
        raise ValueError("ESS shape mismatch")


def zero_ess(kind: str, net: RoadNetwork) -> EssAccumulator:
    return NoisyOrEss.zeros(net) if kind == NOISYOR else SatPatEss.zeros(net)


def merge_ess(accumulators: Sequence[EssAccumulator]) -> EssAccumulator:
    if not accumulators:
        raise ValueError("nothing to merge")
    first = accumulators[0]
    total = type(first)(*(a.copy() for a in first.arrays()))
    for acc in accumulators[1:]:
        total = total + acc
    return total


@dataclass
class ParticleSet:
    states: np.ndarray  # (R, N) bool
    weights: np.ndarray  # (R,), normalized

    @classmethod
    def initial(cls, n_particles: int, n_links: int) -> "ParticleSet":
        if n_particles < 1:
            raise ValueError("need at least one particle")
        return cls(np.zeros((n_particles, n_links), dtype=bool), np.full(n_particles, 1.0 / n_particles))

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def marginals(self) -> np.ndarray:
        w = self.weights
        if np.all(w == w[0]):
            return self.states.mean(axis=0)
        return (w @ self.states) / w.sum()

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.states.copy(), self.weights.copy())


@dataclass
class FilterResult:
    ess: EssAccumulator
    marginals: np.ndarray  # (T + 1, N); row t is P(s^t = 1 | y^t), row 0 the start state
    particles: ParticleSet
    loglik: float  # particle estimate of log p(y_1..T)
    n_degenerate: int = 0
    history: list[np.ndarray] = field(default_factory=list)  # resampled states per epoch, index t


def resample_indices(weights: np.ndarray, rng: np.random.Generator, method: str = "multinomial") -> np.ndarray:
    r = weights.size
    if method == "multinomial":
        cdf = np.cumsum(weights)
        idx = np.searchsorted(cdf, rng.random(r) * cdf[-1], side="right")
    elif method == "systematic":
        cdf = np.cumsum(weights)
        idx = np.searchsorted(cdf, (rng.random() + np.arange(r)) / r * cdf[-1], side="right")
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    return np.minimum(idx, r - 1)


def compile_epoch(records: Sequence[Observation], theta: ThetaParams, index: dict[int, int]) -> list[CompiledSegment]:
    return [CompiledSegment(rec.y, rec.segment, theta.obs, index) for rec in records]


def epoch_loglik(states: np.ndarray, compiled: Sequence[CompiledSegment]) -> np.ndarray:
    out = np.zeros(states.shape[:-1])
    for seg in compiled:
        out += seg.loglik(states)
    return out


def filter_day(
    day: Sequence[Sequence[Observation]],
    theta: ThetaParams,
    net: RoadNetwork,
    n_particles: int,
    rng: np.random.Generator,
    *,
    keep_history: bool = False,
    resampling: str = "multinomial",
) -> FilterResult:
    """Run the particle filter over one day of records.

    ``day[t - 1]`` holds the records of epoch ``t``.
    """
    theta.check(net)
    kernel = make_kernel(theta.cpd, net)
    index = {lid: k for k, lid in enumerate(net.ids)}
    particles = ParticleSet.initial(n_particles, net.n_links)
    ess = zero_ess(theta.kind, net)
    marginals = np.zeros((len(day) + 1, net.n_links))
    history = [particles.states.copy()] if keep_history else []
    loglik = 0.0
    degenerate = 0

    for t, records in enumerate(day, start=1):
        step = kernel.step(particles.states, rng)
        lw = epoch_loglik(step.states, compile_epoch(records, theta, index))
        top = np.max(lw)
        if np.isfinite(top):
            raw = np.exp(lw - top)
            loglik += top + np.log(raw.sum() / n_particles)
        else:
            degenerate += 1
            log.warning("epoch %d: no particle explains the observations; keeping uniform weights", t)
            raw = np.ones(n_particles)
        total = raw.sum()
        w = raw / total
        ess.accumulate(w, step)
        # unnormalized weights keep equal-weight marginals exact
        marginals[t] = (raw @ step.states) / total
        idx = resample_indices(w, rng, resampling)
        particles = ParticleSet(step.states[idx], np.full(n_particles, 1.0 / n_particles))
        if keep_history:
            history.append(particles.states.copy())

    return FilterResult(ess, marginals, particles, float(loglik), degenerate, history)


def grow(particles: ParticleSet, kernel, rng: np.random.Generator) -> ParticleSet:
    """Advance every particle one epoch with no new observations."""
    return ParticleSet(kernel.step(particles.states, rng).states, particles.weights.copy())
