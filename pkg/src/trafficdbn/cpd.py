"""NoisyOR and SatPat transition CPDs.

Row-level functions operate on one link: ``q`` (NoisyOR inhibitors) or ``a``
(SatPat congestion probabilities) is a vector of length ``|pi_i| + 1`` and
``eta`` holds the previous-epoch states of the link's neighbours in
neighbour-list order. Index 0 of ``q`` is the bias line; index 0 of ``a``
is the "no neighbour congested" case.

The kernel classes evaluate and sample all links of many joint states at
once and are what the filter, generator and exact oracle use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .network import RoadNetwork

NOISYOR = "noisyor"
SATPAT = "satpat"
CPD_KINDS = (NOISYOR, SATPAT)


def _check_row(vec: np.ndarray, eta: np.ndarray) -> None:
    if vec.shape[0] != eta.shape[0] + 1:
        raise ValueError(f"parameter row of length {vec.shape[0]} does not match {eta.shape[0]} neighbours")


def noisyor_congestion_prob(q: Sequence[float], eta: Sequence[int]) -> float:
    """P(s=1 | eta) = 1 - q0 * prod_{j: eta_j=1} q_j."""
    q = np.asarray(q, dtype=float)
    eta = np.asarray(eta, dtype=bool)
    _check_row(q, eta)
    return float(1.0 - q[0] * np.prod(q[1:][eta]))


def noisyor_sample_step(q: Sequence[float], eta: Sequence[int], rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Sample the line-failure variables and the resulting next state."""
    q = np.asarray(q, dtype=float)
    eta = np.asarray(eta, dtype=bool)
    _check_row(q, eta)
    u = rng.random(q.shape[0])
    aux = u < 1.0 - q
    aux[1:] &= eta
    return int(aux.any()), aux


def noisyor_factor(q: Sequence[float], eta: Sequence[int], aux: Sequence[int], s: int) -> float:
    """Joint probability of (aux, s) given eta under the line-failure representation."""
    q = np.asarray(q, dtype=float)
    eta = np.asarray(eta, dtype=bool)
    aux = np.asarray(aux, dtype=bool)
    _check_row(q, eta)
    if aux.shape != q.shape:
        raise ValueError("aux must have one entry per parameter")
    if bool(aux.any()) != bool(s):
        return 0.0
    if np.any(aux[1:] & ~eta):
        return 0.0
    p = 1.0 - q
    out = p[0] if aux[0] else q[0]
    active = eta
    out *= np.prod(np.where(aux[1:][active], p[1:][active], q[1:][active]))
    return float(out)


def satpat_congestion_prob(a: Sequence[float], eta: Sequence[int]) -> float:
    a = np.asarray(a, dtype=float)
    eta = np.asarray(eta, dtype=bool)
    _check_row(a, eta)
    return float(a[int(eta.sum())])


def satpat_sample_step(a: Sequence[float], eta: Sequence[int], rng: np.random.Generator) -> int:
    return int(rng.random() < satpat_congestion_prob(a, eta))


def _as_rows(rows) -> tuple[np.ndarray, ...]:
    out = []
    for r in rows:
        arr = np.array(r, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("each parameter row needs a bias entry and at least one neighbour entry")
        if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
            raise ValueError("CPD parameters must lie in [0, 1]")
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True)
class NoisyOrParams:
    """Inhibitor probabilities per link: ``q[k] = (q_0, q_1, ..., q_|pi|)``."""

    q: tuple[np.ndarray, ...]
    kind = NOISYOR

    def __post_init__(self):
        object.__setattr__(self, "q", _as_rows(self.q))

    @property
    def rows(self) -> tuple[np.ndarray, ...]:
        return self.q

    @property
    def p(self) -> tuple[np.ndarray, ...]:
        return tuple(1.0 - r for r in self.q)

    def check(self, net: RoadNetwork) -> None:
        _check_shape(self.q, net)


@dataclass(frozen=True)
class SatPatParams:
    """Congestion probability per link given the count of congested neighbours."""

    a: tuple[np.ndarray, ...]
    kind = SATPAT

    def __post_init__(self):
        object.__setattr__(self, "a", _as_rows(self.a))

    @property
    def rows(self) -> tuple[np.ndarray, ...]:
        return self.a

    def check(self, net: RoadNetwork) -> None:
        _check_shape(self.a, net)


def _check_shape(rows, net: RoadNetwork) -> None:
    if len(rows) != net.n_links:
        raise ValueError(f"expected {net.n_links} parameter rows, got {len(rows)}")
    for lid, nb, r in zip(net.ids, net.neighbors, rows):
        if r.size != len(nb) + 1:
            raise ValueError(f"link {lid}: expected {len(nb) + 1} parameters, got {r.size}")


def make_params(kind: str, rows) -> NoisyOrParams | SatPatParams:
    if kind == NOISYOR:
        return NoisyOrParams(tuple(rows))
    if kind == SATPAT:
        return SatPatParams(tuple(rows))
    raise ValueError(f"unknown CPD kind {kind!r}")


def init_params(kind: str, net: RoadNetwork, rng: np.random.Generator) -> NoisyOrParams | SatPatParams:
    """Mid-range starting point for EM."""
    if kind == NOISYOR:
        return NoisyOrParams(tuple(rng.uniform(0.3, 0.7, size=len(nb) + 1) for nb in net.neighbors))
    if kind == SATPAT:
        return SatPatParams(tuple(np.full(len(nb) + 1, 0.5) for nb in net.neighbors))
    raise ValueError(f"unknown CPD kind {kind!r}")


class NoisyOrStep(NamedTuple):
    states: np.ndarray  # (R, N) next states
    eta: np.ndarray  # (R, N, K) previous neighbour states, padding False
    aux0: np.ndarray  # (R, N) bias line
    auxj: np.ndarray  # (R, N, K) neighbour lines


class SatPatStep(NamedTuple):
    states: np.ndarray  # (R, N)
    count: np.ndarray  # (R, N) number of congested neighbours at t-1


class NoisyOrKernel:
    kind = NOISYOR

    def __init__(self, params: NoisyOrParams, net: RoadNetwork):
        params.check(net)
        self.idx, self.mask = net.neighbor_matrix()
        n, k = self.idx.shape
        p = np.zeros((n, k + 1))
        for row, q in enumerate(params.q):
            p[row, : q.size] = 1.0 - q
        self.p0 = p[:, 0]
        self.pj = p[:, 1:]
        self.n_links = n
        self.width = k

    def neighbor_states(self, states: np.ndarray) -> np.ndarray:
        return states[:, self.idx] & self.mask

    def prob_congested(self, states: np.ndarray) -> np.ndarray:
        """P(s^{t+1}=1 | s^t) for each row of ``states`` and each link."""
        eta = self.neighbor_states(states)
        q_all = (1.0 - self.p0) * np.prod(np.where(eta, 1.0 - self.pj, 1.0), axis=-1)
        return 1.0 - q_all

    def step(self, states: np.ndarray, rng: np.random.Generator) -> NoisyOrStep:
        r = states.shape[0]
        eta = self.neighbor_states(states)
        u = rng.random((r, self.n_links, self.width + 1))
        aux0 = u[..., 0] < self.p0
        auxj = eta & (u[..., 1:] < self.pj)
        nxt = aux0 | auxj.any(axis=-1)
        return NoisyOrStep(nxt, eta, aux0, auxj)


class SatPatKernel:
    kind = SATPAT

    def __init__(self, params: SatPatParams, net: RoadNetwork):
        params.check(net)
        self.idx, self.mask = net.neighbor_matrix()
        n, k = self.idx.shape
        a = np.zeros((n, k + 1))
        for row, vec in enumerate(params.a):
            a[row, : vec.size] = vec
        self.a = a
        self.n_links = n
        self.width = k
        self._rows = np.arange(n)

    def counts(self, states: np.ndarray) -> np.ndarray:
        return (states[:, self.idx] & self.mask).sum(axis=-1)

    def prob_congested(self, states: np.ndarray) -> np.ndarray:
        return self.a[self._rows, self.counts(states)]

    def step(self, states: np.ndarray, rng: np.random.Generator) -> SatPatStep:
        count = self.counts(states)
        prob = self.a[self._rows, count]
        nxt = rng.random(prob.shape) < prob
        return SatPatStep(nxt, count)


def make_kernel(params, net: RoadNetwork):
    if isinstance(params, NoisyOrParams):
        return NoisyOrKernel(params, net)
    if isinstance(params, SatPatParams):
        return SatPatKernel(params, net)
    raise TypeError(f"unsupported CPD parameters {type(params).__name__}")
