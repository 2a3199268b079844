"""Conditional Gaussian travel times on links and paths."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

VARIANCE_FLOOR = 1e-6  # s^2, keeps GMM components non-singular


@dataclass(frozen=True)
class ObservationParams:
    """Per-link Gaussian travel-time parameters, indexed by link position.

    ``mu[k, s]`` and ``sigma[k, s]`` are the mean and standard deviation in
    seconds of the full traversal time of link ``ids[k]`` in state ``s``.
    """

    ids: tuple[int, ...]
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        n = len(self.ids)
        if mu.shape != (n, 2) or sigma.shape != (n, 2):
            raise ValueError("mu and sigma must have shape (n_links, 2)")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        if np.any(mu[:, 1] < mu[:, 0]):
            bad = [self.ids[k] for k in np.flatnonzero(mu[:, 1] < mu[:, 0])]
            raise ValueError(f"congested mean below uncongested mean on links {bad}")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def uniform(cls, ids: Sequence[int], mu0: float, mu1: float, sigma0: float, sigma1: float | None = None):
        n = len(ids)
        sigma1 = sigma0 if sigma1 is None else sigma1
        return cls(
            tuple(ids),
            np.tile([mu0, mu1], (n, 1)).astype(float),
            np.tile([sigma0, sigma1], (n, 1)).astype(float),
        )

    def row(self, link_id: int) -> int:
        return self.ids.index(link_id)


@dataclass(frozen=True)
class PathSegment:
    """Links traversed in one record, with partial first/last links.

    ``alpha_s`` is the fraction of the first link between the start point and
    its downstream end; ``alpha_e`` the fraction of the last link from its
    upstream end to the end point. On a single-link segment the traversed
    fraction is ``alpha_s + alpha_e - 1``.
    """

    links: tuple[int, ...]
    alpha_s: float = 1.0
    alpha_e: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(int(x) for x in self.links))
        if not self.links:
            raise ValueError("segment must contain at least one link")
        for name in ("alpha_s", "alpha_e"):
            a = getattr(self, name)
            if not 0.0 < a <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {a}")
        if len(self.links) == 1 and self.alpha_s + self.alpha_e - 1.0 <= 0.0:
            raise ValueError("single-link segment has non-positive traversed fraction")

    def fractions(self) -> np.ndarray:
        """Traversed fraction of each link occurrence."""
        if len(self.links) == 1:
            return np.array([self.alpha_s + self.alpha_e - 1.0])
        frac = np.ones(len(self.links))
        frac[0] = self.alpha_s
        frac[-1] = self.alpha_e
        return frac


def path_gaussian(seg: PathSegment, states: Sequence[int], params: ObservationParams) -> tuple[float, float]:
    """Mean and variance (s, s^2) of the segment's travel time given link states."""
    if len(states) != len(seg.links):
        raise ValueError("need exactly one state per segment link")
    frac = seg.fractions()
    mean = 0.0
    var = 0.0
    for a, lid, s in zip(frac, seg.links, states):
        k = params.row(lid)
        mean += a * params.mu[k, int(s)]
        var += a * a * params.sigma[k, int(s)] ** 2
    return float(mean), float(var)


def observation_density(y: float, seg: PathSegment, states: Sequence[int], params: ObservationParams) -> float:
    mean, var = path_gaussian(seg, states, params)
    return math.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


class CompiledSegment:
    """A segment pre-resolved to link positions for batched evaluation.

    ``loglik(states)`` evaluates the log density of ``y`` for every row of a
    boolean state array of shape (..., n_links).
    """

    __slots__ = ("y", "pos", "mean0", "dmean", "var0", "dvar")

    def __init__(self, y: float, seg: PathSegment, params: ObservationParams, index: dict[int, int]):
        frac = seg.fractions()
        pos = np.array([index[lid] for lid in seg.links], dtype=np.intp)
        mu = params.mu[pos]
        sd2 = params.sigma[pos] ** 2
        self.y = float(y)
        self.pos = pos
        self.mean0 = float(frac @ mu[:, 0])
        self.dmean = frac * (mu[:, 1] - mu[:, 0])
        self.var0 = float((frac**2) @ sd2[:, 0])
        self.dvar = frac**2 * (sd2[:, 1] - sd2[:, 0])

    def loglik(self, states: np.ndarray) -> np.ndarray:
        s = states[..., self.pos].astype(float)
        mean = self.mean0 + s @ self.dmean
        var = self.var0 + s @ self.dvar
        return -0.5 * (self.y - mean) ** 2 / var - 0.5 * np.log(2.0 * np.pi * var)


@dataclass
class GmmFit:
    mu0: float
    sigma0: float
    mu1: float
    sigma1: float
    weight1: float  # mixing weight of the higher-mean component
    loglik: float
    n_iter: int
    converged: bool
    loglik_trace: list[float]


def _gmm_loglik(x, w, mu, var):
    comp = -0.5 * (x[:, None] - mu) ** 2 / var - 0.5 * np.log(2 * np.pi * var) + np.log(w)
    top = comp.max(axis=1, keepdims=True)
    ll_i = top[:, 0] + np.log(np.exp(comp - top).sum(axis=1))
    return comp, ll_i


def fit_two_component_gmm(samples: Sequence[float], max_iters: int = 500, tol: float = 1e-8) -> GmmFit:
    """Fit a 1-D two-component Gaussian mixture by EM.

    Components come back ordered so that ``mu0 <= mu1``. If ``max_iters`` is
    exhausted the best iterate is returned with ``converged=False``.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise ValueError("need at least 4 samples")
    if np.ptp(x) == 0:
        raise ValueError("samples are degenerate (all equal)")

    lo, hi = np.quantile(x, [0.25, 0.75])
    mu = np.array([lo, hi], dtype=float)
    if mu[0] == mu[1]:
        mu = np.array([x.min(), x.max()])
    var = np.full(2, max(x.var(), VARIANCE_FLOOR))
    w = np.array([0.5, 0.5])

    trace: list[float] = []
    best = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        comp, ll_i = _gmm_loglik(x, w, mu, var)
        ll = float(ll_i.sum())
        trace.append(ll)
        if best is None or ll >= best[0]:
            best = (ll, w.copy(), mu.copy(), var.copy())
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            converged = True
            break
        resp = np.exp(comp - ll_i[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        w = nk / x.size
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = np.maximum((resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk, VARIANCE_FLOOR)
        w = np.maximum(w, 1e-300)

    ll, w, mu, var = best
    order = np.argsort(mu, kind="stable")
    w, mu, var = w[order], mu[order], var[order]
    return GmmFit(
        mu0=float(mu[0]),
        sigma0=float(np.sqrt(var[0])),
        mu1=float(mu[1]),
        sigma1=float(np.sqrt(var[1])),
        weight1=float(w[1]),
        loglik=ll,
        n_iter=it,
        converged=converged,
        loglik_trace=trace,
    )
