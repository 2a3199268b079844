"""Full DBN parameter set and its text file format.

A parameter file holds the epoch length, one ``obs`` record per link and
one CPD record per link::

    delta 300
    obs <id> <mu0> <sigma0> <mu1> <sigma1>
    noisyor <id> <q0> <q1> ... <q|pi|>      # or: satpat <id> <a0> ... <a|pi|>

Records are keyed by link id; CPD entries follow the link's neighbour order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cpd import CPD_KINDS, NoisyOrParams, SatPatParams, make_params
from .network import RoadNetwork
from .travel_time import ObservationParams


class ParamsFileError(ValueError):
    pass


@dataclass(frozen=True)
class ThetaParams:
    cpd: NoisyOrParams | SatPatParams
    obs: ObservationParams
    delta: float  # seconds per epoch

    @property
    def kind(self) -> str:
        return self.cpd.kind

    def check(self, net: RoadNetwork) -> None:
        self.cpd.check(net)
        if tuple(self.obs.ids) != tuple(net.ids):
            raise ValueError("observation parameters are not aligned with the network")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def with_cpd(self, cpd) -> "ThetaParams":
        return replace(self, cpd=cpd)


def _num(x: float) -> str:
    return repr(float(x))


def dump_theta(theta: ThetaParams) -> str:
    lines = [f"delta {_num(theta.delta)}"]
    for k, lid in enumerate(theta.obs.ids):
        mu, sd = theta.obs.mu[k], theta.obs.sigma[k]
        lines.append(f"obs {lid} {_num(mu[0])} {_num(sd[0])} {_num(mu[1])} {_num(sd[1])}")
    for lid, row in zip(theta.obs.ids, theta.cpd.rows):
        lines.append(f"{theta.kind} {lid} " + " ".join(_num(v) for v in row))
    return "\n".join(lines) + "\n"


def load_theta(text: str, net: RoadNetwork) -> ThetaParams:
    delta = None
    obs: dict[int, list[float]] = {}
    rows: dict[int, np.ndarray] = {}
    kinds = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        try:
            if tag == "delta":
                delta = float(rest[0])
            elif tag == "obs":
                if len(rest) != 5:
                    raise ParamsFileError(f"line {lineno}: obs record needs id and four numbers")
                obs[int(rest[0])] = [float(v) for v in rest[1:]]
            elif tag in CPD_KINDS:
                kinds.add(tag)
                rows[int(rest[0])] = np.array([float(v) for v in rest[1:]])
            else:
                raise ParamsFileError(f"line {lineno}: unknown record {tag!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParamsFileError):
                raise
            raise ParamsFileError(f"line {lineno}: {exc}") from None
    if delta is None:
        raise ParamsFileError("missing delta record")
    if len(kinds) != 1:
        raise ParamsFileError(f"expected records of exactly one CPD kind, found {sorted(kinds) or 'none'}")
    missing = [lid for lid in net.ids if lid not in obs or lid not in rows]
    if missing:
        raise ParamsFileError(f"no parameters for links {missing}")
    mu = np.array([[obs[lid][0], obs[lid][2]] for lid in net.ids])
    sigma = np.array([[obs[lid][1], obs[lid][3]] for lid in net.ids])
    theta = ThetaParams(
        cpd=make_params(kinds.pop(), [rows[lid] for lid in net.ids]),
        obs=ObservationParams(tuple(net.ids), mu, sigma),
        delta=delta,
    )
    try:
        theta.check(net)
    except ValueError as exc:
        raise ParamsFileError(str(exc)) from None
    return theta
