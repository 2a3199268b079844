"""Road network topology.

A network is a list of one-way links. Each link carries an ordered
neighbour list (which must contain the link itself) plus the subsets of
those neighbours that are directly upstream or downstream of it. The flat
neighbour order fixes the parameter index used by the transition CPDs, so
it is preserved exactly through parsing and serialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed network files or inconsistent topology."""


@dataclass(frozen=True)
class Link:
    id: int
    length: float  # metres

    def __post_init__(self):
        if not self.length > 0:
            raise NetworkError(f"link {self.id}: length must be positive, got {self.length}")


@dataclass(frozen=True)
class RoadNetwork:
    links: tuple[Link, ...]
    neighbors: tuple[tuple[int, ...], ...]
    upstream: tuple[tuple[int, ...], ...]
    downstream: tuple[tuple[int, ...], ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [link.id for link in self.links]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate link ids")
        n = len(ids)
        if not (len(self.neighbors) == len(self.upstream) == len(self.downstream) == n):
            raise NetworkError("neighbour lists must have one entry per link")
        index = {lid: k for k, lid in enumerate(ids)}
        for lid, nbrs, up, down in zip(ids, self.neighbors, self.upstream, self.downstream):
            for other in (*nbrs, *up, *down):
                if other not in index:
                    raise NetworkError(f"link {lid}: dangling neighbour id {other}")
            if lid not in nbrs:
                raise NetworkError(f"link {lid}: neighbour list must include the link itself")
            if len(set(nbrs)) != len(nbrs):
                raise NetworkError(f"link {lid}: duplicate neighbour ids")
            extra = (set(up) | set(down)) - set(nbrs)
            if extra:
                raise NetworkError(f"link {lid}: up/down ids {sorted(extra)} missing from neighbour list")
        object.__setattr__(self, "_index", index)

    @property
    def ids(self) -> list[int]:
        return [link.id for link in self.links]

    @property
    def n_links(self) -> int:
        return len(self.links)

    def index(self, link_id: int) -> int:
        try:
            return self._index[link_id]
        except KeyError:
            raise NetworkError(f"unknown link id {link_id}") from None

    def length(self, link_id: int) -> float:
        return self.links[self.index(link_id)].length

    def pi(self, link_id: int) -> tuple[int, ...]:
        """Ordered neighbour list of a link (ids)."""
        return self.neighbors[self.index(link_id)]

    def degree(self, link_id: int) -> int:
        return len(self.pi(link_id))

    @property
    def max_degree(self) -> int:
        return max(len(nb) for nb in self.neighbors)

    def neighbor_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded (n_links, max_degree) neighbour index matrix and validity mask.

        Entries are link *positions*, not ids. Padding slots point at 0 and are
        masked out.
        """
        k = self.max_degree
        idx = np.zeros((self.n_links, k), dtype=np.intp)
        mask = np.zeros((self.n_links, k), dtype=bool)
        for row, nbrs in enumerate(self.neighbors):
            idx[row, : len(nbrs)] = [self._index[j] for j in nbrs]
            mask[row, : len(nbrs)] = True
        return idx, mask

    def successors(self, link_id: int) -> tuple[int, ...]:
        return self.downstream[self.index(link_id)]

    def is_path(self, links: Sequence[int]) -> bool:
        """True when every consecutive pair is connected downstream."""
        for a, b in zip(links, links[1:]):
            if a not in self._index or b not in self.successors(a):
                return False
        return all(lid in self._index for lid in links)

    def check_path(self, links: Sequence[int]) -> None:
        if not links:
            raise NetworkError("empty route")
        for lid in links:
            self.index(lid)
        for a, b in zip(links, links[1:]):
            if b not in self.successors(a):
                raise NetworkError(f"route not contiguous: {b} does not follow {a}")


def _parse_ids(text: str, lineno: int) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise NetworkError(f"line {lineno}: bad id list {text!r}") from None


def load_network(source: str) -> RoadNetwork:
    """Parse network file content.

    One record per line::

        link <id> <length_m> <n1>,<n2>,... up:<u1>,... down:<d1>,...

    Blank lines and ``#`` comments are ignored.
    """
    links, nbrs, ups, downs = [], [], [], []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6 or parts[0] != "link":
            raise NetworkError(f"line {lineno}: expected 'link <id> <length> <nbrs> up:.. down:..'")
        if not parts[4].startswith("up:") or not parts[5].startswith("down:"):
            raise NetworkError(f"line {lineno}: missing up:/down: fields")
        try:
            lid = int(parts[1])
            length = float(parts[2])
        except ValueError:
            raise NetworkError(f"line {lineno}: bad id or length") from None
        links.append(Link(lid, length))
        nbrs.append(_parse_ids(parts[3], lineno))
        ups.append(_parse_ids(parts[4][3:], lineno))
        downs.append(_parse_ids(parts[5][5:], lineno))
    if not links:
        raise NetworkError("network file has no links")
    return RoadNetwork(tuple(links), tuple(nbrs), tuple(ups), tuple(downs))


def _fmt_len(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def dump_network(net: RoadNetwork) -> str:
    lines = []
    for link, nb, up, down in zip(net.links, net.neighbors, net.upstream, net.downstream):
        lines.append(
            f"link {link.id} {_fmt_len(link.length)} {','.join(map(str, nb))} "
            f"up:{','.join(map(str, up))} down:{','.join(map(str, down))}"
        )
    return "\n".join(lines) + "\n"


def build_network(
    lengths: dict[int, float],
    neighbors: dict[int, Iterable[int]],
    upstream: dict[int, Iterable[int]] | None = None,
    downstream: dict[int, Iterable[int]] | None = None,
) -> RoadNetwork:
    ids = list(lengths)
    upstream = upstream or {}
    downstream = downstream or {}
    return RoadNetwork(
        links=tuple(Link(i, float(lengths[i])) for i in ids),
        neighbors=tuple(tuple(neighbors[i]) for i in ids),
        upstream=tuple(tuple(upstream.get(i, ())) for i in ids),
        downstream=tuple(tuple(downstream.get(i, ())) for i in ids),
    )


def augment_second_order(net: RoadNetwork, short_threshold: float) -> RoadNetwork:
    """Bridge short links by linking their upstream and downstream neighbours.

    For each link shorter than ``short_threshold`` every downstream neighbour
    is appended to the neighbour list of every upstream neighbour and vice
    versa. Only the original up/down roles drive the additions, which keeps
    the operation idempotent; new entries go to the end of the flat list in
    ascending id order.
    """
    if not short_threshold > 0:
        raise ValueError("short_threshold must be positive")
    additions: dict[int, set[int]] = {lid: set() for lid in net.ids}
    for link, up, down in zip(net.links, net.upstream, net.downstream):
        if link.length >= short_threshold:
            continue
        for k in up:
            for j in down:
                if k != j:
                    additions[k].add(j)
                    additions[j].add(k)
    new_nbrs = []
    for lid, nb in zip(net.ids, net.neighbors):
        extra = sorted(additions[lid] - set(nb))
        new_nbrs.append(tuple(nb) + tuple(extra))
    return RoadNetwork(net.links, tuple(new_nbrs), net.upstream, net.downstream)
