"""Brute-force reference answers, computed without any rule or header machinery."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass


@dataclass(frozen=True)
class OracleResult:
    reachable: bool
    shortest_len: int | None = None
    path: tuple[int, ...] | None = None


UNREACHABLE = OracleResult(False)


def _failed_pairs(t, failed) -> set[frozenset]:
    if failed is None:
        return set()
    if isinstance(failed, int):
        # a directed-link bit vector; a link counts as down if either direction is set
        return {frozenset(t.links[i]) for i in t.links if failed >> (i - 1) & 1}
    return {frozenset(p) for p in failed}


def _adjacency(t, failed) -> dict[int, list[int]]:
    down = _failed_pairs(t, failed)
    adj: dict[int, list[int]] = {s: [] for s in t.switches}
    for u, v in t.edges():
        if frozenset((u, v)) not in down:
            adj[u].append(v)
            adj[v].append(u)
    return adj


def _bfs(adj, src, dst):
    if src == dst:
        return (src,)
    prev = {src: None}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in prev:
                prev[v] = u
                if v == dst:
                    path = [v]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return tuple(reversed(path))
                q.append(v)
    return None


def shortest_active_path(t, failed, src: int, dst: int) -> OracleResult:
    """Queue-based BFS on ``t`` minus the failed links.

    ``failed`` is an iterable of (u, v) pairs or a directed-link bit vector.
    """
    path = _bfs(_adjacency(t, failed), src, dst)
    if path is None:
        return UNREACHABLE
    return OracleResult(True, len(path) - 1, path)


def compliant_shortest_path(t, failed, src: int, dst: int, chain) -> OracleResult:
    """Shortest walk src -> m1 -> ... -> dst over every choice of one replica per set."""
    adj = _adjacency(t, failed)
    chain = [(c,) if isinstance(c, int) else tuple(c) for c in chain]
    best = None
    legs: dict[tuple[int, int], tuple | None] = {}
    for picks in itertools.product(*chain):
        stops = (src, *picks, dst)
        walk = [src]
        for a, b in zip(stops, stops[1:]):
            if (a, b) not in legs:
                legs[(a, b)] = _bfs(adj, a, b)
            leg = legs[(a, b)]
            if leg is None:
                walk = None
                break
            walk.extend(leg[1:])
        if walk is not None and (best is None or len(walk) < len(best)):
            best = walk
    if best is None:
        return UNREACHABLE
    return OracleResult(True, len(best) - 1, tuple(best))


def stretch(trace, oracle: OracleResult) -> float:
    """Hops taken over oracle hops; 1.0 for a packet already at its destination."""
    if not trace.delivered or not oracle.reachable:
        raise ValueError("stretch is undefined for dropped packets or unreachable pairs")
    taken = len(trace.hops) - 1
    if oracle.shortest_len == 0:
        return 1.0
    return taken / oracle.shortest_len
