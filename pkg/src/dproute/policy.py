"""Per-packet policies: middlebox chains, next-hop preferences and weighted load balancing.

Preferences steer IDDFS through a 2-bit longest-prefix-match field.  For a
switch whose neighbors (ascending outgoing link id) are ``a0..a3`` the rules
carry prefixes ``**, 1*, 11, 01`` respectively, so a packet value of
``00/10/11/01`` makes ``a0/a1/a2/a3`` the first explored hop.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DegreeTooHigh, IncompatibleTraversal, PolicyError, UnknownSwitch, ZeroWeightSum
from .topology import Topology

BFS = "bfs"
IDDFS = "iddfs"
MODES = (BFS, IDDFS)

PREF_BITS = 2
MAX_PREF_DEGREE = 4
MAX_REPLICAS = 4
HASH_BITS = 32

# (value, prefix_len) of the lpm key on the rule exploring the i-th neighbor
PREF_PREFIX = ((0b00, 0), (0b10, 1), (0b11, 2), (0b01, 2))


def pref_code(t: Topology, n1: int, n2: int) -> int:
    """Packet pref value that makes ``n1`` explore ``n2`` first."""
    nbrs = t.neighbors(n1)
    if n2 not in nbrs:
        raise PolicyError(f"{n2} is not a neighbor of {n1}")
    if len(nbrs) > MAX_PREF_DEGREE:
        raise DegreeTooHigh(f"switch {n1} has {len(nbrs)} neighbors; preferences support {MAX_PREF_DEGREE}")
    return PREF_PREFIX[nbrs.index(n2)][0]


@dataclass(frozen=True)
class WcmpEntry:
    switch: int
    next_hops: tuple[int, ...]
    weights: tuple[int, ...]


@dataclass(frozen=True)
class PolicyBlock:
    mbox_chain: tuple[tuple[int, ...], ...] = ()
    prefs: tuple[tuple[int, int], ...] = ()
    wcmp: tuple[WcmpEntry, ...] = ()
    traversal_mode: str = IDDFS

    def __post_init__(self):
        if self.traversal_mode not in MODES:
            raise PolicyError(f"unknown traversal mode {self.traversal_mode!r}")
        if (self.prefs or self.wcmp) and self.traversal_mode != IDDFS:
            raise IncompatibleTraversal("preference and WCMP policies require IDDFS")
        for replicas in self.mbox_chain:
            if not 1 <= len(replicas) <= MAX_REPLICAS:
                raise PolicyError(f"replica set must hold 1..{MAX_REPLICAS} switches")

    @property
    def empty(self) -> bool:
        return not (self.mbox_chain or self.prefs or self.wcmp)


def _check_switch(t: Topology, s: int) -> None:
    if s not in t.switches:
        raise UnknownSwitch(s)


def add_mbox_chain(t: Topology, block: PolicyBlock, *chain) -> PolicyBlock:
    """Append an ordered chain of replica sets; the packet must visit one switch of each set in order."""
    if not chain:
        raise PolicyError("middlebox chain must not be empty")
    sets = []
    for replicas in chain:
        if isinstance(replicas, int):
            replicas = (replicas,)
        replicas = tuple(replicas)
        for s in replicas:
            _check_switch(t, s)
        sets.append(replicas)
    return PolicyBlock(block.mbox_chain + tuple(sets), block.prefs, block.wcmp, block.traversal_mode)


def add_preference(t: Topology, block: PolicyBlock, n1: int, n2: int) -> PolicyBlock:
    _check_switch(t, n1)
    _check_switch(t, n2)
    if block.traversal_mode != IDDFS:
        raise IncompatibleTraversal("next-hop preferences can only be coupled with IDDFS")
    code = pref_code(t, n1, n2)
    prefs = tuple(p for p in block.prefs if p[0] != n1) + ((n1, code),)
    return PolicyBlock(block.mbox_chain, prefs, block.wcmp, block.traversal_mode)


def add_weighted_lb(t: Topology, block: PolicyBlock, n: int, next_hops, weights) -> PolicyBlock:
    _check_switch(t, n)
    if block.traversal_mode != IDDFS:
        raise IncompatibleTraversal("weighted load balancing can only be coupled with IDDFS")
    next_hops, weights = tuple(next_hops), tuple(int(w) for w in weights)
    if len(next_hops) != len(weights) or not next_hops:
        raise PolicyError("next_hops and weights must be non-empty and of equal length")
    if any(w < 0 for w in weights):
        raise PolicyError("weights must be non-negative")
    if sum(weights) == 0:
        raise ZeroWeightSum("weights sum to zero")
    for h in next_hops:
        pref_code(t, n, h)
    entry = WcmpEntry(n, next_hops, weights)
    wcmp = tuple(e for e in block.wcmp if e.switch != n) + (entry,)
    return PolicyBlock(block.mbox_chain, block.prefs, wcmp, block.traversal_mode)


# --------------------------------------------------------------------------
# hashing and weighted selection


def _fmix32(h: int) -> int:
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & 0xFFFFFFFF
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & 0xFFFFFFFF
    h ^= h >> 16
    return h


def flow_hash(src: int, dst: int, flow_id: int) -> int:
    """32-bit hash of the flow's header fields (murmur3 finalizer chained over each field)."""
    h = 0x9747B28C
    for x in (src, dst, flow_id):
        h = _fmix32((h ^ (x & 0xFFFFFFFF)) * 0x01000193 & 0xFFFFFFFF)
    return h


def weighted_pick(h: int, weights) -> int:
    """Index chosen by hash ``h`` under ``weights``: hash range split by cumulative weight."""
    total = sum(weights)
    if total <= 0:
        raise ZeroWeightSum("weights sum to zero")
    r = (h * total) >> HASH_BITS
    acc = 0
    for i, w in enumerate(weights):
        acc += w
        if r < acc:
            return i
    raise AssertionError("unreachable")


def hash_ranges(weights, hash_bits: int = HASH_BITS) -> list[tuple[int, int]]:
    """Half-open hash ranges ``[lo, hi)`` per weight; empty for zero weights."""
    total = sum(weights)
    if total <= 0:
        raise ZeroWeightSum("weights sum to zero")
    space = 1 << hash_bits
    out = []
    acc = 0
    for w in weights:
        lo = -(-acc * space // total)
        acc += w
        hi = -(-acc * space // total)
        out.append((lo, hi))
    return out


def complies(hops, chain) -> bool:
    """True if ``hops`` visits one member of each replica set, in order.

    One switch may satisfy consecutive sets, matching zero-length chain legs.
    """
    i = 0
    for s in hops:
        while i < len(chain) and s in chain[i]:
            i += 1
    return i == len(chain)


# --------------------------------------------------------------------------
# policy files


@dataclass
class PolicyTable:
    """Per-flow policy blocks loaded from a policy file; ``*`` flows apply to every pair."""

    blocks: dict
    mode: str = IDDFS

    def for_flow(self, src: int, dst: int) -> PolicyBlock:
        for key in ((src, dst), (src, "*"), ("*", dst), ("*", "*")):
            if key in self.blocks:
                return self.blocks[key]
        return PolicyBlock(traversal_mode=self.mode)


def _flow_key(flow) -> tuple:
    flow = flow or {}
    return (flow.get("src", "*"), flow.get("dst", "*"))


def parse_policies(doc, t: Topology, mode: str = IDDFS) -> PolicyTable:
    """Build a PolicyTable from ``[{type: mbox|pref|wcmp, flow: {src, dst}, ...}]``."""
    entries = doc["policies"] if isinstance(doc, dict) else doc
    blocks: dict = {}
    for e in entries:
        key = _flow_key(e.get("flow"))
        block = blocks.get(key, PolicyBlock(traversal_mode=mode))
        kind = e.get("type")
        if kind == "mbox":
            block = add_mbox_chain(t, block, *e["chain"])
        elif kind == "pref":
            block = add_preference(t, block, e["n1"], e["n2"])
        elif kind == "wcmp":
            block = add_weighted_lb(t, block, e["switch"], e["next_hops"], e["weights"])
        else:
            raise PolicyError(f"unknown policy type {kind!r}")
        blocks[key] = block
    return PolicyTable(blocks, mode)
