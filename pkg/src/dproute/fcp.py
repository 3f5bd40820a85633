"""Failure-carrying packets: per-switch link state and the follow-or-recompute decision."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import WidthMismatch
from .headers import PacketHeader
from .topology import Topology, bit


@dataclass
class LocalLinkState:
    """Failure state of the links attached to one switch.

    ``ports`` maps each neighbor to the outgoing link id; ``groups`` maps a
    virtual next hop (a neighbor domain) to the physical neighbors behind it.
    """

    switch: int
    ports: dict[int, int]
    reverse: dict[int, int]
    failed: int = 0
    groups: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @classmethod
    def for_switch(cls, t: Topology, s: int, groups=None) -> "LocalLinkState":
        ports = {t.links[lid][1]: lid for lid in t.out_links(s)}
        rev = {n: t.reverse(lid) for n, lid in ports.items()}
        return cls(s, ports, rev, 0, dict(groups or {}))

    @property
    def adjacent_mask(self) -> int:
        m = 0
        for n, lid in self.ports.items():
            m |= bit(lid) | bit(self.reverse[n])
        return m

    def set_link(self, neighbor: int, up: bool) -> None:
        both = bit(self.ports[neighbor]) | bit(self.reverse[neighbor])
        self.failed = self.failed & ~both if up else self.failed | both

    def port_up(self, neighbor: int) -> bool:
        lid = self.ports.get(neighbor)
        return lid is not None and not self.failed & bit(lid)

    def link_up(self, curr: int, next_hop: int) -> bool:
        if next_hop in self.groups:
            return any(self.port_up(n) for n in self.groups[next_hop])
        return self.port_up(next_hop)

    def first_up(self, virtual: int, via) -> int | None:
        return next((n for n in via if self.port_up(n)), None)


def ingress_fcp(header: PacketHeader, local: LocalLinkState) -> PacketHeader:
    """Union the switch's known failures into the packet."""
    if local.failed >> header.width:
        raise WidthMismatch("local failure bits exceed the header width")
    if not local.failed & ~header.fail_vec:
        return header
    h = header.copy()
    h.fail_vec |= local.failed
    return h


@dataclass(frozen=True)
class Decision:
    kind: str  # "deliver" | "follow" | "recompute" | "drop"
    next_hop: int | None = None


DELIVER = Decision("deliver")
RECOMPUTE = Decision("recompute")


def route_decision(header: PacketHeader, local: LocalLinkState) -> Decision:
    """Reference for what the forwarding table decides at ``local.switch``.

    Never returns a drop: only an exhausted traversal proves unreachability.
    """
    s = local.switch
    if s == header.final_dst and header.chain_cursor >= len(header.policy.mbox_chain):
        return DELIVER
    nh = header.next_hop
    if nh and local.link_up(s, nh):
        return Decision("follow", nh)
    return RECOMPUTE
