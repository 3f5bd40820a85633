"""Network simulator: switches running the compiled pipeline, link events and packet traces."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field, replace

from .errors import MissingRules, UnknownLink, UnknownSwitch
from .fcp import LocalLinkState, ingress_fcp
from .headers import (
    DOMAIN,
    EMPTY_BFS,
    EMPTY_DFS,
    FLAT,
    INITIAL_MAX_LEN,
    INTRA,
    RUNNING,
    PacketHeader,
    init_header,
    strip_traversal_state,
)
from .pipeline import ACTIONS, ActionSpec, run_to_completion
from .policy import PolicyBlock
from .ruleplane import RuleSet
from .topology import Topology, bit

HOP_LIMIT_FACTOR = 4


@dataclass
class SwitchNode:
    id: int
    pipeline: object
    local: LocalLinkState


@dataclass
class TraceRecord:
    hops: list[int]
    per_switch_recirc: dict[int, int]
    total_recirc: int
    delivered: bool
    drop_reason: str | None
    final_header: PacketHeader
    applications: int = 0
    computed_at: list[int] = field(default_factory=list)
    # (switch, stage, table, rule priority, action, action's n) per table application
    rules_fired: list[tuple] = field(default_factory=list)

    @property
    def path_str(self) -> str:
        return "→".join(map(str, self.hops))

    def to_json(self) -> dict:
        return {
            "hops": self.hops,
            "delivered": self.delivered,
            "drop_reason": self.drop_reason,
            "total_recirc": self.total_recirc,
            "per_switch_recirc": {str(k): v for k, v in sorted(self.per_switch_recirc.items())},
            "computed_at": self.computed_at,
            "table_applications": self.applications,
        }


class Network:
    """Switches sharing one immutable rule set, each with its own link state."""

    def __init__(self, t: Topology, rules: RuleSet):
        self.topology = t
        self.rules = rules
        self.hierarchy = rules.hierarchy
        self.width = self.hierarchy.width if self.hierarchy else t.width
        self.hop_limit = HOP_LIMIT_FACTOR * len(t.switches)
        groups: dict[int, dict[int, tuple]] = defaultdict(dict)
        if self.hierarchy:
            for aug in self.hierarchy.augmented.values():
                for vl in aug.vlinks:
                    groups[vl.border][vl.domain] = tuple(t.links[lid][1] for lid in vl.physical)
        self.nodes = {
            s: SwitchNode(s, rules.pipeline, LocalLinkState.for_switch(t, s, groups.get(s))) for s in t.switches
        }

    @property
    def failed(self) -> int:
        m = 0
        for node in self.nodes.values():
            m |= node.local.failed
        return m

    def _endpoints(self, u: int, v: int):
        if not self.topology.has_link(u, v):
            raise UnknownLink((u, v))
        return self.nodes[u].local, self.nodes[v].local

    def link_down(self, u: int, v: int) -> None:
        a, b = self._endpoints(u, v)
        a.set_link(v, up=False)
        b.set_link(u, up=False)

    def link_up(self, u: int, v: int) -> None:
        a, b = self._endpoints(u, v)
        a.set_link(v, up=True)
        b.set_link(u, up=True)

    def reset_links(self) -> None:
        for node in self.nodes.values():
            node.local.failed = 0

    def fail_links(self, pairs) -> None:
        for u, v in pairs:
            self.link_down(u, v)


def build_network(t: Topology, rules: RuleSet) -> Network:
    if rules.topology.digest() != t.digest():
        missing = sorted(set(t.switches) - set(rules.topology.switches))
        raise MissingRules(missing[0] if missing else "rule set was compiled for a different topology")
    fwd = rules.tables.get("forwarding")
    if fwd is None:
        raise MissingRules("forwarding")
    covered = {r.keys["curr"].value for r in fwd.rules}
    for s in t.switches:
        if t.degree(s) and s not in covered:
            raise MissingRules(s)
    for mode in rules.modes:
        if mode not in rules.tables:
            raise MissingRules(mode)
    return Network(t, rules)


# --------------------------------------------------------------------------
# traversal entry


def _effective_prefs(net: Network, h: PacketHeader, s: int) -> dict:
    prefs = dict(h.policy.prefs)
    table = net.rules.tables.get("wcmp_pre")
    if table is not None:
        tmp = h.copy()
        tmp.prefs = prefs
        for e in h.policy.wcmp:
            rule = table.lookup(tmp, e.switch)
            if rule is not None:
                ACTIONS[rule.action.name](tmp, rule.action.params)
        prefs = tmp.prefs
    return prefs


def _map_failures(net: Network, h: PacketHeader) -> None:
    for name in ("virtual_fail", "domain_fail"):
        for rule in net.rules.tables[name].lookup_all(h):
            ACTIONS[rule.action.name](h, rule.action.params)


def prepare_traversal(net: Network, header: PacketHeader, s: int) -> PacketHeader:
    """Header ready for a fresh route computation at switch ``s``.

    Traversal state is rebuilt from the carried failure vector and trail; the
    chain position, failure vector and fallback flag survive.
    """
    h = header.copy()
    t = net.topology
    chain = h.policy.mbox_chain
    h.origin = h.curr = h.curr_init = s
    h.path, h.path_cursor, h.path_base = (), 0, 0
    h.stack_sel, h.bfs_stacks, h.dfs_stack = 0, (EMPTY_BFS, EMPTY_BFS), EMPTY_DFS
    h.len, h.max_len, h.status = 0, INITIAL_MAX_LEN, RUNNING
    h.target_cursor = h.chain_cursor
    h.dst = chain[h.target_cursor] if h.target_cursor < len(chain) else (h.final_dst,)
    h.prefs = _effective_prefs(net, h, s)
    hier = net.hierarchy
    if hier is None or h.fallback or chain:
        h.scope = FLAT
        h.visited = h.fail_vec | h.trail | t.in_mask(s)
    else:
        h.vfail = h.dfail = 0
        _map_failures(net, h)
        ds, dt = hier.domain_of(s), hier.domain_of(h.final_dst)
        nxt = _reusable_next_domain(net, h, ds)
        if ds == dt or nxt is not None:
            h.scope = INTRA
            h.dst = (h.final_dst,) if ds == dt else (nxt,)
            h.visited = h.fail_vec | h.vfail | h.trail | hier.augmented[ds].in_mask(s)
        else:
            g = hier.domain_graph.topology
            h.scope = DOMAIN
            h.curr = h.curr_init = ds
            h.dst = (dt,)
            h.domain_path = ()
            h.visited = h.dfail | g.in_mask(ds)
    h.visited_init = h.visited
    return h


def _reusable_next_domain(net: Network, h: PacketHeader, ds: int) -> int | None:
    """Next domain from the carried domain path, if the path still applies here."""
    dp = h.domain_path
    if ds not in dp:
        return None
    i = dp.index(ds)
    if i + 1 >= len(dp):
        return None
    g = net.hierarchy.domain_graph.topology
    nxt = dp[i + 1]
    if not g.has_link(ds, nxt) or h.dfail & bit(g.link_id(ds, nxt)):
        return None
    return nxt


def hierarchical_fallback(net: Network, header: PacketHeader) -> PacketHeader:
    """Switch a packet whose hierarchical computation failed to flat routing from its origin."""
    h = header.copy()
    ACTIONS["fallback"](h, {"n_visited": net.topology.in_mask(h.origin)})
    return h


# --------------------------------------------------------------------------
# packet loop


def run_packet(
    net: Network,
    src: int,
    dst: int,
    policy: PolicyBlock | None = None,
    mode: str | None = None,
    flow_id: int = 0,
    path_capacity: int = 8,
) -> TraceRecord:
    t = net.topology
    for s in (src, dst):
        if s not in net.nodes:
            raise UnknownSwitch(s)
    policy = policy or PolicyBlock()
    if mode is not None and mode != policy.traversal_mode:
        policy = replace(policy, traversal_mode=mode)
    mode = policy.traversal_mode
    h = init_header(t, src, dst, policy=policy, path_capacity=path_capacity, flow_id=flow_id, width=net.width)
    fwd = net.rules.tables["forwarding"]
    chain = policy.mbox_chain
    hops = [src]
    recirc: dict[int, int] = defaultdict(int)
    computed_at = []
    fired = []
    apps = 0
    s = src
    reason = None
    while True:
        node = net.nodes[s]
        known = h.fail_vec
        h = ingress_fcp(h, node.local).copy()
        h.curr = s
        fresh = h.fail_vec != known
        while h.chain_cursor < len(chain) and s in chain[h.chain_cursor]:
            h.chain_cursor += 1
            fresh = True
        # the trail restarts whenever the packet learns a failure or starts a new chain leg
        h.trail = (0 if fresh else h.trail) | t.in_mask(s)
        if s == h.final_dst and h.chain_cursor >= len(chain):
            break
        if len(hops) - 1 >= net.hop_limit:
            reason = "hop_limit"
            break
        rule = fwd.lookup(h, node.local)
        if rule is None:
            out = run_to_completion(node.pipeline, prepare_traversal(net, h, s), mode, env=node.local)
            computed_at.append(s)
            recirc[s] += out.recirculations
            apps += out.applications
            fired.extend((s,) + f for f in out.rules_fired)
            if out.verdict.kind == "drop" and out.verdict.reason == "unreachable" and h.trail != t.in_mask(s):
                # never expected: a nonempty trail still leaves the old route's suffix open
                h.trail = t.in_mask(s)
                out = run_to_completion(node.pipeline, prepare_traversal(net, h, s), mode, env=node.local)
                recirc[s] += out.recirculations + 1
                apps += out.applications
                fired.extend((s,) + f for f in out.rules_fired)
            fell_back = out.header.fallback and not h.fallback
            h = out.header
            if out.verdict.kind == "drop":
                reason = out.verdict.reason
                break
            if fell_back:
                h.trail = t.in_mask(s)
            h.curr = s
            h.path_cursor = 0
            rule = fwd.lookup(h, node.local)
            if rule is None:
                reason = "no_route"
                break
        nxt = rule.action.params["n"]
        via = rule.action.params.get("via")
        if via:
            nxt = node.local.first_up(nxt, via)
        h = strip_traversal_state(h)
        h.path_cursor += 1
        hops.append(nxt)
        s = nxt
    return TraceRecord(
        hops=hops,
        per_switch_recirc=dict(recirc),
        total_recirc=sum(recirc.values()),
        delivered=reason is None,
        drop_reason=reason,
        final_header=h,
        applications=apps,
        computed_at=computed_at,
        rules_fired=fired,
    )


# --------------------------------------------------------------------------
# event scripts

DOWN, UP, INJECT = "down", "up", "inject"


@dataclass(frozen=True)
class Event:
    seq: int
    action: str
    link: tuple[int, int] | None = None
    src: int | None = None
    dst: int | None = None
    policy: PolicyBlock | None = None
    flow_id: int = 0


@dataclass
class EventScript:
    events: list[Event]

    @classmethod
    def from_json(cls, doc, policy_loader=None) -> "EventScript":
        raw = doc["events"] if isinstance(doc, dict) else doc
        events = []
        for i, e in enumerate(raw):
            action = e["action"].lower()
            if action not in (DOWN, UP, INJECT):
                raise ValueError(f"unknown event action {e['action']!r}")
            pol = policy_loader(e["policy"]) if policy_loader and e.get("policy") else None
            events.append(
                Event(
                    seq=e.get("seq", i),
                    action=action,
                    link=tuple(e["link"]) if "link" in e else None,
                    src=e.get("src"),
                    dst=e.get("dst"),
                    policy=pol,
                    flow_id=e.get("flow_id", 0),
                )
            )
        events.sort(key=lambda ev: ev.seq)
        return cls(events)

    @classmethod
    def load(cls, path, policy_loader=None) -> "EventScript":
        with open(path) as f:
            return cls.from_json(json.load(f), policy_loader)


def run_script(net: Network, script: EventScript, mode: str | None = None) -> list[TraceRecord]:
    """Apply events in order; link changes take effect on both endpoints before the next injection."""
    out = []
    for ev in script.events:
        if ev.action == DOWN:
            net.link_down(*ev.link)
        elif ev.action == UP:
            net.link_up(*ev.link)
        else:
            out.append(run_packet(net, ev.src, ev.dst, ev.policy, mode, ev.flow_id))
    return out
