"""Compile a topology (and optional domain hierarchy) into match-action rules.

All traversal tables are shared across scopes: the ``scope`` exact key keeps
flat, intra-domain and domain-graph rules apart, so one pipeline serves every
mode a packet may switch between.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .headers import DOMAIN, FLAT, INITIAL_MAX_LEN, INTRA, SENTINEL
from .pipeline import (
    DEFAULT_RECIRC_LIMIT,
    DEFAULT_STAGES,
    EXACT,
    LPM,
    TERNARY,
    ActionSpec,
    Exact,
    Lpm,
    Pipeline,
    Table,
    Ternary,
    table_to_json,
)
from .policy import BFS, IDDFS, MAX_PREF_DEGREE, PREF_BITS, PREF_PREFIX, hash_ranges
from .topology import Hierarchy, Topology, bit, mask_of

BFS_FIELDS = (("scope", EXACT), ("curr", EXACT), ("visited_vec", TERNARY), ("stack", EXACT), ("other_empty", TERNARY))
IDDFS_FIELDS = (
    ("scope", EXACT),
    ("curr", EXACT),
    ("len", EXACT),
    ("max_len", EXACT),
    ("visited_vec", TERNARY),
    ("pref", LPM),
)
FORWARDING_FIELDS = (("curr", EXACT), ("next_hop", EXACT), ("link_up", EXACT))
HIERARCHY_FIELDS = (("origin", EXACT), ("next_domain", EXACT))


def iddfs_cap(n_switches: int) -> int:
    """Smallest power of two that lets a depth-bounded DFS reach every switch."""
    cap = INITIAL_MAX_LEN
    while cap < n_switches:
        cap <<= 1
    return cap


def _explorable(t: Topology):
    for u in t.switches:
        if u in t.virtual:
            continue
        yield u, t.out_links(u)


def bfs_table() -> Table:
    return Table(BFS, BFS_FIELDS, ActionSpec("unreachable"))


def iddfs_table() -> Table:
    return Table(IDDFS, IDDFS_FIELDS, ActionSpec("backtrack"), lpm_width=PREF_BITS)


def gen_bfs_rules(t: Topology, scope: int = FLAT, table: Table | None = None, sentinel_rules: bool = True) -> Table:
    """Two-stack BFS rules: push per directed edge and stack, pop per switch and stack, two stack swaps."""
    table = bfs_table() if table is None else table
    for u, out in _explorable(t):
        for sel in (0, 1):
            for lid in out:
                n = t.links[lid][1]
                table.add(
                    {"scope": Exact(scope), "curr": Exact(u), "stack": Exact(sel), "visited_vec": Ternary(0, bit(lid))},
                    ActionSpec("push_neighbor", {"n": n, "n_visited": t.in_mask(n)}),
                )
    for u in t.switches:
        # virtual sinks are never expanded, so their pop rule matches unconditionally
        m = 0 if u in t.virtual else t.out_mask(u)
        for sel in (0, 1):
            table.add(
                {"scope": Exact(scope), "curr": Exact(u), "stack": Exact(sel), "visited_vec": Ternary(m, m)},
                ActionSpec("pop_stack"),
            )
    for sel in (0, 1) if sentinel_rules else ():
        table.add(
            {"scope": Exact(scope), "curr": Exact(SENTINEL), "stack": Exact(sel), "other_empty": Ternary(0, 1)},
            ActionSpec("change_stack"),
        )
    return table


def gen_iddfs_rules(
    t: Topology,
    max_len_cap: int | None = None,
    scope: int = FLAT,
    table: Table | None = None,
    preferences: bool = False,
    sentinel_rules: bool = True,
) -> Table:
    """Depth-bounded DFS rules, one goto per edge and (len, max_len) pair.

    With ``preferences`` every switch of degree at most four also gets one lpm
    rule per non-first neighbor so a packet's pref value can reorder exploration.
    """
    cap = iddfs_cap(len(t.switches)) if max_len_cap is None else max_len_cap
    if cap < INITIAL_MAX_LEN or cap & (cap - 1):
        raise ValueError("max_len_cap must be a power of two >= 4")
    table = iddfs_table() if table is None else table
    levels = []
    m = INITIAL_MAX_LEN
    while m <= cap:
        levels.append(m)
        m <<= 1
    for u, out in _explorable(t):
        pref_ok = preferences and len(out) <= MAX_PREF_DEGREE
        for m in levels:
            for length in range(m):
                base = {"scope": Exact(scope), "curr": Exact(u), "len": Exact(length), "max_len": Exact(m)}
                for i, lid in enumerate(out):
                    n = t.links[lid][1]
                    act = ActionSpec("goto_neighbor", {"n": n, "n_visited": t.in_mask(n)})
                    keys = dict(base, visited_vec=Ternary(0, bit(lid)))
                    table.add(keys, act)
                    if pref_ok and i > 0:
                        value, plen = PREF_PREFIX[i]
                        table.add(dict(keys, pref=Lpm(value, plen, PREF_BITS)), act)
    for m in levels if sentinel_rules else ():
        act = ActionSpec("increase_length") if m < cap else ActionSpec("unreachable")
        table.add({"scope": Exact(scope), "curr": Exact(SENTINEL), "len": Exact(-1), "max_len": Exact(m)}, act)
    return table


def gen_forwarding_rules(t: Topology, h: Hierarchy | None = None, table: Table | None = None) -> Table:
    """Source-route following rules; a miss (default noop) sends the packet to traversal."""
    table = Table("forwarding", FORWARDING_FIELDS, ActionSpec("noop")) if table is None else table
    for u in t.switches:
        for n in t.neighbors(u):
            table.add({"curr": Exact(u), "next_hop": Exact(n), "link_up": Exact(1)}, ActionSpec("forward", {"n": n}))
    if h is not None:
        for aug in h.augmented.values():
            for vl in aug.vlinks:
                via = tuple(t.links[lid][1] for lid in vl.physical)
                table.add(
                    {"curr": Exact(vl.border), "next_hop": Exact(vl.domain), "link_up": Exact(1)},
                    ActionSpec("forward", {"n": vl.domain, "via": via}),
                )
    return table


def gen_chain_rules(t: Topology) -> Table:
    table = Table("chain", (("curr", EXACT),), ActionSpec("unreachable"))
    for u in t.switches:
        table.add({"curr": Exact(u)}, ActionSpec("next_target", {"n_visited": t.in_mask(u)}))
    return table


def gen_fallback_rules(t: Topology) -> Table:
    table = Table("fallback", (("origin", EXACT),), ActionSpec("drop"))
    for u in t.switches:
        table.add({"origin": Exact(u)}, ActionSpec("fallback", {"n_visited": t.in_mask(u)}))
    return table


@dataclass
class HierarchyTables:
    hierarchy: Table
    domain_fail: Table
    virtual_fail: Table


def gen_hierarchy_rules(h: Hierarchy) -> HierarchyTables:
    """Domain entry rules plus the failure-vector mapping tables.

    A domain link is failed iff every physical link it stands for is failed; a
    virtual link iff every physical link from its border switch into the
    neighbor domain is failed.  Both are single ternary rules on ``fail_vec``.
    """
    t, p, g = h.topology, h.partition, h.domain_graph
    hier = Table("hierarchy", HIERARCHY_FIELDS, ActionSpec("unreachable"))
    for u in t.switches:
        d = p.domain_of[u]
        aug = h.augmented[d]
        for nd in g.topology.neighbors(d):
            hier.add(
                {"origin": Exact(u), "next_domain": Exact(nd)},
                ActionSpec("domain_enter", {"virtual": p.virtual_switch[(d, nd)], "n_visited": aug.in_mask(u)}),
            )
    dfail = Table("domain_fail", (("fail_vec", TERNARY),), ActionSpec("noop"))
    for dlid in sorted(g.failmap):
        m = mask_of(g.failmap[dlid])
        dfail.add({"fail_vec": Ternary(m, m)}, ActionSpec("fcp_update", {"bits": bit(dlid), "target": "dfail"}))
    vfail = Table("virtual_fail", (("fail_vec", TERNARY),), ActionSpec("noop"))
    for d in p.domain_ids:
        for vl in h.augmented[d].vlinks:
            m = mask_of(vl.physical)
            vfail.add(
                {"fail_vec": Ternary(m, m)}, ActionSpec("fcp_update", {"bits": bit(vl.link_id), "target": "vfail"})
            )
    return HierarchyTables(hier, dfail, vfail)


def gen_wcmp_map_rules(t: Topology) -> Table:
    """Per-switch preprocessing that turns the packet's WCMP weights into a pref value."""
    table = Table("wcmp_pre", (("wcmp_switch", EXACT),), ActionSpec("noop"))
    for u in t.switches:
        out = t.out_links(u)
        if len(out) > MAX_PREF_DEGREE:
            continue
        nbrs = [t.links[lid][1] for lid in out]
        codes = {n: PREF_PREFIX[i][0] for i, n in enumerate(nbrs)}
        links = dict(zip(nbrs, out))
        table.add({"wcmp_switch": Exact(u)}, ActionSpec("wcmp_map", {"switch": u, "codes": codes, "links": links}))
    return table


def range_to_ternary(lo: int, hi: int, bits: int) -> list[tuple[int, int]]:
    """Minimal (value, mask) prefix cover of the half-open range [lo, hi)."""
    out = []
    full = (1 << bits) - 1
    while lo < hi:
        size = lo & -lo if lo else 1 << bits
        while size > hi - lo:
            size >>= 1
        out.append((lo, full & ~(size - 1)))
        lo += size
    return out


def gen_wcmp_pre_rules(weights, codes, switch: int = 0, hash_bits: int = 32) -> Table:
    """Ternary rules on the flow hash that pick a pref value in proportion to ``weights``."""
    if len(weights) != len(codes):
        raise ValueError("weights and codes must have equal length")
    table = Table("wcmp_hash", (("flow_hash", TERNARY),), ActionSpec("noop"))
    for (lo, hi), code in zip(hash_ranges(weights, hash_bits), codes):
        for value, mask in range_to_ternary(lo, hi, hash_bits):
            table.add({"flow_hash": Ternary(value, mask)}, ActionSpec("wcmp_map", {"switch": switch, "pref": code}))
    return table


@dataclass
class RuleSet:
    """Every table a switch needs.

    Tables are shared by all switches; ``for_switch`` selects the rules a
    given switch would actually hold.
    """

    topology: Topology
    pipeline: Pipeline
    modes: tuple[str, ...]
    hierarchy: Hierarchy | None = None
    caps: dict = field(default_factory=dict)

    @property
    def tables(self) -> dict[str, Table]:
        return self.pipeline.tables

    def with_stages(self, stages_per_pass: int, recirc_limit: int | None = None) -> "RuleSet":
        pl = Pipeline(self.tables, stages_per_pass, self.pipeline.recirc_limit if recirc_limit is None else recirc_limit)
        return RuleSet(self.topology, pl, self.modes, self.hierarchy, self.caps)

    def switch_ids(self) -> tuple[int, ...]:
        return self.topology.switches

    def for_switch(self, s: int) -> dict:
        """JSON-ready tables holding only the rules installed on switch ``s``.

        Rules keyed on another switch (or another domain/virtual node when the
        switch is not in that domain) are left out; sentinel and global rules
        are kept everywhere.
        """
        virtual = set()
        if self.hierarchy is not None:
            virtual = self.hierarchy.augmented[self.hierarchy.domain_of(s)].virtual
        out = {}
        for name, table in self.tables.items():
            doc = table_to_json(table)
            keep = []
            for r in doc["rules"]:
                kv = {k["field"]: k["value"] for k in r["keys"] if k["kind"] == EXACT}
                owner = kv.get("curr", kv.get("origin", kv.get("wcmp_switch")))
                scope = kv.get("scope")
                # domain-graph rules and the domain's virtual sinks are replicated on its switches
                if (
                    owner in (None, s, SENTINEL)
                    or scope == DOMAIN
                    or (scope == INTRA and owner in virtual)
                ):
                    keep.append(r)
            doc["rules"] = keep
            out[name] = doc
        return out

    def dump(self) -> str:
        """Byte-stable JSON of every table."""
        doc = {
            "topology": self.topology.to_json(),
            "modes": list(self.modes),
            "stages_per_pass": self.pipeline.stages_per_pass,
            "caps": {str(k): v for k, v in sorted(self.caps.items())},
            "tables": [table_to_json(self.tables[n]) for n in sorted(self.tables)],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def compile_rules(
    t: Topology,
    mode: str = "both",
    hierarchy: Hierarchy | None = None,
    preferences: bool = True,
    stages_per_pass: int = DEFAULT_STAGES,
    recirc_limit: int = DEFAULT_RECIRC_LIMIT,
) -> RuleSet:
    """Full rule set for ``t``: traversal tables for the requested mode(s) plus all auxiliary tables."""
    modes = (BFS, IDDFS) if mode == "both" else (mode,)
    for m in modes:
        if m not in (BFS, IDDFS):
            raise ValueError(f"unknown mode {m!r}")
    scoped: list[tuple[int, Topology]] = [(FLAT, t)]
    if hierarchy is not None:
        scoped.append((DOMAIN, hierarchy.domain_graph.topology))
        scoped += [(INTRA, a) for _, a in sorted(hierarchy.augmented.items())]
    tables: dict[str, Table] = {}
    caps = {}
    if BFS in modes:
        tb = bfs_table()
        for i, (scope, g) in enumerate(scoped):
            gen_bfs_rules(g, scope, tb, sentinel_rules=all(sc != scope for sc, _ in scoped[:i]))
        tables[BFS] = tb
    if IDDFS in modes:
        ti = iddfs_table()
        for i, (scope, g) in enumerate(scoped):
            # intra-domain graphs share one scope, so they share one cap
            n = max(len(a.switches) for s, a in scoped if s == scope)
            caps[scope] = iddfs_cap(n)
            first = all(sc != scope for sc, _ in scoped[:i])
            gen_iddfs_rules(g, caps[scope], scope, ti, preferences and scope == FLAT, sentinel_rules=first)
        tables[IDDFS] = ti
    tables["forwarding"] = gen_forwarding_rules(t, hierarchy)
    tables["chain"] = gen_chain_rules(t)
    tables["wcmp_pre"] = gen_wcmp_map_rules(t)
    if hierarchy is not None:
        ht = gen_hierarchy_rules(hierarchy)
        tables["hierarchy"] = ht.hierarchy
        tables["domain_fail"] = ht.domain_fail
        tables["virtual_fail"] = ht.virtual_fail
        tables["fallback"] = gen_fallback_rules(t)
    return RuleSet(t, Pipeline(tables, stages_per_pass, recirc_limit), modes, hierarchy, caps)
