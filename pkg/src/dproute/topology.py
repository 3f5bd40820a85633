"""Network graph model with directed-link bit indices and domain partitioning.

Every bidirectional link occupies two adjacent bit positions: ``2k-1`` for the
lower-endpoint -> higher-endpoint direction and ``2k`` for the reverse, where
``k`` is the link's position in the source file.  Bit vectors are plain Python
ints; bit ``i`` (1-based) is ``1 << (i - 1)``.
"""

from __future__ import annotations

import json
import random
import zlib
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DisconnectedError,
    ParseError,
    PartitionInfeasible,
    SelfLoopError,
    TopologyError,
    UnknownDomain,
    UnknownSwitch,
)

INCOMING = "incoming"
OUTGOING = "outgoing"


def bit(link_id: int) -> int:
    return 1 << (link_id - 1)


def bits_of(vec: int) -> list[int]:
    """Link ids set in ``vec``, ascending."""
    out = []
    i = 1
    while vec:
        if vec & 1:
            out.append(i)
        vec >>= 1
        i += 1
    return out


def mask_of(ids: Iterable[int]) -> int:
    m = 0
    for i in ids:
        m |= bit(i)
    return m


def ternary_str(value: int, mask: int, width: int) -> str:
    """Render a ternary match the way the rule listings print it (bit 1 rightmost)."""
    chars = []
    for i in range(width, 0, -1):
        b = bit(i)
        if mask & b:
            chars.append("1" if value & b else "0")
        else:
            chars.append("*")
    return "".join(chars)


class Topology:
    """Immutable switch graph with deterministic directed-link ids.

    ``virtual`` switches (hierarchy augmentation) are traversal sinks: rule
    generation never explores links leaving them.
    """

    def __init__(
        self,
        edges: Sequence[tuple[int, int]],
        switches: Iterable[int] | None = None,
        name: str = "",
        first_link_id: int = 1,
        virtual: Iterable[int] = (),
        labels: Mapping[int, str] | None = None,
    ):
        links: dict[int, tuple[int, int]] = {}
        seen = set()
        nodes = set(switches or ())
        next_id = first_link_id
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise SelfLoopError(f"self-loop on switch {u}")
            if u <= 0 or v <= 0:
                raise TopologyError("switch ids must be >= 1 (0 is the stack sentinel)")
            lo, hi = min(u, v), max(u, v)
            if (lo, hi) in seen:
                raise TopologyError(f"duplicate link {lo}-{hi}")
            seen.add((lo, hi))
            links[next_id] = (lo, hi)
            links[next_id + 1] = (hi, lo)
            next_id += 2
            nodes.update((lo, hi))
        if any(s <= 0 for s in nodes):
            raise TopologyError("switch ids must be >= 1 (0 is the stack sentinel)")
        self.name = name
        self.switches: tuple[int, ...] = tuple(sorted(nodes))
        self.links: dict[int, tuple[int, int]] = links
        self.first_link_id = first_link_id
        self.virtual = frozenset(virtual)
        self.labels = dict(labels or {})
        self._link_id = {pair: lid for lid, pair in links.items()}
        self._out: dict[int, list[int]] = {s: [] for s in self.switches}
        self._in: dict[int, list[int]] = {s: [] for s in self.switches}
        for lid in sorted(links):
            u, v = links[lid]
            self._out[u].append(lid)
            self._in[v].append(lid)
        self._in_mask = {s: mask_of(ids) for s, ids in self._in.items()}
        self._out_mask = {s: mask_of(ids) for s, ids in self._out.items()}

    def __repr__(self):
        return f"Topology({self.name!r}, switches={len(self.switches)}, links={len(self.links) // 2})"

    @property
    def width(self) -> int:
        """Bit-vector width: the highest directed link id."""
        return self.first_link_id - 1 + len(self.links)

    @property
    def n_links(self) -> int:
        return len(self.links) // 2

    def edges(self) -> list[tuple[int, int]]:
        """Bidirectional links as (lo, hi) pairs in id order."""
        return [self.links[i] for i in sorted(self.links) if (i - self.first_link_id) % 2 == 0]

    def link_id(self, u: int, v: int) -> int:
        try:
            return self._link_id[(u, v)]
        except KeyError:
            raise TopologyError(f"no link {u}->{v}") from None

    def has_link(self, u: int, v: int) -> bool:
        return (u, v) in self._link_id

    def reverse(self, link_id: int) -> int:
        return link_id + 1 if (link_id - self.first_link_id) % 2 == 0 else link_id - 1

    def physical_pair(self, u: int, v: int) -> int:
        """Mask with both directions of link u-v set."""
        lid = self.link_id(u, v)
        return bit(lid) | bit(self.reverse(lid))

    def out_links(self, s: int) -> list[int]:
        self._check(s)
        return self._out[s]

    def in_links(self, s: int) -> list[int]:
        self._check(s)
        return self._in[s]

    def neighbors(self, s: int) -> list[int]:
        """Neighbors in ascending outgoing-link-id order (the exploration order)."""
        return [self.links[lid][1] for lid in self.out_links(s)]

    def in_mask(self, s: int) -> int:
        self._check(s)
        return self._in_mask[s]

    def out_mask(self, s: int) -> int:
        self._check(s)
        return self._out_mask[s]

    def degree(self, s: int) -> int:
        return len(self.out_links(s))

    def _check(self, s: int) -> None:
        if s not in self._out:
            raise UnknownSwitch(s)

    def is_connected(self, failed: int = 0) -> bool:
        if not self.switches:
            return True
        return len(self.component(self.switches[0], failed)) == len(self.switches)

    def component(self, start: int, failed: int = 0, within: set[int] | None = None) -> set[int]:
        seen = {start}
        todo = [start]
        while todo:
            u = todo.pop()
            for lid in self._out[u]:
                if failed & bit(lid):
                    continue
                v = self.links[lid][1]
                if v not in seen and (within is None or v in within):
                    seen.add(v)
                    todo.append(v)
        return seen

    def digest(self) -> int:
        """32-bit fingerprint of the link table; guards headers against mismatched rule sets."""
        d = self.__dict__.get("_digest")
        if d is None:
            blob = json.dumps([self.first_link_id, sorted(self.links.items())]).encode()
            d = self._digest = zlib.crc32(blob) & 0xFFFFFFFF
        return d

    def to_json(self) -> dict:
        return {"name": self.name, "switches": list(self.switches), "links": [list(e) for e in self.edges()]}


def edge_mask(t: Topology, n: int, direction: str) -> int:
    if direction == INCOMING:
        return t.in_mask(n)
    if direction == OUTGOING:
        return t.out_mask(n)
    raise ValueError(f"direction must be {INCOMING!r} or {OUTGOING!r}")


def link_failure_mask(t: Topology, pairs: Iterable[tuple[int, int]]) -> int:
    """Both directed bits of every listed physical link."""
    m = 0
    for u, v in pairs:
        m |= t.physical_pair(u, v)
    return m


# --------------------------------------------------------------------------
# loading


def _dedupe(edges):
    out, seen = [], set()
    for u, v in edges:
        key = (min(u, v), max(u, v))
        if key in seen:
            continue
        seen.add(key)
        out.append((u, v))
    return out


def _parse_graphml(path: Path):
    try:
        root = ET.parse(path).getroot()
    except (ET.ParseError, OSError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    ns = ""
    if root.tag.startswith("{"):
        ns = root.tag[: root.tag.index("}") + 1]
    keys = {}
    for k in root.findall(f"{ns}key"):
        keys[k.get("id")] = (k.get("for"), k.get("attr.name"))
    graph = root.find(f"{ns}graph")
    if graph is None:
        raise ParseError(f"{path}: no <graph> element")
    if graph.get("edgedefault", "undirected") != "undirected":
        raise ParseError(f"{path}: only undirected graphs are supported")
    name = path.stem
    for d in graph.findall(f"{ns}data"):
        if keys.get(d.get("key"), (None, None))[1] in ("Network", "name"):
            name = d.text or name
    raw_nodes = []
    labels = {}
    for node in graph.findall(f"{ns}node"):
        nid = node.get("id")
        raw_nodes.append(nid)
        for d in node.findall(f"{ns}data"):
            if keys.get(d.get("key"), (None, None))[1] == "label":
                labels[nid] = d.text or nid
    raw_edges = [(e.get("source"), e.get("target")) for e in graph.findall(f"{ns}edge")]
    if not raw_nodes:
        raise ParseError(f"{path}: graph has no nodes")

    if all(n.lstrip("-").isdigit() for n in raw_nodes):
        offset = 1 - min(int(n) for n in raw_nodes)
        ids = {n: int(n) + max(offset, 0) for n in raw_nodes}
    else:
        ids = {n: i for i, n in enumerate(sorted(raw_nodes), start=1)}
    try:
        edges = [(ids[u], ids[v]) for u, v in raw_edges]
    except KeyError as exc:
        raise ParseError(f"{path}: edge references unknown node {exc}") from exc
    label_map = {ids[n]: labels.get(n, n) for n in raw_nodes}
    return name, sorted(ids.values()), edges, label_map


def _parse_json(path: Path):
    try:
        doc = json.loads(path.read_text())
        switches = [int(s) for s in doc["switches"]]
        edges = [(int(u), int(v)) for u, v in doc["links"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return doc.get("name", path.stem), switches, edges, {}


def load_topology(path, format: str | None = None) -> Topology:
    """Load a GraphML (Topology Zoo dialect) or JSON topology.

    Parallel edges are collapsed; the graph must be connected and loop-free.
    """
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "graphml"
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    if format == "graphml":
        name, switches, edges, labels = _parse_graphml(path)
    elif format == "json":
        name, switches, edges, labels = _parse_json(path)
    else:
        raise ValueError(f"unknown topology format {format!r}")
    for u, v in edges:
        if u == v:
            raise SelfLoopError(f"{path}: self-loop on switch {u}")
    t = Topology(_dedupe(edges), switches=switches, name=name, labels=labels)
    if not t.is_connected():
        raise DisconnectedError(f"{path}: topology is not connected")
    return t


DATA_DIR = Path(__file__).parent / "data"


def bundled(name: str) -> Topology:
    """Load one of the topologies shipped in ``dproute/data``."""
    for suffix in (".graphml", ".json"):
        p = DATA_DIR / f"{name}{suffix}"
        if p.exists():
            return load_topology(p)
    raise FileNotFoundError(name)


def bundled_names() -> list[str]:
    return sorted(p.stem for p in DATA_DIR.iterdir() if p.suffix in (".graphml", ".json"))


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class DomainPartition:
    domain_of: dict[int, int]
    domain_ids: tuple[int, ...]
    virtual_switch: dict[tuple[int, int], int] = field(default_factory=dict)

    def members(self, d: int) -> list[int]:
        return sorted(s for s, dd in self.domain_of.items() if dd == d)


@dataclass(frozen=True)
class DomainGraph:
    topology: Topology
    failmap: dict[int, frozenset[int]]


def _repair(t: Topology, assign: dict[int, int], domains: list[int]) -> None:
    """Move switches cut off from their domain's largest component into an adjacent domain."""
    for _ in range(4 * len(t.switches)):
        moved = False
        for d in domains:
            members = {s for s, dd in assign.items() if dd == d}
            if not members:
                continue
            comps = []
            left = set(members)
            while left:
                c = t.component(min(left), within=members)
                comps.append(c)
                left -= c
            if len(comps) == 1:
                continue
            comps.sort(key=lambda c: (-len(c), min(c)))
            for comp in comps[1:]:
                for s in sorted(comp):
                    options = sorted({assign[n] for n in t.neighbors(s)} - {d})
                    if options:
                        sizes = {o: sum(1 for x in assign.values() if x == o) for o in options}
                        assign[s] = min(options, key=lambda o: (sizes[o], o))
                        moved = True
                        break
            if moved:
                break
        if not moved:
            return
    raise PartitionInfeasible("connectivity repair did not converge")


def _hop_distances(t: Topology, src: int) -> dict[int, int]:
    dist = {src: 0}
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v in t.neighbors(u):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def _spread_seeds(t: Topology, n: int, rng: random.Random) -> list[int]:
    """Random first seed, then repeatedly the switch farthest from all chosen seeds.

    Leaves are skipped while enough non-leaf switches exist, since a domain
    grown from a leaf is easily boxed in by its neighbor's domain.
    """
    pool = [s for s in t.switches if t.degree(s) > 1]
    if len(pool) < n:
        pool = list(t.switches)
    seeds = [rng.choice(pool)]
    near = _hop_distances(t, seeds[0])
    while len(seeds) < n:
        far = max(near.get(s, 0) for s in pool if s not in seeds)
        s = rng.choice([s for s in pool if s not in seeds and near.get(s, 0) == far])
        seeds.append(s)
        for v, dv in _hop_distances(t, s).items():
            near[v] = min(near.get(v, dv), dv)
    return seeds


def partition_domains(t: Topology, n_domains: int, seed: int = 0, domain_base: int | None = None) -> DomainPartition:
    """Seeded partition into ``n_domains`` internally connected domains of near-equal size.

    Domains grow from spread-out seed switches, always extending the smallest
    domain that can still grow; a repair pass then restores internal
    connectivity if needed.
    """
    if not 1 <= n_domains <= len(t.switches):
        raise PartitionInfeasible(f"cannot split {len(t.switches)} switches into {n_domains} domains")
    if domain_base is None:
        domain_base = max(t.switches) + 1
    domains = [domain_base + i for i in range(n_domains)]
    rng = random.Random(seed)
    seeds = _spread_seeds(t, n_domains, rng)
    assign = {s: d for s, d in zip(seeds, domains)}
    sizes = {d: 1 for d in domains}
    while len(assign) < len(t.switches):
        growable = []
        for d in domains:
            frontier = sorted(
                {n for s, dd in assign.items() if dd == d for n in t.neighbors(s) if n not in assign}
            )
            if frontier:
                growable.append((sizes[d], d, frontier))
        if not growable:
            raise PartitionInfeasible("topology is not connected")
        growable.sort()
        _, d, frontier = growable[0]
        s = rng.choice(frontier)
        assign[s] = d
        sizes[d] += 1
    _repair(t, assign, domains)
    used = [d for d in domains if d in assign.values()]
    if len(used) != n_domains:
        raise PartitionInfeasible("repair emptied a domain")
    g_pairs = _domain_pairs(t, assign)
    virtual = {(a, b): b for a, b in g_pairs}
    return DomainPartition(domain_of=dict(sorted(assign.items())), domain_ids=tuple(domains), virtual_switch=virtual)


def partition_from_map(t: Topology, domain_of: Mapping[int, int]) -> DomainPartition:
    """Build a partition from an explicit switch -> domain map."""
    if set(domain_of) != set(t.switches):
        raise PartitionInfeasible("domain map must cover every switch exactly once")
    if set(domain_of.values()) & set(t.switches):
        raise PartitionInfeasible("domain ids must be disjoint from switch ids")
    assign = dict(sorted(domain_of.items()))
    domains = tuple(sorted(set(assign.values())))
    virtual = {(a, b): b for a, b in _domain_pairs(t, assign)}
    return DomainPartition(domain_of=assign, domain_ids=domains, virtual_switch=virtual)


def _domain_pairs(t: Topology, assign) -> list[tuple[int, int]]:
    pairs = set()
    for lid, (u, v) in t.links.items():
        du, dv = assign[u], assign[v]
        if du != dv:
            pairs.add((du, dv))
    return sorted(pairs)


def build_domain_graph(t: Topology, p: DomainPartition) -> DomainGraph:
    undirected = sorted({(min(a, b), max(a, b)) for a, b in _domain_pairs(t, p.domain_of)})
    g = Topology(undirected, switches=p.domain_ids, name=f"{t.name}/domains")
    failmap = {}
    for dlid, (a, b) in g.links.items():
        failmap[dlid] = frozenset(
            lid for lid, (u, v) in t.links.items() if p.domain_of[u] == a and p.domain_of[v] == b
        )
    return DomainGraph(topology=g, failmap=failmap)


@dataclass(frozen=True)
class VirtualLink:
    """Augmented link border -> virtual switch, standing for physical links into a neighbor domain."""

    link_id: int
    border: int
    domain: int
    physical: tuple[int, ...]


def _virtual_links(t: Topology, p: DomainPartition) -> dict[int, list[VirtualLink]]:
    """Virtual links of every domain; ids continue the parent id space, ordered by (domain, neighbor, border)."""
    by_domain: dict[int, list[VirtualLink]] = {d: [] for d in p.domain_ids}
    next_id = t.width + 1
    for d in p.domain_ids:
        groups: dict[tuple[int, int], list[int]] = {}
        for lid in sorted(t.links):
            u, v = t.links[lid]
            if p.domain_of[u] == d and p.domain_of[v] != d:
                groups.setdefault((p.domain_of[v], u), []).append(lid)
        for (nd, border), phys in sorted(groups.items()):
            by_domain[d].append(VirtualLink(next_id, border, nd, tuple(phys)))
            next_id += 2
    return by_domain


def augment_domain_topology(t: Topology, p: DomainPartition, d: int) -> Topology:
    """Intra-domain subgraph of ``d`` plus one virtual sink switch per neighbor domain."""
    if d not in p.domain_ids:
        raise UnknownDomain(d)
    members = set(p.members(d))
    intra = [(u, v) for u, v in t.edges() if u in members and v in members]
    # Keep the parent's ids for intra links so failure bits carry over unchanged.
    aug = _SubTopology(t, intra, members)
    vlinks = _virtual_links(t, p)[d]
    for vl in vlinks:
        aug.add_link(vl.link_id, vl.border, vl.domain)
    virtual = {vl.domain for vl in vlinks}
    return aug.build(name=f"{t.name}/domain{d}", virtual=virtual, vlinks=vlinks)


class _SubTopology:
    def __init__(self, parent: Topology, intra, members):
        self.parent = parent
        self.links: dict[int, tuple[int, int]] = {}
        for u, v in intra:
            lid = parent.link_id(u, v)
            self.links[lid] = (u, v)
            self.links[parent.reverse(lid)] = (v, u)
        self.members = set(members)

    def add_link(self, lid, u, v):
        self.links[lid] = (u, v)
        self.links[lid + 1] = (v, u)

    def build(self, name, virtual, vlinks):
        return AugmentedTopology(self.links, self.members | set(virtual), name, virtual, vlinks, self.parent.width)


class AugmentedTopology(Topology):
    """Topology whose link ids are a sparse subset of an extended id space."""

    def __init__(self, links, switches, name, virtual, vlinks, parent_width):
        self.name = name
        self.switches = tuple(sorted(switches))
        self.links = dict(sorted(links.items()))
        self.first_link_id = 1
        self.virtual = frozenset(virtual)
        self.labels = {}
        self.vlinks = tuple(vlinks)
        self.parent_width = parent_width
        self._link_id = {pair: lid for lid, pair in self.links.items()}
        self._out = {s: [] for s in self.switches}
        self._in = {s: [] for s in self.switches}
        for lid, (u, v) in self.links.items():
            self._out[u].append(lid)
            self._in[v].append(lid)
        self._in_mask = {s: mask_of(ids) for s, ids in self._in.items()}
        self._out_mask = {s: mask_of(ids) for s, ids in self._out.items()}

    @property
    def width(self) -> int:
        return max(self.links, default=0)

    @property
    def n_links(self) -> int:
        return len(self.links) // 2

    def edges(self):
        return sorted({(min(u, v), max(u, v)) for u, v in self.links.values()})

    def reverse(self, link_id: int) -> int:
        u, v = self.links[link_id]
        return self._link_id[(v, u)]


@dataclass
class Hierarchy:
    """All derived structures a hierarchical network needs, built once."""

    topology: Topology
    partition: DomainPartition
    domain_graph: DomainGraph
    augmented: dict[int, AugmentedTopology]

    @classmethod
    def build(cls, t: Topology, p: DomainPartition) -> "Hierarchy":
        aug = {d: augment_domain_topology(t, p, d) for d in p.domain_ids}
        return cls(t, p, build_domain_graph(t, p), aug)

    @property
    def width(self) -> int:
        """Extended vector width covering physical and virtual link ids."""
        return max([self.topology.width] + [a.width for a in self.augmented.values()])

    def domain_of(self, s: int) -> int:
        return self.partition.domain_of[s]
