"""Packet header carrying all routing state, plus its byte layout.

Wire layout (big-endian)::

    magic "DP" | version u8 | topology digest u32 | width u16 | fields...

Bit vectors are serialized as ``ceil(width / 8)`` little-endian bytes.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field, fields

from .errors import TruncatedHeader, VersionMismatch, WidthMismatch
from .policy import IDDFS, MODES, PolicyBlock, WcmpEntry
from .topology import Topology

MAGIC = b"DP"
VERSION = 1
PATH_CAPACITY = 8
MAX_DST = 4
INITIAL_MAX_LEN = 4
SENTINEL = 0

# traversal scope: what graph the rules in play describe
FLAT, INTRA, DOMAIN = 0, 1, 2
# traversal status
RUNNING, UNREACHABLE = 0, 1

EMPTY_BFS = ((SENTINEL, ()),)
EMPTY_DFS = (SENTINEL,)


@dataclass
class PacketHeader:
    width: int
    curr: int
    dst: tuple[int, ...]
    final_dst: int
    origin: int = 0
    curr_init: int = 0
    visited: int = 0
    visited_init: int = 0
    fail_vec: int = 0
    vfail: int = 0
    dfail: int = 0
    src: int = 0
    trail: int = 0
    stack_sel: int = 0
    bfs_stacks: tuple = (EMPTY_BFS, EMPTY_BFS)
    dfs_stack: tuple[int, ...] = EMPTY_DFS
    len: int = 0
    max_len: int = INITIAL_MAX_LEN
    path: tuple[int, ...] = ()
    path_cursor: int = 0
    path_base: int = 0
    path_capacity: int = PATH_CAPACITY
    scope: int = FLAT
    fallback: bool = False
    status: int = RUNNING
    domain_path: tuple[int, ...] = ()
    policy: PolicyBlock = field(default_factory=PolicyBlock)
    chain_cursor: int = 0
    target_cursor: int = 0
    prefs: dict = field(default_factory=dict)
    flow_id: int = 0
    explored: int = 0
    topo_digest: int = 0

    @property
    def hierarchy(self) -> int:
        return int(self.scope == DOMAIN)

    @property
    def mode(self) -> str:
        return self.policy.traversal_mode

    @property
    def next_hop(self) -> int:
        if self.path_cursor < len(self.path):
            return self.path[self.path_cursor]
        return 0

    def copy(self) -> "PacketHeader":
        return copy.copy(self)


def init_header(
    t: Topology,
    src: int,
    dst,
    fail: int = 0,
    policy: PolicyBlock | None = None,
    path_capacity: int = PATH_CAPACITY,
    flow_id: int = 0,
    width: int | None = None,
) -> PacketHeader:
    """Header ready for a flat traversal from ``src``.

    ``visited`` starts as the failure vector plus every link entering ``src``.
    """
    if src == SENTINEL:
        raise ValueError("switch 0 is reserved for the stack sentinel")
    width = t.width if width is None else width
    if fail >> width:
        raise WidthMismatch(f"failure vector wider than {width} bits")
    dsts = (dst,) if isinstance(dst, int) else tuple(dst)
    if not 1 <= len(dsts) <= MAX_DST:
        raise ValueError(f"dst must hold 1..{MAX_DST} switches")
    policy = policy or PolicyBlock()
    visited = fail | t.in_mask(src)
    return PacketHeader(
        width=width,
        curr=src,
        dst=dsts,
        final_dst=dsts[0],
        origin=src,
        curr_init=src,
        visited=visited,
        visited_init=visited,
        fail_vec=fail,
        src=src,
        path_capacity=path_capacity,
        policy=policy,
        flow_id=flow_id,
        topo_digest=t.digest(),
    )


# --------------------------------------------------------------------------
# wire format


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, x):
        self.parts.append(struct.pack(">B", x))

    def u16(self, x):
        self.parts.append(struct.pack(">H", x))

    def i16(self, x):
        self.parts.append(struct.pack(">h", x))

    def u32(self, x):
        self.parts.append(struct.pack(">I", x))

    def vec(self, x, nbytes):
        self.parts.append(x.to_bytes(nbytes, "little"))

    def varvec(self, x):
        raw = x.to_bytes((x.bit_length() + 7) // 8, "little")
        self.u8(len(raw))
        self.parts.append(raw)

    def ids(self, xs):
        self.u8(len(xs))
        for x in xs:
            self.u16(x)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedHeader(f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack(">B", self.take(1))[0]

    def u16(self):
        return struct.unpack(">H", self.take(2))[0]

    def i16(self):
        return struct.unpack(">h", self.take(2))[0]

    def u32(self):
        return struct.unpack(">I", self.take(4))[0]

    def vec(self, nbytes):
        return int.from_bytes(self.take(nbytes), "little")

    def varvec(self):
        return int.from_bytes(self.take(self.u8()), "little")

    def ids(self):
        return tuple(self.u16() for _ in range(self.u8()))


def vec_bytes(width: int) -> int:
    return (width + 7) // 8


def encode(h: PacketHeader) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.u8(VERSION)
    w.u32(h.topo_digest)
    w.u16(h.width)
    nb = vec_bytes(h.width)
    for x in (h.curr, h.final_dst, h.origin, h.curr_init):
        w.u16(x)
    w.ids(h.dst)
    for v in (h.visited, h.visited_init, h.fail_vec):
        w.vec(v, nb)
    w.varvec(h.vfail)
    w.varvec(h.dfail)
    w.u16(h.src)
    w.varvec(h.trail)
    w.u8(h.stack_sel)
    for stack in h.bfs_stacks:
        w.u16(len(stack))
        for sw, p in stack:
            w.u16(sw)
            w.ids(p)
    w.u16(len(h.dfs_stack))
    for sw in h.dfs_stack:
        w.u16(sw)
    w.i16(h.len)
    w.u16(h.max_len)
    w.ids(h.path)
    w.u8(h.path_cursor)
    w.u8(h.path_base)
    w.u8(h.path_capacity)
    w.u8(h.scope)
    w.u8(int(h.fallback))
    w.u8(h.status)
    w.ids(h.domain_path)
    pol = h.policy
    w.u8(MODES.index(pol.traversal_mode))
    w.u8(len(pol.mbox_chain))
    for replicas in pol.mbox_chain:
        w.ids(replicas)
    w.u8(len(pol.prefs))
    for sw, code in pol.prefs:
        w.u16(sw)
        w.u8(code)
    w.u8(len(pol.wcmp))
    for e in pol.wcmp:
        w.u16(e.switch)
        w.ids(e.next_hops)
        w.ids(e.weights)
    w.u8(h.chain_cursor)
    w.u8(h.target_cursor)
    w.u8(len(h.prefs))
    for sw, code in sorted(h.prefs.items()):
        w.u16(sw)
        w.u8(code)
    w.u32(h.flow_id)
    w.u32(h.explored)
    return b"".join(w.parts)


def decode(data: bytes, t: Topology | None = None) -> PacketHeader:
    r = _Reader(bytes(data))
    if r.take(2) != MAGIC:
        raise VersionMismatch("bad magic")
    version = r.u8()
    if version != VERSION:
        raise VersionMismatch(f"header version {version}, expected {VERSION}")
    digest = r.u32()
    if t is not None and digest != t.digest():
        raise WidthMismatch("header was encoded for a different topology")
    width = r.u16()
    nb = vec_bytes(width)
    curr, final_dst, origin, curr_init = (r.u16() for _ in range(4))
    dst = r.ids()
    visited, visited_init, fail_vec = (r.vec(nb) for _ in range(3))
    vfail, dfail, src, trail = r.varvec(), r.varvec(), r.u16(), r.varvec()
    stack_sel = r.u8()
    stacks = []
    for _ in range(2):
        stacks.append(tuple((r.u16(), r.ids()) for _ in range(r.u16())))
    dfs = tuple(r.u16() for _ in range(r.u16()))
    length = r.i16()
    max_len = r.u16()
    path = r.ids()
    path_cursor, path_base, path_capacity, scope, fallback, status = (r.u8() for _ in range(6))
    domain_path = r.ids()
    mode = MODES[r.u8()]
    chain = tuple(r.ids() for _ in range(r.u8()))
    prefs = tuple((r.u16(), r.u8()) for _ in range(r.u8()))
    wcmp = tuple(WcmpEntry(r.u16(), r.ids(), r.ids()) for _ in range(r.u8()))
    chain_cursor = r.u8()
    target_cursor = r.u8()
    eff = {}
    for _ in range(r.u8()):
        sw = r.u16()
        eff[sw] = r.u8()
    flow_id = r.u32()
    explored = r.u32()
    if r.pos != len(r.data):
        raise VersionMismatch(f"{len(r.data) - r.pos} trailing bytes")
    return PacketHeader(
        width=width,
        curr=curr,
        dst=dst,
        final_dst=final_dst,
        origin=origin,
        curr_init=curr_init,
        visited=visited,
        visited_init=visited_init,
        fail_vec=fail_vec,
        vfail=vfail,
        dfail=dfail,
        src=src,
        trail=trail,
        stack_sel=stack_sel,
        bfs_stacks=tuple(stacks),
        dfs_stack=dfs,
        len=length,
        max_len=max_len,
        path=path,
        path_cursor=path_cursor,
        path_base=path_base,
        path_capacity=path_capacity,
        scope=scope,
        fallback=bool(fallback),
        status=status,
        domain_path=domain_path,
        policy=PolicyBlock(chain, prefs, wcmp, mode),
        chain_cursor=chain_cursor,
        target_cursor=target_cursor,
        prefs=eff,
        flow_id=flow_id,
        explored=explored,
        topo_digest=digest,
    )


def strip_traversal_state(h: PacketHeader) -> PacketHeader:
    """Header as emitted on an inter-switch hop: BFS/DFS stacks are never deparsed."""
    h = h.copy()
    h.bfs_stacks = (EMPTY_BFS, EMPTY_BFS)
    h.dfs_stack = EMPTY_DFS
    return h


def dump_header(h: PacketHeader) -> str:
    """Annotated hex dump of the wire encoding."""
    raw = encode(h)
    lines = [f"# {len(raw)} bytes, width {h.width} bits"]
    for name in ("curr", "dst", "final_dst", "fail_vec", "path", "path_cursor", "scope", "domain_path"):
        val = getattr(h, name)
        if name == "fail_vec":
            val = hex(val)
        lines.append(f"# {name} = {val}")
    for off in range(0, len(raw), 16):
        chunk = raw[off : off + 16]
        lines.append(f"{off:04x}  " + " ".join(f"{b:02x}" for b in chunk))
    return "\n".join(lines)


HEADER_FIELDS = tuple(f.name for f in fields(PacketHeader))
