"""Match-action engine modelling a programmable ingress pipeline.

A pass applies at most ``stages_per_pass`` tables, one per stage.  Each
application fires exactly one rule (or the table default) and runs its action
on the header; everything the traversal needs lives in the header, so a pass
is a pure function and recirculation simply feeds the header back in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .errors import StackUnderflow
from .headers import (
    DOMAIN,
    EMPTY_BFS,
    EMPTY_DFS,
    FLAT,
    INITIAL_MAX_LEN,
    INTRA,
    RUNNING,
    SENTINEL,
    UNREACHABLE,
    PacketHeader,
)
from .policy import BFS, IDDFS, flow_hash, weighted_pick

EXACT, TERNARY, LPM = "exact", "ternary", "lpm"
DEFAULT_STAGES = 10
DEFAULT_RECIRC_LIMIT = 64


# --------------------------------------------------------------------------
# match keys


@dataclass(frozen=True)
class Exact:
    value: int


@dataclass(frozen=True)
class Ternary:
    value: int
    mask: int

    def __post_init__(self):
        if self.value & ~self.mask:
            raise ValueError("ternary value has bits outside its mask")


@dataclass(frozen=True)
class Lpm:
    value: int
    prefix_len: int
    width: int

    def __post_init__(self):
        if not 0 <= self.prefix_len <= self.width:
            raise ValueError("prefix length exceeds field width")

    def matches(self, x: int) -> bool:
        shift = self.width - self.prefix_len
        return (x >> shift) == (self.value >> shift)


@dataclass(frozen=True)
class _Wildcard:
    def __repr__(self):
        return "Wildcard"


Wildcard = _Wildcard()


@dataclass(frozen=True)
class ActionSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __hash__(self):
        return hash((self.name, json.dumps(_jsonable(self.params), sort_keys=True)))


@dataclass(frozen=True)
class TableRule:
    keys: dict
    action: ActionSpec
    priority: int = 0


# --------------------------------------------------------------------------
# header fields visible to match keys


def _next_domain(h, env):
    return h.path[0] if h.path else 0


def _link_up(h, env):
    if env is None:
        return 1
    return int(env.link_up(h.curr, h.next_hop))


FIELD_GETTERS: dict[str, Callable[[PacketHeader, Any], int]] = {
    "scope": lambda h, e: h.scope,
    "curr": lambda h, e: h.curr,
    "visited_vec": lambda h, e: h.visited,
    "stack": lambda h, e: h.stack_sel,
    "other_empty": lambda h, e: int(len(h.bfs_stacks[1 - h.stack_sel]) <= 1),
    "len": lambda h, e: h.len,
    "max_len": lambda h, e: h.max_len,
    "pref": lambda h, e: h.prefs.get(h.curr, 0),
    "origin": lambda h, e: h.origin,
    "next_domain": _next_domain,
    "next_hop": lambda h, e: h.next_hop,
    "link_up": _link_up,
    "fail_vec": lambda h, e: h.fail_vec,
    "wcmp_switch": lambda h, e: e,
    "flow_hash": lambda h, e: flow_hash(h.src, h.final_dst, h.flow_id),
}


class Table:
    """Match-action table indexed on its exact-match fields."""

    def __init__(self, name: str, fields: Iterable[tuple[str, str]], default: ActionSpec, lpm_width: int = 2):
        self.name = name
        self.fields = tuple(fields)
        self.default = default
        self.lpm_width = lpm_width
        self.rules: list[TableRule] = []
        self._exact = [f for f, k in self.fields if k == EXACT]
        self._exact_get = [FIELD_GETTERS[f] for f in self._exact]
        self._other = [f for f, k in self.fields if k != EXACT]
        self._other_get = [FIELD_GETTERS[f] for f in self._other]
        lpm = [f for f, k in self.fields if k == LPM]
        if len(lpm) > 1:
            raise ValueError("at most one lpm field per table")
        self._lpm_pos = self._other.index(lpm[0]) if lpm else None
        self._index: dict[tuple, list] = {}

    def __len__(self):
        return len(self.rules)

    def __repr__(self):
        return f"Table({self.name!r}, {len(self.rules)} rules)"

    def add(self, keys: dict, action: ActionSpec) -> TableRule:
        for f, kind in self.fields:
            k = keys.get(f, Wildcard)
            if kind == EXACT and not isinstance(k, Exact):
                raise ValueError(f"{self.name}.{f} is an exact field")
            if kind == TERNARY and not isinstance(k, (Ternary, _Wildcard)):
                raise ValueError(f"{self.name}.{f} is a ternary field")
            if kind == LPM and not isinstance(k, (Lpm, _Wildcard)):
                raise ValueError(f"{self.name}.{f} is an lpm field")
        extra = set(keys) - {f for f, _ in self.fields}
        if extra:
            raise ValueError(f"{self.name}: unknown key fields {sorted(extra)}")
        rule = TableRule({f: keys.get(f, Wildcard) for f, _ in self.fields}, action, len(self.rules))
        self.rules.append(rule)
        checks = []
        plen = 0
        for pos, f in enumerate(self._other):
            k = rule.keys[f]
            if isinstance(k, Ternary):
                checks.append((pos, k.mask, k.value))
            elif isinstance(k, Lpm) and k.prefix_len:
                shift = k.width - k.prefix_len
                mask = ((1 << k.prefix_len) - 1) << shift
                checks.append((pos, mask, k.value & mask))
                plen = k.prefix_len
        key = tuple(rule.keys[f].value for f in self._exact)
        self._index.setdefault(key, []).append((tuple(checks), plen, rule))
        return rule

    def extend(self, rules: Iterable[TableRule]) -> None:
        for r in rules:
            self.add(r.keys, r.action)

    def lookup(self, h: PacketHeader, env=None) -> TableRule | None:
        key = tuple(g(h, env) for g in self._exact_get)
        cands = self._index.get(key)
        if not cands:
            return None
        vals = [g(h, env) for g in self._other_get]
        if self._lpm_pos is None:
            for checks, _, rule in cands:
                for pos, mask, value in checks:
                    if vals[pos] & mask != value:
                        break
                else:
                    return rule
            return None
        best, best_len = None, -1
        for checks, plen, rule in cands:
            if plen <= best_len:
                continue
            for pos, mask, value in checks:
                if vals[pos] & mask != value:
                    break
            else:
                best, best_len = rule, plen
        return best

    def lookup_all(self, h: PacketHeader, env=None) -> list[TableRule]:
        """Every matching rule, for tables whose rules model parallel single-rule tables."""
        key = tuple(g(h, env) for g in self._exact_get)
        vals = [g(h, env) for g in self._other_get]
        return [
            rule
            for checks, _, rule in self._index.get(key, ())
            if all(vals[pos] & mask == value for pos, mask, value in checks)
        ]


def match(table: Table, header: PacketHeader, env=None) -> TableRule | None:
    """Winning rule, or None when the table default applies.

    Longest prefix on the lpm field wins; ties and non-lpm tables go to the
    lowest priority (first installed) rule.
    """
    return table.lookup(header, env)


# --------------------------------------------------------------------------
# actions (mutate a private header copy in place)


def _pop(stack):
    if not stack:
        raise StackUnderflow("stack lost its sentinel")
    if len(stack) == 1:
        return stack[0], stack
    return stack[-1], stack[:-1]


def _reset_traversal(h: PacketHeader) -> None:
    h.stack_sel = 0
    h.bfs_stacks = (EMPTY_BFS, EMPTY_BFS)
    h.dfs_stack = EMPTY_DFS
    h.len = 0
    h.max_len = INITIAL_MAX_LEN
    h.status = RUNNING


def _push_neighbor(h, p):
    n = p["n"]
    path = h.path + (n,) if len(h.path) < h.path_capacity else h.path
    other = 1 - h.stack_sel
    stacks = list(h.bfs_stacks)
    stacks[other] = stacks[other] + ((n, path),)
    h.bfs_stacks = tuple(stacks)
    h.visited |= p["n_visited"]
    h.explored += 1


def _pop_stack(h, p):
    stacks = list(h.bfs_stacks)
    (sw, path), stacks[h.stack_sel] = _pop(stacks[h.stack_sel])
    h.bfs_stacks = tuple(stacks)
    h.curr = sw
    if sw != SENTINEL:
        h.path = path


def _change_stack(h, p):
    h.stack_sel = 1 - h.stack_sel
    _pop_stack(h, p)


def _goto_neighbor(h, p):
    n = p["n"]
    h.dfs_stack = h.dfs_stack + (h.curr,)
    h.curr = n
    h.visited |= p["n_visited"]
    h.len += 1
    if h.path_base + h.len <= h.path_capacity:
        h.path = h.path + (n,)
    h.explored += 1


def _backtrack(h, p):
    sw, h.dfs_stack = _pop(h.dfs_stack)
    if h.len >= 1 and h.path_base + h.len <= h.path_capacity:
        h.path = h.path[:-1]
    h.curr = sw
    h.len -= 1


def _increase_length(h, p):
    h.max_len <<= 1
    h.curr = h.curr_init
    h.visited = h.visited_init
    h.len = 0
    h.path = h.path[: h.path_base]
    h.dfs_stack = EMPTY_DFS


def _unreachable(h, p):
    h.status = UNREACHABLE


def _drop(h, p):
    h.status = UNREACHABLE
    h.fallback = True


def _next_target(h, p):
    chain = h.policy.mbox_chain
    h.target_cursor += 1
    h.dst = chain[h.target_cursor] if h.target_cursor < len(chain) else (h.final_dst,)
    h.curr_init = h.curr
    h.visited = h.visited_init = h.fail_vec | p["n_visited"]
    h.path_base = len(h.path)
    _reset_traversal(h)


def _domain_enter(h, p):
    h.domain_path = (h.curr_init,) + h.path
    h.scope = INTRA
    h.curr = h.curr_init = h.origin
    h.dst = (p["virtual"],)
    h.visited = h.visited_init = h.fail_vec | h.vfail | p["n_visited"]
    h.path = ()
    h.path_base = 0
    _reset_traversal(h)


def _fallback(h, p):
    h.scope = FLAT
    h.fallback = True
    h.curr = h.curr_init = h.origin
    h.dst = (h.final_dst,)
    h.visited = h.visited_init = h.fail_vec | p["n_visited"]
    h.path = ()
    h.path_base = 0
    _reset_traversal(h)


def _fcp_update(h, p):
    setattr(h, p.get("target", "fail_vec"), getattr(h, p.get("target", "fail_vec")) | p["bits"])


def _wcmp_map(h, p):
    sw = p["switch"]
    if "pref" in p:
        h.prefs = {**h.prefs, sw: p["pref"]}
        return
    entry = next((e for e in h.policy.wcmp if e.switch == sw), None)
    if entry is None:
        return
    links = p["links"]
    weights = [w if not (h.fail_vec >> (links[n] - 1)) & 1 else 0 for n, w in zip(entry.next_hops, entry.weights)]
    prefs = dict(h.prefs)
    if sum(weights) == 0:
        prefs.pop(sw, None)
    else:
        i = weighted_pick(flow_hash(h.src, h.final_dst, h.flow_id), weights)
        prefs[sw] = p["codes"][entry.next_hops[i]]
    h.prefs = prefs


def _noop(h, p):
    pass


ACTIONS: dict[str, Callable[[PacketHeader, dict], None]] = {
    "push_neighbor": _push_neighbor,
    "pop_stack": _pop_stack,
    "change_stack": _change_stack,
    "goto_neighbor": _goto_neighbor,
    "backtrack": _backtrack,
    "increase_length": _increase_length,
    "unreachable": _unreachable,
    "drop": _drop,
    "next_target": _next_target,
    "domain_enter": _domain_enter,
    "fallback": _fallback,
    "fcp_update": _fcp_update,
    "wcmp_map": _wcmp_map,
    "forward": _noop,
    "noop": _noop,
}


def apply_action(spec: ActionSpec, header: PacketHeader) -> PacketHeader:
    h = header.copy()
    ACTIONS[spec.name](h, spec.params)
    return h


# --------------------------------------------------------------------------
# pipeline execution


@dataclass
class Pipeline:
    tables: dict[str, Table]
    stages_per_pass: int = DEFAULT_STAGES
    recirc_limit: int = DEFAULT_RECIRC_LIMIT

    def __post_init__(self):
        if self.stages_per_pass < 1:
            raise ValueError("stages_per_pass must be >= 1")


@dataclass(frozen=True)
class Verdict:
    kind: str  # "forward" | "deliver" | "drop"
    next_hop: int | None = None
    reason: str | None = None


@dataclass
class PassResult:
    header: PacketHeader
    done: bool
    applications: int
    fired: list


@dataclass
class ExecOutcome:
    verdict: Verdict
    header: PacketHeader
    recirculations: int
    applications: int
    rules_fired: list


def _pending(pipeline: Pipeline, h: PacketHeader, mode: str) -> str | None:
    """Name of the table the ingress control flow applies next, None when finished."""
    if h.status == UNREACHABLE:
        if h.scope != FLAT and not h.fallback and "fallback" in pipeline.tables:
            return "fallback"
        return None
    if h.curr in h.dst:
        if h.scope == DOMAIN:
            return "hierarchy"
        if h.target_cursor < len(h.policy.mbox_chain):
            return "chain"
        return None
    return BFS if mode == BFS else IDDFS


def run_pass(pipeline: Pipeline, header: PacketHeader, mode: str, env=None) -> PassResult:
    h = header.copy()
    fired = []
    apps = 0
    for stage in range(pipeline.stages_per_pass):
        tname = _pending(pipeline, h, mode)
        if tname is None:
            break
        table = pipeline.tables[tname]
        rule = table.lookup(h, env)
        spec = rule.action if rule is not None else table.default
        ACTIONS[spec.name](h, spec.params)
        fired.append((stage, tname, None if rule is None else rule.priority, spec.name, spec.params.get("n")))
        apps += 1
    return PassResult(h, _pending(pipeline, h, mode) is None, apps, fired)


def run_to_completion(pipeline: Pipeline, header: PacketHeader, mode: str, env=None) -> ExecOutcome:
    h = header
    passes = apps = 0
    fired: list = []
    while True:
        res = run_pass(pipeline, h, mode, env)
        h = res.header
        passes += 1
        apps += res.applications
        fired.extend(res.fired)
        if res.done:
            break
        if passes - 1 >= pipeline.recirc_limit:
            return ExecOutcome(Verdict("drop", reason="recirc_limit"), h, passes - 1, apps, fired)
    if h.status == UNREACHABLE:
        verdict = Verdict("drop", reason="unreachable")
    elif h.path:
        verdict = Verdict("forward", next_hop=h.path[0])
    else:
        verdict = Verdict("deliver")
    return ExecOutcome(verdict, h, passes - 1, apps, fired)


# --------------------------------------------------------------------------
# JSON rule dumps


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def key_to_json(fname: str, k) -> dict:
    if isinstance(k, Exact):
        return {"field": fname, "kind": EXACT, "value": k.value}
    if isinstance(k, Ternary):
        return {"field": fname, "kind": TERNARY, "value": k.value, "mask": k.mask}
    if isinstance(k, Lpm):
        return {"field": fname, "kind": LPM, "value": k.value, "prefix": k.prefix_len}
    return {"field": fname, "kind": "wildcard"}


def key_from_json(d: dict, lpm_width: int):
    kind = d["kind"]
    if kind == EXACT:
        return Exact(d["value"])
    if kind == TERNARY:
        return Ternary(d["value"], d["mask"])
    if kind == LPM:
        return Lpm(d["value"], d["prefix"], lpm_width)
    return Wildcard


def rule_to_json(table: str, rule: TableRule) -> dict:
    return {
        "table": table,
        "keys": [key_to_json(f, k) for f, k in rule.keys.items() if k is not Wildcard],
        "action": rule.action.name,
        "params": _jsonable(rule.action.params),
    }


def _params_from_json(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, list):
            v = tuple(v)
        elif isinstance(v, dict):
            v = {int(kk) if kk.lstrip("-").isdigit() else kk: vv for kk, vv in v.items()}
        out[k] = v
    return out


def table_to_json(table: Table) -> dict:
    return {
        "name": table.name,
        "fields": [list(f) for f in table.fields],
        "default": {"action": table.default.name, "params": _jsonable(table.default.params)},
        "lpm_width": table.lpm_width,
        "rules": [rule_to_json(table.name, r) for r in table.rules],
    }


def table_from_json(doc: dict) -> Table:
    t = Table(
        doc["name"],
        [tuple(f) for f in doc["fields"]],
        ActionSpec(doc["default"]["action"], _params_from_json(doc["default"]["params"])),
        doc.get("lpm_width", 2),
    )
    for r in doc["rules"]:
        keys = {k["field"]: key_from_json(k, t.lpm_width) for k in r["keys"]}
        t.add(keys, ActionSpec(r["action"], _params_from_json(r["params"])))
    return t
