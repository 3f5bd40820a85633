import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dproute.errors import StackUnderflow
from dproute.headers import EMPTY_BFS, init_header
from dproute.pipeline import (
    EXACT,
    LPM,
    TERNARY,
    ActionSpec,
    Exact,
    Lpm,
    Pipeline,
    Table,
    Ternary,
    Wildcard,
    apply_action,
    match,
    run_pass,
    run_to_completion,
    table_from_json,
    table_to_json,
)
from dproute.policy import BFS, IDDFS, PolicyBlock
from dproute.ruleplane import compile_rules
from dproute.topology import Topology, bits_of, mask_of

from conftest import random_connected


def header(t, src, dst, mode, fail=0):
    return init_header(t, src, dst, fail, policy=PolicyBlock(traversal_mode=mode))


# ---------------------------------------------------------------- matching


@pytest.fixture
def pref_table():
    """Switch 1 with next hops 2, 3, 4 and the five preference rules in figure order."""
    t = Table("pref", (("curr", EXACT), ("visited_vec", TERNARY), ("pref", LPM)), ActionSpec("backtrack"))
    rows = [(2, Wildcard), (3, Wildcard), (4, Wildcard), (3, Lpm(0b10, 1, 2)), (4, Lpm(0b11, 2, 2))]
    for n, pref in rows:
        t.add({"curr": Exact(1), "visited_vec": Ternary(0, 1 << n), "pref": pref}, ActionSpec("goto_neighbor", {"n": n}))
    return t


def _pref_header(code):
    t = Topology([(1, 2), (1, 3), (1, 4)])
    h = init_header(t, 1, 4)
    h.visited = 0
    h.prefs = {1: code}
    return h


def test_lpm_longest_prefix_wins(pref_table):
    rule = match(pref_table, _pref_header(0b11))
    assert rule.priority == 4 and rule.action.params["n"] == 4


def test_lpm_middle_prefix(pref_table):
    rule = match(pref_table, _pref_header(0b10))
    assert rule.priority == 3 and rule.action.params["n"] == 3


def test_lpm_tie_goes_to_first_rule(pref_table):
    rule = match(pref_table, _pref_header(0b00))
    assert rule.priority == 0 and rule.action.params["n"] == 2


def test_empty_table_uses_default(diamond):
    t = Table("empty", (("curr", EXACT),), ActionSpec("noop"))
    assert match(t, init_header(diamond, 1, 4)) is None


def test_key_validation():
    t = Table("x", (("curr", EXACT), ("visited_vec", TERNARY)), ActionSpec("noop"))
    with pytest.raises(ValueError):
        t.add({"curr": Ternary(0, 1)}, ActionSpec("noop"))
    with pytest.raises(ValueError):
        t.add({"curr": Exact(1), "len": Exact(0)}, ActionSpec("noop"))
    with pytest.raises(ValueError):
        Ternary(0b11, 0b01)
    with pytest.raises(ValueError):
        Lpm(0, 3, 2)


# ---------------------------------------------------------------- actions


def test_push_neighbor(diamond):
    h = header(diamond, 1, 4, BFS)
    out = apply_action(ActionSpec("push_neighbor", {"n": 2, "n_visited": mask_of([1, 4])}), h)
    assert out.bfs_stacks[1] == EMPTY_BFS + ((2, (2,)),)
    assert bits_of(out.visited) == [1, 2, 4, 6]
    assert h.bfs_stacks[1] == EMPTY_BFS


def test_change_stack_on_sentinel(diamond):
    h = header(diamond, 1, 4, BFS)
    h.curr = 0
    h.bfs_stacks = (EMPTY_BFS, EMPTY_BFS + ((3, (3,)),))
    out = apply_action(ActionSpec("change_stack"), h)
    assert out.stack_sel == 1
    assert out.curr == 3 and out.path == (3,)


def test_backtrack_on_line():
    t = Topology([(1, 2)])
    h = header(t, 1, 2, IDDFS)
    h.dfs_stack, h.len, h.curr, h.path = (0, 1), 1, 2, (2,)
    out = apply_action(ActionSpec("backtrack"), h)
    assert (out.curr, out.len, out.path, out.dfs_stack) == (1, 0, (), (0,))


def test_backtrack_past_sentinel_keeps_sentinel():
    t = Topology([(1, 2)])
    h = header(t, 1, 2, IDDFS)
    out = apply_action(ActionSpec("backtrack"), h)
    assert out.curr == 0 and out.len == -1 and out.dfs_stack == (0,)
    h.dfs_stack = ()
    with pytest.raises(StackUnderflow):
        apply_action(ActionSpec("backtrack"), h)


def test_increase_length_resets(diamond):
    h = header(diamond, 1, 4, IDDFS)
    init = h.visited
    h.curr, h.len, h.visited, h.path = 0, -1, 0xFF, (2,)
    out = apply_action(ActionSpec("increase_length"), h)
    assert (out.max_len, out.curr, out.len, out.visited, out.path) == (8, 1, 0, init, ())


# ---------------------------------------------------------------- passes


def test_diamond_bfs_single_pass(diamond, diamond_rules):
    res = run_pass(diamond_rules.pipeline, header(diamond, 1, 4, BFS), BFS)
    assert res.done and res.applications <= 10


def test_diamond_bfs_trace(diamond, diamond_rules):
    out = run_to_completion(diamond_rules.pipeline, header(diamond, 1, 4, BFS), BFS)
    assert [f[3] for f in out.rules_fired] == [
        "push_neighbor",
        "push_neighbor",
        "pop_stack",
        "change_stack",
        "push_neighbor",
        "pop_stack",
        "pop_stack",
        "change_stack",
    ]
    assert out.recirculations == 0
    assert out.header.path == (3, 4)
    assert out.verdict.kind == "forward" and out.verdict.next_hop == 3


def test_diamond_iddfs_first_route(diamond, diamond_rules):
    out = run_to_completion(diamond_rules.pipeline, header(diamond, 1, 4, IDDFS), IDDFS)
    assert out.header.path == (2, 4)
    assert out.header.max_len == 4
    assert out.applications == 2


def test_src_equals_dst_zero_applications(diamond, diamond_rules):
    res = run_pass(diamond_rules.pipeline, header(diamond, 2, 2, BFS), BFS)
    assert res.done and res.applications == 0


def test_ring_antipode_needs_recirculation():
    ring = Topology([(i, i % 20 + 1) for i in range(1, 21)])
    rules = compile_rules(ring, IDDFS)
    res = run_pass(rules.pipeline, header(ring, 1, 11, IDDFS), IDDFS)
    assert not res.done
    out = run_to_completion(rules.pipeline, res.header, IDDFS)
    assert out.verdict.kind == "forward"


def test_isolated_destination_unreachable(diamond, diamond_rules):
    fail = diamond.physical_pair(2, 4) | diamond.physical_pair(3, 4)
    for mode in (BFS, IDDFS):
        out = run_to_completion(diamond_rules.pipeline, header(diamond, 1, 4, mode, fail), mode)
        assert out.verdict.kind == "drop" and out.verdict.reason == "unreachable"


def test_recirc_limit_valve(diamond, diamond_rules):
    fail = diamond.physical_pair(2, 4) | diamond.physical_pair(3, 4)
    tight = Pipeline(diamond_rules.tables, stages_per_pass=1, recirc_limit=2)
    out = run_to_completion(tight, header(diamond, 1, 4, IDDFS, fail), IDDFS)
    assert out.verdict.reason == "recirc_limit"
    assert out.recirculations == 2


def test_pipeline_rejects_zero_stages(diamond_rules):
    with pytest.raises(ValueError):
        Pipeline(diamond_rules.tables, stages_per_pass=0)


def test_run_pass_is_pure(diamond, diamond_rules):
    h = header(diamond, 1, 4, BFS)
    before = h.copy()
    run_pass(diamond_rules.pipeline, h, BFS)
    assert h == before


_instances = st.tuples(st.integers(3, 9), st.integers(0, 5000), st.sampled_from([BFS, IDDFS]))


def _instance(n, seed, mode):
    t = random_connected(n, 0.4, seed)
    src, dst = t.switches[seed % n], t.switches[(seed // 7) % n]
    edges = t.edges()
    fail = t.physical_pair(*edges[seed % len(edges)]) if seed % 3 == 0 else 0
    return t, header(t, src, dst, mode, fail)


@settings(max_examples=60, deadline=None)
@given(_instances)
def test_stage_split_is_transparent(inst):
    n, seed, mode = inst
    t, h = _instance(n, seed, mode)
    rules = compile_rules(t, mode)
    outs = [run_to_completion(rules.with_stages(s).pipeline, h, mode) for s in (1, 3, 10)]
    assert all(o.header == outs[0].header for o in outs)
    assert all(o.verdict == outs[0].verdict for o in outs)


@settings(max_examples=60, deadline=None)
@given(_instances, st.integers(1, 12))
def test_recirculation_count_formula(inst, stages):
    n, seed, mode = inst
    t, h = _instance(n, seed, mode)
    out = run_to_completion(compile_rules(t, mode, stages_per_pass=stages).pipeline, h, mode)
    assert out.recirculations == max(math.ceil(out.applications / stages) - 1, 0)


@settings(max_examples=40, deadline=None)
@given(_instances)
def test_visited_monotone_between_resets(inst):
    n, seed, mode = inst
    t, h = _instance(n, seed, mode)
    pl = compile_rules(t, mode, stages_per_pass=1).pipeline
    prev = h
    for _ in range(500):
        res = run_pass(pl, prev, mode)
        reset = res.fired and res.fired[0][3] == "increase_length"
        if not reset:
            assert prev.visited & ~res.header.visited == 0
        prev = res.header
        if res.done:
            break
    assert res.done


def test_table_json_round_trip(diamond_rules):
    for table in diamond_rules.tables.values():
        doc = table_to_json(table)
        again = table_to_json(table_from_json(json.loads(json.dumps(doc))))
        assert again == doc
