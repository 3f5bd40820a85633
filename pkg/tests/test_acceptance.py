"""End-to-end acceptance checks.

Each test prints one ``CRITERION n PASS|FAIL`` line (collected again in the
terminal summary) and then asserts the same condition.
"""

import itertools
import os
import random
import subprocess
import sys
from collections import Counter
from functools import lru_cache
from statistics import mean

import networkx as nx

from dproute import bundled, bundled_names
from dproute.experiment import ExperimentConfig, rows_to_csv, run_experiment, summarize
from dproute.oracle import compliant_shortest_path, shortest_active_path
from dproute.policy import BFS, IDDFS, PolicyBlock, add_mbox_chain, add_preference, add_weighted_lb, complies
from dproute.ruleplane import compile_rules
from dproute.simnet import EventScript, build_network, run_packet, run_script
from dproute.topology import Topology, partition_domains

from conftest import random_connected, report

MODES = (BFS, IDDFS)
FAILURE_TOPOLOGIES = ("NetworkUsa", "Cesnet201006")
ZOO = [n for n in bundled_names() if 10 <= len(bundled(n).edges()) <= 150]


@lru_cache(maxsize=None)
def topo(name):
    return bundled(name)


@lru_cache(maxsize=None)
def flat_net(name, mode):
    t = topo(name)
    return build_network(t, compile_rules(t, mode))


@lru_cache(maxsize=None)
def flat_rows(name, mode, k):
    cfg = ExperimentConfig(topo(name), mode=mode, k_failures=k, n_scenarios=20, seed=0)
    return run_experiment(cfg, flat_net(name, mode))


@lru_cache(maxsize=None)
def hier_rows(name, mode, domains, seed):
    return run_experiment(ExperimentConfig(topo(name), mode=mode, domains=domains, seed=seed))


def _fmt(x):
    return f"{x:.3f}"


# ---------------------------------------------------------------- 1


def _atlas_graphs():
    for g in nx.graph_atlas_g():
        if 2 <= g.number_of_nodes() <= 6 and nx.is_connected(g):
            yield Topology([(u + 1, v + 1) for u, v in g.edges()])


def test_criterion_01_delivery_guarantee():
    checked = mismatches = graphs = 0
    for t in _atlas_graphs():
        graphs += 1
        edges = t.edges()
        fail_sets = [list(c) for k in (1, 2) for c in itertools.combinations(edges, k)]
        for mode in MODES:
            net = build_network(t, compile_rules(t, mode))
            for failed in fail_sets:
                net.reset_links()
                net.fail_links(failed)
                for s in t.switches:
                    for d in t.switches:
                        tr = run_packet(net, s, d, mode=mode)
                        checked += 1
                        mismatches += tr.delivered != shortest_active_path(t, failed, s, d).reachable
    zoo = []
    for name in FAILURE_TOPOLOGIES:
        for mode in MODES:
            for k in (1, 2, 3):
                s = summarize(flat_rows(name, mode, k))
                checked += s["rows"]
                mismatches += s["rows"] - s["delivery_matches_oracle"]
                zoo.append(s["rows"])
    ok = mismatches == 0
    detail = f"{checked} packets ({graphs} small graphs exhaustively, {sum(zoo)} zoo rows), {mismatches} mismatches"
    report(1, ok, detail)
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_02_bfs_optimal_without_failures():
    worst = {}
    for name in bundled_names():
        stretches = [r.stretch for r in flat_rows(name, BFS, 0)]
        assert all(s is not None for s in stretches)
        worst[name] = (max(stretches), mean(stretches))
    ok = all(mx == 1.0 and avg == 1.0 for mx, avg in worst.values())
    report(2, ok, f"{len(worst)} topologies, max per-pair stretch {max(mx for mx, _ in worst.values())}")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_03_recirculation_scale():
    figures = {(n, m): summarize(flat_rows(n, m, 0))["avg_recirc"] for n in ZOO for m in MODES}
    overall = {m: mean(v for (n, mm), v in figures.items() if mm == m) for m in MODES}
    ok = all(v <= 10 for v in figures.values())
    worst = max(figures, key=figures.get)
    detail = (
        f"avg recirc over {len(ZOO)} topologies: bfs {_fmt(overall[BFS])}, iddfs {_fmt(overall[IDDFS])}; "
        f"worst {worst[0]}/{worst[1]} {_fmt(figures[worst])}"
    )
    report(3, ok, detail)
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_04_failure_stretch():
    avgs = {}
    for name in FAILURE_TOPOLOGIES:
        for mode in MODES:
            rows = [r for k in (1, 2, 3) for r in flat_rows(name, mode, k)]
            avgs[(name, mode)] = mean(r.stretch for r in rows if r.stretch is not None)
    ok = all(v < 2.3 for v in avgs.values())
    report(4, ok, ", ".join(f"{n}/{m} {_fmt(v)}" for (n, m), v in avgs.items()))
    assert ok


# ---------------------------------------------------------------- 5 and 6

CESNET = "Cesnet201006"


def _inter_domain(rows, domain_of):
    return [r for r in rows if domain_of[r.src] != domain_of[r.dst]]


@lru_cache(maxsize=None)
def _cesnet_domain_of(seed):
    return partition_domains(topo(CESNET), 3, seed=seed).domain_of


def test_criterion_05_hierarchical_recirculation():
    dom = _cesnet_domain_of(0)
    parts, ok = [], True
    for mode in MODES:
        hier = _inter_domain(hier_rows(CESNET, mode, 3, 0), dom)
        flat = _inter_domain(flat_rows(CESNET, mode, 0), dom)
        zero = sum(r.total_recirc == 0 for r in hier) / len(hier)
        hmax = max(r.total_recirc for r in hier)
        fmax = max(r.total_recirc for r in flat)
        ok &= zero >= 0.6 and hmax <= 3 and fmax >= 10
        parts.append(f"{mode}: zero-recirc share {zero:.2f}, max {hmax} (flat max {fmax})")
    report(5, ok, f"{len(hier)} inter-domain pairs; " + "; ".join(parts))
    assert ok


def test_criterion_06_hierarchical_stretch():
    parts, ok = [], True
    for mode in MODES:
        hier = [r.stretch for r in hier_rows(CESNET, mode, 3, 0) if r.stretch is not None]
        flat = [r.stretch for r in flat_rows(CESNET, mode, 0) if r.stretch is not None]
        share = sum(s < 2 for s in hier) / len(hier)
        ratio = mean(hier) / mean(flat)
        ok &= share >= 0.8 and 1.0 <= ratio <= 2.0
        parts.append(f"{mode}: stretch<2 share {share:.2f}, hier/flat ratio {ratio:.2f}")
    report(6, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 7

SWEEP = (1, 2, 3, 5, 7)
SWEEP_SEEDS = (0, 1, 2)


def test_criterion_07_domain_sweep():
    parts, ok = [], True
    for mode in MODES:
        curve = []
        for d in SWEEP:
            runs = [flat_rows("NetworkUsa", mode, 0)] if d == 1 else [hier_rows("NetworkUsa", mode, d, s) for s in SWEEP_SEEDS]
            curve.append(mean(summarize(rows)["avg_recirc"] for rows in runs))
        ok &= all(b <= a + 0.5 for a, b in zip(curve, curve[1:]))
        parts.append(f"{mode}: " + " ".join(f"{v:.2f}" for v in curve))
    report(7, ok, "avg recirc for domains 1/2/3/5/7; " + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 8


def _mbox_policies(t, n, seed, mode):
    rng = random.Random(seed)
    blocks = {}
    while len(blocks) < n:
        s, d, m = rng.sample(t.switches, 3)
        if (s, d) not in blocks:
            blocks[(s, d)] = add_mbox_chain(t, PolicyBlock(traversal_mode=mode), [m])
    return blocks


def test_criterion_08_middlebox_compliance():
    parts, ok = [], True
    for name in FAILURE_TOPOLOGIES:
        t = topo(name)
        for mode in MODES:
            blocks = _mbox_policies(t, 100, seed=7, mode=mode)
            net = flat_net(name, mode)
            with_pol, without, bad = [], [], 0
            for (s, d), block in sorted(blocks.items()):
                tr = run_packet(net, s, d, block)
                oracle = compliant_shortest_path(t, [], s, d, block.mbox_chain)
                bad += tr.delivered != oracle.reachable
                bad += tr.delivered and not complies(tr.hops, block.mbox_chain)
                with_pol.append(tr.total_recirc)
                without.append(run_packet(net, s, d, mode=mode).total_recirc)
            ratio = mean(with_pol) / mean(without)
            ok &= bad == 0 and 1.0 <= ratio <= 2.5
            parts.append(f"{name}/{mode} violations {bad}, recirc ratio {ratio:.2f}")
    report(8, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 9

FANOUT = Topology([(1, 2), (1, 3), (1, 4), (2, 5), (3, 5), (4, 5)], name="fanout")


def test_criterion_09_wcmp_ratios():
    net = build_network(FANOUT, compile_rules(FANOUT, IDDFS))
    block = add_weighted_lb(FANOUT, PolicyBlock(), 1, (2, 3, 4), (1, 2, 1))
    n = 10_000

    def shares():
        c = Counter(run_packet(net, 1, 5, block, flow_id=i).hops[1] for i in range(n))
        return [c[h] / n for h in (2, 3, 4)]

    up = shares()
    net.link_down(1, 3)
    down = shares()
    net.reset_links()
    ok = all(abs(a - b) <= 0.05 for a, b in zip(up, (0.25, 0.5, 0.25)))
    ok &= down[1] == 0 and abs(down[0] - 0.5) <= 0.05 and abs(down[2] - 0.5) <= 0.05
    report(9, ok, f"shares {' '.join(f'{x:.3f}' for x in up)}; middle down {down[0]:.3f} {down[2]:.3f}")
    assert ok


# ---------------------------------------------------------------- 10


def _first_goto(trace, switch):
    for sw, _stage, _table, _prio, action, n in trace.rules_fired:
        if sw == switch and action == "goto_neighbor":
            return n
    return None


def test_criterion_10_preferences():
    graphs = [topo("diamond")] + [random_connected(7, 0.4, seed) for seed in range(10)]
    cases = wrong_first = mismatches = 0
    for t in graphs:
        net = build_network(t, compile_rules(t, IDDFS))
        for n1 in t.switches:
            if len(t.neighbors(n1)) > 4:
                continue
            for n2 in t.neighbors(n1):
                block = add_preference(t, PolicyBlock(), n1, n2)
                for d in t.switches:
                    if d == n1:
                        continue
                    cases += 1
                    net.reset_links()
                    tr = run_packet(net, n1, d, block)
                    wrong_first += _first_goto(tr, n1) != n2
                    net.link_down(n1, n2)
                    tr = run_packet(net, n1, d, block)
                    mismatches += tr.delivered != shortest_active_path(t, [(n1, n2)], n1, d).reachable
        net.reset_links()
    ok = cases > 0 and wrong_first == 0 and mismatches == 0
    report(10, ok, f"{cases} (switch, hop, dst) cases; preferred hop not first {wrong_first}; delivery mismatches {mismatches}")
    assert ok


# ---------------------------------------------------------------- 11


def test_criterion_11_failover_script():
    t = topo("diamond")
    net = build_network(t, compile_rules(t, IDDFS))
    script = EventScript.from_json(
        {
            "events": [
                {"action": "inject", "src": 1, "dst": 4},
                {"action": "down", "link": [1, 2]},
                {"action": "inject", "src": 1, "dst": 4},
                {"action": "up", "link": [1, 2]},
                {"action": "inject", "src": 1, "dst": 4},
            ]
        }
    )
    traces = run_script(net, script, IDDFS)
    paths = [tr.hops for tr in traces]
    ok = paths == [[1, 2, 4], [1, 3, 4], [1, 2, 4]] and all(tr.delivered for tr in traces)
    report(11, ok, "paths " + ", ".join("-".join(map(str, p)) for p in paths) + f"; drops {sum(not tr.delivered for tr in traces)}")
    assert ok


# ---------------------------------------------------------------- 12


def test_criterion_12_stage_count_transparency():
    rng = random.Random(12)
    differing = 0
    for i in range(500):
        t = random_connected(rng.randint(3, 8), 0.4, rng.randrange(1 << 20))
        mode = MODES[i % 2]
        rules = compile_rules(t, mode)
        s, d = rng.sample(t.switches, 2)
        failed = rng.sample(t.edges(), min(rng.randint(0, 2), len(t.edges())))
        hops = set()
        for stages in (1, 3, 10):
            net = build_network(t, rules.with_stages(stages))
            net.fail_links(failed)
            tr = run_packet(net, s, d, mode=mode)
            hops.add((tr.delivered, tuple(tr.hops)))
        differing += len(hops) != 1
    ok = differing == 0
    report(12, ok, f"500 instances, {differing} with stage-dependent paths")
    assert ok


# ---------------------------------------------------------------- 13


def _cli(args, hashseed, cwd):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-m", "dproute", *args], cwd=cwd, env=env, check=True, capture_output=True)


def test_criterion_13_determinism(tmp_path):
    outputs = []
    for run, hashseed in enumerate((1, 2)):
        d = tmp_path / str(run)
        d.mkdir()
        _cli(["gen-rules", "--topology", "NetworkUsa", "--mode", "both", "--domains", "3", "--seed", "4", "--out", "rules"], hashseed, d)
        _cli(["experiment", "--topology", "Abilene", "--k", "2", "--scenarios", "5", "--seed", "4", "--out", "m.csv"], hashseed, d)
        outputs.append({p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    # in-process repeat of the CSV as well
    cfg = ExperimentConfig(topo("Abilene"), k_failures=2, n_scenarios=5, seed=4)
    same_inproc = rows_to_csv(run_experiment(cfg)) == rows_to_csv(run_experiment(cfg))
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 3 and same_inproc
    report(13, ok, f"{len(outputs[0])} files byte-identical across hash seeds: {outputs[0] == outputs[1]}")
    assert ok
