"""All-pairs experiments under sampled link failures, with CSV and summary output."""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import asdict, dataclass, field

from .oracle import compliant_shortest_path, shortest_active_path, stretch
from .policy import IDDFS, PolicyTable
from .ruleplane import compile_rules
from .simnet import build_network, run_packet
from .topology import Hierarchy, Topology, partition_domains

CSV_FIELDS = ("scenario", "src", "dst", "delivered", "total_recirc", "hops", "oracle_len", "stretch", "failed_links")


@dataclass
class ExperimentConfig:
    topology: Topology
    mode: str = IDDFS
    domains: int | None = None
    k_failures: int = 0
    n_scenarios: int = 20
    seed: int = 0
    policies: PolicyTable | None = None
    stages_per_pass: int = 10
    path_capacity: int = 8
    pairs: list | None = None
    recirc_limit: int = 64


@dataclass
class MetricsRow:
    scenario: int
    src: int
    dst: int
    delivered: bool
    total_recirc: int
    hops: int
    oracle_len: int | None
    stretch: float | None
    failed_links: str = ""


def failure_scenarios(t: Topology, k: int, n: int, seed: int) -> list[list[tuple[int, int]]]:
    """``n`` sets of ``k`` distinct bidirectional links, sampled uniformly; one empty set when k is 0."""
    if k == 0:
        return [[]]
    edges = t.edges()
    if k > len(edges):
        raise ValueError(f"cannot fail {k} of {len(edges)} links")
    rng = random.Random(f"{seed}:{k}")
    return [sorted(rng.sample(edges, k)) for _ in range(n)]


def build_for(cfg: ExperimentConfig):
    t = cfg.topology
    hier = None
    if cfg.domains:
        hier = Hierarchy.build(t, partition_domains(t, cfg.domains, seed=cfg.seed))
    rules = compile_rules(t, cfg.mode, hier, stages_per_pass=cfg.stages_per_pass, recirc_limit=cfg.recirc_limit)
    return build_network(t, rules)


def run_experiment(cfg: ExperimentConfig, net=None) -> list[MetricsRow]:
    t = cfg.topology
    net = net or build_for(cfg)
    pairs = cfg.pairs or [(s, d) for s in t.switches for d in t.switches if s != d]
    rows = []
    for sc, failed in enumerate(failure_scenarios(t, cfg.k_failures, cfg.n_scenarios, cfg.seed)):
        net.reset_links()
        net.fail_links(failed)
        tag = " ".join(f"{u}-{v}" for u, v in failed)
        for s, d in pairs:
            pol = cfg.policies.for_flow(s, d) if cfg.policies else None
            tr = run_packet(net, s, d, pol, None if pol else cfg.mode, path_capacity=cfg.path_capacity)
            if pol is not None and pol.mbox_chain:
                o = compliant_shortest_path(t, failed, s, d, pol.mbox_chain)
            else:
                o = shortest_active_path(t, failed, s, d)
            st = stretch(tr, o) if tr.delivered and o.reachable else None
            rows.append(MetricsRow(sc, s, d, tr.delivered, tr.total_recirc, len(tr.hops) - 1, o.shortest_len, st, tag))
    net.reset_links()
    rows.sort(key=lambda r: (r.scenario, r.src, r.dst))
    return rows


def _cdf(values) -> list[list]:
    if not values:
        return []
    n = len(values)
    out, seen = [], 0
    for v in sorted(set(values)):
        seen += values.count(v)
        out.append([v, round(seen / n, 6)])
    return out


def summarize(rows: list[MetricsRow]) -> dict:
    n = len(rows)
    recirc = [r.total_recirc for r in rows]
    stretches = [r.stretch for r in rows if r.stretch is not None]
    reachable = sum(r.oracle_len is not None for r in rows)
    agree = sum(r.delivered == (r.oracle_len is not None) for r in rows)
    return {
        "rows": n,
        "delivered": sum(r.delivered for r in rows),
        "oracle_reachable": reachable,
        "delivery_matches_oracle": agree,
        "avg_recirc": round(sum(recirc) / n, 6) if n else None,
        "max_recirc": max(recirc, default=None),
        "zero_recirc_fraction": round(sum(x == 0 for x in recirc) / n, 6) if n else None,
        "avg_stretch": round(sum(stretches) / len(stretches), 6) if stretches else None,
        "recirc_cdf": _cdf(recirc),
        "stretch_cdf": _cdf([round(s, 6) for s in stretches]),
    }


def rows_to_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        d = asdict(r)
        d["delivered"] = int(r.delivered)
        d["oracle_len"] = "" if r.oracle_len is None else r.oracle_len
        d["stretch"] = "" if r.stretch is None else f"{r.stretch:.6f}"
        w.writerow([d[f] for f in CSV_FIELDS])
    return buf.getvalue()


def write_outputs(rows: list[MetricsRow], path: str, extra: dict | None = None) -> str:
    """Write the CSV to ``path`` and the summary next to it; returns the summary path."""
    with open(path, "w", newline="") as f:
        f.write(rows_to_csv(rows))
    summary = dict(summarize(rows), **(extra or {}))
    spath = (path[:-4] if path.endswith(".csv") else path) + ".summary.json"
    with open(spath, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return spath
