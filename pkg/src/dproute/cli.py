"""Command-line entry point: ``dproute <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import PolicyError, TopologyError
from .experiment import ExperimentConfig, run_experiment, summarize, write_outputs
from .headers import dump_header
from .policy import BFS, IDDFS, parse_policies
from .ruleplane import compile_rules
from .simnet import EventScript, build_network, run_packet, run_script
from .topology import Hierarchy, bundled, bundled_names, load_topology, partition_domains

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_DROPPED = 0, 1, 2, 3

log = logging.getLogger("dproute")


def _topology(name_or_path: str):
    if os.path.exists(name_or_path):
        return load_topology(name_or_path)
    if name_or_path in bundled_names():
        return bundled(name_or_path)
    raise FileNotFoundError(f"no topology file or bundled topology named {name_or_path!r}")


def _link(text: str) -> tuple[int, int]:
    try:
        u, v = text.replace(",", "-").split("-")
        return int(u), int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a link as U-V, got {text!r}") from None


def _hierarchy(t, args):
    if not args.domains:
        return None
    return Hierarchy.build(t, partition_domains(t, args.domains, seed=args.seed))


def _policies(t, args):
    if not args.policy:
        return None
    with open(args.policy) as f:
        return parse_policies(json.load(f), t, args.mode)


def _label(t, s: int) -> str:
    name = t.labels.get(s)
    return f"{s}({name})" if name else str(s)


def cmd_gen_rules(args) -> int:
    t = _topology(args.topology)
    hier = _hierarchy(t, args)
    mode = "both" if args.mode == "both" else args.mode
    rules = compile_rules(t, mode, hier, stages_per_pass=args.stages)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for s in t.switches:
        name = f"switch_{s}.json"
        with open(out / name, "w") as f:
            json.dump(rules.for_switch(s), f, sort_keys=True, separators=(",", ":"))
        files.append(name)
    manifest = {
        "topology": t.name,
        "digest": t.digest(),
        "switches": list(t.switches),
        "width": hier.width if hier else t.width,
        "modes": list(rules.modes),
        "stages_per_pass": args.stages,
        "tables": {name: len(table) for name, table in sorted(rules.tables.items())},
        "files": files,
    }
    if hier:
        manifest["domains"] = {str(s): d for s, d in hier.partition.domain_of.items()}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {len(files)} switch rule files to {out}")
    return EXIT_OK


def cmd_route(args) -> int:
    t = _topology(args.topology)
    rules = compile_rules(t, args.mode, _hierarchy(t, args), stages_per_pass=args.stages)
    net = build_network(t, rules)
    net.fail_links(args.fail or [])
    pols = _policies(t, args)
    pol = pols.for_flow(args.src, args.dst) if pols else None
    tr = run_packet(net, args.src, args.dst, pol, None if pol else args.mode, path_capacity=args.path_hops)
    print(" ".join(map(str, tr.hops)))
    if args.verbose:
        print("path: " + " -> ".join(_label(t, s) for s in tr.hops))
        print(f"delivered: {tr.delivered}  recirculations: {tr.total_recirc}  computed at: {tr.computed_at}")
        if tr.drop_reason:
            print(f"drop reason: {tr.drop_reason}")
    if args.dump_header:
        print(dump_header(tr.final_header))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(tr.to_json(), f, indent=2)
    if not tr.delivered:
        print(f"dropped: {tr.drop_reason}", file=sys.stderr)
        return EXIT_DROPPED
    return EXIT_OK


def cmd_experiment(args) -> int:
    t = _topology(args.topology)
    cfg = ExperimentConfig(
        topology=t,
        mode=args.mode,
        domains=args.domains,
        k_failures=args.k,
        n_scenarios=args.scenarios,
        seed=args.seed,
        policies=_policies(t, args),
        stages_per_pass=args.stages,
        path_capacity=args.path_hops,
    )
    rows = run_experiment(cfg)
    meta = {"topology": t.name, "mode": args.mode, "domains": args.domains, "k": args.k, "seed": args.seed}
    if args.out:
        spath = write_outputs(rows, args.out, meta)
        print(f"wrote {len(rows)} rows to {args.out} and {spath}")
    s = summarize(rows)
    print(
        f"rows {s['rows']}  delivered {s['delivered']}/{s['oracle_reachable']} reachable  "
        f"avg recirc {s['avg_recirc']}  avg stretch {s['avg_stretch']}"
    )
    return EXIT_OK


def cmd_emulate(args) -> int:
    t = _topology(args.topology)
    net = build_network(t, compile_rules(t, args.mode, _hierarchy(t, args), stages_per_pass=args.stages))
    def loader(doc):
        return parse_policies(doc, t, args.mode).for_flow("*", "*")

    script = EventScript.load(args.script, loader)
    traces = run_script(net, script, args.mode)
    for i, tr in enumerate(traces):
        status = "delivered" if tr.delivered else f"dropped ({tr.drop_reason})"
        print(f"[{i}] {' '.join(map(str, tr.hops))}  {status}  recirc={tr.total_recirc}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump([tr.to_json() for tr in traces], f, indent=2)
    if args.strict and any(not tr.delivered for tr in traces):
        return EXIT_DROPPED
    return EXIT_OK


def cmd_partition(args) -> int:
    t = _topology(args.topology)
    p = partition_domains(t, args.domains, seed=args.seed)
    doc = {
        "topology": t.name,
        "seed": args.seed,
        "domains": {str(d): p.members(d) for d in p.domain_ids},
        "domain_of": {str(s): d for s, d in p.domain_of.items()},
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dproute", description="Data-plane route computation simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, mode_choices=(BFS, IDDFS)):
        p.add_argument("--topology", required=True, help="GraphML/JSON path or bundled topology name")
        p.add_argument("--mode", choices=mode_choices, default=IDDFS)
        p.add_argument("--domains", type=int, default=None, help="enable hierarchical routing with N domains")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--stages", type=int, default=10, help="table applications per pipeline pass")
        p.add_argument("--out", default=None)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("gen-rules", help="compile per-switch rule files")
    common(p, (BFS, IDDFS, "both"))
    p.set_defaults(func=cmd_gen_rules, out="rules")

    p = sub.add_parser("route", help="route one packet and print its trace")
    common(p)
    p.add_argument("src", type=int)
    p.add_argument("dst", type=int)
    p.add_argument("--fail", type=_link, action="append", help="failed link U-V (repeatable)")
    p.add_argument("--policy", default=None)
    p.add_argument("--path-hops", type=int, default=8)
    p.add_argument("--dump-header", action="store_true")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("experiment", help="all-pairs experiment under sampled failures")
    common(p)
    p.add_argument("--k", type=int, default=0, help="failed links per scenario")
    p.add_argument("--scenarios", type=int, default=20)
    p.add_argument("--policy", default=None)
    p.add_argument("--path-hops", type=int, default=8)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("emulate", help="replay a link event script")
    common(p)
    p.add_argument("--script", required=True)
    p.add_argument("--strict", action="store_true", help="exit 3 if any injected packet is dropped")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("partition", help="print a seeded domain partition")
    common(p)
    p.set_defaults(func=cmd_partition)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (TopologyError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (PolicyError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
