"""Simulator for routing computed inside programmable switch pipelines.

Switches run breadth-first or iterative-deepening traversals as match-action
tables, carry failures in the packet, and follow source routes.
"""

from .experiment import ExperimentConfig, MetricsRow, failure_scenarios, run_experiment, summarize
from .fcp import LocalLinkState, ingress_fcp, route_decision
from .headers import PacketHeader, decode, encode, init_header
from .oracle import OracleResult, compliant_shortest_path, shortest_active_path, stretch
from .pipeline import ActionSpec, Exact, Lpm, Pipeline, Table, Ternary, Wildcard, apply_action, match, run_pass, run_to_completion
from .policy import PolicyBlock, add_mbox_chain, add_preference, add_weighted_lb
from .ruleplane import RuleSet, compile_rules, gen_bfs_rules, gen_forwarding_rules, gen_hierarchy_rules, gen_iddfs_rules, gen_wcmp_pre_rules
from .simnet import EventScript, Network, TraceRecord, build_network, hierarchical_fallback, run_packet, run_script
from .topology import (
    DomainPartition,
    Hierarchy,
    Topology,
    augment_domain_topology,
    build_domain_graph,
    bundled,
    bundled_names,
    load_topology,
    partition_domains,
)

__version__ = "0.1.0"
