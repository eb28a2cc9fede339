"""
Example programs. Each builder takes a fresh flow, the specs to create its
locations with and the example options, and adds its operators to the flow.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Callable

from deploy import ClusterSpec, Localhost, ProcessSpec
from errors import ChoreoError
from flow import FlowBuilder, new_flow
from prelude import ClusterId, fnv1a64, gossip_sample
from runtime import self_id_source
from staging import quote

DEFAULT_CORPUS = tuple("the quick brown fox jumps over the lazy dog and the dog sleeps "
    "while the fox runs over the hill".split())

@dataclass(frozen=True)
class ExampleOptions(object):
    seed: "int" = 42
    fanout: "int" = 1
    # Heartbeat ticks and gossip rounds.
    ticks: "int" = 3
    corpus: "tuple[str, ...]" = DEFAULT_CORPUS

@dataclass(frozen=True)
class ExampleProgram(object):
    name: "str"
    builder: "Callable[[FlowBuilder, ProcessSpec, ClusterSpec, ExampleOptions], None]"
    description: "str"
    # (cluster size, options) -> sorted printed lines per instance key.
    expected: "Callable[[int, ExampleOptions], dict[str, list[str]]]"

def pipeline(flow: "FlowBuilder", process_spec, cluster_spec, options: "ExampleOptions"):
    """0..5, keep v > 2, double, send to a second process and print there: 6, 8."""
    first = flow.process(process_spec)
    second = flow.process(process_spec)
    numbers = flow.source_iter(first, quote(range(5)))
    big = numbers.filter(quote(lambda v: v > 2))
    doubled = big.map(quote(lambda v: v * 2), out=int)
    doubled.send_serialized(second).for_each(quote(lambda v: print(v)))

def broadcast(flow: "FlowBuilder", process_spec, cluster_spec, options: "ExampleOptions"):
    """Every cluster member receives 0..5 from the leader."""
    leader = flow.process(process_spec)
    workers = flow.cluster(cluster_spec)
    ids = flow.source_iter(leader, workers.ids())
    data = flow.source_iter(leader, quote(range(5)))
    ids.cross_product(data).send_serialized(workers).for_each(quote(lambda v: print(v)))

def partition(flow: "FlowBuilder", process_spec, cluster_spec, options: "ExampleOptions"):
    """
    Word count. Words are routed to member fnv1a64(word) % size, each member
    counts its share and prints "word count" lines.
    """
    leader = flow.process(process_spec)
    workers = flow.cluster(cluster_spec)
    size = flow.source_iter(leader, workers.ids()).fold(quote(lambda: 0), quote(lambda n, _: n + 1))
    words = flow.source_iter(leader, quote(tuple(options.corpus)), element_type=str)
    routed = size.cross_product(words).map(
        quote(lambda p: (ClusterId(fnv1a64(p[1]) % p[0]), p[1])),
        out=tuple[ClusterId, str])
    counts = routed.send_serialized(workers).fold(
        quote(lambda: {}),
        quote(lambda acc, w: {**acc, w: acc.get(w, 0) + 1}))
    lines = counts.flat_map(quote(lambda c: sorted(c.items())), out=tuple[str, int])
    lines.for_each(quote(lambda kv: print(kv[0], kv[1])))

def heartbeat(flow: "FlowBuilder", process_spec, cluster_spec, options: "ExampleOptions"):
    """
    The leader broadcasts `ticks` ticks, every member answers each one with its
    own id. The leader prints "<tag> <id> <tick>" for every echo.
    """
    ticks = options.ticks
    leader = flow.process(process_spec)
    workers = flow.cluster(cluster_spec)
    ids = flow.source_iter(leader, workers.ids())
    beats = flow.source_iter(leader, quote(lambda: range(ticks)), element_type=int)
    received = ids.cross_product(beats).send_serialized(workers)
    me = self_id_source(flow, workers)
    echoes = me.cross_product(received).map(quote(lambda p: (p[0].member_index, p[1])),
        out=tuple[int, int])
    echoes.send_serialized(leader).for_each(quote(lambda e: print(e[0].member_index, *e[1])))

def gossip(flow: "FlowBuilder", process_spec, cluster_spec, options: "ExampleOptions"):
    """
    Each round the leader picks `fanout` members with the seeded sampler and
    sends them the round's rumor. Members print "rumor <round>".
    """
    seed = options.seed
    fanout = options.fanout
    rounds = options.ticks
    leader = flow.process(process_spec)
    workers = flow.cluster(cluster_spec)
    members = flow.source_iter(leader, workers.ids()).fold(
        quote(lambda: ()),
        quote(lambda acc, i: tuple(sorted(acc + (i,)))))
    numbers = flow.source_iter(leader, quote(lambda: range(rounds)), element_type=int)
    rumors = members.cross_product(numbers).flat_map(
        quote(lambda p: [(t, ("rumor", p[1])) for t in gossip_sample(seed, p[1], p[0], fanout)]),
        out=tuple[ClusterId, tuple[str, int]])
    rumors.send_serialized(workers).for_each(quote(lambda r: print(r[0], r[1])))

def _members(size: "int", lines) -> "dict[str, list[str]]":
    """Keys for the leader process and every cluster member; lines(m) gives member m's output."""
    out = {"process:0": []}
    out.update({f"cluster:0:m{m}": sorted(lines(m)) for m in range(size)})
    return out

def pipeline_expected(size: "int", options: "ExampleOptions"):
    return {"process:0": [], "process:1": ["6", "8"]}

def broadcast_expected(size: "int", options: "ExampleOptions"):
    return _members(size, lambda m: [str(v) for v in range(5)])

def partition_expected(size: "int", options: "ExampleOptions"):
    counts = Counter(options.corpus)
    return _members(size, lambda m: [f"{w} {c}" for w, c in counts.items() if fnv1a64(w) % size == m])

def heartbeat_expected(size: "int", options: "ExampleOptions"):
    out = _members(size, lambda m: [])
    out["process:0"] = sorted(f"{m} {m} {t}" for m in range(size) for t in range(options.ticks))
    return out

def gossip_expected(size: "int", options: "ExampleOptions"):
    ids = tuple(ClusterId(m) for m in range(size))
    lines = {m: [] for m in range(size)}
    for r in range(options.ticks):
        for target in gossip_sample(options.seed, r, ids, options.fanout):
            lines[target.member_index].append(f"rumor {r}")
    return _members(size, lambda m: lines[m])

EXAMPLES = {e.name: e for e in (
    ExampleProgram("pipeline", pipeline, "filter and double 0..5, print at a second process",
        pipeline_expected),
    ExampleProgram("broadcast", broadcast, "send 0..5 to every cluster member", broadcast_expected),
    ExampleProgram("partition", partition, "word count partitioned by key hash", partition_expected),
    ExampleProgram("heartbeat", heartbeat, "ticks out to the cluster, echoes back", heartbeat_expected),
    ExampleProgram("gossip", gossip, "seeded random fan-out of one rumor per round", gossip_expected),
)}

def build_example(name: "str", process_spec=None, cluster_spec=None,
        options: "ExampleOptions | None" = None) -> "FlowBuilder":
    """Build an example on a new flow. Specs default to localhost, two members per cluster."""
    if name not in EXAMPLES:
        raise ChoreoError(f"unknown example {name!r}, pick one of {', '.join(EXAMPLES)}")
    flow = new_flow()
    process_spec = process_spec or ProcessSpec(Localhost())
    cluster_spec = cluster_spec or ClusterSpec.uniform(Localhost(), 2)
    EXAMPLES[name].builder(flow, process_spec, cluster_spec, options or ExampleOptions())
    return flow
