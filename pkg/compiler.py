"""
Stage two, part one: validate the global graph, slice it by location and
emit one plan per location.

Plan text format:
    choreo-plan 1
    location <kind>:<index>
    channels <n>
    channel {json}          one per channel end held by this location
    nodes <n>
    node {json}             one per operator, in execution order
    end
The json objects are written with sorted keys, so the text of a plan is a pure
function of the graph.
"""

from dataclasses import dataclass
from hashlib import blake2b
import heapq
import json

from errors import ValidationError
from flow import (BINARY_KINDS, FlowBuilder, FlowGraph, LocationId, LocationKind, NodeKind,
    Pattern, type_name, pair_args, compatible)
from prelude import ClusterId

PLAN_MAGIC = "choreo-plan 1"

@dataclass(frozen=True)
class ChannelEntry(object):
    channel: "int"
    direction: "str"  # "send" or "recv"
    pattern: "Pattern"
    peer: "LocationId"

@dataclass(frozen=True)
class PlanNode(object):
    node_id: "int"
    kind: "NodeKind"
    # Local producers by port. Receivers have none, their producer lives elsewhere.
    inputs: "tuple[int, ...]"
    payloads: "tuple[str, ...]" = ()
    captures: "tuple[tuple[str, str], ...]" = ()
    element_type: "str" = "Any"
    channel: "int | None" = None
    pattern: "Pattern | None" = None
    peer: "LocationId | None" = None
    codec: "str | None" = None

@dataclass(frozen=True)
class LocationPlan(object):
    location: "LocationId"
    nodes: "tuple[PlanNode, ...]"
    channels: "tuple[ChannelEntry, ...]"

    def sends(self) -> "list[ChannelEntry]":
        return [c for c in self.channels if c.direction == "send"]

    def recvs(self) -> "list[ChannelEntry]":
        return [c for c in self.channels if c.direction == "recv"]

def as_graph(flow) -> "FlowGraph":
    return flow.graph if isinstance(flow, FlowBuilder) else flow

def validate(flow) -> "list[int]":
    """
    Check the graph rules and return node ids in execution order
    (topological, ties broken by node id).
    """
    graph = as_graph(flow)
    registered = set(graph.location_ids())
    by_id = {n.node_id: n for n in graph.nodes}

    for node in graph.nodes:
        if node.location not in registered:
            raise ValidationError("unregistered-location", node.node_id, str(node.location))
        if node.peer is not None and node.peer not in registered:
            raise ValidationError("unregistered-location", node.node_id, str(node.peer))

    consumers: "dict[int, list[int]]" = {}
    ports: "dict[int, list[int]]" = {}
    for e in graph.edges:
        if e.producer not in by_id or e.consumer not in by_id:
            raise ValidationError("dangling-edge", e.consumer, f"{e.producer} -> {e.consumer}")
        producer, consumer = by_id[e.producer], by_id[e.consumer]
        network = (producer.kind is NodeKind.NETWORK_SEND and consumer.kind is NodeKind.NETWORK_RECV)
        if network and producer.channel != consumer.channel:
            raise ValidationError("network-pairing", consumer.node_id, "edge joins different channels")
        if producer.location != consumer.location and not network:
            raise ValidationError("placement", consumer.node_id,
                f"edge from {producer.location} to {consumer.location} without a network channel")
        consumers.setdefault(e.producer, []).append(e.consumer)
        ports.setdefault(e.consumer, []).append(e.port)

    for producer, targets in consumers.items():
        if len(targets) > 1:
            raise ValidationError("linear-use", producer, f"consumed by {sorted(targets)}")

    for node in graph.nodes:
        _check_arity(node, sorted(ports.get(node.node_id, [])))

    _check_channels(graph)
    return _topological(graph)

def _check_arity(node, ports: "list[int]"):
    if node.kind is NodeKind.SOURCE_ITER:
        expected = []
    elif node.kind in BINARY_KINDS:
        expected = [0, 1]
    else:
        expected = [0]
    if ports != expected:
        raise ValidationError("arity", node.node_id, f"{node.kind.value} has inputs on ports {ports}")

def _check_channels(graph: "FlowGraph"):
    ends: "dict[int, dict[NodeKind, object]]" = {}
    for node in graph.nodes:
        if node.kind not in (NodeKind.NETWORK_SEND, NodeKind.NETWORK_RECV):
            continue
        if node.channel is None or node.pattern is None or node.peer is None:
            raise ValidationError("network-pairing", node.node_id, "network node without channel")
        side = ends.setdefault(node.channel, {})
        if node.kind in side:
            raise ValidationError("network-pairing", node.node_id, f"channel {node.channel} reused")
        side[node.kind] = node

    for channel, side in sorted(ends.items()):
        send, recv = side.get(NodeKind.NETWORK_SEND), side.get(NodeKind.NETWORK_RECV)
        if send is None or recv is None:
            lone = send or recv
            raise ValidationError("network-pairing", lone.node_id, f"channel {channel} has one end")
        if send.peer != recv.location or recv.peer != send.location or send.pattern != recv.pattern:
            raise ValidationError("network-pairing", recv.node_id, f"channel {channel} ends disagree")
        if send.pattern is not Pattern.between(send.location.kind, recv.location.kind):
            raise ValidationError("pattern", send.node_id, f"{send.pattern.value} between "
                f"{send.location} and {recv.location}")
        if send.location == recv.location and send.location.kind is LocationKind.PROCESS:
            raise ValidationError("self-send", send.node_id, str(send.location))
        if send.pattern.addressed:
            args = pair_args(send.element_type)
            if args is None or not compatible(args[0], ClusterId):
                raise ValidationError("pattern-type", send.node_id, type_name(send.element_type))

def _topological(graph: "FlowGraph") -> "list[int]":
    indegree = {n.node_id: 0 for n in graph.nodes}
    out: "dict[int, list[int]]" = {}
    for e in graph.edges:
        indegree[e.consumer] += 1
        out.setdefault(e.producer, []).append(e.consumer)
    ready = [n for n, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in out.get(n, []):
            indegree[m] -= 1
            if indegree[m] == 0:
                heapq.heappush(ready, m)
    if len(order) != len(graph.nodes):
        stuck = min(n for n, d in indegree.items() if d > 0)
        raise ValidationError("acyclic", stuck, "graph has a cycle")
    return order

def compile_flow(flow) -> "dict[LocationId, LocationPlan]":
    """Slice the graph into one plan per registered location, in creation order."""
    graph = as_graph(flow)
    order = validate(graph)
    by_id = {n.node_id: n for n in graph.nodes}
    plans = {}
    for loc in graph.location_ids():
        nodes = []
        channels = []
        for node_id in order:
            node = by_id[node_id]
            if node.location != loc:
                continue
            if node.kind is NodeKind.NETWORK_RECV:
                inputs = ()
            else:
                inputs = tuple(graph.inputs(node_id))
            nodes.append(PlanNode(
                node_id=node_id,
                kind=node.kind,
                inputs=inputs,
                payloads=tuple(q.source_text for q in node.payloads),
                captures=tuple(c for q in node.payloads for c in q.capture_list),
                element_type=type_name(node.element_type),
                channel=node.channel,
                pattern=node.pattern,
                peer=node.peer,
                codec=node.codec,
            ))
            if node.kind is NodeKind.NETWORK_SEND:
                channels.append(ChannelEntry(node.channel, "send", node.pattern, node.peer))
            elif node.kind is NodeKind.NETWORK_RECV:
                channels.append(ChannelEntry(node.channel, "recv", node.pattern, node.peer))
        channels.sort(key=lambda c: (c.channel, c.direction))
        plans[loc] = LocationPlan(loc, tuple(nodes), tuple(channels))
    return plans

def _node_json(node: "PlanNode") -> "str":
    return json.dumps({
        "id": node.node_id,
        "kind": node.kind.value,
        "inputs": list(node.inputs),
        "payloads": list(node.payloads),
        "captures": [list(c) for c in node.captures],
        "type": node.element_type,
        "channel": node.channel,
        "pattern": node.pattern.value if node.pattern else None,
        "peer": str(node.peer) if node.peer else None,
        "codec": node.codec,
    }, sort_keys=True)

def emit_plan_text(plan: "LocationPlan") -> "str":
    lines = [PLAN_MAGIC, f"location {plan.location}", f"channels {len(plan.channels)}"]
    for c in plan.channels:
        lines.append("channel " + json.dumps({
            "channel": c.channel,
            "direction": c.direction,
            "pattern": c.pattern.value,
            "peer": str(c.peer),
        }, sort_keys=True))
    lines.append(f"nodes {len(plan.nodes)}")
    lines.extend("node " + _node_json(n) for n in plan.nodes)
    lines.append("end")
    return "\n".join(lines) + "\n"

def parse_plan_text(text: "str") -> "LocationPlan":
    """Inverse of emit_plan_text."""
    lines = text.splitlines()
    try:
        if lines[0] != PLAN_MAGIC:
            raise ValueError(f"expected {PLAN_MAGIC!r}")
        location = LocationId.parse(_field(lines[1], "location"))
        n_channels = int(_field(lines[2], "channels"))
        channels = []
        for line in lines[3:3 + n_channels]:
            c = json.loads(_field(line, "channel"))
            channels.append(ChannelEntry(c["channel"], c["direction"], Pattern(c["pattern"]),
                LocationId.parse(c["peer"])))
        at = 3 + n_channels
        n_nodes = int(_field(lines[at], "nodes"))
        nodes = []
        for line in lines[at + 1:at + 1 + n_nodes]:
            n = json.loads(_field(line, "node"))
            nodes.append(PlanNode(
                node_id=n["id"],
                kind=NodeKind(n["kind"]),
                inputs=tuple(n["inputs"]),
                payloads=tuple(n["payloads"]),
                captures=tuple(tuple(c) for c in n["captures"]),
                element_type=n["type"],
                channel=n["channel"],
                pattern=Pattern(n["pattern"]) if n["pattern"] else None,
                peer=LocationId.parse(n["peer"]) if n["peer"] else None,
                codec=n["codec"],
            ))
        if lines[at + 1 + n_nodes] != "end":
            raise ValueError("missing end marker")
    except (IndexError, KeyError, ValueError) as e:
        raise ValidationError("plan-format", None, str(e)) from None
    return LocationPlan(location, tuple(nodes), tuple(channels))

def _field(line: "str", name: "str") -> "str":
    head, _, rest = line.partition(" ")
    if head != name:
        raise ValueError(f"expected {name!r} line, got {line[:40]!r}")
    return rest

def plan_digest(plan: "LocationPlan") -> "str":
    """Content hash of a plan, recorded next to the host that should run it."""
    return blake2b(emit_plan_text(plan).encode(), digest_size=16).hexdigest()

def _dot_escape(text: "str") -> "str":
    return text.replace("\\", "\\\\").replace('"', '\\"')

def emit_dot(flow) -> "str":
    """DOT digraph with one subgraph cluster per location. Network edges are dashed."""
    graph = as_graph(flow)
    lines = ["digraph flow {"]
    if graph.locations:
        lines.append("  node [shape=box];")
    for loc in graph.location_ids():
        lines.append(f"  subgraph cluster_{loc.kind.value}_{loc.index} {{")
        lines.append(f'    label="{loc}";')
        for node in graph.nodes:
            if node.location != loc:
                continue
            label = f"n{node.node_id} {node.kind.value}"
            for q in node.payloads:
                label += "\\n" + _dot_escape(q.source_text)
            if node.channel is not None:
                label += f"\\nchannel {node.channel}"
            lines.append(f'    n{node.node_id} [label="{label}"];')
        lines.append("  }")
    by_id = {n.node_id: n for n in graph.nodes}
    for e in sorted(graph.edges):
        producer = by_id[e.producer]
        if producer.kind is NodeKind.NETWORK_SEND:
            lines.append(f'  n{e.producer} -> n{e.consumer} '
                f'[style=dashed, color=blue, label="{producer.pattern.value}"];')
        elif by_id[e.consumer].kind in BINARY_KINDS:
            lines.append(f'  n{e.producer} -> n{e.consumer} [label="{e.port}"];')
        else:
            lines.append(f"  n{e.producer} -> n{e.consumer};")
    lines.append("}")
    return "\n".join(lines) + "\n"

def plan_filename(location: "LocationId") -> "str":
    """e.g. cluster0.plan"""
    return f"{location.kind.value}{location.index}.plan"
