"""
The stage-one builder: locations, streams and operators.
Every call appends to one global dataflow graph, which the compiler later
slices into per-location plans.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple, get_args, get_origin

from errors import ConsumedStream, FlowError, LocationMismatch, PatternTypeError, SelfSend
from prelude import ClusterId
from staging import Quoted, runtime_quote

# Identifies the codec network operators use. Only one exists so far.
CODEC_ID = "bin1"

class LocationKind(Enum):
    PROCESS = "process"
    CLUSTER = "cluster"

class NodeKind(Enum):
    SOURCE_ITER = "SourceIter"
    MAP = "Map"
    FLAT_MAP = "FlatMap"
    FILTER = "Filter"
    FOLD = "Fold"
    FOR_EACH = "ForEach"
    CROSS_PRODUCT = "CrossProduct"
    JOIN = "Join"
    DIFFERENCE = "Difference"
    UNION = "Union"
    NETWORK_SEND = "NetworkSend"
    NETWORK_RECV = "NetworkRecv"

NETWORK_KINDS = (NodeKind.NETWORK_SEND, NodeKind.NETWORK_RECV)
BINARY_KINDS = (NodeKind.CROSS_PRODUCT, NodeKind.JOIN, NodeKind.DIFFERENCE, NodeKind.UNION)

class Pattern(Enum):
    ONE_TO_ONE = "OneToOne"
    ONE_TO_MANY = "OneToMany"
    MANY_TO_ONE = "ManyToOne"
    MANY_TO_MANY = "ManyToMany"

    @property
    def addressed(self) -> "bool":
        """Elements carry the destination member id."""
        return self in (Pattern.ONE_TO_MANY, Pattern.MANY_TO_MANY)

    @property
    def tagged(self) -> "bool":
        """Delivered elements carry the sending member id."""
        return self in (Pattern.MANY_TO_ONE, Pattern.MANY_TO_MANY)

    @staticmethod
    def between(src: "LocationKind", dst: "LocationKind") -> "Pattern":
        return {
            (LocationKind.PROCESS, LocationKind.PROCESS): Pattern.ONE_TO_ONE,
            (LocationKind.PROCESS, LocationKind.CLUSTER): Pattern.ONE_TO_MANY,
            (LocationKind.CLUSTER, LocationKind.PROCESS): Pattern.MANY_TO_ONE,
            (LocationKind.CLUSTER, LocationKind.CLUSTER): Pattern.MANY_TO_MANY,
        }[(src, dst)]

@dataclass(frozen=True)
class LocationId(object):
    kind: "LocationKind"
    index: "int"

    def __str__(self):
        return f"{self.kind.value}:{self.index}"

    def sort_key(self) -> "tuple[int, int]":
        return (0 if self.kind is LocationKind.PROCESS else 1, self.index)

    @staticmethod
    def parse(text: "str") -> "LocationId":
        """Inverse of str(), e.g. "cluster:0"."""
        try:
            kind, index = text.split(":")
            return LocationId(LocationKind(kind), int(index))
        except ValueError:
            raise ValueError(f"bad location {text!r}, expected <process|cluster>:<index>") from None

@dataclass(frozen=True)
class OperatorNode(object):
    node_id: "int"
    kind: "NodeKind"
    location: "LocationId"
    payloads: "tuple[Quoted, ...]" = ()
    element_type: "Any" = Any
    # Network nodes only.
    pattern: "Pattern | None" = None
    codec: "str | None" = None
    channel: "int | None" = None
    peer: "LocationId | None" = None

class Edge(NamedTuple):
    producer: "int"
    consumer: "int"
    port: "int"

class FlowGraph(object):
    """The global IR. Append-only while building, read-only afterwards."""
    def __init__(self):
        self.nodes: "list[OperatorNode]" = []
        self.edges: "list[Edge]" = []
        # (LocationId, spec binding) in creation order.
        self.locations: "list[tuple[LocationId, Any]]" = []
        self.next_node = 0
        self.next_channel = 0
        self.next_index = {LocationKind.PROCESS: 0, LocationKind.CLUSTER: 0}

    def add_location(self, kind: "LocationKind", spec) -> "LocationId":
        loc = LocationId(kind, self.next_index[kind])
        self.next_index[kind] += 1
        self.locations.append((loc, spec))
        return loc

    def add_node(self, kind: "NodeKind", location: "LocationId", **fields) -> "OperatorNode":
        node = OperatorNode(self.next_node, kind, location, **fields)
        self.next_node += 1
        self.nodes.append(node)
        return node

    def add_edge(self, producer: "int", consumer: "int", port: "int" = 0):
        self.edges.append(Edge(producer, consumer, port))

    def new_channel(self) -> "int":
        self.next_channel += 1
        return self.next_channel - 1

    def node(self, node_id: "int") -> "OperatorNode":
        return self.nodes[node_id]

    def inputs(self, node_id: "int") -> "list[int]":
        """Producers feeding node_id, ordered by port."""
        return [e.producer for e in sorted(self.edges, key=lambda e: e.port) if e.consumer == node_id]

    def location_ids(self) -> "list[LocationId]":
        return [loc for loc, _ in self.locations]

    def spec_for(self, location: "LocationId"):
        for loc, spec in self.locations:
            if loc == location:
                return spec
        raise KeyError(str(location))

    def describe(self) -> "dict[str, int]":
        return {
            "nodes": len(self.nodes),
            "edges": len(self.edges),
            "locations": len(self.locations),
            "channels": self.next_channel,
        }

class Location(object):
    kind: "LocationKind"

    def __init__(self, flow: "FlowBuilder", id: "LocationId"):
        self.flow = flow
        self.id = id

    def __repr__(self):
        return f"<{type(self).__name__} {self.id}>"

class Process(Location):
    """Exactly one instance."""
    kind = LocationKind.PROCESS

class Cluster(Location):
    """N identical instances, N fixed when the flow is bound to hosts."""
    kind = LocationKind.CLUSTER

    def ids(self) -> "Quoted":
        """Staged set of this cluster's member ids, resolved at runtime."""
        return self.flow.runtime_source(f"cluster_ids({self.id.index})", ClusterId)

class FlowBuilder(object):
    """Entry point for building a choreographed flow."""
    def __init__(self):
        self.graph = FlowGraph()
        # Element types of runtime-only sources, by source text.
        self._runtime_types: "dict[str, Any]" = {}

    def process(self, spec=None) -> "Process":
        _check_spec(spec, LocationKind.PROCESS)
        return Process(self, self.graph.add_location(LocationKind.PROCESS, spec))

    def cluster(self, spec=None) -> "Cluster":
        _check_spec(spec, LocationKind.CLUSTER)
        return Cluster(self, self.graph.add_location(LocationKind.CLUSTER, spec))

    def source_iter(self, location: "Location", iterable: "Quoted", element_type=None) -> "Stream":
        """A stream of the elements of a quoted iterable, at `location`."""
        self._owned(location)
        _check_quoted(iterable)
        if element_type is None:
            element_type = self._infer_source_type(iterable)
        node = self.graph.add_node(NodeKind.SOURCE_ITER, location.id,
            payloads=(iterable,), element_type=element_type)
        return Stream(self, node)

    def runtime_source(self, text: "str", element_type) -> "Quoted":
        """Quote a source only workers can resolve, e.g. the cluster member ids."""
        self._runtime_types[text] = element_type
        return runtime_quote(text)

    def _infer_source_type(self, iterable: "Quoted"):
        if iterable.source_text in self._runtime_types:
            return self._runtime_types[iterable.source_text]
        try:
            value = iterable.eval()
            if callable(value):
                value = value()
            first = next(iter(value))
        except Exception:
            return Any
        return type_of(first)

    def _owned(self, location: "Location"):
        if not isinstance(location, Location) or location.flow is not self:
            raise FlowError(f"{location!r} is not a location of this flow")

def new_flow() -> "FlowBuilder":
    return FlowBuilder()

class Stream(object):
    """
    An unbounded sequence of elements pinned to one location.
    Each stream may be consumed by one downstream operator.
    """
    def __init__(self, flow: "FlowBuilder", node: "OperatorNode"):
        self.flow = flow
        self.node_id = node.node_id
        self.location = node.location
        self.element_type = node.element_type
        self.consumed = False

    def __repr__(self):
        return f"<Stream n{self.node_id} at {self.location}: {type_name(self.element_type)}>"

    def _consume(self, *others: "Stream"):
        for s in (self,) + others:
            if s.consumed:
                raise ConsumedStream(s.node_id)
        if len({id(s) for s in (self,) + others}) != 1 + len(others):
            raise ConsumedStream(self.node_id)
        for s in (self,) + others:
            s.consumed = True

    def _unary(self, kind: "NodeKind", payloads: "tuple[Quoted, ...]", element_type) -> "OperatorNode":
        for p in payloads:
            _check_quoted(p)
        self._consume()
        node = self.flow.graph.add_node(kind, self.location, payloads=payloads, element_type=element_type)
        self.flow.graph.add_edge(self.node_id, node.node_id)
        return node

    def _binary(self, kind: "NodeKind", other: "Stream", element_type) -> "Stream":
        if other.flow is not self.flow:
            raise FlowError("streams belong to different flows")
        if other.location != self.location:
            raise LocationMismatch(self.location, other.location)
        self._consume(other)
        node = self.flow.graph.add_node(kind, self.location, element_type=element_type)
        self.flow.graph.add_edge(self.node_id, node.node_id, 0)
        self.flow.graph.add_edge(other.node_id, node.node_id, 1)
        return Stream(self.flow, node)

    def map(self, fn: "Quoted", out=Any) -> "Stream":
        return Stream(self.flow, self._unary(NodeKind.MAP, (fn,), out))

    def flat_map(self, fn: "Quoted", out=Any) -> "Stream":
        """fn returns an iterable; its items are emitted in order."""
        return Stream(self.flow, self._unary(NodeKind.FLAT_MAP, (fn,), out))

    def filter(self, pred: "Quoted") -> "Stream":
        return Stream(self.flow, self._unary(NodeKind.FILTER, (pred,), self.element_type))

    def fold(self, init: "Quoted", combine: "Quoted", out=None) -> "Stream":
        """Emits one accumulator once the input ends."""
        if out is None:
            try:
                out = type_of(init.eval())
            except Exception:
                out = Any
        return Stream(self.flow, self._unary(NodeKind.FOLD, (init, combine), out))

    def for_each(self, action: "Quoted") -> "OperatorNode":
        return self._unary(NodeKind.FOR_EACH, (action,), self.element_type)

    def cross_product(self, other: "Stream") -> "Stream":
        return self._binary(NodeKind.CROSS_PRODUCT, other, tuple[self.element_type, other.element_type])

    def join(self, other: "Stream") -> "Stream":
        """Equi-join on the first component of (key, value) pairs."""
        left, right = pair_args(self.element_type), pair_args(other.element_type)
        if left is None or right is None:
            raise FlowError("join needs (key, value) pairs on both sides")
        if not compatible(left[0], right[0]):
            raise FlowError(f"join keys differ: {type_name(left[0])} and {type_name(right[0])}")
        if not hashable(left[0]) or not hashable(right[0]):
            raise FlowError(f"join keys must be hashable, got {type_name(left[0])} and {type_name(right[0])}")
        key = left[0] if left[0] is not Any else right[0]
        return self._binary(NodeKind.JOIN, other, tuple[key, tuple[left[1], right[1]]])

    def difference(self, other: "Stream") -> "Stream":
        """Elements of this stream never seen on `other`, once both end."""
        if not compatible(self.element_type, other.element_type):
            raise FlowError(f"difference needs equal element types, got "
                f"{type_name(self.element_type)} and {type_name(other.element_type)}")
        if not hashable(self.element_type) or not hashable(other.element_type):
            raise FlowError(f"difference needs hashable elements, got {type_name(self.element_type)}")
        return self._binary(NodeKind.DIFFERENCE, other, self.element_type)

    def union(self, other: "Stream") -> "Stream":
        if not compatible(self.element_type, other.element_type):
            raise FlowError(f"union needs equal element types, got "
                f"{type_name(self.element_type)} and {type_name(other.element_type)}")
        element_type = self.element_type if self.element_type is not Any else other.element_type
        return self._binary(NodeKind.UNION, other, element_type)

    def send_serialized(self, dest: "Location") -> "Stream":
        """
        Move the stream to `dest`. The pattern follows from the two location kinds.
        Sending to a cluster needs (ClusterId, T) elements; the id is stripped on delivery.
        Receiving from a cluster yields (ClusterId, T) tagged with the sender.
        """
        self.flow._owned(dest)
        src_kind = self.location.kind
        if dest.id == self.location and src_kind is LocationKind.PROCESS:
            raise SelfSend(self.location)
        pattern = Pattern.between(src_kind, dest.kind)

        payload_type = self.element_type
        if pattern.addressed:
            args = pair_args(self.element_type)
            if self.element_type is not Any and (args is None or not compatible(args[0], ClusterId)):
                raise PatternTypeError(pattern.value, type_name(self.element_type))
            payload_type = args[1] if args else Any
        delivered = tuple[ClusterId, payload_type] if pattern.tagged else payload_type

        self._consume()
        graph = self.flow.graph
        channel = graph.new_channel()
        send = graph.add_node(NodeKind.NETWORK_SEND, self.location, element_type=self.element_type,
            pattern=pattern, codec=CODEC_ID, channel=channel, peer=dest.id)
        recv = graph.add_node(NodeKind.NETWORK_RECV, dest.id, element_type=delivered,
            pattern=pattern, codec=CODEC_ID, channel=channel, peer=self.location)
        graph.add_edge(self.node_id, send.node_id)
        graph.add_edge(send.node_id, recv.node_id)
        return Stream(self.flow, recv)

    send_bincode = send_serialized

def _check_quoted(value):
    if not isinstance(value, Quoted):
        raise FlowError(f"operators take quoted code, got {type(value).__name__}; wrap it in quote()")

def _check_spec(spec, kind: "LocationKind"):
    if spec is None:
        return
    if getattr(spec, "location_kind", None) != kind.value:
        raise FlowError(f"{kind.value}() needs a {kind.value} spec, got {type(spec).__name__}")

# Element types are plain typing objects: int, str, ClusterId, tuple[...], Any.

def type_of(value):
    """Element type of a sample value."""
    if isinstance(value, tuple):
        return tuple[tuple(type_of(v) for v in value)]
    return type(value)

def type_name(t) -> "str":
    if t is Any:
        return "Any"
    if get_origin(t) is tuple:
        return "(" + ", ".join(type_name(a) for a in get_args(t)) + ")"
    return getattr(t, "__name__", str(t))

def compatible(a, b) -> "bool":
    """Any matches everything; tuples match elementwise."""
    if a is Any or b is Any:
        return True
    if get_origin(a) is tuple and get_origin(b) is tuple:
        aa, bb = get_args(a), get_args(b)
        return len(aa) == len(bb) and all(compatible(x, y) for x, y in zip(aa, bb))
    return a == b

def pair_args(t) -> "tuple | None":
    """(first, second) types of a pair type. (Any, Any) when unknown."""
    if t is Any:
        return (Any, Any)
    if get_origin(t) is tuple and len(get_args(t)) == 2:
        return get_args(t)
    return None

# Codec types that cannot be dict keys or set members.
UNHASHABLE = (list, dict, set, bytearray)

def hashable(t) -> "bool":
    """False when values of type t are known to be unhashable. Any is assumed hashable."""
    if get_origin(t) is tuple:
        return all(hashable(a) for a in get_args(t) if a is not Ellipsis)
    return (get_origin(t) or t) not in UNHASHABLE
