"""
Seeded generator of small valid flows: at most 12 operators, at most two
clusters of at most three members, finite sources of at most 50 integers.
"""

import random

from flow import Cluster, LocationKind, new_flow
from prelude import ClusterId
from staging import quote

MAX_NODES = 12
# Most nodes one generator step adds.
MAX_STEP = 4
# Upper bound on elements per stream per instance, keeps cross products small.
MAX_ELEMENTS = 3000

class _Open(object):
    """An unconsumed stream and a bound on its length at one instance."""
    def __init__(self, stream, bound: "int"):
        self.stream = stream
        self.bound = bound

def random_flow(seed: "int"):
    """Returns (flow, cluster_sizes)."""
    rng = random.Random(seed)
    flow = new_flow()
    locations = [flow.process() for _ in range(rng.randint(1, 2))]
    locations += [flow.cluster() for _ in range(rng.randint(0, 2))]
    sizes = {loc.id.index: rng.randint(1, 3) for loc in locations if isinstance(loc, Cluster)}
    streams: "list[_Open]" = []

    def size_of(loc) -> "int":
        return sizes[loc.id.index] if isinstance(loc, Cluster) else 1

    def source():
        loc = rng.choice(locations)
        values = tuple(rng.randint(-20, 20) for _ in range(rng.randint(0, 50)))
        streams.append(_Open(flow.source_iter(loc, quote(values), element_type=int), len(values)))

    def take() -> "_Open":
        s = rng.choice(streams)
        streams.remove(s)
        return s

    def unary():
        s = take()
        kind = rng.randrange(4)
        if kind == 0:
            out = s.stream.map(quote("lambda v: v * m + a", m=rng.randint(-3, 3), a=rng.randint(-5, 5)),
                out=int)
            streams.append(_Open(out, s.bound))
        elif kind == 1:
            out = s.stream.filter(quote("lambda v: v % k != r", k=rng.randint(2, 4), r=rng.randint(0, 1)))
            streams.append(_Open(out, s.bound))
        elif kind == 2 and s.bound * 2 <= MAX_ELEMENTS:
            streams.append(_Open(s.stream.flat_map(quote("lambda v: [v, v + 1]"), out=int), s.bound * 2))
        else:
            out = s.stream.fold(quote("0"), quote("lambda acc, v: acc + v"), out=int)
            streams.append(_Open(out, 1))

    def binary() -> "bool":
        pairs = [(a, b) for a in streams for b in streams
            if a is not b and a.stream.location == b.stream.location]
        if not pairs:
            return False
        a, b = rng.choice(pairs)
        streams.remove(a)
        streams.remove(b)
        kind = rng.randrange(4)
        if kind == 0 and a.bound * b.bound <= MAX_ELEMENTS:
            out = a.stream.cross_product(b.stream).map(quote("lambda p: p[0] * 7 + p[1]"), out=int)
            streams.append(_Open(out, a.bound * b.bound))
        elif kind == 1 and a.bound * b.bound <= MAX_ELEMENTS:
            left = a.stream.map(quote("lambda v: (v % 3, v)"), out=tuple[int, int])
            right = b.stream.map(quote("lambda v: (v % 3, -v)"), out=tuple[int, int])
            out = left.join(right)
            streams.append(_Open(out.map(quote("lambda p: p[0] + p[1][0] * 2 + p[1][1]"), out=int),
                a.bound * b.bound))
        elif kind == 2:
            streams.append(_Open(a.stream.difference(b.stream), a.bound))
        else:
            streams.append(_Open(a.stream.union(b.stream), a.bound + b.bound))
        return True

    def send() -> "bool":
        s = take()
        src = next(loc for loc in locations if loc.id == s.stream.location)
        dests = [loc for loc in locations if loc.id != src.id or isinstance(loc, Cluster)]
        if not dests:
            streams.append(s)
            return False
        dest = rng.choice(dests)
        stream = s.stream
        senders = size_of(src)
        if isinstance(dest, Cluster):
            stream = stream.map(quote("lambda v: (ClusterId(v % n), v)", n=size_of(dest)),
                out=tuple[ClusterId, int])
        received = stream.send_serialized(dest)
        if src.id.kind is LocationKind.CLUSTER:
            received = received.map(quote("lambda p: p[0].member_index * 1000 + p[1]"), out=int)
        streams.append(_Open(received, s.bound * senders))
        return True

    source()
    while len(flow.graph.nodes) + len(streams) + MAX_STEP <= MAX_NODES:
        action = rng.randrange(5)
        if action == 0 or not streams:
            source()
        elif action == 1:
            unary()
        elif action == 2:
            binary() or unary()
        else:
            send() or unary()
    for s in list(streams):
        s.stream.for_each(quote("lambda v: print(v)"))
    return flow, sizes

def log_multisets(result) -> "dict[str, list[str]]":
    return {key: sorted(lines) for key, lines in result.logs.items()}
