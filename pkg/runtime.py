"""
Stage two, part two: execute location plans.

Every location instance (one per process, `size` per cluster) runs its plan
as a worker with a single threaded operator loop. Three ways to run them:
    run_oracle             all instances in this thread, seeded round robin
    run_local_distributed  one worker per instance, channels in memory or TCP,
                           workers as threads or as ChoreoWorker.py processes
    run_worker             one instance over TCP, what ChoreoWorker.py calls

Streams are finite. A source ends after its last element, EOS travels down
the operators and across channels, and fold, join and difference emit once
all of their inputs have ended.
"""

from dataclasses import dataclass, field
from typing import NamedTuple
import functools
import json
import os
import queue
import random
import subprocess
import sys
import tempfile
import threading

from compiler import LocationPlan, compile_flow, emit_plan_text, plan_filename
from errors import (ChoreoError, FlowError, PatternTypeError, RuntimeFailure, ValidationError,
    WorkerFailed, from_report)
from flow import Cluster, FlowBuilder, LocationId, LocationKind, NodeKind, Pattern, Stream
import log
from prelude import ClusterId
from staging import base_env, load
import timekeeper as time
from transport import FRAME_BATCH, POLL_TIME, Delivery, QueueOutbound, TcpEndpoint, TcpOutbound

# First port handed out by a manifest, the rest follow in manifest order.
DEFAULT_BASE_PORT = 35000
DEFAULT_ADDR = "127.0.0.1"
# How long a worker waits for its peers to connect, in seconds.
HANDSHAKE_TIMEOUT = 10.0
# Messages per second bench-channel must reach by default.
BENCH_MIN_RATE = 50_000
# A worker that sees no input for this long gives up.
IDLE_LIMIT = 60.0

WORKER_SCRIPT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "ChoreoWorker.py")

def instance_key(location: "LocationId", member: "int") -> "str":
    """process:1 for processes, cluster:0:m1 for cluster members."""
    if location.kind is LocationKind.PROCESS:
        return str(location)
    return f"{location}:m{member}"

@dataclass(frozen=True)
class ManifestEntry(object):
    location: "LocationId"
    member: "int"
    addr: "str"
    port: "int"

    @property
    def key(self) -> "str":
        return instance_key(self.location, self.member)

class Manifest(object):
    """
    Service discovery: where every location instance listens.
    Cluster sizes are keyed by cluster index.
    """
    def __init__(self, entries: "list[ManifestEntry]", cluster_sizes: "dict[int, int]"):
        self.entries = list(entries)
        self.cluster_sizes = dict(cluster_sizes)
        self.validate()

    @staticmethod
    def build(locations: "list[LocationId]", cluster_sizes: "dict[int, int]",
            base_port: "int" = DEFAULT_BASE_PORT, addr: "str" = DEFAULT_ADDR) -> "Manifest":
        """Ports are allocated sequentially from base_port in location order."""
        entries = []
        sizes = {}
        port = base_port
        for loc in locations:
            if loc.kind is LocationKind.PROCESS:
                members = 1
            else:
                if loc.index not in cluster_sizes:
                    raise ValidationError("cluster-size", None, f"no size given for {loc}")
                members = sizes[loc.index] = cluster_sizes[loc.index]
            for m in range(members):
                entries.append(ManifestEntry(loc, m, addr, port))
                port += 1
        return Manifest(entries, sizes)

    def locations(self) -> "list[LocationId]":
        seen = []
        for e in self.entries:
            if e.location not in seen:
                seen.append(e.location)
        return seen

    def size(self, location: "LocationId") -> "int":
        if location.kind is LocationKind.PROCESS:
            return 1
        return self.cluster_sizes[location.index]

    def members(self, location: "LocationId") -> "list[int]":
        return [e.member for e in self.entries if e.location == location]

    def entry(self, location: "LocationId", member: "int") -> "ManifestEntry":
        for e in self.entries:
            if e.location == location and e.member == member:
                return e
        raise RuntimeFailure(f"manifest has no entry for {instance_key(location, member)}")

    def covers(self, plans: "dict[LocationId, LocationPlan]"):
        missing = [str(loc) for loc in plans if not self.members(loc)]
        if missing:
            raise ValidationError("manifest", None, f"no entries for {', '.join(missing)}")

    def validate(self):
        addresses = set()
        by_location: "dict[LocationId, list[int]]" = {}
        for e in self.entries:
            if (e.addr, e.port) in addresses:
                raise ValidationError("manifest", None, f"{e.addr}:{e.port} used twice")
            addresses.add((e.addr, e.port))
            by_location.setdefault(e.location, []).append(e.member)
        for loc, members in by_location.items():
            if loc.kind is LocationKind.PROCESS:
                expected = [0]
            else:
                if loc.index not in self.cluster_sizes:
                    raise ValidationError("manifest", None, f"no cluster size for {loc}")
                expected = list(range(self.cluster_sizes[loc.index]))
            if sorted(members) != expected:
                raise ValidationError("manifest", None, f"{loc} has members {sorted(members)}, "
                    f"expected {expected}")

    def to_json(self) -> "str":
        return json.dumps({
            "locations": [{"kind": e.location.kind.value, "index": e.location.index,
                "member": e.member, "addr": e.addr, "port": e.port} for e in self.entries],
            "cluster_sizes": {str(k): v for k, v in sorted(self.cluster_sizes.items())},
        }, indent=2) + "\n"

    @staticmethod
    def from_json(text: "str") -> "Manifest":
        try:
            data = json.loads(text)
            entries = [ManifestEntry(LocationId(LocationKind(d["kind"]), int(d["index"])),
                int(d["member"]), d["addr"], int(d["port"])) for d in data["locations"]]
            sizes = {int(k): int(v) for k, v in data["cluster_sizes"].items()}
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError("manifest", None, f"malformed manifest: {e}") from None
        return Manifest(entries, sizes)

def runtime_env(log_lines: "list[str]", cluster_sizes: "dict[int, int]",
        self_member: "int | None" = None) -> "dict":
    """
    The environment plans are loaded in: builtins, the prelude, the runtime
    only names, and a print that appends to this instance's output log.
    """
    env = base_env()

    def _print(*values, sep=" ", end="\n", file=None, flush=False):
        log_lines.append(sep.join(str(v) for v in values))

    def cluster_ids(index: "int") -> "list[ClusterId]":
        return [ClusterId(m) for m in range(cluster_sizes[index])]

    def self_id() -> "ClusterId":
        if self_member is None:
            raise RuntimeFailure("self_id() is only defined on cluster members")
        return ClusterId(self_member)

    env["print"] = _print
    env["cluster_ids"] = cluster_ids
    env["self_id"] = self_id
    return env

def self_id_source(flow: "FlowBuilder", cluster: "Cluster") -> "Stream":
    """A stream at `cluster` in which every member emits its own ClusterId once."""
    if not isinstance(cluster, Cluster):
        raise FlowError(f"self ids only exist on clusters, got {cluster!r}")
    return flow.source_iter(cluster, flow.runtime_source("[self_id()]", ClusterId))

# Operators. Each node of a plan becomes one of these, wired to its consumer.

class Operator(object):
    def __init__(self, node, env: "dict"):
        self.node = node
        self.downstream: "Operator | None" = None
        self.port = 0
        self.functions = [load(p, env) for p in node.payloads]

    def emit(self, value):
        if self.downstream is not None:
            self.downstream.on_item(self.port, value)

    def finish(self):
        if self.downstream is not None:
            self.downstream.on_eof(self.port)

    def on_item(self, port: "int", value):
        raise NotImplementedError

    def on_eof(self, port: "int"):
        self.finish()

class SourceOp(Operator):
    def __init__(self, node, env):
        super().__init__(node, env)
        values = self.functions[0]
        if callable(values):
            values = values()
        self.values = iter(values)

    def pull(self, budget: "int") -> "bool":
        """Emit up to budget elements. True once the source is exhausted."""
        for _ in range(budget):
            try:
                value = next(self.values)
            except StopIteration:
                self.finish()
                return True
            self.emit(value)
        return False

class MapOp(Operator):
    def on_item(self, port, value):
        self.emit(self.functions[0](value))

class FlatMapOp(Operator):
    def on_item(self, port, value):
        for v in self.functions[0](value):
            self.emit(v)

class FilterOp(Operator):
    def on_item(self, port, value):
        if self.functions[0](value):
            self.emit(value)

class FoldOp(Operator):
    def __init__(self, node, env):
        super().__init__(node, env)
        init, self.combine = self.functions
        self.acc = init() if callable(init) else init

    def on_item(self, port, value):
        self.acc = self.combine(self.acc, value)

    def on_eof(self, port):
        self.emit(self.acc)
        self.finish()

class ForEachOp(Operator):
    def on_item(self, port, value):
        self.functions[0](value)

class BinaryOp(Operator):
    """Finishes once both ports have ended."""
    def __init__(self, node, env):
        super().__init__(node, env)
        self.ended = set()

    def on_eof(self, port):
        self.ended.add(port)
        if len(self.ended) == 2:
            self.both_ended()
            self.finish()

    def both_ended(self):
        pass

class CrossProductOp(BinaryOp):
    """Emits each pair as soon as both halves have arrived."""
    def __init__(self, node, env):
        super().__init__(node, env)
        self.seen = ([], [])

    def on_item(self, port, value):
        if port == 0:
            for other in self.seen[1]:
                self.emit((value, other))
        else:
            for other in self.seen[0]:
                self.emit((other, value))
        self.seen[port].append(value)

class JoinOp(BinaryOp):
    def __init__(self, node, env):
        super().__init__(node, env)
        self.left = []
        self.right: "dict[object, list]" = {}

    def on_item(self, port, value):
        key, v = value
        if port == 0:
            self.left.append((key, v))
        else:
            self.right.setdefault(key, []).append(v)

    def both_ended(self):
        for key, v in self.left:
            for w in self.right.get(key, ()):
                self.emit((key, (v, w)))

class DifferenceOp(BinaryOp):
    """Set difference: distinct elements of the left input, in first arrival order."""
    def __init__(self, node, env):
        super().__init__(node, env)
        self.left = {}
        self.right = set()

    def on_item(self, port, value):
        if port == 0:
            self.left.setdefault(value, None)
        else:
            self.right.add(value)

    def both_ended(self):
        for v in self.left:
            if v not in self.right:
                self.emit(v)

class UnionOp(BinaryOp):
    def on_item(self, port, value):
        self.emit(value)

class SendOp(Operator):
    """
    Routes elements to the receiving instances of one channel.
    outbounds is indexed by receiving member (a single entry for processes).
    """
    def __init__(self, node, env, outbounds: "list", self_member: "int | None"):
        super().__init__(node, env)
        self.pattern: "Pattern" = node.pattern
        self.channel: "int" = node.channel
        self.outbounds = outbounds
        self.tag = ClusterId(self_member) if self.pattern.tagged else None
        self.sent = 0

    def on_item(self, port, value):
        if self.pattern.addressed:
            if not (type(value) is tuple and len(value) == 2 and type(value[0]) is ClusterId):
                raise PatternTypeError(self.pattern.value, type(value).__name__)
            member = value[0].member_index
            if member >= len(self.outbounds):
                raise RuntimeFailure(f"channel {self.channel}: {value[0]} is not a member of "
                    f"{self.node.peer}, which has {len(self.outbounds)}")
            out = self.outbounds[member]
            value = value[1]
        else:
            out = self.outbounds[0]
        if self.tag is not None:
            value = (self.tag, value)
        out.write(value)
        self.sent += 1

    def on_eof(self, port):
        for out in self.outbounds:
            out.close()

class RecvOp(Operator):
    def __init__(self, node, env, senders: "int"):
        super().__init__(node, env)
        # One EOS arrives from every sending instance.
        self.senders = senders
        self.eos = 0
        self.delivered = 0

    def on_values(self, values: "list"):
        self.delivered += len(values)
        for v in values:
            self.emit(v)

    def on_eos(self):
        self.eos += 1
        if self.eos == self.senders:
            self.finish()

    @property
    def ended(self) -> "bool":
        return self.eos >= self.senders

OPERATORS = {
    NodeKind.SOURCE_ITER: SourceOp,
    NodeKind.MAP: MapOp,
    NodeKind.FLAT_MAP: FlatMapOp,
    NodeKind.FILTER: FilterOp,
    NodeKind.FOLD: FoldOp,
    NodeKind.FOR_EACH: ForEachOp,
    NodeKind.CROSS_PRODUCT: CrossProductOp,
    NodeKind.JOIN: JoinOp,
    NodeKind.DIFFERENCE: DifferenceOp,
    NodeKind.UNION: UnionOp,
}

class Instance(object):
    """
    One location instance executing its plan.
    `outbounds` maps each send channel to its per receiving member outbounds.
    """
    def __init__(self, plan: "LocationPlan", member: "int", cluster_sizes: "dict[int, int]",
            inbox: "queue.Queue", outbounds: "dict[int, list]"):
        self.plan = plan
        self.member = member
        self.key = instance_key(plan.location, member)
        self.inbox = inbox
        self.log: "list[str]" = []
        self_member = member if plan.location.kind is LocationKind.CLUSTER else None
        env = runtime_env(self.log, cluster_sizes, self_member)

        self.ops: "dict[int, Operator]" = {}
        self.sources: "list[SourceOp]" = []
        self.sends: "list[SendOp]" = []
        self.recvs: "dict[int, RecvOp]" = {}
        for node in plan.nodes:
            if node.kind is NodeKind.NETWORK_SEND:
                op = SendOp(node, env, outbounds[node.channel], self_member)
                self.sends.append(op)
            elif node.kind is NodeKind.NETWORK_RECV:
                senders = 1 if node.peer.kind is LocationKind.PROCESS else cluster_sizes[node.peer.index]
                op = self.recvs[node.channel] = RecvOp(node, env, senders)
            else:
                op = OPERATORS[node.kind](node, env)
                if node.kind is NodeKind.SOURCE_ITER:
                    self.sources.append(op)
            self.ops[node.node_id] = op
        for node in plan.nodes:
            for port, producer in enumerate(node.inputs):
                self.ops[producer].downstream = self.ops[node.node_id]
                self.ops[producer].port = port
        self.outbounds = [out for outs in outbounds.values() for out in outs]

    def deliver(self, delivery: "Delivery"):
        if delivery.error is not None:
            raise delivery.error
        recv = self.recvs.get(delivery.channel)
        if recv is None:
            raise RuntimeFailure(f"{self.key}: delivery on unknown channel {delivery.channel}")
        if delivery.values:
            recv.on_values(delivery.values)
        if delivery.eos:
            recv.on_eos()

    def step(self, budget: "int" = FRAME_BATCH) -> "bool":
        """Drain the inbox, then advance the first unfinished source. False if idle."""
        progressed = False
        while True:
            try:
                delivery = self.inbox.get_nowait()
            except queue.Empty:
                break
            self.deliver(delivery)
            progressed = True
        if self.sources:
            if self.sources[0].pull(budget):
                self.sources.pop(0)
            progressed = True
        return progressed

    def flush(self):
        for out in self.outbounds:
            out.flush()

    def done(self) -> "bool":
        return not self.sources and all(r.ended for r in self.recvs.values())

    def sent(self) -> "dict[int, int]":
        return {op.channel: op.sent for op in self.sends}

    def delivered(self) -> "dict[int, int]":
        return {c: op.delivered for c, op in self.recvs.items()}

def drive(instance: "Instance", stop: "threading.Event | None" = None, idle_limit: "float" = IDLE_LIMIT):
    """
    The operator loop of a worker. Outbound batches are flushed whenever the
    loop runs out of local work, so request/response exchanges make progress.
    """
    idle_since = time.time()
    try:
        while not instance.done():
            if stop is not None and stop.is_set():
                raise RuntimeFailure(f"{instance.key}: stopped because another worker failed")
            if instance.step():
                idle_since = time.time()
                continue
            instance.flush()
            try:
                delivery = instance.inbox.get(timeout=POLL_TIME)
            except queue.Empty:
                if time.time() - idle_since > idle_limit:
                    raise RuntimeFailure(f"{instance.key}: no input for {idle_limit}s") from None
                continue
            instance.deliver(delivery)
            idle_since = time.time()
        instance.flush()
    except ChoreoError:
        raise
    except Exception as e:
        # User code raised.
        raise WorkerFailed(instance.key, type(e).__name__, str(e)) from e

class WorkerResult(NamedTuple):
    key: "str"
    log: "list[str]"
    sent: "dict[int, int]"
    delivered: "dict[int, int]"

    def to_report(self) -> "str":
        return json.dumps({"instance": self.key, "ok": True, "log": self.log,
            "sent": {str(k): v for k, v in self.sent.items()},
            "delivered": {str(k): v for k, v in self.delivered.items()}})

    @staticmethod
    def from_report(data: "dict") -> "WorkerResult":
        return WorkerResult(data["instance"], data["log"],
            {int(k): v for k, v in data["sent"].items()},
            {int(k): v for k, v in data["delivered"].items()})

def _result_of(instance: "Instance") -> "WorkerResult":
    return WorkerResult(instance.key, instance.log, instance.sent(), instance.delivered())

@dataclass
class RunResult(object):
    # Instance key -> for_each output lines, in manifest order.
    logs: "dict[str, list[str]]"
    status: "dict[str, int]" = field(default_factory=dict)
    # Channel -> elements enqueued by all senders / delivered to all receivers.
    sent: "dict[int, int]" = field(default_factory=dict)
    delivered: "dict[int, int]" = field(default_factory=dict)

    @staticmethod
    def collect(results: "list[WorkerResult]") -> "RunResult":
        run = RunResult({})
        for r in results:
            run.logs[r.key] = list(r.log)
            run.status[r.key] = 0
            for c, n in r.sent.items():
                run.sent[c] = run.sent.get(c, 0) + n
            for c, n in r.delivered.items():
                run.delivered[c] = run.delivered.get(c, 0) + n
        return run

    @property
    def ok(self) -> "bool":
        return all(s == 0 for s in self.status.values())

    def conserved(self) -> "bool":
        """Every element sent on a channel was delivered."""
        return self.sent == self.delivered

    def to_json(self) -> "str":
        return json.dumps({"instances": self.logs}, indent=2) + "\n"

def _instances(plans: "dict[LocationId, LocationPlan]", sizes: "dict[int, int]"):
    for loc, plan in plans.items():
        members = 1 if loc.kind is LocationKind.PROCESS else sizes[loc.index]
        for m in range(members):
            yield plan, m

def _check_sizes(plans: "dict[LocationId, LocationPlan]", cluster_sizes: "dict[int, int]"):
    for loc in plans:
        if loc.kind is LocationKind.CLUSTER:
            if cluster_sizes.get(loc.index, 0) < 1:
                raise ValidationError("cluster-size", None, f"{loc} needs a size of at least 1")

def _queue_outbounds(plan: "LocationPlan", inboxes: "dict", sizes: "dict[int, int]",
        roundtrip: "bool") -> "dict[int, list[QueueOutbound]]":
    outbounds = {}
    for c in plan.sends():
        members = 1 if c.peer.kind is LocationKind.PROCESS else sizes[c.peer.index]
        outbounds[c.channel] = [QueueOutbound(inboxes[instance_key(c.peer, m)], c.channel,
            roundtrip=roundtrip) for m in range(members)]
    return outbounds

def run_oracle(flow, cluster_sizes: "dict[int, int] | None" = None, seed: "int" = 0) -> "RunResult":
    """
    Reference semantics: every instance in this thread, in memory.
    Instances are stepped in a seeded random order each round.
    """
    plans = compile_flow(flow)
    sizes = dict(cluster_sizes or {})
    _check_sizes(plans, sizes)

    inboxes = {instance_key(plan.location, m): queue.Queue() for plan, m in _instances(plans, sizes)}
    instances = []
    for plan, m in _instances(plans, sizes):
        key = instance_key(plan.location, m)
        outbounds = _queue_outbounds(plan, inboxes, sizes, roundtrip=False)
        instances.append(Instance(plan, m, sizes, inboxes[key], outbounds))

    rng = random.Random(seed)
    live = list(instances)
    while live:
        order = list(live)
        rng.shuffle(order)
        progressed = False
        for inst in order:
            try:
                progressed |= inst.step()
                inst.flush()
            except ChoreoError:
                raise
            except Exception as e:
                raise WorkerFailed(inst.key, type(e).__name__, str(e)) from e
        live = [inst for inst in live if not inst.done()]
        if live and not progressed:
            raise RuntimeFailure("stalled waiting on " + ", ".join(inst.key for inst in live))
    return RunResult.collect([_result_of(inst) for inst in instances])

def run_worker(plan: "LocationPlan", manifest: "Manifest", member: "int",
        handshake_timeout: "float" = HANDSHAKE_TIMEOUT, stop: "threading.Event | None" = None,
        idle_limit: "float" = IDLE_LIMIT) -> "WorkerResult":
    """Run one instance over TCP, addresses taken from the manifest."""
    me = manifest.entry(plan.location, member)
    deadline = time.Deadline(handshake_timeout)
    inbox: "queue.Queue[Delivery]" = queue.Queue()
    expected = {c.channel: manifest.size(c.peer) for c in plan.recvs()}
    log.debug("Starting", (me.key, "MAGENTA"), "on", (f"{me.addr}:{me.port}", "BLUE"))

    endpoint = TcpEndpoint(me.addr, me.port, inbox, expected)
    outbounds: "dict[int, list[TcpOutbound]]" = {}
    try:
        for c in plan.sends():
            outbounds[c.channel] = []
            for m in manifest.members(c.peer):
                peer = manifest.entry(c.peer, m)
                outbounds[c.channel].append(TcpOutbound(peer.addr, peer.port, c.channel, deadline))
        endpoint.wait_ready(deadline)
        log.debug("Connected", (me.key, "MAGENTA"), f"({len(plan.sends())} out, {len(expected)} in)")

        instance = Instance(plan, member, manifest.cluster_sizes, inbox, outbounds)
        drive(instance, stop, idle_limit)
        for outs in outbounds.values():
            for out in outs:
                out.join()
    except BaseException:
        for outs in outbounds.values():
            for out in outs:
                out.abort()
        raise
    finally:
        endpoint.close()
    log.debug("Finished", (me.key, "MAGENTA"), f"with {len(instance.log)} log lines")
    return _result_of(instance)

def _drive_job(instance: "Instance", stop: "threading.Event") -> "WorkerResult":
    drive(instance, stop)
    return _result_of(instance)

def _run_threads(jobs: "dict[str, object]") -> "list[WorkerResult]":
    """Run each job(stop) in its own thread. The first failure stops the rest and is raised."""
    results: "dict[str, WorkerResult]" = {}
    errors: "list[BaseException]" = []
    stop = threading.Event()

    def run(key, job):
        try:
            results[key] = job(stop)
        except Exception as e:
            errors.append(e)
            stop.set()

    threads = [threading.Thread(target=run, args=(key, job), daemon=True, name=f"worker-{key}")
        for key, job in jobs.items()]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return [results[key] for key in jobs]

def write_plans(plans: "dict[LocationId, LocationPlan]", manifest: "Manifest",
        directory: "str") -> "dict[LocationId, str]":
    """Write <kind><index>.plan files and manifest.json. Returns the plan paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for loc, plan in plans.items():
        paths[loc] = os.path.join(directory, plan_filename(loc))
        with open(paths[loc], "w") as f:
            f.write(emit_plan_text(plan))
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        f.write(manifest.to_json())
    return paths

def _run_processes(plans, manifest: "Manifest", handshake_timeout: "float") -> "list[WorkerResult]":
    with tempfile.TemporaryDirectory(prefix="choreo-") as directory:
        paths = write_plans(plans, manifest, directory)
        manifest_path = os.path.join(directory, "manifest.json")
        procs = []
        for plan, m in _instances(plans, manifest.cluster_sizes):
            loc = plan.location
            args = [sys.executable, WORKER_SCRIPT, paths[loc], "--manifest", manifest_path,
                "--location", str(loc), "--member", str(m), "--handshake-timeout", str(handshake_timeout)]
            procs.append((instance_key(loc, m), subprocess.Popen(args, stdout=subprocess.PIPE, text=True)))

        results = []
        failure = None
        for key, proc in procs:
            out, _ = proc.communicate()
            report = _last_report(out)
            if report is None:
                failure = failure or WorkerFailed(key, "exit", f"status {proc.returncode}, no report")
            elif not report.get("ok"):
                failure = failure or from_report(key, report["error"], report["message"])
            else:
                results.append(WorkerResult.from_report(report))
            if failure is not None:
                for _, other in procs:
                    if other.poll() is None:
                        other.kill()
        if failure is not None:
            raise failure
        return results

def _last_report(out: "str") -> "dict | None":
    for line in reversed(out.splitlines()):
        try:
            return json.loads(line)
        except ValueError:
            continue
    return None

def run_local_distributed(plans: "dict[LocationId, LocationPlan]", manifest: "Manifest",
        transport: "str" = "tcp", launch: "str" = "thread",
        handshake_timeout: "float" = HANDSHAKE_TIMEOUT) -> "RunResult":
    """
    One worker per location instance.
    transport "mem" connects thread workers with in-memory queues (values still
    go through the codec); "tcp" uses the manifest's addresses, with workers as
    threads or, with launch="process", as separate ChoreoWorker.py processes.
    """
    manifest.covers(plans)
    sizes = manifest.cluster_sizes
    _check_sizes(plans, sizes)
    log.debug("Running", (str(len(manifest.entries)), "GREEN"), "instances over", (transport, "BLUE"))

    if transport == "mem":
        if launch != "thread":
            raise ValueError("the mem transport only runs workers as threads")
        inboxes = {instance_key(plan.location, m): queue.Queue() for plan, m in _instances(plans, sizes)}
        jobs = {}
        for plan, m in _instances(plans, sizes):
            key = instance_key(plan.location, m)
            outbounds = _queue_outbounds(plan, inboxes, sizes, roundtrip=True)
            instance = Instance(plan, m, sizes, inboxes[key], outbounds)
            jobs[key] = functools.partial(_drive_job, instance)
        return RunResult.collect(_run_threads(jobs))

    if transport != "tcp":
        raise ValueError(f"unknown transport {transport!r}, expected mem or tcp")
    if launch == "process":
        return RunResult.collect(_run_processes(plans, manifest, handshake_timeout))
    if launch != "thread":
        raise ValueError(f"unknown launch mode {launch!r}, expected thread or process")
    jobs = {}
    for plan, m in _instances(plans, sizes):
        jobs[instance_key(plan.location, m)] = functools.partial(run_worker, plan, manifest, m,
            handshake_timeout)
    return RunResult.collect(_run_threads(jobs))

@dataclass(frozen=True)
class BenchResult(object):
    messages: "int"
    seconds: "float"

    @property
    def rate(self) -> "float":
        return self.messages / self.seconds if self.seconds > 0 else float("inf")

def bench_channel(messages: "int" = 500_000, base_port: "int" = DEFAULT_BASE_PORT,
        addr: "str" = DEFAULT_ADDR) -> "BenchResult":
    """
    Throughput of one OneToOne TCP channel: 8 byte integers, framed and
    batched exactly as workers send them, decoded on the receiving side.
    """
    inbox: "queue.Queue[Delivery]" = queue.Queue()
    endpoint = TcpEndpoint(addr, base_port, inbox, {0: 1})
    errors = []
    try:
        out = TcpOutbound(addr, base_port, 0, time.Deadline(HANDSHAKE_TIMEOUT))
        endpoint.wait_ready(time.Deadline(HANDSHAKE_TIMEOUT))

        def send():
            try:
                for i in range(messages):
                    out.write(i)
                out.close()
                out.join()
            except ChoreoError as e:
                errors.append(e)

        start = time.perf()
        sender = threading.Thread(target=send, daemon=True, name="bench-send")
        sender.start()
        received = 0
        while True:
            delivery = inbox.get(timeout=IDLE_LIMIT)
            if delivery.error is not None:
                raise delivery.error
            received += len(delivery.values)
            if delivery.eos:
                break
        seconds = time.perf() - start
        sender.join()
    except queue.Empty:
        raise RuntimeFailure(f"bench channel stalled after {IDLE_LIMIT}s") from None
    finally:
        endpoint.close()
    if errors:
        raise errors[0]
    if received != messages:
        raise RuntimeFailure(f"sent {messages} messages, received {received}")
    log.debug("Bench", (f"{messages / max(seconds, 1e-9):,.0f}", "GREEN"), "msg/s")
    return BenchResult(messages, seconds)
