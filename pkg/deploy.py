"""
Binding locations to hosts.

A flow records one spec per location when the location is created. bind()
turns those specs into a deployment config, one machine resource per location
instance plus the exact network openings the flow's channels need, and the
manifest workers use to find each other. Nothing is provisioned; the config is
only emitted.

Config format (JSON, sorted keys):
    resource        name -> machine_type/image/region/zone, or localhost marker
    network_rules   [{src, dst, port, channels}] one per sending/receiving instance pair
    control_rules   [{resource, port}] one per instance
"""

from dataclasses import dataclass, field
from typing import Callable
import json

from compiler import compile_flow, plan_digest
from errors import DeployError
from flow import FlowBuilder, LocationId, LocationKind
import log
from runtime import DEFAULT_ADDR, DEFAULT_BASE_PORT, Manifest, instance_key

# Every instance also listens on its data port plus this, for control traffic.
CONTROL_PORT_OFFSET = 1000

class HostSpec(object):
    """Where one location instance runs."""
    def describe(self) -> "dict":
        raise NotImplementedError

@dataclass(frozen=True)
class Localhost(HostSpec):
    def describe(self):
        return {"localhost": True}

@dataclass(frozen=True)
class CloudMachine(HostSpec):
    machine_type: "str"
    image: "str"
    region: "str"

    def __post_init__(self):
        for name in ("machine_type", "image", "region"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise DeployError("InvalidHost", detail=f"{name} must be a non-empty string")

    def describe(self):
        return {
            "machine_type": self.machine_type,
            "image": self.image,
            "region": self.region,
            # Regions are given at zone granularity, e.g. us-west1-a.
            "zone": self.region,
        }

def _factory(host) -> "Callable":
    if isinstance(host, (HostSpec, list, tuple)):
        return lambda: host
    return host

class ProcessSpec(object):
    """Binds a process to one host. Reusable across processes."""
    location_kind = "process"

    def __init__(self, factory: "Callable[[], HostSpec] | HostSpec"):
        self.factory = _factory(factory)

    def hosts(self) -> "list[HostSpec]":
        return [self.factory()]

class ClusterSpec(object):
    """Binds a cluster to an ordered list of hosts, one per member."""
    location_kind = "cluster"

    def __init__(self, factory: "Callable[[], list[HostSpec]] | list[HostSpec]"):
        self.factory = _factory(factory)

    @staticmethod
    def uniform(host: "HostSpec", size: "int") -> "ClusterSpec":
        return ClusterSpec(lambda: [host] * size)

    def hosts(self) -> "list[HostSpec]":
        return list(self.factory())

@dataclass(frozen=True)
class Resource(object):
    name: "str"
    location: "LocationId"
    member: "int"
    host: "HostSpec"
    port: "int"
    plan_digest: "str"

@dataclass
class NetworkRule(object):
    src: "str"
    dst: "str"
    port: "int"
    channels: "list[int]" = field(default_factory=list)

@dataclass
class DeploymentConfig(object):
    resources: "list[Resource]"
    network_rules: "list[NetworkRule]"
    control_rules: "list[tuple[str, int]]"

    def resource(self, location: "LocationId", member: "int" = 0) -> "Resource":
        for r in self.resources:
            if r.location == location and r.member == member:
                return r
        raise KeyError(instance_key(location, member))

    def to_document(self) -> "dict":
        resources = {}
        for r in self.resources:
            resources[r.name] = dict(r.host.describe(), location=str(r.location), member=r.member,
                port=r.port, plan_digest=r.plan_digest)
        return {
            "resource": resources,
            "network_rules": [{"src": n.src, "dst": n.dst, "port": n.port, "channels": n.channels}
                for n in self.network_rules],
            "control_rules": [{"resource": name, "port": port} for name, port in self.control_rules],
        }

def resource_name(location: "LocationId", member: "int") -> "str":
    return f"loc-{location.kind.value}{location.index}-m{member}"

def _hosts_for(location: "LocationId", spec) -> "list[HostSpec]":
    if spec is None:
        raise DeployError("MissingBinding", location)
    if getattr(spec, "location_kind", None) != location.kind.value:
        raise DeployError("MissingBinding", location, f"needs a {location.kind.value} spec, "
            f"got {type(spec).__name__}")
    hosts = spec.hosts()
    if not hosts:
        raise DeployError("EmptyCluster", location)
    for h in hosts:
        if not isinstance(h, HostSpec):
            raise DeployError("InvalidHost", location, f"{type(h).__name__} is not a host spec")
    return hosts

def bind(flow: "FlowBuilder", bindings: "dict[LocationId, object] | None" = None,
        base_port: "int" = DEFAULT_BASE_PORT, addr: "str" = DEFAULT_ADDR) -> "tuple[DeploymentConfig, Manifest]":
    """
    Resolve every location's spec (an entry in `bindings` overrides the one the
    location was created with) and derive the config and manifest from the graph.
    """
    graph = flow.graph
    bindings = bindings or {}
    hosts: "dict[LocationId, list[HostSpec]]" = {}
    for loc, spec in graph.locations:
        hosts[loc] = _hosts_for(loc, bindings.get(loc, spec))

    sizes = {loc.index: len(h) for loc, h in hosts.items() if loc.kind is LocationKind.CLUSTER}
    manifest = Manifest.build(graph.location_ids(), sizes, base_port, addr)
    plans = compile_flow(flow)

    resources = []
    for e in manifest.entries:
        resources.append(Resource(resource_name(e.location, e.member), e.location, e.member,
            hosts[e.location][e.member], e.port, plan_digest(plans[e.location])))

    # Openings come from the channel tables only.
    rules: "dict[tuple[str, str, int], NetworkRule]" = {}
    for loc, plan in plans.items():
        for c in plan.sends():
            for src in manifest.members(loc):
                for dst in manifest.members(c.peer):
                    port = manifest.entry(c.peer, dst).port
                    key = (resource_name(loc, src), resource_name(c.peer, dst), port)
                    rule = rules.setdefault(key, NetworkRule(*key))
                    rule.channels.append(c.channel)
    network_rules = sorted(rules.values(), key=lambda r: (r.src, r.dst, r.port))
    control_rules = [(r.name, r.port + CONTROL_PORT_OFFSET) for r in resources]

    log.debug("Bound", (str(len(resources)), "GREEN"), "resources with",
        (str(len(network_rules)), "GREEN"), "network rules")
    return DeploymentConfig(resources, network_rules, control_rules), manifest

def emit_config_text(config: "DeploymentConfig") -> "str":
    return json.dumps(config.to_document(), indent=2, sort_keys=True) + "\n"

def emit_manifest_text(manifest: "Manifest") -> "str":
    return manifest.to_json()
