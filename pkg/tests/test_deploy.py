import json
import os

import pytest

from compiler import compile_flow, plan_digest
from deploy import (CONTROL_PORT_OFFSET, CloudMachine, ClusterSpec, Localhost, ProcessSpec, bind,
    emit_config_text, emit_manifest_text, resource_name)
from errors import DeployError
from flow import LocationId, LocationKind, NodeKind, new_flow
from programs import build_example
from randomflows import random_flow
from staging import quote

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")

P0 = LocationId(LocationKind.PROCESS, 0)
C0 = LocationId(LocationKind.CLUSTER, 0)

CLOUD = CloudMachine("e2-micro", "debian-cloud/debian-11", "us-west1-a")

def cloud_broadcast():
    return build_example("broadcast", ProcessSpec(CLOUD), ClusterSpec.uniform(CLOUD, 2))

def test_cloud_broadcast_config():
    flow = cloud_broadcast()
    config, _ = bind(flow)
    document = json.loads(emit_config_text(config))
    plans = compile_flow(flow)
    for name, resource in document["resource"].items():
        loc = LocationId.parse(resource["location"])
        assert resource.pop("plan_digest") == plan_digest(plans[loc])
    with open(os.path.join(GOLDEN, "broadcast_cloud.config.json")) as f:
        assert document == json.load(f)

def test_config_text_is_deterministic():
    assert emit_config_text(bind(cloud_broadcast())[0]) == emit_config_text(bind(cloud_broadcast())[0])

def test_localhost_resources():
    config, manifest = bind(build_example("broadcast"), base_port=40000)
    document = config.to_document()
    assert document["resource"]["loc-cluster0-m1"]["localhost"] is True
    assert config.resource(C0, 1).port == 40002
    assert [e.port for e in manifest.entries] == [40000, 40001, 40002]
    assert emit_manifest_text(manifest) == manifest.to_json()

def test_control_rules():
    config, manifest = bind(build_example("heartbeat"))
    assert config.control_rules == [(resource_name(e.location, e.member), e.port + CONTROL_PORT_OFFSET)
        for e in manifest.entries]

def test_heartbeat_network_rules():
    config, _ = bind(build_example("heartbeat"))
    rules = [(r.src, r.dst, r.port, r.channels) for r in config.network_rules]
    assert rules == [
        ("loc-cluster0-m0", "loc-process0-m0", 35000, [1]),
        ("loc-cluster0-m1", "loc-process0-m0", 35000, [1]),
        ("loc-process0-m0", "loc-cluster0-m0", 35001, [0]),
        ("loc-process0-m0", "loc-cluster0-m1", 35002, [0]),
    ]

def test_channels_between_one_pair_share_a_rule():
    flow = new_flow()
    spec = ProcessSpec(Localhost())
    p0, p1 = flow.process(spec), flow.process(spec)
    flow.source_iter(p0, quote(range(2))).send_serialized(p1).for_each(quote(lambda v: print(v)))
    flow.source_iter(p0, quote(range(2))).send_serialized(p1).for_each(quote(lambda v: print(v)))
    config, _ = bind(flow)
    assert len(config.network_rules) == 1
    assert config.network_rules[0].channels == [0, 1]

def test_empty_flow():
    config, manifest = bind(new_flow())
    assert config.to_document() == {"resource": {}, "network_rules": [], "control_rules": []}
    assert manifest.entries == []

def test_bindings_override_specs():
    flow = new_flow()
    flow.process()
    c = flow.cluster()
    flow.source_iter(c, quote(range(2))).for_each(quote(lambda v: print(v)))
    config, manifest = bind(flow, {P0: ProcessSpec(lambda: Localhost()),
        C0: ClusterSpec.uniform(Localhost(), 3)})
    assert manifest.cluster_sizes == {0: 3}
    assert len(config.resources) == 4

def test_missing_binding():
    flow = new_flow()
    flow.process()
    with pytest.raises(DeployError) as e:
        bind(flow)
    assert (e.value.reason, e.value.location) == ("MissingBinding", P0)

def test_wrong_binding_kind():
    flow = new_flow()
    flow.cluster()
    with pytest.raises(DeployError) as e:
        bind(flow, {C0: ProcessSpec(Localhost())})
    assert e.value.reason == "MissingBinding"

def test_empty_cluster():
    flow = new_flow()
    flow.cluster(ClusterSpec([]))
    with pytest.raises(DeployError) as e:
        bind(flow)
    assert e.value.reason == "EmptyCluster"

def test_invalid_host():
    flow = new_flow()
    flow.cluster(ClusterSpec(["us-west1-a"]))
    with pytest.raises(DeployError) as e:
        bind(flow)
    assert e.value.reason == "InvalidHost"
    with pytest.raises(DeployError):
        CloudMachine("e2-micro", "", "us-west1-a")

def test_host_specs_are_shareable():
    spec = ClusterSpec(lambda: [Localhost(), CLOUD])
    assert spec.hosts() == [Localhost(), CLOUD]
    assert spec.hosts() is not spec.hosts()
    assert CLOUD.describe()["zone"] == "us-west1-a"

def test_regions_are_kept_verbatim():
    flow = new_flow()
    west = CloudMachine("e2-micro", "debian-cloud/debian-11", "us-west1-a")
    europe = CloudMachine("n2-standard-2", "ubuntu-os-cloud/ubuntu-2204-lts", "europe-west4-b")
    asia = CloudMachine("e2-small", "debian-cloud/debian-12", "asia-east1-c")
    p0 = flow.process(ProcessSpec(west))
    p1 = flow.process(ProcessSpec(europe))
    c0 = flow.cluster(ClusterSpec([asia, Localhost()]))
    flow.source_iter(p0, quote(range(2))).send_serialized(p1).for_each(quote(lambda v: print(v)))
    flow.source_iter(c0, quote(range(2))).for_each(quote(lambda v: print(v)))
    document = bind(flow)[0].to_document()["resource"]
    assert {name: (r.get("machine_type"), r.get("image"), r.get("region"), r.get("zone"))
        for name, r in document.items()} == {
        "loc-process0-m0": ("e2-micro", "debian-cloud/debian-11", "us-west1-a", "us-west1-a"),
        "loc-process1-m0": ("n2-standard-2", "ubuntu-os-cloud/ubuntu-2204-lts", "europe-west4-b",
            "europe-west4-b"),
        "loc-cluster0-m0": ("e2-small", "debian-cloud/debian-12", "asia-east1-c", "asia-east1-c"),
        "loc-cluster0-m1": (None, None, None, None),
    }
    assert document["loc-cluster0-m1"]["localhost"] is True

def random_bindings(flow, sizes):
    bindings = {loc: ProcessSpec(Localhost()) for loc in flow.graph.location_ids()
        if loc.kind is LocationKind.PROCESS}
    bindings.update({LocationId(LocationKind.CLUSTER, i): ClusterSpec.uniform(Localhost(), n)
        for i, n in sizes.items()})
    return bindings

def instance_count(loc: "LocationId", sizes: "dict[int, int]") -> "int":
    return 1 if loc.kind is LocationKind.PROCESS else sizes[loc.index]

@pytest.mark.parametrize("seed", range(30))
def test_one_resource_per_instance(seed):
    flow, sizes = random_flow(seed)
    config, manifest = bind(flow, random_bindings(flow, sizes))
    names = [r.name for r in config.resources]
    assert len(names) == len(set(names))
    assert names == [resource_name(e.location, e.member) for e in manifest.entries]
    assert len(names) == sum(instance_count(loc, sizes) for loc in flow.graph.location_ids())
    for rule in config.network_rules:
        assert rule.src in names and rule.dst in names
    assert [name for name, _ in config.control_rules] == names

@pytest.mark.parametrize("seed", range(30))
def test_network_rules_match_channels(seed):
    flow, sizes = random_flow(seed)
    config, manifest = bind(flow, random_bindings(flow, sizes))
    graph = flow.graph

    # One opening per (sending instance, receiving instance, channel) of every send/recv node pair.
    expected = set()
    for send in graph.nodes:
        if send.kind is not NodeKind.NETWORK_SEND:
            continue
        [recv] = [graph.node(e.consumer) for e in graph.edges if e.producer == send.node_id]
        assert recv.kind is NodeKind.NETWORK_RECV and recv.channel == send.channel
        for src in range(instance_count(send.location, sizes)):
            for dst in range(instance_count(recv.location, sizes)):
                port = manifest.entry(recv.location, dst).port
                expected.add((resource_name(send.location, src), resource_name(recv.location, dst),
                    port, send.channel))
    actual = {(r.src, r.dst, r.port, c) for r in config.network_rules for c in r.channels}
    assert actual == expected
    assert len(actual) == sum(len(r.channels) for r in config.network_rules)
