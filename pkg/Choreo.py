"""
Command line for building, inspecting, deploying and running the example programs.
Run `python3 Choreo.py -h` for a help menu on how to use.
Machine readable output goes to stdout, logs go to stderr.
"""

import argparse
import os
import sys

from compiler import compile_flow, emit_dot, emit_plan_text
from deploy import ClusterSpec, CloudMachine, Localhost, ProcessSpec, bind, emit_config_text, emit_manifest_text
from errors import ChoreoError
import log
from programs import EXAMPLES, ExampleOptions, build_example
import runtime

# The machine every location is bound to with --cloud.
CLOUD_MACHINE_TYPE = "e2-micro"
CLOUD_IMAGE = "debian-cloud/debian-11"
CLOUD_REGION = "us-west1-a"

def build(args):
    """Build the example with the specs the flags ask for. Returns (flow, config, manifest)."""
    if args.cloud:
        host = CloudMachine(CLOUD_MACHINE_TYPE, CLOUD_IMAGE, CLOUD_REGION)
    else:
        host = Localhost()
    options = ExampleOptions(seed=args.seed, fanout=args.fanout, ticks=args.ticks)
    flow = build_example(args.example, ProcessSpec(host), ClusterSpec.uniform(host, args.cluster_size),
        options)
    log.debug("Built", (args.example, "GREEN"), " ".join(f"{k}={v}" for k, v in flow.graph.describe().items()))
    config, manifest = bind(flow, base_port=args.base_port)
    return flow, config, manifest

def graph(args):
    flow, _, _ = build(args)
    sys.stdout.write(emit_dot(flow))

def plans(args):
    flow, _, manifest = build(args)
    compiled = compile_flow(flow)
    if args.out:
        paths = runtime.write_plans(compiled, manifest, args.out)
        for path in paths.values():
            log.log("Wrote", (path, "GREEN"))
        log.log("Wrote", (os.path.join(args.out, "manifest.json"), "GREEN"))
        return
    sys.stdout.write("".join(emit_plan_text(p) for p in compiled.values()))

def deploy_config(args):
    _, config, _ = build(args)
    sys.stdout.write(emit_config_text(config))

def manifest(args):
    _, _, m = build(args)
    sys.stdout.write(emit_manifest_text(m))

def run_local(args):
    flow, _, m = build(args)
    result = runtime.run_local_distributed(compile_flow(flow), m, transport=args.transport,
        launch=args.launch, handshake_timeout=args.handshake_timeout)
    sys.stdout.write(result.to_json())

def oracle(args):
    flow, _, m = build(args)
    result = runtime.run_oracle(flow, m.cluster_sizes, seed=args.schedule_seed)
    sys.stdout.write(result.to_json())

def bench_channel(args):
    result = runtime.bench_channel(args.messages, base_port=args.base_port)
    print(f"{result.rate:.0f}")
    log.log("Sent", (f"{result.messages}", "GREEN"), "messages in", (f"{result.seconds:.3f}s", "GREEN"))
    if args.min_rate > 0 and result.rate < args.min_rate:
        log.error(f"{result.rate:.0f} msg/s is below {args.min_rate} msg/s")
        return 1

def add_example_flags(parser: "argparse.ArgumentParser"):
    parser.add_argument("example", choices=sorted(EXAMPLES), help="Example program to use")
    hosts = parser.add_mutually_exclusive_group()
    hosts.add_argument("--cloud", action="store_true", help=f"Bind locations to {CLOUD_MACHINE_TYPE} "
        f"machines in {CLOUD_REGION}")
    hosts.add_argument("--localhost", action="store_true", help="Bind locations to localhost (default)")
    parser.add_argument("--cluster-size", type=int, default=2, help="Members per cluster")
    parser.add_argument("--base-port", type=int, default=runtime.DEFAULT_BASE_PORT,
        help="First port of the manifest")
    parser.add_argument("--seed", type=int, default=42, help="Gossip sampler seed")
    parser.add_argument("--fanout", type=int, default=1, help="Gossip fan-out")
    parser.add_argument("--ticks", type=int, default=3, help="Heartbeat ticks and gossip rounds")

def make_parser() -> "argparse.ArgumentParser":
    parser = argparse.ArgumentParser(prog="Choreo.py")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logs on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only errors on stderr")
    verbs = parser.add_subparsers(dest="verb", required=True)

    p = verbs.add_parser("graph", help="DOT rendering of the dataflow graph")
    add_example_flags(p)
    p.set_defaults(func=graph)

    p = verbs.add_parser("plans", help="Per-location plan texts")
    add_example_flags(p)
    p.add_argument("--out", type=str, help="Write <kind><index>.plan files and manifest.json here")
    p.set_defaults(func=plans)

    p = verbs.add_parser("deploy-config", help="Deployment config JSON")
    add_example_flags(p)
    p.set_defaults(func=deploy_config)

    p = verbs.add_parser("manifest", help="Manifest JSON")
    add_example_flags(p)
    p.set_defaults(func=manifest)

    p = verbs.add_parser("run-local", help="Run one worker per location instance")
    add_example_flags(p)
    p.add_argument("--transport", choices=("mem", "tcp"), default="tcp")
    p.add_argument("--launch", choices=("thread", "process"), default="thread",
        help="Run tcp workers as threads or as separate processes")
    p.add_argument("--handshake-timeout", type=float, default=runtime.HANDSHAKE_TIMEOUT)
    p.set_defaults(func=run_local)

    p = verbs.add_parser("oracle", help="Run every instance in one thread")
    add_example_flags(p)
    p.add_argument("--schedule-seed", type=int, default=0, help="Seed of the round robin scheduler")
    p.set_defaults(func=oracle)

    p = verbs.add_parser("bench-channel", help="OneToOne TCP throughput in messages/sec")
    p.add_argument("--messages", type=int, default=500_000)
    p.add_argument("--base-port", type=int, default=runtime.DEFAULT_BASE_PORT)
    p.add_argument("--min-rate", type=float, default=runtime.BENCH_MIN_RATE,
        help="Exit 1 below this many messages/sec, 0 to only report")
    p.set_defaults(func=bench_channel)
    return parser

def main(argv=None) -> "int":
    args = make_parser().parse_args(argv)
    if args.verbose:
        log.set_verbose(True)
    if args.quiet:
        log.set_quiet(True)
    try:
        return args.func(args) or 0
    except ChoreoError as e:
        log.error(str(e))
        return 1

if __name__ == "__main__":
    sys.exit(main())

"""
Stage one runs the example's builder, which records locations, operators and
network channels in one global graph. Stage two slices that graph into one
plan per location (`plans`), binds every location instance to a host
(`deploy-config`, `manifest`) and runs the plans, either all in one thread
(`oracle`) or with one worker per instance (`run-local`).

Exit status: 0 on success, 1 when building, validating or running fails,
2 on a usage error.

Examples:
    python3 Choreo.py graph pipeline | dot -Tpng > pipeline.png
    python3 Choreo.py run-local pipeline --transport tcp
    python3 Choreo.py run-local broadcast --cluster-size 3 --launch process
    python3 Choreo.py deploy-config broadcast --cloud --cluster-size 2
    python3 Choreo.py bench-channel --messages 500000
"""
