"""
Worker for one location instance.
Run `python3 ChoreoWorker.py -h` for a help menu on how to use.
Prints one JSON report line on stdout when it exits.
"""

import argparse
import json
import sys

from compiler import parse_plan_text
from errors import ChoreoError, WorkerFailed
from flow import LocationId
import log
from runtime import HANDSHAKE_TIMEOUT, Manifest, instance_key, run_worker

def main(plan_path, manifest_path, location, member, handshake_timeout) -> "int":
    key = instance_key(location, member)
    log.set_tag(key)
    try:
        with open(plan_path) as f:
            plan = parse_plan_text(f.read())
        with open(manifest_path) as f:
            manifest = Manifest.from_json(f.read())
        if plan.location != location:
            raise ChoreoError(f"{plan_path} is the plan of {plan.location}, not {location}")
        result = run_worker(plan, manifest, member, handshake_timeout)
    except (ChoreoError, OSError) as e:
        if isinstance(e, WorkerFailed):
            kind, message = e.kind, e.message
        else:
            kind, message = type(e).__name__, str(e)
        log.error(message)
        print(json.dumps({"instance": key, "ok": False, "error": kind, "message": message}), flush=True)
        return 1
    print(result.to_report(), flush=True)
    return 0

if __name__ == "__main__":
    parser = argparse.ArgumentParser(prog="ChoreoWorker.py")
    parser.add_argument("plan", type=str, help="Plan file of this instance's location")
    parser.add_argument("--manifest", type=str, required=True, help="Manifest file")
    parser.add_argument("--location", type=LocationId.parse, required=True, help="e.g. cluster:0")
    parser.add_argument("--member", type=int, default=0, help="Member index within a cluster")
    parser.add_argument("--handshake-timeout", type=float, default=HANDSHAKE_TIMEOUT)
    args = parser.parse_args()
    sys.exit(main(args.plan, args.manifest, args.location, args.member, args.handshake_timeout))

"""
Started by runtime.run_local_distributed(..., launch="process"), one per
location instance. The worker listens on its manifest address, connects to
every receiving instance of its send channels, runs its plan until every
source and every input channel has ended, and reports its output log and
per-channel counts as one JSON line.
"""
