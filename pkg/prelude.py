"""
Names that quoted code may use without capturing them.
Workers provide these (plus the builtins) when they load a plan.
"""

from dataclasses import dataclass
import random

FNV_OFFSET = 0xcbf29ce484222325
FNV_PRIME = 0x100000001b3
MASK_64 = (1 << 64) - 1

@dataclass(frozen=True, order=True)
class ClusterId(object):
    """Identifies one member of a cluster. Only known at runtime."""
    member_index: "int"

    def __post_init__(self):
        if self.member_index < 0:
            raise ValueError("member_index must be non-negative")

    def __repr__(self):
        return f"ClusterId({self.member_index})"

def fnv1a64(key: "str | bytes | int") -> "int":
    """64 bit FNV-1a. Pinned so partitioning agrees on every platform."""
    if isinstance(key, int):
        key = str(key)
    if isinstance(key, str):
        key = key.encode()
    h = FNV_OFFSET
    for b in key:
        h ^= b
        h = (h * FNV_PRIME) & MASK_64
    return h

def gossip_sample(seed: "int", round: "int", members, fanout: "int") -> "list[ClusterId]":
    """
    Pick `fanout` members for a gossip round.
    Depends only on (seed, round, members) so a rerun picks the same ones.
    """
    members = sorted(members)
    rng = random.Random(f"{seed}:{round}")
    return rng.sample(members, min(fanout, len(members)))

PRELUDE = {
    "ClusterId": ClusterId,
    "fnv1a64": fnv1a64,
    "gossip_sample": gossip_sample,
}
