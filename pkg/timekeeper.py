"""
Time management that allows for speeding up time (for testing).
"""

import time as time_real

# Speed up or slow down time for this program.
# Higher values indicate faster time.
# i.e. TIME_SCALE = 2.0 means any operation that would sleep for
# 2 seconds now only sleeps for 1. Timeouts shrink the same way.
TIME_SCALE = 1.0

def time() -> float:
    """Current time in seconds."""
    return time_real.time() * TIME_SCALE

def sleep(secs: float):
    """Delay execution for the number of seconds."""
    time_real.sleep(secs / TIME_SCALE)

def rel() -> float:
    """Return time since start."""
    return time() - TIME_START

def perf() -> float:
    """Monotonic high resolution clock for measurements. Not scaled."""
    return time_real.perf_counter()

class Deadline(object):
    """A point in (scaled) time that an operation must finish by."""
    def __init__(self, secs: "float"):
        self.secs = secs
        self.at = time() + secs

    def remaining(self) -> "float":
        """Real seconds left, never negative. Suitable for socket timeouts."""
        return max(0.0, (self.at - time()) / TIME_SCALE)

    def expired(self) -> "bool":
        return time() >= self.at

# Need a common start time for operations.
TIME_START = time()
