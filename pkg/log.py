"""Simple logging functionality for choreo. Writes to stderr so stdout stays parseable."""

import os
import sys
import timekeeper as time

"""
Color codes taken from Blender build scripts.
https://svn.blender.org/svnroot/bf-blender/trunk/blender/build_files/scons/tools/bcolors.py
"""
MAGENTA = '\033[95m'
BLUE = '\033[94m'
CYAN = '\033[96m'
GREEN = '\033[92m'
YELLOW = '\033[93m'
RED = '\033[91m'
BOLD = '\033[1m'
UNDERLINE = '\033[4m'
RESET = '\033[0m'
colors = {"MAGENTA": MAGENTA,
          "BLUE": BLUE,
          "CYAN": CYAN,
          "GREEN": GREEN,
          "YELLOW": YELLOW,
          "RED": RED,
          "BOLD": BOLD,
          "UNDERLINE": UNDERLINE,
          "RESET": RESET}

# Debug lines are only printed when verbose. Workers inherit it from the environment.
VERBOSE = os.environ.get("CHOREO_VERBOSE", "") == "1"
# Silences everything but errors. Set by -q, workers inherit it from the environment.
QUIET = os.environ.get("CHOREO_QUIET", "") == "1"

# Identifies which worker wrote a line, e.g. "cluster:0:m1".
TAG = ""

def set_tag(tag: "str"):
    global TAG
    TAG = tag

def set_verbose(verbose: "bool"):
    global VERBOSE
    VERBOSE = verbose
    # Child workers pick this up.
    os.environ["CHOREO_VERBOSE"] = "1" if verbose else "0"

def set_quiet(quiet: "bool"):
    global QUIET
    QUIET = quiet
    os.environ["CHOREO_QUIET"] = "1" if quiet else "0"

def _paint(text: "str", *names: "str") -> "str":
    if not sys.stderr.isatty():
        return text
    return "".join(colors[x] for x in names) + text + RESET

def log(*values: "str | tuple[str, ...]", sep=" "):
    """
    Works similarly to the print statement.
    Arguments can be a tuple in which case it is colored.
    """
    if not QUIET:
        _write(values, sep)

def _write(values, sep: "str"):
    header = "[" + _paint(f"{time.rel():07.2f}", "CYAN") + "] "
    if TAG:
        header += "(" + _paint(TAG, "MAGENTA") + ") "
    joined = []
    for v in values:
        if isinstance(v, tuple):
            # text, *col
            joined.append(_paint(v[0], *v[1:]))
        else:
            joined.append(str(v))
    print(header + sep.join(joined), file=sys.stderr, flush=True)

def debug(*values: "str | tuple[str, ...]", sep=" "):
    """Like log, but only when verbose."""
    if VERBOSE:
        log(*values, sep=sep)

def error(message: "str"):
    _write((("error:", "RED", "BOLD"), message), " ")
