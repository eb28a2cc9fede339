"""
Exceptions raised by choreo.
Everything derives from ChoreoError so the entry scripts can catch one type.
"""

class ChoreoError(Exception):
    """Base class for all choreo errors."""

# Staging.

class StagingError(ChoreoError):
    """An expression could not be quoted."""

class UnquotableCapture(StagingError):
    def __init__(self, name: "str", reason: "str"):
        super().__init__(f"cannot capture {name!r}: {reason}")
        self.name = name
        self.reason = reason

class NestedQuote(UnquotableCapture):
    def __init__(self, name: "str"):
        super().__init__(name, "nested quoting is not supported")

# Building flows.

class FlowError(ChoreoError):
    """Misuse of the stream builder API."""

class ConsumedStream(FlowError):
    def __init__(self, node_id: "int"):
        super().__init__(f"stream from node {node_id} was already consumed")
        self.node_id = node_id

class LocationMismatch(FlowError):
    def __init__(self, left, right):
        super().__init__(f"inputs are at {left} and {right}; send one of them first")
        self.left = left
        self.right = right

class SelfSend(FlowError):
    def __init__(self, location):
        super().__init__(f"stream is already at {location}")
        self.location = location

class PatternTypeError(FlowError):
    def __init__(self, pattern, element_type: "str"):
        super().__init__(f"{pattern} send needs (ClusterId, T) elements, got {element_type}")
        self.pattern = pattern
        self.element_type = element_type

# Compiling.

class ValidationError(ChoreoError):
    def __init__(self, rule: "str", node_id: "int | None", detail: "str" = ""):
        where = f" at node {node_id}" if node_id is not None else ""
        super().__init__(f"{rule}{where}" + (f": {detail}" if detail else ""))
        self.rule = rule
        self.node_id = node_id

# Deploying.

class DeployError(ChoreoError):
    def __init__(self, reason: "str", location=None, detail: "str" = ""):
        where = f" for {location}" if location is not None else ""
        super().__init__(f"{reason}{where}" + (f": {detail}" if detail else ""))
        self.reason = reason
        self.location = location

# Running.

class RuntimeFailure(ChoreoError):
    """A worker failed while running its plan."""

class BindError(RuntimeFailure):
    def __init__(self, message: "str", addr: "str | None" = None, port: "int | None" = None):
        super().__init__(message)
        self.addr = addr
        self.port = port

class HandshakeTimeout(RuntimeFailure):
    def __init__(self, message: "str", channel: "int | None" = None, peer: "str | None" = None):
        super().__init__(message)
        self.channel = channel
        self.peer = peer

class DecodeError(RuntimeFailure):
    """A frame could not be decoded."""

class WorkerFailed(RuntimeFailure):
    def __init__(self, instance: "str", kind: "str", message: "str"):
        super().__init__(f"{instance}: {kind}: {message}")
        self.instance = instance
        self.kind = kind
        self.message = message

def from_report(instance: "str", kind: "str", message: "str") -> "RuntimeFailure":
    """Rebuild the error a worker process reported by class name."""
    cls = {c.__name__: c for c in (RuntimeFailure, BindError, HandshakeTimeout, DecodeError)}.get(kind)
    if cls is None:
        return WorkerFailed(instance, kind, message)
    return cls(f"{instance}: {message}")
