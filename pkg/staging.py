"""
Quoting user code so it can run during stage one and be spliced into
per-location plans as text.

A quoted lambda keeps its function value for evaluation and records canonical
source text recovered from the defining file. Stage-one constants the lambda
refers to are inlined as literals, so the text is self-contained.
"""

import ast
import builtins
import copy
import functools
import inspect
import linecache
import math
import types
from dataclasses import dataclass, field
from typing import Any, Callable

from errors import NestedQuote, StagingError, UnquotableCapture
from prelude import PRELUDE, ClusterId

# Names that only the runtime binds. User code may not reference them directly.
RUNTIME_NAMES = frozenset({"cluster_ids", "self_id"})

# Prelude objects by identity, so aliased imports splice under their canonical name.
_PRELUDE_BY_ID = {id(v): k for k, v in PRELUDE.items()}

@dataclass(frozen=True)
class Quoted(object):
    """
    Dual representation of user code.
    `eval` is callable now, `source_text` is what plans carry.
    """
    eval: "Callable[..., Any]" = field(compare=False)
    source_text: "str"
    # ((name, literal text), ...) in order of first reference.
    capture_list: "tuple[tuple[str, str], ...]" = ()

    def __str__(self):
        return self.source_text

def quote(expression, **captures) -> "Quoted":
    """
    Quote a lambda, a string expression or a constant iterable.

    quote(lambda v: v * 2)
    quote("lambda v: v > k", k=2)
    quote(range(5))
    """
    if isinstance(expression, Quoted):
        raise NestedQuote("<quoted>")
    if isinstance(expression, str):
        return _quote_text(expression, captures)
    if captures:
        raise StagingError("explicit captures are only accepted for string expressions")
    if isinstance(expression, types.FunctionType):
        return _quote_function(expression)
    if isinstance(expression, (range, tuple, list, frozenset)):
        try:
            text = literal_source(expression)
        except ValueError as e:
            raise UnquotableCapture("<value>", str(e)) from None
        return Quoted(eval=lambda: load(text), source_text=text)
    raise StagingError(f"cannot quote a {type(expression).__name__}; "
        "pass a lambda, a string expression or a constant iterable")

def runtime_quote(text: "str") -> "Quoted":
    """Quote text that refers to runtime-only names (cluster ids, own id)."""
    def runtime_only(*args):
        raise StagingError(f"{text} is only known at runtime")
    return Quoted(eval=runtime_only, source_text=text)

def load(source_text: "str", env: "dict | None" = None):
    """Interpret canonical source text. Plans are trusted artifacts."""
    if env is None:
        env = base_env()
    return builtins.eval(_compile(source_text), env)

def base_env() -> "dict":
    """The environment every quoted expression can rely on."""
    return {"__builtins__": builtins, **PRELUDE}

@functools.lru_cache(maxsize=4096)
def _compile(source_text: "str"):
    return compile(source_text, "<quoted>", "eval")

def literal_source(value) -> "str":
    """
    Canonical literal text for an immutable constant.
    Raises ValueError for anything that has no deterministic literal form.
    """
    if value is None or isinstance(value, (bool, int, str, bytes)):
        return repr(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"{value!r} has no literal form")
        return repr(value)
    if isinstance(value, ClusterId):
        return repr(value)
    if isinstance(value, tuple):
        items = [literal_source(v) for v in value]
        if len(items) == 1:
            return f"({items[0]},)"
        return "(" + ", ".join(items) + ")"
    if isinstance(value, list):
        return "[" + ", ".join(literal_source(v) for v in value) + "]"
    if isinstance(value, frozenset):
        if not value:
            return "frozenset()"
        # Set iteration order depends on hashing, sort the text instead.
        return "frozenset({" + ", ".join(sorted(literal_source(v) for v in value)) + "})"
    if isinstance(value, range):
        if value.step == 1:
            return f"range({value.start}, {value.stop})"
        return f"range({value.start}, {value.stop}, {value.step})"
    raise ValueError(f"{type(value).__name__} values cannot be spliced")

def _capturable(value) -> "bool":
    """Immutable constants only. Lists are snapshotted by quote() itself, never captured."""
    if isinstance(value, list):
        return False
    if isinstance(value, (tuple, frozenset)):
        return all(_capturable(v) for v in value)
    try:
        literal_source(value)
    except ValueError:
        return False
    return True

class _ScopedNames(ast.NodeTransformer):
    """Walks an expression, tracking which names are bound inside it."""
    def __init__(self):
        self.scopes: "list[set[str]]" = [set()]

    def is_bound(self, name: "str") -> "bool":
        return any(name in s for s in self.scopes)

    def free_name(self, node: "ast.Name") -> "ast.AST":
        return node

    def visit_Name(self, node: "ast.Name"):
        if isinstance(node.ctx, ast.Store):
            self.scopes[-1].add(node.id)
            return node
        if self.is_bound(node.id):
            return node
        return self.free_name(node)

    def visit_Lambda(self, node: "ast.Lambda"):
        # Defaults belong to the enclosing scope.
        node.args = self.visit(node.args)
        self.scopes.append(set(_arg_names(node.args)))
        node.body = self.visit(node.body)
        self.scopes.pop()
        return node

    def _comprehension(self, node, *fields: "str"):
        self.scopes.append(set())
        for gen in node.generators:
            gen.iter = self.visit(gen.iter)
            gen.target = self.visit(gen.target)
            gen.ifs = [self.visit(c) for c in gen.ifs]
        for name in fields:
            setattr(node, name, self.visit(getattr(node, name)))
        self.scopes.pop()
        return node

    def visit_ListComp(self, node):
        return self._comprehension(node, "elt")

    def visit_SetComp(self, node):
        return self._comprehension(node, "elt")

    def visit_GeneratorExp(self, node):
        return self._comprehension(node, "elt")

    def visit_DictComp(self, node):
        return self._comprehension(node, "key", "value")

class _FreeNames(_ScopedNames):
    def __init__(self):
        super().__init__()
        self.free: "list[str]" = []

    def free_name(self, node):
        if node.id not in self.free:
            self.free.append(node.id)
        return node

class _Splice(_ScopedNames):
    def __init__(self, replacements: "dict[str, str]"):
        super().__init__()
        self.replacements = replacements

    def free_name(self, node):
        text = self.replacements.get(node.id)
        if text is None:
            return node
        return ast.copy_location(ast.parse(text, mode="eval").body, node)

def free_names(node: "ast.AST") -> "list[str]":
    """Names an expression reads but does not bind, in order of first use."""
    collector = _FreeNames()
    collector.visit(copy.deepcopy(node))
    return collector.free

def _arg_names(args: "ast.arguments") -> "list[str]":
    names = [a.arg for a in args.posonlyargs + args.args + args.kwonlyargs]
    if args.vararg:
        names.append(args.vararg.arg)
    if args.kwarg:
        names.append(args.kwarg.arg)
    return names

def _resolve(name: "str", value, replacements: "dict", captured: "list"):
    """Decide how one free name ends up in the text."""
    if isinstance(value, Quoted):
        raise NestedQuote(name)
    canonical = _PRELUDE_BY_ID.get(id(value))
    if canonical is not None:
        if canonical != name:
            replacements[name] = canonical
        return
    if isinstance(value, types.ModuleType):
        text = f"__import__({value.__name__!r})"
        replacements[name] = text
        captured.append((name, text))
        return
    if not _capturable(value):
        raise UnquotableCapture(name, f"{type(value).__name__} is not a serializable constant")
    text = literal_source(value)
    replacements[name] = text
    captured.append((name, text))

def _splice(node: "ast.AST", lookup: "Callable[[str], tuple[bool, Any]]"):
    """Inline captures into a copy of node. Returns (canonical text, capture list)."""
    replacements: "dict[str, str]" = {}
    captured: "list[tuple[str, str]]" = []
    for name in free_names(node):
        if name in RUNTIME_NAMES:
            raise UnquotableCapture(name, "only available to runtime sources")
        found, value = lookup(name)
        if found:
            _resolve(name, value, replacements, captured)
        elif not hasattr(builtins, name) and name not in PRELUDE:
            raise UnquotableCapture(name, "unbound name")
    spliced = _Splice(replacements).visit(copy.deepcopy(node))
    return _canonical(spliced), tuple(captured)

def _canonical(node: "ast.AST") -> "str":
    """Single line, whitespace normalized."""
    return " ".join(ast.unparse(node).split())

def _quote_text(text: "str", captures: "dict") -> "Quoted":
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as e:
        raise StagingError(f"not an expression: {text!r} ({e.msg})") from None

    def lookup(name):
        if name in captures:
            return True, captures[name]
        return False, None

    source_text, captured = _splice(tree.body, lookup)
    value = load(source_text)
    if callable(value):
        return Quoted(eval=value, source_text=source_text, capture_list=captured)
    return Quoted(eval=lambda: load(source_text), source_text=source_text, capture_list=captured)

def _quote_function(fn: "types.FunctionType") -> "Quoted":
    if fn.__name__ != "<lambda>":
        raise StagingError(f"only lambdas can be quoted, got def {fn.__name__}; "
            "quote a string for anything larger")
    node = _find_lambda(fn)
    code = fn.__code__
    cells = dict(zip(code.co_freevars, fn.__closure__ or ()))

    def lookup(name):
        if name in cells:
            try:
                return True, cells[name].cell_contents
            except ValueError:
                raise UnquotableCapture(name, "closure variable is not assigned yet") from None
        if name in fn.__globals__:
            return True, fn.__globals__[name]
        return False, None

    node, defaults = _bind_defaults(node, fn)
    source_text, captured = _splice(node, lookup)
    captured = defaults + captured
    return Quoted(eval=fn, source_text=source_text, capture_list=captured)

def _bind_defaults(node: "ast.Lambda", fn: "types.FunctionType"):
    """
    Replace default expressions with the values the lambda was built with.
    Defaults were evaluated in the enclosing frame, so `lambda v, k=k: ...`
    carries k in __defaults__ rather than in a closure cell.
    """
    node = copy.deepcopy(node)
    captured: "list[tuple[str, str]]" = []

    def literal(name, value):
        replacements = {}
        _resolve(name, value, replacements, captured)
        text = replacements.get(name) or _PRELUDE_BY_ID.get(id(value), name)
        return ast.parse(text, mode="eval").body

    positional = node.args.posonlyargs + node.args.args
    values = fn.__defaults__ or ()
    params = positional[len(positional) - len(values):]
    node.args.defaults = [literal(a.arg, v) for a, v in zip(params, values)]
    kw_values = fn.__kwdefaults__ or {}
    node.args.kw_defaults = [None if d is None else literal(a.arg, kw_values[a.arg])
        for a, d in zip(node.args.kwonlyargs, node.args.kw_defaults)]
    return node, tuple(captured)

@functools.lru_cache(maxsize=256)
def _parse_file(filename: "str", text: "str") -> "ast.Module":
    return ast.parse(text, filename)

def _find_lambda(fn: "types.FunctionType") -> "ast.Lambda":
    """Locate the lambda's syntax tree in its defining file."""
    code = fn.__code__
    lines = linecache.getlines(code.co_filename, fn.__globals__)
    if not lines:
        raise StagingError(f"source of lambda at {code.co_filename}:{code.co_firstlineno} "
            "is unavailable; quote a string instead")
    tree = _parse_file(code.co_filename, "".join(lines))

    candidates = [n for n in ast.walk(tree)
        if isinstance(n, ast.Lambda) and n.lineno == code.co_firstlineno]
    params = code.co_varnames[:code.co_argcount]
    candidates = [n for n in candidates
        if tuple(a.arg for a in n.args.posonlyargs + n.args.args) == params]
    if len(candidates) > 1:
        names = _code_names(code)
        candidates = [n for n in candidates if _node_names(n) == names] or candidates
    if not candidates:
        raise StagingError(f"cannot find lambda source at {code.co_filename}:{code.co_firstlineno}")
    if len({_canonical(n) for n in candidates}) > 1:
        raise StagingError(f"several lambdas on {code.co_filename}:{code.co_firstlineno} "
            "look alike; put each on its own line")
    return candidates[0]

def _code_names(code: "types.CodeType") -> "set[str]":
    names = set(code.co_freevars)
    stack = [code]
    while stack:
        c = stack.pop()
        names.update(c.co_names)
        stack.extend(k for k in c.co_consts if isinstance(k, types.CodeType))
    return names

def _node_names(node: "ast.Lambda") -> "set[str]":
    names = set(free_names(node))
    names.update(n.attr for n in ast.walk(node) if isinstance(n, ast.Attribute))
    return names
