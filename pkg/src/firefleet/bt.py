"""Behavior-tree engine: node set, blackboard, task-status protocol and the
text tree format.

Tree files hold ``tree`` blocks; the first tree of the root file is the
mission root. A node is ``Name(arg=value, ...)`` optionally followed by a
``{ ... }`` block of children. Values are numbers, quoted strings,
``true``/``false``, lists ``[...]``, ``$param`` (a parameter of the enclosing
tree) or ``@key`` (a blackboard key read at tick time). Calling another
tree by name inlines it as a sub-tree with its own arguments::

    include "common.bt"

    tree Main {
      Sequence {
        TakeOff(height=3.0)
        GotoAndLand(x=-14.0, y=-10.0)
      }
    }

    tree GotoAndLand(x, y) {
      Sequence { GoToGoal(x=$x, y=$y, z=0.0)  Land() }
    }
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union


class NodeStatus(enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


class TaskStatus(enum.Enum):
    ACTIVE = "ACTIVE"
    SUCCEEDED = "SUCCEEDED"
    CANCELED = "CANCELED"
    ABORTED = "ABORTED"
    PREEMPTED = "PREEMPTED"

    @property
    def terminal(self) -> bool:
        return self is not TaskStatus.ACTIVE


def map_task_status(ts: TaskStatus) -> NodeStatus:
    if ts is TaskStatus.ACTIVE:
        return NodeStatus.RUNNING
    if ts is TaskStatus.SUCCEEDED:
        return NodeStatus.SUCCESS
    return NodeStatus.FAILURE


class BlackboardError(KeyError):
    pass


class Blackboard:
    """Typed key/value store; reading an unset key is an error."""

    TYPES = (bool, int, float, str, tuple)

    def __init__(self, log: Optional[Callable[[dict], None]] = None):
        self._data: dict[str, Any] = {}
        self._log = log

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def get(self, key: str) -> Any:
        if key not in self._data:
            raise BlackboardError(f"blackboard key {key!r} is not set")
        return self._data[key]

    def set(self, key: str, value: Any) -> None:
        if isinstance(value, list):
            value = tuple(value)
        if not isinstance(value, self.TYPES):
            raise TypeError(f"unsupported blackboard type {type(value).__name__}")
        old = self._data.get(key)
        if key in self._data and type(old) is not type(value) and not (
                isinstance(old, (int, float)) and isinstance(value, (int, float))
                and not isinstance(old, bool) and not isinstance(value, bool)):
            raise TypeError(f"blackboard key {key!r} changes type")
        self._data[key] = value
        if self._log is not None:
            self._log({"type": "bb_write", "key": key, "value": value})

    def snapshot(self) -> dict:
        return dict(self._data)


@dataclass(frozen=True)
class Ref:
    """Blackboard reference in a node argument."""
    key: str


def resolve(value: Any, bb: Blackboard) -> Any:
    if isinstance(value, Ref):
        return bb.get(value.key)
    if isinstance(value, (list, tuple)):
        return [resolve(v, bb) for v in value]
    return value


# -- task runtime protocol -----------------------------------------------------------------

class TaskRuntime:
    """What action leaves talk to. ``start`` returns a handle."""

    def start(self, task: str, params: dict, bb: Blackboard) -> Any:  # pragma: no cover - interface
        raise NotImplementedError

    def poll(self, handle: Any) -> TaskStatus:  # pragma: no cover - interface
        raise NotImplementedError

    def preempt(self, handle: Any) -> TaskStatus:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass
class TickContext:
    bb: Blackboard
    runtime: TaskRuntime
    events: list = field(default_factory=list)
    time: float = 0.0

    def log(self, ev: dict) -> None:
        out = {"t": round(self.time, 6)}
        out.update(ev)
        self.events.append(out)


# -- nodes ----------------------------------------------------------------------------------

class Node:
    kind = "Node"
    leaf = False

    def __init__(self, name: Optional[str] = None, children: Optional[list["Node"]] = None,
                 params: Optional[dict] = None):
        self.name = name or self.kind
        self.children = list(children or [])
        self.params = dict(params or {})
        self.status: Optional[NodeStatus] = None
        if self.leaf and self.children:
            raise ValueError(f"{self.kind} is a leaf and cannot have children")

    def tick(self, ctx: TickContext) -> NodeStatus:
        st = self._tick(ctx)
        if st is not self.status:
            ctx.log({"type": "node", "node": self.name, "status": st.value})
        self.status = st
        return st

    def _tick(self, ctx: TickContext) -> NodeStatus:  # pragma: no cover - abstract
        raise NotImplementedError

    def halt(self, ctx: TickContext) -> None:
        for c in self.children:
            c.halt(ctx)
        self.reset()

    def reset(self) -> None:
        self.status = None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def describe(self, depth: int = 0) -> str:
        lines = ["  " * depth + self.name]
        for c in self.children:
            lines.append(c.describe(depth + 1))
        return "\n".join(lines)


class Sequence(Node):
    """Children in order; resumes at the running child on the next tick."""
    kind = "Sequence"

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.index = 0

    def _tick(self, ctx):
        while self.index < len(self.children):
            st = self.children[self.index].tick(ctx)
            if st is NodeStatus.RUNNING:
                return st
            if st is NodeStatus.FAILURE:
                self.index = 0
                return st
            self.index += 1
        self.index = 0
        return NodeStatus.SUCCESS

    def reset(self):
        super().reset()
        self.index = 0


class Parallel(Node):
    """Ticks every unfinished child; succeeds once ``threshold`` children
    have succeeded, preempting the rest."""
    kind = "Parallel"

    def __init__(self, *a, threshold: int = 1, **kw):
        super().__init__(*a, **kw)
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        self.threshold = threshold
        self.results: dict[int, NodeStatus] = {}

    def _tick(self, ctx):
        for i, c in enumerate(self.children):
            if i in self.results:
                continue
            st = c.tick(ctx)
            if st is not NodeStatus.RUNNING:
                self.results[i] = st
            ok = sum(s is NodeStatus.SUCCESS for s in self.results.values())
            if ok >= self.threshold:
                self._finish(ctx)
                return NodeStatus.SUCCESS
        ok = sum(s is NodeStatus.SUCCESS for s in self.results.values())
        bad = sum(s is NodeStatus.FAILURE for s in self.results.values())
        if ok >= self.threshold:
            self._finish(ctx)
            return NodeStatus.SUCCESS
        if bad > len(self.children) - self.threshold:
            self._finish(ctx)
            return NodeStatus.FAILURE
        return NodeStatus.RUNNING

    def _finish(self, ctx):
        for i, c in enumerate(self.children):
            if i not in self.results and c.status is NodeStatus.RUNNING:
                ctx.log({"type": "preempt", "node": c.name, "by": self.name})
                c.halt(ctx)
        self.results = {}

    def reset(self):
        super().reset()
        self.results = {}


class ForceSuccess(Node):
    kind = "ForceSuccess"

    def _tick(self, ctx):
        if len(self.children) != 1:
            raise ValueError("ForceSuccess needs exactly one child")
        st = self.children[0].tick(ctx)
        return NodeStatus.RUNNING if st is NodeStatus.RUNNING else NodeStatus.SUCCESS


class SubTree(Node):
    """An inlined tree call; transparent at tick time."""
    kind = "SubTree"

    def _tick(self, ctx):
        return self.children[0].tick(ctx)


class CheckBool(Node):
    kind = "CheckBool"
    leaf = True

    def _tick(self, ctx):
        try:
            v = ctx.bb.get(self.params["key"])
        except BlackboardError as e:
            ctx.log({"type": "tree_error", "node": self.name, "error": str(e.args[0])})
            return NodeStatus.FAILURE
        return NodeStatus.SUCCESS if v is True else NodeStatus.FAILURE


MATH_OPS = {"add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b}


class MathOperationFloat(Node):
    """``out = a <op> b``; ``a``/``b`` are literals or blackboard refs."""
    kind = "MathOperationFloat"
    leaf = True

    def _tick(self, ctx):
        try:
            a = float(resolve(self.params["a"], ctx.bb))
            b = float(resolve(self.params["b"], ctx.bb))
        except BlackboardError as e:
            ctx.log({"type": "tree_error", "node": self.name, "error": str(e.args[0])})
            return NodeStatus.FAILURE
        ctx.bb.set(self.params["out"], float(MATH_OPS[self.params["op"]](a, b)))
        return NodeStatus.SUCCESS


class ActionLeaf(Node):
    """Runs one task through the runtime and maps its status."""
    kind = "Action"
    leaf = True

    def __init__(self, task: str, *a, **kw):
        super().__init__(*a, **kw)
        self.task = task
        self.handle = None
        self.task_status: Optional[TaskStatus] = None

    def _tick(self, ctx):
        if self.handle is None:
            try:
                params = {k: resolve(v, ctx.bb) for k, v in self.params.items()}
            except BlackboardError as e:
                ctx.log({"type": "tree_error", "node": self.name, "error": str(e.args[0])})
                return NodeStatus.FAILURE
            self.handle = ctx.runtime.start(self.task, params, ctx.bb)
            ctx.log({"type": "task", "node": self.name, "task": self.task, "status": "START"})
        ts = ctx.runtime.poll(self.handle)
        self._record(ctx, ts)
        if ts.terminal:
            self.handle = None
        return map_task_status(ts)

    def _record(self, ctx, ts: TaskStatus) -> None:
        if ts is not self.task_status:
            ctx.log({"type": "task", "node": self.name, "task": self.task, "status": ts.value})
        self.task_status = None if ts.terminal else ts

    def halt(self, ctx):
        if self.handle is not None:
            ts = ctx.runtime.preempt(self.handle)
            self._record(ctx, ts)
            self.handle = None
        self.reset()


TASKS = {
    "TakeOff": {"height": float},
    "Land": {},
    "GoToGoal": {"x": float, "y": float, "z": float, "yaw": float, "waypoints": list,
                 "tolerance": float},
    "FireDetection3D": {"duration": float, "mount": str},
    "FireExtinguish": {"variant": str, "x": float, "y": float, "z": float},
}
REQUIRED = {"TakeOff": ("height",), "FireDetection3D": ("duration",)}


class BehaviorTree:
    def __init__(self, root: Node, source: str = "<memory>"):
        self.root = root
        self.source = source

    def tick(self, ctx: TickContext) -> NodeStatus:
        return self.root.tick(ctx)

    def halt(self, ctx: TickContext) -> None:
        self.root.halt(ctx)

    def active_leaves(self) -> list[ActionLeaf]:
        return [n for n in self.root.walk() if isinstance(n, ActionLeaf) and n.handle is not None]


# -- parser ----------------------------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, source: str, line: int, col: int, msg: str):
        super().__init__(f"{source}:{line}:{col}: {msg}")
        self.source, self.line, self.col, self.msg = source, line, col, msg


TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<num>[-+]?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?)
  | (?P<str>"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<param>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ref>@[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}()\[\],=])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str, source: str) -> list[Tok]:
    toks, pos, line, col = [], 0, 1, 1
    while pos < len(text):
        m = TOKEN.match(text, pos)
        if m is None:
            raise ParseError(source, line, col, f"unexpected character {text[pos]!r}")
        kind, s = m.lastgroup, m.group()
        if kind != "ws":
            toks.append(Tok(kind, s, line, col))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        pos = m.end()
    toks.append(Tok("eof", "", line, col))
    return toks


@dataclass
class RawNode:
    name: str
    args: dict
    children: list
    line: int
    col: int
    source: str


@dataclass
class RawTree:
    name: str
    params: list
    body: RawNode
    source: str
    line: int


class _Parser:
    def __init__(self, toks: list[Tok], source: str):
        self.toks, self.i, self.source = toks, 0, source

    def peek(self) -> Tok:
        return self.toks[self.i]

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, tok: Tok, msg: str) -> ParseError:
        return ParseError(self.source, tok.line, tok.col, msg)

    def expect(self, kind: str, text: Optional[str] = None) -> Tok:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise self.error(t, f"expected {want!r}, found {t.text or 'end of file'!r}")
        return t

    def file(self) -> tuple[list[tuple[str, Tok]], list[RawTree]]:
        includes, trees = [], []
        while self.peek().kind != "eof":
            t = self.expect("name")
            if t.text == "include":
                s = self.expect("str")
                includes.append((s.text[1:-1], s))
            elif t.text == "tree":
                trees.append(self.tree(t))
            else:
                raise self.error(t, f"expected 'tree' or 'include', found {t.text!r}")
        return includes, trees

    def tree(self, kw: Tok) -> RawTree:
        name = self.expect("name")
        params = []
        if self.peek().text == "(":
            self.next()
            while self.peek().text != ")":
                params.append(self.expect("name").text)
                if self.peek().text == ",":
                    self.next()
            self.expect("punct", ")")
        self.expect("punct", "{")
        body = self.node()
        if self.peek().kind == "eof":
            raise self.error(self.peek(), f"unterminated tree {name.text!r}")
        if self.peek().text != "}":
            raise self.error(self.peek(), "a tree has exactly one root node")
        self.expect("punct", "}")
        return RawTree(name.text, params, body, self.source, kw.line)

    def node(self) -> RawNode:
        t = self.expect("name")
        args = {}
        if self.peek().text == "(":
            self.next()
            while self.peek().text != ")":
                k = self.expect("name")
                self.expect("punct", "=")
                if k.text in args:
                    raise self.error(k, f"duplicate argument {k.text!r}")
                args[k.text] = (self.value(), k)
                if self.peek().text == ",":
                    self.next()
                elif self.peek().text != ")":
                    raise self.error(self.peek(), "expected ',' or ')'")
            self.expect("punct", ")")
        children = []
        if self.peek().text == "{":
            self.next()
            while self.peek().text != "}":
                if self.peek().kind == "eof":
                    raise self.error(self.peek(), "unterminated block")
                children.append(self.node())
            self.expect("punct", "}")
        return RawNode(t.text, args, children, t.line, t.col, self.source)

    def value(self):
        t = self.next()
        if t.kind == "num":
            return float(t.text) if any(c in t.text for c in ".eE") else int(t.text)
        if t.kind == "str":
            return t.text[1:-1]
        if t.kind == "name" and t.text in ("true", "false"):
            return t.text == "true"
        if t.kind == "param":
            return ("$", t.text[1:], t)
        if t.kind == "ref":
            return Ref(t.text[1:])
        if t.text == "[":
            out = []
            while self.peek().text != "]":
                out.append(self.value())
                if self.peek().text == ",":
                    self.next()
            self.expect("punct", "]")
            return out
        raise self.error(t, f"unexpected value {t.text!r}")


BUILTIN = {"Sequence", "Parallel", "ForceSuccess", "CheckBool", "MathOperationFloat"} | set(TASKS)


class TreeLibrary:
    """All trees reachable from a root file through includes."""

    def __init__(self):
        self.trees: dict[str, RawTree] = {}
        self.root_name: Optional[str] = None

    def load(self, path: Union[str, Path], _stack: tuple = ()) -> "TreeLibrary":
        path = Path(path).resolve()
        if path in _stack:
            chain = " -> ".join(p.name for p in (*_stack, path))
            raise ParseError(str(path), 1, 1, f"cyclic include: {chain}")
        try:
            text = path.read_text()
        except OSError as e:
            raise ParseError(str(path), 1, 1, f"cannot read tree file: {e.strerror}") from None
        self.add_text(text, str(path), path.parent, (*_stack, path))
        return self

    def add_text(self, text: str, source: str = "<string>", base: Optional[Path] = None,
                 _stack: tuple = ()) -> "TreeLibrary":
        includes, trees = _Parser(tokenize(text, source), source).file()
        if self.root_name is None and trees:
            self.root_name = trees[0].name
        for rel, tok in includes:
            target = (base or Path.cwd()) / rel
            if not target.exists():
                raise ParseError(source, tok.line, tok.col, f"include not found: {rel}")
            self.load(target, _stack)
        for t in trees:
            if t.name in BUILTIN:
                raise ParseError(source, t.line, 1, f"tree name {t.name!r} shadows a built-in node")
            if t.name in self.trees:
                raise ParseError(source, t.line, 1, f"tree {t.name!r} defined twice")
            self.trees[t.name] = t
        return self

    def build(self, name: Optional[str] = None) -> BehaviorTree:
        name = name or self.root_name
        if name not in self.trees:
            raise ValueError(f"no tree named {name!r}")
        t = self.trees[name]
        return BehaviorTree(self._build(t.body, {}, (name,)), t.source)

    def _subst(self, v, env: dict, raw: RawNode):
        if isinstance(v, tuple) and len(v) == 3 and v[0] == "$":
            if v[1] not in env:
                raise ParseError(raw.source, v[2].line, v[2].col, f"unknown tree parameter ${v[1]}")
            return env[v[1]]
        if isinstance(v, list):
            return [self._subst(x, env, raw) for x in v]
        return v

    def _build(self, raw: RawNode, env: dict, stack: tuple) -> Node:
        def err(msg, tok=None):
            line, col = (tok.line, tok.col) if tok is not None else (raw.line, raw.col)
            return ParseError(raw.source, line, col, msg)

        args = {k: self._subst(v, env, raw) for k, (v, _) in raw.args.items()}
        toks = {k: tok for k, (_, tok) in raw.args.items()}
        kids = lambda: [self._build(c, env, stack) for c in raw.children]  # noqa: E731
        n = raw.name
        if n in self.trees:
            t = self.trees[n]
            if n in stack:
                raise err(f"recursive tree reference: {' -> '.join((*stack, n))}")
            if raw.children:
                raise err(f"tree call {n} cannot have children")
            unknown = set(args) - set(t.params)
            if unknown:
                raise err(f"unknown parameter {sorted(unknown)[0]!r} for tree {n}", toks[sorted(unknown)[0]])
            missing = [p for p in t.params if p not in args]
            if missing:
                raise err(f"missing parameter {missing[0]!r} for tree {n}")
            body = self._build(t.body, args, (*stack, n))
            return SubTree(n, [body])
        if n == "Sequence":
            self._no_args(raw, args, err)
            return Sequence(n, kids())
        if n == "Parallel":
            thr = args.pop("threshold", 1)
            if args:
                raise err(f"unknown argument {sorted(args)[0]!r} for Parallel")
            if not isinstance(thr, int) or isinstance(thr, bool) or thr < 1:
                raise err("Parallel threshold must be a positive integer")
            children = kids()
            if thr > len(children):
                raise err("Parallel threshold exceeds child count")
            return Parallel(f"Parallel({thr})", children, threshold=thr)
        if n == "ForceSuccess":
            self._no_args(raw, args, err)
            children = kids()
            if len(children) != 1:
                raise err("ForceSuccess takes exactly one child")
            return ForceSuccess(n, children)
        if n in ("CheckBool", "MathOperationFloat") or n in TASKS:
            if raw.children:
                raise err(f"{n} is a leaf node and cannot have children")
        if n == "CheckBool":
            if set(args) != {"key"} or not isinstance(args["key"], str):
                raise err("CheckBool takes key=\"name\"")
            return CheckBool(f"CheckBool({args['key']})", params=args)
        if n == "MathOperationFloat":
            if set(args) != {"op", "a", "b", "out"}:
                raise err("MathOperationFloat takes op, a, b, out")
            if args["op"] not in MATH_OPS:
                raise err(f"unsupported operation {args['op']!r}", toks["op"])
            for k in ("a", "b"):
                if not isinstance(args[k], (int, float, Ref)) or isinstance(args[k], bool):
                    raise err(f"argument {k} must be a number or @key", toks[k])
            if not isinstance(args["out"], str) or not args["out"].isidentifier():
                raise err("out must be a key name", toks["out"])
            return MathOperationFloat(f"MathOperationFloat({args['out']})", params=args)
        if n in TASKS:
            spec = TASKS[n]
            for k, v in args.items():
                if k not in spec:
                    raise err(f"unknown argument {k!r} for {n}", toks[k])
                if isinstance(v, Ref):
                    continue
                want = spec[k]
                ok = (isinstance(v, list) if want is list else
                      isinstance(v, str) if want is str else
                      isinstance(v, (int, float)) and not isinstance(v, bool))
                if not ok:
                    raise err(f"argument {k} of {n} must be {want.__name__}", toks[k])
            for k in REQUIRED.get(n, ()):
                if k not in args:
                    raise err(f"{n} requires {k}")
            return ActionLeaf(n, n, params={k: (float(v) if isinstance(v, int) else v)
                                            for k, v in args.items()})
        raise err(f"unknown node type {n!r}")

    @staticmethod
    def _no_args(raw, args, err):
        if args:
            raise err(f"{raw.name} takes no arguments")


def parse_tree(path: Union[str, Path], name: Optional[str] = None) -> BehaviorTree:
    return TreeLibrary().load(path).build(name)


def parse_tree_text(text: str, name: Optional[str] = None, base: Optional[Path] = None) -> BehaviorTree:
    return TreeLibrary().add_text(text, "<string>", base).build(name)
