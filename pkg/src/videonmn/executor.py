"""Tree-walking executor: assembles modules per program and records a Trace.

Evaluation is bottom-up over the type-checked tree. Every node gets one
trace entry carrying its output value and depth from the root; decoded
human-readable views are attached afterwards by the evaluation layer,
which owns the retrieval index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsl import TokenKind, ValueKind, infer_types, iter_nodes, path_str
from .encoders import span_repr
from .modules import Value


class ExecutionNaN(FloatingPointError):
    """A module produced a non-finite value during training."""


@dataclass
class TraceEntry:
    path: str
    module: str  # module name, or "video"/"text"/"switch" for leaves
    variant: str | None
    level: int  # depth from root
    kind: ValueKind
    operands: list[str]
    value: Value
    payload: str | None = None  # leaf payload (text span string / switch keyword)
    decoded: dict | None = None


@dataclass
class Trace:
    entries: list[TraceEntry] = field(default_factory=list)

    def __post_init__(self):
        self.by_path = {e.path: e for e in self.entries}

    def add(self, entry):
        self.entries.append(entry)
        self.by_path[entry.path] = entry

    def module_entries(self, name=None):
        out = [e for e in self.entries if e.variant is not None or e.module in _MODULES]
        if name is not None:
            out = [e for e in out if e.module == name]
        return out


_MODULES = {
    "And", "AttnVideo", "Choose", "Compare", "Equals", "Exists", "ExistsFrame", "Filter",
    "FilterFrame", "Localize", "Relate", "Superlative", "Temporal", "ToAction", "Xor", "XorFrame",
}


def execute_program(tree, enc, lib, ctx=None, types=None):
    """Run a span-bound, well-typed program; returns (root Value, Trace).

    enc: EncoderOutputs; lib: ModuleLibrary; ctx: {training, rng}.
    """
    ctx = ctx or {}
    training = ctx.get("training", False)
    if types is None:
        types = infer_types(tree)
    full_span = (0, enc.t_tok.data.shape[0])
    trace = Trace()

    def visit(node, path, level):
        tok = node.token
        if tok.kind is TokenKind.VIDEO:
            val = Value.video(enc.v)
        elif tok.kind is TokenKind.TEXT:
            val = Value.text(span_repr(enc.t_tok, tok.span or full_span))
        elif tok.kind is TokenKind.SWITCH:
            val = Value.switch(tok.payload)
        else:
            ops = [visit(c, path + (i,), level + 1) for i, c in enumerate(node.children)]
            sig = types[path][1]
            val = lib.impl(tok.payload, sig.variant)(ops, ctx)
            if training and val.tensor is not None and not np.isfinite(val.tensor.data).all():
                raise ExecutionNaN(f"non-finite output at {path_str(path)} ({tok.payload})")
        trace.add(
            TraceEntry(
                path=path_str(path),
                module=tok.payload if tok.kind is TokenKind.MODULE else tok.kind.value,
                variant=types[path][1].variant if tok.kind is TokenKind.MODULE else None,
                level=level,
                kind=types[path][0],
                operands=[types[path + (i,)][0].value for i in range(len(node.children))],
                value=val,
                payload=tok.payload if tok.kind is not TokenKind.MODULE else None,
            )
        )
        return val

    root = visit(tree, (), 0)
    return root, trace


def node_order(tree):
    """Program-order (preorder) list of module-node path strings."""
    return [path_str(p) for p, n in iter_nodes(tree) if n.token.kind is TokenKind.MODULE]


def trace_to_json(trace, round_decimals=4):
    """JSON-friendly audit view; attention arrays are rounded."""
    out = []
    for e in trace.entries:
        item = {
            "path": e.path,
            "module": e.module,
            "level": e.level,
            "kind": e.kind.value,
        }
        if e.variant:
            item["variant"] = e.variant
        if e.payload is not None and e.module in ("text", "switch"):
            item["payload"] = e.payload
        if e.kind in (ValueKind.ATTN, ValueKind.PAIR):
            a = e.value.attn if e.kind is ValueKind.PAIR else e.value.tensor
            item["attention"] = [round(float(x), round_decimals) for x in a.data]
        if e.decoded:
            item["decoded"] = e.decoded
        out.append(item)
    return out


def render_trace_text(trace):
    """Plain-text tree rendering of a trace (depth-indented)."""
    lines = []
    for e in sorted(trace.entries, key=lambda e: e.path):
        label = e.module if e.payload is None else f"{e.module}:{e.payload!r}"
        extra = ""
        if e.decoded:
            extra = "  -> " + ", ".join(f"{k}={v}" for k, v in e.decoded.items())
        lines.append("  " * e.level + f"[{e.path}] {label} ({e.kind.value}){extra}")
    return "\n".join(lines)
