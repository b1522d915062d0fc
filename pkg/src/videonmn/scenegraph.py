"""Scene graphs, the symbolic program interpreter, and program conversion.

An sg_program is a nested expression (JSON lists: [fn, arg, ...]) executed
bottom-up on a scene graph. Node values are frame masks, item sets,
booleans, or single items; the root value rendered as text is the gold
answer. `convert_sg_to_nmn` rewrites the expression into a module program
via a fixed table and returns the sg-node <-> nmn-node correspondence used
to derive intermediate supervision targets.

Conventions fixed here (the spec of record for this artifact):
  * `after` means frames >= anchor end; `before` means frames < anchor
    start; `while` is the anchor's support hull; `between` is the gap
    from the earlier anchor's end to the later anchor's start.
  * an empty anchor yields an all-zero mask rather than an error;
  * action items are identified by their verb (verbs are unique per
    video in generated data), so answer/retrieval candidates are the
    object and verb vocabularies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .dsl import ProgramTree, Token, TokenKind

SG_FUNCTIONS = (
    "localize_action",
    "temporal_select",
    "filter_items",
    "filter_by_verb",
    "exists_item",
    "equals_items",
    "choose",
    "to_action",
    "superlative",
    "relate",
    "and",
    "xor",
    "xor_frames",
    "exists_frame",
)

YES, NO = "yes", "no"


class OracleError(ValueError):
    pass


class UnknownItem(OracleError):
    pass


class UnmappableFunction(OracleError):
    pass


@dataclass
class ObjectTrack:
    name: str
    spans: list[tuple[int, int]]


@dataclass
class ActionSpan:
    verb: str
    object: str
    span: tuple[int, int]

    @property
    def phrase(self):
        return f"{self.verb} {self.object}"


@dataclass
class SceneGraph:
    num_frames: int
    objects: list[ObjectTrack] = field(default_factory=list)
    actions: list[ActionSpan] = field(default_factory=list)
    relations: list[ActionSpan] = field(default_factory=list)

    def validate(self):
        T = self.num_frames
        for o in self.objects:
            for s, e in o.spans:
                if not (0 <= s < e <= T):
                    raise OracleError(f"bad span [{s},{e}) for object {o.name}")
        for a in list(self.actions) + list(self.relations):
            s, e = a.span
            if not (0 <= s < e <= T):
                raise OracleError(f"bad span [{s},{e}) for {a.phrase}")

    # -- mask helpers -----------------------------------------------------

    def zeros(self):
        return np.zeros(self.num_frames, dtype=bool)

    def object_mask(self, name):
        m = self.zeros()
        for o in self.objects:
            if o.name == name:
                for s, e in o.spans:
                    m[s:e] = True
        return m

    def verb_mask(self, verb):
        m = self.zeros()
        for a in self.actions:
            if a.verb == verb:
                m[a.span[0] : a.span[1]] = True
        return m

    def pair_mask(self, verb, obj):
        """Frames where the action or relation (verb, obj) is active."""
        m = self.zeros()
        for a in list(self.actions) + list(self.relations):
            if a.verb == verb and a.object == obj:
                m[a.span[0] : a.span[1]] = True
        return m

    def to_dict(self):
        return {
            "num_frames": self.num_frames,
            "objects": [{"name": o.name, "spans": [list(s) for s in o.spans]} for o in self.objects],
            "actions": [{"verb": a.verb, "object": a.object, "span": list(a.span)} for a in self.actions],
            "relations": [
                {"verb": a.verb, "object": a.object, "span": list(a.span)} for a in self.relations
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            num_frames=int(d["num_frames"]),
            objects=[ObjectTrack(o["name"], [tuple(s) for s in o["spans"]]) for o in d["objects"]],
            actions=[ActionSpan(a["verb"], a["object"], tuple(a["span"])) for a in d["actions"]],
            relations=[ActionSpan(a["verb"], a["object"], tuple(a["span"])) for a in d["relations"]],
        )


@dataclass
class OracleResult:
    answer: str
    node_values: dict[str, object]  # sg node path -> mask | frozenset | bool | item


def _hull(mask):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return None
    return int(idx[0]), int(idx[-1]) + 1


def _intervals(mask):
    """Maximal [start, end) runs of True."""
    out = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(mask)))
    return out


def _as_set(value):
    if isinstance(value, frozenset):
        return value
    if isinstance(value, str):
        return frozenset([value])
    raise OracleError(f"cannot view {type(value).__name__} as an item set")


def render_answer(value):
    if isinstance(value, bool):
        return YES if value else NO
    if isinstance(value, str):
        return value
    if isinstance(value, frozenset):
        if len(value) != 1:
            raise OracleError(f"open answer requires a singleton set, got {sorted(value)}")
        return next(iter(value))
    raise OracleError(f"cannot render {type(value).__name__} as an answer")


def exec_sg_program(sg, prog, vocab=None):
    """Deterministic bottom-up evaluation; records every function node's value."""
    node_values = {}

    def check_item(item):
        if vocab is not None and item not in vocab:
            raise UnknownItem(f"item {item!r} not in the closed vocabulary")
        return item

    def ev(expr, path):
        if isinstance(expr, str):
            return expr
        fn, args = expr[0], expr[1:]
        if fn == "localize_action":
            verb, _, obj = args[0].partition(" ")
            value = sg.pair_mask(verb, obj)
        elif fn == "temporal_select":
            sw = args[0]
            anchors = [ev(a, path + (i + 1,)) for i, a in enumerate(args[1:])]
            value = _temporal_select(sg, sw, anchors)
        elif fn == "filter_items":
            sw = args[0]
            scope = _scope_mask(sg, args[1], ev, path, 2)
            value = _filter_items(sg, sw, scope)
        elif fn == "filter_by_verb":
            verb = args[0]
            scope = _scope_mask(sg, args[1], ev, path, 2)
            value = frozenset(
                a.object
                for a in list(sg.actions) + list(sg.relations)
                if a.verb == verb and scope[a.span[0] : a.span[1]].any()
            )
        elif fn == "exists_item":
            item = ev(args[0], path + (1,))
            members = ev(args[1], path + (2,))
            value = check_item(item) in _as_set(members)
        elif fn == "equals_items":
            left = ev(args[0], path + (1,))
            right = ev(args[1], path + (2,))
            value = _as_set(left) == _as_set(right)
        elif fn == "choose":
            if len(args) == 3:
                query = _as_set(ev(args[0], path + (1,)))
                k1, k2 = check_item(args[1]), check_item(args[2])
                value = k1 if k1 in query else k2
            else:
                first = ev(args[0], path + (1,))
                ev(args[1], path + (2,))
                value = args[0][1] if first else args[1][1]
        elif fn == "to_action":
            check_item(args[1])
            value = check_item(args[0])  # actions are identified by verb
        elif fn == "superlative":
            value = _superlative(sg, args[0], args[1], args[2])
        elif fn == "relate":
            mask = ev(args[1], path + (2,))
            runs = _intervals(mask)
            value = sg.zeros()
            if runs:
                s, e = runs[0] if args[0] == "fwd" else runs[-1]
                value[s:e] = True
        elif fn == "and":
            left = bool(ev(args[0], path + (1,)))
            right = bool(ev(args[1], path + (2,)))  # no short-circuit: both values recorded
            value = left and right
        elif fn == "xor":
            value = bool(ev(args[0], path + (1,))) != bool(ev(args[1], path + (2,)))
        elif fn == "xor_frames":
            value = ev(args[0], path + (1,)) ^ ev(args[1], path + (2,))
        elif fn == "exists_frame":
            value = _exists_frame(sg, check_item(args[0]), args[1])
        else:
            raise UnmappableFunction(f"unknown sg function {fn!r}")
        node_values[dsl.path_str(path)] = value
        return value

    root = ev(prog, ())
    return OracleResult(answer=render_answer(root), node_values=node_values)


def _scope_mask(sg, src, ev, path, arg_index):
    if src == "video":
        return np.ones(sg.num_frames, dtype=bool)
    return ev(src, path + (arg_index,))


def _temporal_select(sg, sw, anchors):
    zeros = sg.zeros()
    hulls = [_hull(a) for a in anchors]
    if any(h is None for h in hulls):
        return zeros
    m = sg.zeros()
    if sw == "between":
        lo = min(h[1] for h in hulls)
        hi = max(h[0] for h in hulls)
        if lo < hi:
            m[lo:hi] = True
        return m
    start, end = hulls[0]
    if sw == "before":
        m[:start] = True
    elif sw == "after":
        m[end:] = True
    elif sw == "while":
        m[start:end] = True
    else:
        raise OracleError(f"unknown temporal switch {sw!r}")
    return m


def _filter_items(sg, sw, scope):
    if sw == "obj":
        return frozenset(
            o.name for o in sg.objects if any(scope[s:e].any() for s, e in o.spans)
        )
    if sw == "act":
        return frozenset(a.verb for a in sg.actions if scope[a.span[0] : a.span[1]].any())
    raise OracleError(f"unknown filter switch {sw!r}")


def _superlative(sg, sw, phrase1, phrase2):
    def find(phrase):
        verb, _, obj = phrase.partition(" ")
        for a in sg.actions:
            if a.verb == verb and a.object == obj:
                return a
        raise UnknownItem(f"action {phrase!r} not in scene graph")

    a1, a2 = find(phrase1), find(phrase2)
    len1 = a1.span[1] - a1.span[0]
    len2 = a2.span[1] - a2.span[0]
    if sw == "max":
        winner = a1 if len1 >= len2 else a2
    else:
        winner = a1 if len1 <= len2 else a2
    return winner.verb


def _exists_frame(sg, item, src):
    if src == "obj":
        return sg.object_mask(item)
    if src == "act":
        return sg.verb_mask(item)
    return sg.pair_mask(src, item)  # src is a verb/relation word


# -- sg -> nmn conversion -----------------------------------------------------

_MASK_FUNCTIONS = ("localize_action", "relate", "xor_frames", "exists_frame")


def convert_sg_to_nmn(prog):
    """Structure-preserving rewrite; returns (ProgramTree, correspondence).

    correspondence: sg node path -> (nmn node path, module name). Mapped
    nodes pair one-to-one; helper nodes the rewrite inserts (AttnVideo,
    FilterFrame, the anchor-merging XorFrame) have no sg counterpart.
    """
    pairs = []

    def video_leaf():
        return ProgramTree(Token(TokenKind.VIDEO, "video"))

    def text(payload):
        return ProgramTree(Token(TokenKind.TEXT, payload))

    def switch(kw):
        return ProgramTree(Token(TokenKind.SWITCH, kw))

    def module(name, children):
        return ProgramTree(Token(TokenKind.MODULE, name), children)

    def conv_source(src, path, arg_index):
        """Lift an sg scope argument to a VideoFeat operand."""
        if src == "video":
            return video_leaf()
        node = conv(src, path + (arg_index,))
        if src[0] == "temporal_select":
            return node  # pair projects to its video component
        return module("AttnVideo", [video_leaf(), node])

    def conv_text(arg, path, arg_index):
        if isinstance(arg, str):
            return text(arg)
        return conv(arg, path + (arg_index,))

    def conv(expr, path):
        fn, args = expr[0], expr[1:]
        if fn == "localize_action":
            node = module("Localize", [video_leaf(), text(args[0])])
        elif fn == "temporal_select":
            anchors = [conv(a, path + (i + 1,)) for i, a in enumerate(args[1:])]
            merged = anchors[0] if len(anchors) == 1 else module("XorFrame", anchors)
            node = module("Temporal", [video_leaf(), merged, switch(args[0])])
        elif fn == "filter_items":
            node = module("Filter", [conv_source(args[1], path, 2), switch(args[0])])
        elif fn == "filter_by_verb":
            node = module("Filter", [conv_source(args[1], path, 2), text(args[0])])
        elif fn == "exists_item":
            node = module("Exists", [conv_text(args[1], path, 2), conv_text(args[0], path, 1)])
        elif fn == "equals_items":
            node = module("Equals", [conv_text(args[0], path, 1), conv_text(args[1], path, 2)])
        elif fn == "choose" and len(args) == 3:
            node = module("Choose", [conv_text(args[0], path, 1), text(args[1]), text(args[2])])
        elif fn == "choose":
            node = module("Compare", [conv(args[0], path + (1,)), conv(args[1], path + (2,))])
        elif fn == "to_action":
            node = module("ToAction", [text(args[0]), text(args[1])])
        elif fn == "superlative":
            node = module("Superlative", [text(args[1]), text(args[2]), video_leaf(), switch(args[0])])
        elif fn == "relate":
            node = module("Relate", [conv(args[1], path + (2,)), switch(args[0])])
        elif fn == "and":
            node = module("And", [conv(args[0], path + (1,)), conv(args[1], path + (2,))])
        elif fn == "xor":
            node = module("Xor", [conv(args[0], path + (1,)), conv(args[1], path + (2,))])
        elif fn == "xor_frames":
            node = module("XorFrame", [conv(args[0], path + (1,)), conv(args[1], path + (2,))])
        elif fn == "exists_frame":
            inner = switch(args[1]) if args[1] in ("obj", "act") else text(args[1])
            fframe = module("FilterFrame", [video_leaf(), inner])
            node = module("ExistsFrame", [fframe, text(args[0])])
        else:
            raise UnmappableFunction(f"no rewrite rule for {fn!r}")
        pairs.append((dsl.path_str(path), node, expr[0]))
        return node

    tree = conv(prog, ())
    by_id = {id(node): dsl.path_str(p) for p, node in dsl.iter_nodes(tree)}
    correspondence = {sg_path: (by_id[id(node)], node.token.payload) for sg_path, node, _fn in pairs}
    return tree, correspondence


_TARGET_FAMILY = {
    "Filter": "set",
    "ToAction": "set",
    "Superlative": "set",
    "ExistsFrame": "attention",
    "Localize": "attention",
    "Temporal": "attention",
    "Exists": "binary",
    "Equals": "binary",
}


def derive_intermediate_targets(result, correspondence):
    """Per-node supervision targets, typed by module family; root excluded."""
    targets = {}
    for sg_path, (nmn_path, module_name) in correspondence.items():
        if nmn_path == "r":
            continue  # the root is already supervised by the answer
        family = _TARGET_FAMILY.get(module_name)
        if family is None:
            continue
        value = result.node_values[sg_path]
        if family == "set":
            items = _as_set(value)
            targets[nmn_path] = {"family": "set", "items": sorted(items)}
        elif family == "attention":
            targets[nmn_path] = {"family": "attention", "mask": [int(x) for x in value]}
        else:
            targets[nmn_path] = {"family": "binary", "label": int(bool(value))}
    return targets
