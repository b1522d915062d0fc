"""Program token language: parsing, serialization, and static type checking.

A program is a whitespace-separated RPN token sequence (text operands are
double-quoted, e.g. `video "cooking" Localize`). Tokens come in four
kinds: module names, the `video` literal, quoted text spans, and switch
keywords. `rpn_to_tree` resolves the sequence into a typed tree whose
children appear in push order; `type_check` assigns a value kind to every
node bottom-up against the module signature table.

Temporal returns a (video, attention) pair; a pair operand satisfies
either a video-feature slot or an attention slot via component
projection, which is what lets downstream modules consume the reweighted
video it produces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum

__all__ = [
    "ValueKind",
    "TokenKind",
    "Token",
    "ProgramTree",
    "ProgramError",
    "StackUnderflow",
    "DanglingOperands",
    "UnknownToken",
    "TypeCheckError",
    "ArityMismatch",
    "KindMismatch",
    "NonAnswerableRoot",
    "MODULE_NAMES",
    "SWITCH_KEYWORDS",
    "SIGNATURES",
    "parse_token_text",
    "tokens_to_text",
    "rpn_to_tree",
    "tree_to_rpn",
    "parse_program",
    "program_to_text",
    "type_check",
    "infer_types",
    "path_str",
    "bind_text_spans",
    "random_program",
    "iter_nodes",
    "trees_equal",
]


class ValueKind(Enum):
    VIDEO = "video"  # T x H
    TEXT = "text"  # H
    ATTN = "attn"  # T, entries in [0, 1]
    SWITCH = "switch"
    PAIR = "pair"  # (video, attn) product, produced by Temporal

    def __repr__(self):
        return f"ValueKind.{self.name}"


class TokenKind(Enum):
    MODULE = "module"
    VIDEO = "video"
    TEXT = "text"
    SWITCH = "switch"


SWITCH_KEYWORDS = ("obj", "act", "fwd", "bkwd", "max", "min", "before", "after", "while", "between")


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    payload: str
    span: tuple[int, int] | None = None  # [start, end) word span, set by bind_text_spans

    def __str__(self):
        if self.kind is TokenKind.TEXT:
            return '"' + self.payload.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return self.payload


@dataclass(frozen=True)
class Signature:
    name: str
    params: tuple[ValueKind, ...]
    returns: ValueKind
    switches: tuple[str, ...] = ()  # allowed keywords for the SWITCH slot, if any
    variant: str | None = None  # disambiguates Filter/FilterFrame bracket forms


V, T, A, S = ValueKind.VIDEO, ValueKind.TEXT, ValueKind.ATTN, ValueKind.SWITCH

# Children are listed in program push order. Modules whose two bracket
# variants share a name (Filter, FilterFrame) are disambiguated by the
# kind of their second operand, not by distinct names.
SIGNATURES: dict[str, tuple[Signature, ...]] = {
    "And": (Signature("And", (T, T), T),),
    "AttnVideo": (Signature("AttnVideo", (V, A), V),),
    "Choose": (Signature("Choose", (T, T, T), T),),
    "Compare": (Signature("Compare", (T, T), T),),
    "Equals": (Signature("Equals", (T, T), T),),
    "Exists": (Signature("Exists", (T, T), T),),
    "ExistsFrame": (Signature("ExistsFrame", (V, T), A),),
    "Filter": (
        Signature("Filter", (V, S), T, switches=("obj", "act"), variant="switch"),
        Signature("Filter", (V, T), T, variant="verb"),
    ),
    "FilterFrame": (
        Signature("FilterFrame", (V, S), V, switches=("obj", "act"), variant="switch"),
        Signature("FilterFrame", (V, T), V, variant="verb"),
    ),
    "Localize": (Signature("Localize", (V, T), A),),
    "Relate": (Signature("Relate", (A, S), A, switches=("fwd", "bkwd")),),
    "Superlative": (Signature("Superlative", (T, T, V, S), T, switches=("max", "min")),),
    "Temporal": (
        Signature("Temporal", (V, A, S), ValueKind.PAIR, switches=("before", "after", "while", "between")),
    ),
    "ToAction": (Signature("ToAction", (T, T), T),),
    "Xor": (Signature("Xor", (T, T), T),),
    "XorFrame": (Signature("XorFrame", (A, A), A),),
}

MODULE_NAMES = tuple(sorted(SIGNATURES))
MODULE_ARITY = {name: len(sigs[0].params) for name, sigs in SIGNATURES.items()}


@dataclass
class ProgramTree:
    token: Token
    children: list["ProgramTree"] = field(default_factory=list)

    def __repr__(self):
        if not self.children:
            return f"Leaf({self.token})"
        return f"{self.token.payload}({', '.join(repr(c) for c in self.children)})"


# -- errors -----------------------------------------------------------------


class ProgramError(ValueError):
    pass


class StackUnderflow(ProgramError):
    pass


class DanglingOperands(ProgramError):
    pass


class UnknownToken(ProgramError):
    pass


class TypeCheckError(ProgramError):
    def __init__(self, message, path=()):
        super().__init__(f"{path_str(path)}: {message}")
        self.path = path


class ArityMismatch(TypeCheckError):
    pass


class KindMismatch(TypeCheckError):
    pass


class NonAnswerableRoot(TypeCheckError):
    pass


# -- token text -------------------------------------------------------------

_TOKEN_RE = re.compile(r'"((?:[^"\\]|\\.)*)"|(\S+)')


def parse_token_text(text):
    """Split canonical program text into tokens."""
    tokens = []
    pos = 0
    for m in _TOKEN_RE.finditer(text):
        if text[pos : m.start()].strip():
            raise UnknownToken(f"unparseable fragment {text[pos:m.start()]!r}")
        pos = m.end()
        if m.group(1) is not None:
            payload = m.group(1).replace('\\"', '"').replace("\\\\", "\\")
            tokens.append(Token(TokenKind.TEXT, payload))
        else:
            word = m.group(2)
            if word == "video":
                tokens.append(Token(TokenKind.VIDEO, word))
            elif word in SWITCH_KEYWORDS:
                tokens.append(Token(TokenKind.SWITCH, word))
            elif word in SIGNATURES:
                tokens.append(Token(TokenKind.MODULE, word))
            else:
                raise UnknownToken(f"unknown token {word!r}")
    if text[pos:].strip():
        raise UnknownToken(f"unparseable fragment {text[pos:]!r}")
    return tokens


def tokens_to_text(tokens):
    return " ".join(str(t) for t in tokens)


# -- RPN <-> tree -----------------------------------------------------------


def rpn_to_tree(tokens):
    """Postfix evaluation: operands are pushed, a module token pops its arity."""
    if not tokens:
        raise StackUnderflow("empty token sequence")
    stack: list[ProgramTree] = []
    for tok in tokens:
        if tok.kind is TokenKind.MODULE:
            if tok.payload not in SIGNATURES:
                raise UnknownToken(f"unknown module {tok.payload!r}")
            arity = MODULE_ARITY[tok.payload]
            if len(stack) < arity:
                raise StackUnderflow(f"{tok.payload} needs {arity} operands, stack has {len(stack)}")
            children = stack[-arity:]
            del stack[-arity:]
            stack.append(ProgramTree(tok, children))
        else:
            if tok.kind is TokenKind.SWITCH and tok.payload not in SWITCH_KEYWORDS:
                raise UnknownToken(f"unknown switch {tok.payload!r}")
            stack.append(ProgramTree(tok))
    if len(stack) != 1:
        raise DanglingOperands(f"{len(stack)} trees left on stack")
    return stack[0]


def tree_to_rpn(tree):
    """Inverse of rpn_to_tree: children left-to-right, then the node."""
    out = []

    def walk(node):
        for c in node.children:
            walk(c)
        out.append(node.token)

    walk(tree)
    return out


def parse_program(text):
    return rpn_to_tree(parse_token_text(text))


def program_to_text(tree):
    return tokens_to_text(tree_to_rpn(tree))


def trees_equal(a, b):
    if a.token.kind is not b.token.kind or a.token.payload != b.token.payload:
        return False
    if len(a.children) != len(b.children):
        return False
    return all(trees_equal(x, y) for x, y in zip(a.children, b.children))


def iter_nodes(tree, path=()):
    """Yield (path, node) pairs in preorder; paths are child-index tuples."""
    yield path, tree
    for i, c in enumerate(tree.children):
        yield from iter_nodes(c, path + (i,))


def path_str(path):
    return "r" + "".join(f".{i}" for i in path)


# -- static typing ----------------------------------------------------------


def _compatible(child_kind, param_kind):
    if child_kind == param_kind:
        return True
    return child_kind is ValueKind.PAIR and param_kind in (ValueKind.VIDEO, ValueKind.ATTN)


def infer_types(tree):
    """Kind + resolved signature per node; raises on any violation."""
    info: dict[tuple, tuple[ValueKind, Signature | None]] = {}

    def visit(node, path):
        tok = node.token
        if tok.kind is TokenKind.VIDEO:
            info[path] = (ValueKind.VIDEO, None)
            return ValueKind.VIDEO
        if tok.kind is TokenKind.TEXT:
            info[path] = (ValueKind.TEXT, None)
            return ValueKind.TEXT
        if tok.kind is TokenKind.SWITCH:
            info[path] = (ValueKind.SWITCH, None)
            return ValueKind.SWITCH
        sigs = SIGNATURES.get(tok.payload)
        if sigs is None:
            raise UnknownToken(f"unknown module {tok.payload!r}")
        child_kinds = [visit(c, path + (i,)) for i, c in enumerate(node.children)]
        if len(child_kinds) != len(sigs[0].params):
            raise ArityMismatch(
                f"{tok.payload} takes {len(sigs[0].params)} operands, got {len(child_kinds)}", path
            )
        chosen = None
        for sig in sigs:
            if all(_compatible(k, p) for k, p in zip(child_kinds, sig.params)):
                chosen = sig
                break
        if chosen is None:
            want = " | ".join("(" + ", ".join(p.value for p in s.params) + ")" for s in sigs)
            got = "(" + ", ".join(k.value for k in child_kinds) + ")"
            raise KindMismatch(f"{tok.payload} expects {want}, got {got}", path)
        for i, (kind, p) in enumerate(zip(child_kinds, chosen.params)):
            if p is ValueKind.SWITCH:
                kw = node.children[i].token.payload
                if kw not in chosen.switches:
                    raise KindMismatch(
                        f"{tok.payload} switch must be one of {chosen.switches}, got {kw!r}", path + (i,)
                    )
        info[path] = (chosen.returns, chosen)
        return chosen.returns

    root_kind = visit(tree, ())
    if root_kind not in (ValueKind.TEXT, ValueKind.ATTN):
        raise NonAnswerableRoot(f"program root has kind {root_kind.value}", ())
    return info


def type_check(tree):
    """Bottom-up kind assignment; returns [(node-path string, ValueKind)]."""
    info = infer_types(tree)
    return [(path_str(p), kind) for p, (kind, _sig) in sorted(info.items())]


# -- text span binding --------------------------------------------------------


def _find_span(needle, words):
    """Longest contiguous sub-phrase of `needle` found in `words`, else None."""
    parts = needle.split()
    for length in range(len(parts), 0, -1):
        for start in range(len(parts) - length + 1):
            piece = parts[start : start + length]
            for i in range(len(words) - length + 1):
                if words[i : i + length] == piece:
                    return (i, i + length)
    return None


def bind_text_spans(tree, question_words):
    """Annotate every text token with its [start, end) span in the question.

    Falls back to the full-question span when no sub-phrase matches, so the
    annotation is total.
    """
    words = list(question_words)
    full = (0, len(words))

    def rebuild(node):
        tok = node.token
        if tok.kind is TokenKind.TEXT:
            span = _find_span(tok.payload, words) or full
            tok = replace(tok, span=span)
        return ProgramTree(tok, [rebuild(c) for c in node.children])

    return rebuild(tree)


# -- random well-typed programs (for fuzzing) --------------------------------

_TEXT_PRODUCERS = ("And", "Choose", "Compare", "Equals", "Exists", "Filter", "Superlative", "ToAction", "Xor")
_ATTN_PRODUCERS = ("Localize", "ExistsFrame", "Relate", "XorFrame", "Temporal")
_VIDEO_PRODUCERS = ("AttnVideo", "FilterFrame", "Temporal")


def random_program(rng, lexicon=("cook", "watch", "phone", "food", "open door"), max_depth=4):
    """Sample a random well-typed program tree (root kind TEXT or ATTN)."""

    def leaf_text():
        return ProgramTree(Token(TokenKind.TEXT, lexicon[rng.integers(len(lexicon))]))

    def leaf_video():
        return ProgramTree(Token(TokenKind.VIDEO, "video"))

    def switch(keywords):
        return ProgramTree(Token(TokenKind.SWITCH, keywords[rng.integers(len(keywords))]))

    def gen(kind, depth, allow_pair=True):
        if kind is ValueKind.TEXT and (depth <= 0 or rng.random() < 0.4):
            return leaf_text()
        if kind is ValueKind.VIDEO and (depth <= 0 or rng.random() < 0.55):
            return leaf_video()
        if kind is ValueKind.TEXT:
            name = _TEXT_PRODUCERS[rng.integers(len(_TEXT_PRODUCERS))]
        elif kind is ValueKind.ATTN:
            n = (len(_ATTN_PRODUCERS) if allow_pair else len(_ATTN_PRODUCERS) - 1) if depth > 0 else 2
            name = _ATTN_PRODUCERS[rng.integers(n)]
        else:
            name = _VIDEO_PRODUCERS[rng.integers(len(_VIDEO_PRODUCERS) if depth > 0 else 2)]
        sigs = SIGNATURES[name]
        sig = sigs[rng.integers(len(sigs))]
        children = []
        for p in sig.params:
            if p is ValueKind.SWITCH:
                children.append(switch(sig.switches))
            else:
                children.append(gen(p, depth - 1))
        return ProgramTree(Token(TokenKind.MODULE, name), children)

    root_kind = ValueKind.TEXT if rng.random() < 0.8 else ValueKind.ATTN
    return gen(root_kind, max_depth, allow_pair=False)
