"""The sixteen neural modules, the answer classifier, and binary decode heads.

Each module is a small stack of linear/conv layers implementing its
documented formula; inputs and outputs are tagged `Value`s whose kinds
match the program signature table. Every attention output is clamped to
[0, 1]. Activation choices: ReLU between the two layers of two-layer
stacks, sigmoid on the verb-filter gate, none inside Localize. Dropout
(default 0.1) follows each ReLU during training.

Temporal emits a (video, attention) pair; `as_video`/`as_attn` project
pairs for consumers that want one component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import ValueKind
from .tensor import Tensor, concat, cosine, dropout, minimum, no_grad, shift1d, stack, conv1d_same


@dataclass
class Value:
    kind: ValueKind
    tensor: Tensor | None = None  # VIDEO (T,H) | TEXT (H,) | ATTN (T,)
    attn: Tensor | None = None  # attention component when kind is PAIR
    keyword: str | None = None  # SWITCH payload

    @staticmethod
    def video(t):
        return Value(ValueKind.VIDEO, t)

    @staticmethod
    def text(t):
        return Value(ValueKind.TEXT, t)

    @staticmethod
    def attention(t):
        return Value(ValueKind.ATTN, t)

    @staticmethod
    def pair(v, a):
        return Value(ValueKind.PAIR, v, attn=a)

    @staticmethod
    def switch(kw):
        return Value(ValueKind.SWITCH, keyword=kw)


class KindError(TypeError):
    """Operand kind does not match the module (unreachable after type_check)."""


def as_video(val):
    if val.kind in (ValueKind.VIDEO, ValueKind.PAIR):
        return val.tensor
    raise KindError(f"expected video feature, got {val.kind}")


def as_attn(val):
    if val.kind is ValueKind.ATTN:
        return val.tensor
    if val.kind is ValueKind.PAIR:
        return val.attn
    raise KindError(f"expected attention map, got {val.kind}")


def as_text(val):
    if val.kind is ValueKind.TEXT:
        return val.tensor
    raise KindError(f"expected text feature, got {val.kind}")


def _broadcast_rows(t, rows):
    """(H,) -> (rows, H) as a differentiable broadcast."""
    ones = Tensor(np.ones((rows, 1), dtype=t.data.dtype))
    return ones * t.reshape(1, -1)


class ModuleLibrary:
    """Owns the parameters of all modules and dispatches execution."""

    def __init__(self, store, hidden, n_answers, drop=0.1, conv_kernel=7):
        self.store = store
        self.hidden = hidden
        self.drop = drop
        p = store.param
        H = hidden
        p("mod.compare.w", (2 * H, H)), p("mod.compare.b", (H,), init="zeros")
        p("mod.equals.w", (2 * H, H)), p("mod.equals.b", (H,), init="zeros")
        p("mod.exists.w1", (3 * H, H)), p("mod.exists.b1", (H,), init="zeros")
        p("mod.exists.w2", (H, H)), p("mod.exists.b2", (H,), init="zeros")
        for kw in ("obj", "act"):
            p(f"mod.filter.{kw}.w1", (H, H)), p(f"mod.filter.{kw}.b1", (H,), init="zeros")
            p(f"mod.filter.{kw}.w2", (H, H)), p(f"mod.filter.{kw}.b2", (H,), init="zeros")
            p(f"mod.fframe.{kw}.w1", (H, H)), p(f"mod.fframe.{kw}.b1", (H,), init="zeros")
            p(f"mod.fframe.{kw}.w2", (H, H)), p(f"mod.fframe.{kw}.b2", (H,), init="zeros")
        p("mod.filter.w3", (H, H)), p("mod.filter.b3", (H,), init="zeros")
        p("mod.fframe.w3", (H, H)), p("mod.fframe.b3", (H,), init="zeros")
        for fam in ("filter.verb", "fframe.verb"):
            p(f"mod.{fam}.w1", (H, H)), p(f"mod.{fam}.b1", (H,), init="zeros")
            p(f"mod.{fam}.w2", (H, H)), p(f"mod.{fam}.b2", (H,), init="zeros")
            p(f"mod.{fam}.w3", (2 * H, H)), p(f"mod.{fam}.b3", (H,), init="zeros")
            p(f"mod.{fam}.w4", (H, H)), p(f"mod.{fam}.b4", (H,), init="zeros")
        p("mod.localize.w1", (H, H)), p("mod.localize.b1", (H,), init="zeros")
        p("mod.localize.w2", (H, H)), p("mod.localize.b2", (H,), init="zeros")
        p("mod.localize.w3", (H, H)), p("mod.localize.b3", (H,), init="zeros")
        if "mod.relate.shift" not in store:
            store.add("mod.relate.shift", np.array([2.0]))
        for kw in ("before", "after", "while", "between"):
            p(f"mod.temporal.conv.{kw}.w", (conv_kernel,))
            p(f"mod.temporal.conv.{kw}.b", (1,), init="zeros")
        p("mod.temporal.w", (H, H)), p("mod.temporal.b", (H,), init="zeros")
        p("mod.toaction.w1", (2 * H, H)), p("mod.toaction.b1", (H,), init="zeros")
        p("mod.toaction.w2", (H, H)), p("mod.toaction.b2", (H,), init="zeros")
        p("mod.xor.w1", (3 * H, H)), p("mod.xor.b1", (H,), init="zeros")
        p("cls.pool.w", (H, H)), p("cls.pool.b", (H,), init="zeros")
        p("cls.w1", (2 * H, H)), p("cls.b1", (H,), init="zeros")
        p("cls.w2", (H, n_answers)), p("cls.b2", (n_answers,), init="zeros")
        p("ishead.exists.w", (H, 2)), p("ishead.exists.b", (2,), init="zeros")
        p("ishead.equals.w", (H, 2)), p("ishead.equals.b", (2,), init="zeros")

    def _p(self, name):
        return self.store[f"mod.{name}"]

    def _drop(self, x, ctx):
        return dropout(x, self.drop, ctx.get("rng"), ctx.get("training", False))

    # -- the 16 modules ---------------------------------------------------

    def m_and(self, ops, ctx):
        return Value.text(minimum(as_text(ops[0]), as_text(ops[1])))

    def m_attn_video(self, ops, ctx):
        a = as_attn(ops[1])
        return Value.video(as_video(ops[0]) * a.reshape(-1, 1))

    def m_choose(self, ops, ctx):
        tq, tk1, tk2 = (as_text(o) for o in ops)
        with no_grad():
            c1 = float(cosine(tq, tk1).data)
            c2 = float(cosine(tq, tk2).data)
        return Value.text(tk1 if c1 > c2 else tk2)

    def m_compare(self, ops, ctx):
        x = concat([as_text(ops[0]), as_text(ops[1])])
        return Value.text(x @ self._p("compare.w") + self._p("compare.b"))

    def m_equals(self, ops, ctx):
        x = concat([as_text(ops[0]), as_text(ops[1])])
        return Value.text(x @ self._p("equals.w") + self._p("equals.b"))

    def m_exists(self, ops, ctx):
        t1, t2 = as_text(ops[0]), as_text(ops[1])
        x = concat([t1, t2, t1 * t2])
        h = self._drop((x @ self._p("exists.w1") + self._p("exists.b1")).relu(), ctx)
        return Value.text(h @ self._p("exists.w2") + self._p("exists.b2"))

    def m_exists_frame(self, ops, ctx):
        v, t = as_video(ops[0]), as_text(ops[1])
        a = (cosine(v, t) + 1.0) * 0.5
        return Value.attention(a.clip(0.0, 1.0))

    def _frame_mlp(self, v, fam, kw, ctx):
        h = self._drop((v @ self._p(f"{fam}.{kw}.w1") + self._p(f"{fam}.{kw}.b1")).relu(), ctx)
        return h @ self._p(f"{fam}.{kw}.w2") + self._p(f"{fam}.{kw}.b2")

    def m_filter_switch(self, ops, ctx):
        v, kw = as_video(ops[0]), ops[1].keyword
        h = self._frame_mlp(v, "filter", kw, ctx)
        return Value.text(h.sum(axis=0) @ self._p("filter.w3") + self._p("filter.b3"))

    def _verb_gate(self, v, t, fam, ctx):
        v1 = self._drop((v @ self._p(f"{fam}.w1") + self._p(f"{fam}.b1")).relu(), ctx)
        vp = v1 @ self._p(f"{fam}.w2") + self._p(f"{fam}.b2")
        tt = _broadcast_rows(t, v.data.shape[0])
        gate = (concat([vp, tt], axis=1) @ self._p(f"{fam}.w3") + self._p(f"{fam}.b3")).sigmoid()
        return gate * v

    def m_filter_verb(self, ops, ctx):
        v, t = as_video(ops[0]), as_text(ops[1])
        v_agg = self._verb_gate(v, t, "filter.verb", ctx)
        return Value.text(v_agg.sum(axis=0) @ self._p("filter.verb.w4") + self._p("filter.verb.b4"))

    def m_fframe_switch(self, ops, ctx):
        v, kw = as_video(ops[0]), ops[1].keyword
        h = self._frame_mlp(v, "fframe", kw, ctx)
        return Value.video(h @ self._p("fframe.w3") + self._p("fframe.b3"))

    def m_fframe_verb(self, ops, ctx):
        v, t = as_video(ops[0]), as_text(ops[1])
        v_agg = self._verb_gate(v, t, "fframe.verb", ctx)
        return Value.video(v_agg @ self._p("fframe.verb.w4") + self._p("fframe.verb.b4"))

    def _localize_scores(self, t, v):
        vp = (v @ self._p("localize.w1") + self._p("localize.b1")) @ self._p("localize.w2") + self._p(
            "localize.b2"
        )
        tp = t @ self._p("localize.w3") + self._p("localize.b3")
        return ((cosine(vp, tp) + 1.0) * 0.5).clip(0.0, 1.0)

    def m_localize(self, ops, ctx):
        return Value.attention(self._localize_scores(as_text(ops[1]), as_video(ops[0])))

    def m_relate(self, ops, ctx):
        a, kw = as_attn(ops[0]), ops[1].keyword
        sign = 1 if kw == "fwd" else -1
        shift = self.store["mod.relate.shift"][0]
        return Value.attention(shift1d(a, shift, sign).clip(0.0, 1.0))

    def m_superlative(self, ops, ctx):
        t1, t2, v, kw = as_text(ops[0]), as_text(ops[1]), as_video(ops[2]), ops[3].keyword
        scores = stack([self._localize_scores(t1, v).sum(), self._localize_scores(t2, v).sum()])
        w = scores.softmax()
        if kw == "min":
            w = 1.0 - w
        return Value.text((w.reshape(2, 1) * stack([t1, t2])).sum(axis=0))

    def m_temporal(self, ops, ctx):
        v, a, kw = as_video(ops[0]), as_attn(ops[1]), ops[2].keyword
        conv = conv1d_same(a, self._p(f"temporal.conv.{kw}.w")) + self._p(f"temporal.conv.{kw}.b")
        a_out = conv.clip(0.0, 1.0)
        v_out = (a_out.reshape(-1, 1) * v) @ self._p("temporal.w") + self._p("temporal.b")
        return Value.pair(v_out, a_out)

    def m_toaction(self, ops, ctx):
        x = concat([as_text(ops[0]), as_text(ops[1])])
        h = self._drop((x @ self._p("toaction.w1") + self._p("toaction.b1")).relu(), ctx)
        return Value.text(h @ self._p("toaction.w2") + self._p("toaction.b2"))

    def m_xor(self, ops, ctx):
        t1, t2 = as_text(ops[0]), as_text(ops[1])
        x = concat([t1, t2, (t1 - t2).abs()])
        return Value.text(x @ self._p("xor.w1") + self._p("xor.b1"))

    def m_xor_frame(self, ops, ctx):
        return Value.attention((as_attn(ops[0]) - as_attn(ops[1])).abs())

    # -- classifier and heads ---------------------------------------------

    def pool_attention(self, a, v):
        """Attention-weighted mean of v, projected to a text feature."""
        num = (a.reshape(-1, 1) * v).sum(axis=0)
        pooled = num / (a.sum() + 1e-6)
        return pooled @ self.store["cls.pool.w"] + self.store["cls.pool.b"]

    def classify(self, root, q, v, ctx=None):
        """Two-layer classifier over [root representation; sentence feature]."""
        ctx = ctx or {}
        if root.kind is ValueKind.TEXT:
            t = root.tensor
        elif root.kind in (ValueKind.ATTN, ValueKind.PAIR):
            t = self.pool_attention(as_attn(root), v)
        else:
            raise KindError(f"cannot classify from root kind {root.kind}")
        h = self._drop((concat([t, q]) @ self.store["cls.w1"] + self.store["cls.b1"]).relu(), ctx)
        return h @ self.store["cls.w2"] + self.store["cls.b2"]

    def binary_head(self, family, t):
        """Per-family linear head used for binary supervision and decoding."""
        return t @ self.store[f"ishead.{family}.w"] + self.store[f"ishead.{family}.b"]

    # name -> implementation, keyed by (module, variant)
    def impl(self, name, variant):
        key = name if variant is None else f"{name}[{variant}]"
        return _DISPATCH[key].__get__(self)


_DISPATCH = {
    "And": ModuleLibrary.m_and,
    "AttnVideo": ModuleLibrary.m_attn_video,
    "Choose": ModuleLibrary.m_choose,
    "Compare": ModuleLibrary.m_compare,
    "Equals": ModuleLibrary.m_equals,
    "Exists": ModuleLibrary.m_exists,
    "ExistsFrame": ModuleLibrary.m_exists_frame,
    "Filter[switch]": ModuleLibrary.m_filter_switch,
    "Filter[verb]": ModuleLibrary.m_filter_verb,
    "FilterFrame[switch]": ModuleLibrary.m_fframe_switch,
    "FilterFrame[verb]": ModuleLibrary.m_fframe_verb,
    "Localize": ModuleLibrary.m_localize,
    "Relate": ModuleLibrary.m_relate,
    "Superlative": ModuleLibrary.m_superlative,
    "Temporal": ModuleLibrary.m_temporal,
    "ToAction": ModuleLibrary.m_toaction,
    "Xor": ModuleLibrary.m_xor,
    "XorFrame": ModuleLibrary.m_xor_frame,
}


def identity_init_temporal(store, kw="while"):
    """Set one Temporal branch to the exact identity (tests use this)."""
    H = store["mod.temporal.w"].data.shape[0]
    k = store[f"mod.temporal.conv.{kw}.w"].data.shape[0]
    kernel = np.zeros(k, dtype=store.dtype)
    kernel[k // 2] = 1.0
    store[f"mod.temporal.conv.{kw}.w"].data = kernel
    store[f"mod.temporal.conv.{kw}.b"].data = np.zeros(1, dtype=store.dtype)
    store["mod.temporal.w"].data = np.eye(H, dtype=store.dtype)
    store["mod.temporal.b"].data = np.zeros(H, dtype=store.dtype)
