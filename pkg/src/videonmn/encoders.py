"""Bi-directional recurrent encoders for video features and question text.

The sequential recurrence runs in the selected kernel backend as a single
autodiff node; the input/output projections stay in numpy BLAS. Forward
and backward hidden states are concatenated and projected to the common
hidden size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, concat, dropout, embedding

PAD, UNK = "<pad>", "<unk>"


@dataclass
class EncoderOutputs:
    v: Tensor  # video states (T, H)
    q: Tensor  # sentence feature (H,)
    t_tok: Tensor  # token states (L, H)


def lstm_layer(x, w_ih, w_hh, b, reverse=False):
    """One LSTM direction over x (T, E) -> hidden states (T, H)."""
    xp = x.data @ w_ih.data + b.data
    h, gates, c, tanh_c = kernels.lstm_recur_fwd(np.ascontiguousarray(xp), w_hh.data, reverse)

    def backward(g):
        dz, dw_hh = kernels.lstm_recur_bwd(
            w_hh.data, gates, c, tanh_c, h, np.ascontiguousarray(g), reverse
        )
        if x.requires_grad:
            x._accum(dz @ w_ih.data.T)
        if w_ih.requires_grad:
            w_ih._accum(x.data.T @ dz)
        if w_hh.requires_grad:
            w_hh._accum(dw_hh)
        if b.requires_grad:
            b._accum(dz.sum(axis=0))

    return Tensor._result(h, (x, w_ih, w_hh, b), backward)


class BiLSTM:
    """Bi-directional LSTM with a linear projection of [fwd; bwd] states."""

    def __init__(self, store, prefix, in_dim, hidden, out_dim):
        self.hidden = hidden
        p = store.param
        self.w_ih_f = p(f"{prefix}.w_ih_f", (in_dim, 4 * hidden))
        self.w_hh_f = p(f"{prefix}.w_hh_f", (hidden, 4 * hidden))
        self.b_f = p(f"{prefix}.b_f", (4 * hidden,), init="zeros")
        self.w_ih_b = p(f"{prefix}.w_ih_b", (in_dim, 4 * hidden))
        self.w_hh_b = p(f"{prefix}.w_hh_b", (hidden, 4 * hidden))
        self.b_b = p(f"{prefix}.b_b", (4 * hidden,), init="zeros")
        self.proj_w = p(f"{prefix}.proj_w", (2 * hidden, out_dim))
        self.proj_b = p(f"{prefix}.proj_b", (out_dim,), init="zeros")

    def __call__(self, x):
        fwd = lstm_layer(x, self.w_ih_f, self.w_hh_f, self.b_f, reverse=False)
        bwd = lstm_layer(x, self.w_ih_b, self.w_hh_b, self.b_b, reverse=True)
        return concat([fwd, bwd], axis=1) @ self.proj_w + self.proj_b


class VideoEncoder:
    """Models temporal context of raw frame features; (T, D_raw) -> (T, H)."""

    def __init__(self, store, d_raw, hidden):
        self.net = BiLSTM(store, "enc_vid", d_raw, hidden, hidden)

    def __call__(self, frames, drop=0.0, rng=None, training=False):
        v = self.net(frames)
        return dropout(v, drop, rng, training)


class TextEncoder:
    """Token embeddings + bi-LSTM; sentence feature is the token-state mean."""

    def __init__(self, store, vocab, hidden):
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.table = store.param("enc_txt.embed", (len(self.vocab), hidden), scale=0.1, init="normal")
        self.net = BiLSTM(store, "enc_txt", hidden, hidden, hidden)

    def ids(self, words):
        unk = self.index[UNK]
        return np.array([self.index.get(w, unk) for w in words], dtype=np.int64)

    def __call__(self, words, drop=0.0, rng=None, training=False):
        """Returns (q, t_tok): sentence feature (H,) and token states (L, H)."""
        t_tok = self.net(embedding(self.table, self.ids(words)))
        t_tok = dropout(t_tok, drop, rng, training)
        return t_tok.mean(axis=0), t_tok


def span_repr(t_tok, span):
    """Mean of token states over [start, end); full mean for a full span."""
    s, e = span
    return t_tok[s:e].mean(axis=0)
