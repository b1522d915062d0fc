"""Training objectives: answer classification and intermediate supervision.

Three supervision families mirror the module taxonomy:
  * set targets (Filter / ToAction / Superlative): non-parametric
    classification against text-encoder prototypes of the items appearing
    in the mini-batch, scored with binary cross entropy;
  * attention targets (ExistsFrame / Localize / Temporal): per-frame
    binary cross entropy against the 0/1 gold mask;
  * binary targets (Exists / Equals): cross entropy through a dedicated
    per-family linear head.
The per-node losses are summed over all non-root nodes that carry a
target; L_total = L_cls + eta * L_is.

BCE terms are written as y*log(max(p, tiny)) + (1-y)*log(max(1-p, tiny)),
which is exactly zero when p equals a binary target.
"""

from __future__ import annotations

import numpy as np

from .dsl import ValueKind
from .tensor import Tensor, logsumexp, maximum, stack

TINY = 1e-12


class EmptyBatchVocabulary(ValueError):
    """loss_is_set needs at least one prototype in the mini-batch."""


def _const_like(t, value):
    return Tensor(np.asarray(value, dtype=t.data.dtype))


def loss_cls(logits, gold_index):
    """Cross entropy over the answer set."""
    return logsumexp(logits) - logits[int(gold_index)]


def _bce(p, y):
    """Mean binary cross entropy; exact 0 when p == y elementwise binary."""
    tiny = _const_like(p, np.full(p.data.shape, TINY))
    yt = Tensor(np.asarray(y, dtype=p.data.dtype))
    pos = yt * maximum(p, tiny).log()
    neg = (1.0 - yt) * maximum(1.0 - p, tiny).log()
    return -(pos + neg).mean()


def loss_is_set(t, gold_items, prototypes):
    """Multi-label item loss: softmax over prototype dot products, then BCE.

    prototypes: ordered (item, Tensor) pairs for the batch vocabulary.
    """
    if not prototypes:
        raise EmptyBatchVocabulary("no prototypes for this mini-batch")
    names = [n for n, _ in prototypes]
    scores = stack([(t * v).sum() for _, v in prototypes])
    p = scores.softmax()
    y = np.array([1.0 if n in gold_items else 0.0 for n in names])
    return _bce(p, y)


def loss_is_attention(att, target):
    """Per-frame BCE; `target` is a 0/1 mask or a [start, end) span pair."""
    if isinstance(target, tuple):
        start, end = target
        mask = np.zeros(att.data.shape[0], dtype=att.data.dtype)
        mask[start:end] = 1.0
    else:
        mask = np.asarray(target, dtype=att.data.dtype)
    return _bce(att, mask)


def loss_is_binary(t, label, head):
    """Two-way cross entropy through a per-family linear head."""
    logits = head(t)
    return logsumexp(logits) - logits[int(label)]


def total_is(trace, targets, prototypes, lib):
    """Sum of intermediate losses over non-root target nodes.

    Returns (loss Tensor or None, per-family counts). The root never
    contributes: derive_intermediate_targets already excludes it and the
    guard here keeps that true for hand-built target maps too.
    """
    losses = []
    counts = {"set": 0, "attention": 0, "binary": 0}
    for path, target in targets.items():
        if path == "r":
            continue
        entry = trace.by_path.get(path)
        if entry is None:
            continue
        fam = target["family"]
        if fam == "set":
            losses.append(loss_is_set(entry.value.tensor, target["items"], prototypes))
        elif fam == "attention":
            att = entry.value.attn if entry.kind is ValueKind.PAIR else entry.value.tensor
            losses.append(loss_is_attention(att, target["mask"]))
        else:
            family = entry.module.lower()
            losses.append(loss_is_binary(entry.value.tensor, target["label"], lambda t: lib.binary_head(family, t)))
        counts[fam] += 1
    if not losses:
        return None, counts
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total, counts
