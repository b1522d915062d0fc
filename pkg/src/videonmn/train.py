"""End-to-end training loop for the main model.

Teacher-forced gold module programs drive train/valid; per-sample graphs
share one batch loss tensor (L_cls + eta * L_is averaged over the batch)
so a single backward pass accumulates all gradients before the Adam step.
Metrics stream to CSV; the best-by-validation checkpoint is retained.
"""

from __future__ import annotations

import csv
import os
import time

import numpy as np

from . import dsl
from .data import parse_targets, question_words
from .executor import ExecutionNaN
from .losses import loss_cls, total_is
from .model import Model, build_word_vocab
from .params import linear_lr
from .tensor import no_grad


def evaluate_accuracy(model, dataset, limit=None, programs=None):
    """Answer accuracy with gold programs (or supplied ones); returns details."""
    n = len(dataset.records) if limit is None else min(limit, len(dataset.records))
    hits = {"binary": [0, 0], "open": [0, 0]}
    for rec in dataset.records[:n]:
        tree = None
        if programs is not None:
            text = programs.get(rec["id"])
            if text is None:
                continue
            tree = dsl.parse_program(text)
        pred, _ = model.predict(rec, dataset.features(rec["video_id"]), tree=tree)
        bucket = hits[rec["answer_type"]]
        bucket[1] += 1
        bucket[0] += pred == rec["answer"]
    total_hit = hits["binary"][0] + hits["open"][0]
    total_n = hits["binary"][1] + hits["open"][1]
    return {
        "binary": hits["binary"][0] / max(hits["binary"][1], 1),
        "open": hits["open"][0] / max(hits["open"][1], 1),
        "overall": total_hit / max(total_n, 1),
        "n": total_n,
    }


class MetricsLog:
    COLUMNS = ("step", "lr", "loss_cls", "loss_is", "loss_total", "valid_acc",
               "filter_r1", "filter_r5", "localize_iou", "temporal_iou")

    def __init__(self, path, config_hash=""):
        self.path = path
        self.rows = []
        self._fh = None
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self._fh = open(path, "w", newline="")
            self._fh.write(f"# config_hash={config_hash}\n")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(self.COLUMNS)

    def log(self, **kw):
        row = {k: kw.get(k, "") for k in self.COLUMNS}
        self.rows.append(row)
        if self._fh:
            self._writer.writerow([row[c] for c in self.COLUMNS])

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def batch_prototype_items(batch_targets):
    items = set()
    for targets in batch_targets:
        for t in targets.values():
            if t["family"] == "set":
                items.update(t["items"])
    return sorted(items)


def train_main(
    cfg,
    train_ds,
    valid_ds,
    vocab_datasets=(),
    eta=None,
    seed=None,
    total_steps=None,
    out_path=None,
    metrics_path=None,
    config_hash="",
    log_every=50,
    quiet=False,
):
    """Train the main model; returns (model, summary dict)."""
    eta = cfg.eta if eta is None else eta
    seed = cfg.seed if seed is None else seed
    total_steps = cfg.total_steps if total_steps is None else total_steps
    datasets = [train_ds, valid_ds, *vocab_datasets]
    vocab = build_word_vocab(datasets, train_ds.items)
    model = Model.build(train_ds.header, vocab, hidden=cfg.hidden, dropout=cfg.dropout, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C]))

    trees = {}
    targets = {}
    for rec in train_ds.records:
        trees[rec["id"]] = dsl.parse_program(rec["nmn_program"])
        targets[rec["id"]] = parse_targets(rec)

    log = MetricsLog(metrics_path, config_hash)
    n = len(train_ds.records)
    batch = min(cfg.batch_size, n)
    best_acc, best_step = -1.0, -1
    aborted = 0
    t_start = time.time()

    for step in range(1, total_steps + 1):
        idx = rng.choice(n, size=batch, replace=n < batch)
        recs = [train_ds.records[i] for i in idx]
        try:
            batch_targets = [targets[r["id"]] for r in recs]
            prototypes = []
            if eta != 0.0:
                items = batch_prototype_items(batch_targets)
                prototypes = model.prototypes(items, training=True)
            cls_sum = None
            is_sum = None
            for rec, tgt in zip(recs, batch_targets):
                frames = train_ds.features(rec["video_id"])
                logits, trace, _ = model.forward(rec, frames, training=True, tree=trees[rec["id"]])
                l = loss_cls(logits, model.ans_index[rec["answer"]])
                cls_sum = l if cls_sum is None else cls_sum + l
                if eta != 0.0 and tgt:
                    l_is, _ = total_is(trace, tgt, prototypes, model.lib)
                    if l_is is not None:
                        is_sum = l_is if is_sum is None else is_sum + l_is
            l_cls = cls_sum * (1.0 / batch)
            l_is = is_sum * (1.0 / batch) if is_sum is not None else None
            if eta != 0.0 and l_is is not None:
                l_total = l_cls + eta * l_is
            else:
                l_total = l_cls
            if not np.isfinite(l_total.data):
                raise ExecutionNaN("non-finite batch loss")
            l_total.backward()
        except ExecutionNaN:
            aborted += 1
            model.store.zero_grad()
            continue
        model.store.clip_grad_norm(cfg.grad_clip)
        lr = linear_lr(step - 1, cfg.lr, total_steps)
        model.store.adam_step(lr)
        model.store.zero_grad()

        row = {
            "step": step,
            "lr": f"{lr:.6g}",
            "loss_cls": float(l_cls.data),
            "loss_is": float(l_is.data) if l_is is not None else 0.0,
            "loss_total": float(l_total.data),
        }
        if step % cfg.eval_every == 0 or step == total_steps:
            acc = evaluate_accuracy(model, valid_ds)
            row["valid_acc"] = acc["overall"]
            if acc["overall"] >= best_acc:
                best_acc, best_step = acc["overall"], step
                if out_path:
                    model.save(out_path, {"step": step, "valid_acc": best_acc,
                                          "eta": eta, "config_hash": config_hash})
            if not quiet:
                speed = step / (time.time() - t_start)
                print(f"step {step}/{total_steps} loss {row['loss_total']:.4f} "
                      f"valid {acc['overall']:.3f} ({speed:.1f} steps/s)")
        if step % log_every == 0 or "valid_acc" in row and row["valid_acc"] != "":
            log.log(**row)
    log.close()
    if out_path and best_step < 0:
        model.save(out_path, {"step": total_steps, "valid_acc": -1.0, "eta": eta,
                              "config_hash": config_hash})
    summary = {
        "best_valid_acc": best_acc,
        "best_step": best_step,
        "aborted_steps": aborted,
        "seconds": time.time() - t_start,
    }
    return model, summary
