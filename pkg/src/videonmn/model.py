"""The end-to-end model: encoders + module library + classifier.

Owns the parameter store and the word/answer vocabularies; knows how to
run one record through encode -> execute -> classify and how to
round-trip itself through a checkpoint file.
"""

from __future__ import annotations

import numpy as np

from . import dsl
from .data import question_words
from .encoders import UNK, EncoderOutputs, TextEncoder, VideoEncoder
from .executor import execute_program
from .modules import ModuleLibrary
from .params import ParameterStore
from .tensor import Tensor, no_grad


def build_word_vocab(datasets, items):
    """Deterministic word list: dataset questions plus item phrases."""
    words = set()
    for ds in datasets:
        for rec in ds.records:
            words.update(question_words(rec))
    for item in items:
        words.update(item.split())
    return ["<pad>", UNK] + sorted(words)


class Model:
    def __init__(self, store, word_vocab, answers, items, hidden, d_raw, dropout=0.1, seed=0):
        self.store = store
        self.word_vocab = list(word_vocab)
        self.answers = list(answers)
        self.ans_index = {a: i for i, a in enumerate(self.answers)}
        self.items = list(items)
        self.hidden = hidden
        self.d_raw = d_raw
        self.dropout = dropout
        self.seed = seed
        self.video_encoder = VideoEncoder(store, d_raw, hidden)
        self.text_encoder = TextEncoder(store, self.word_vocab, hidden)
        self.lib = ModuleLibrary(store, hidden, len(self.answers), drop=dropout)
        self.drop_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0]))

    @classmethod
    def build(cls, header, word_vocab, hidden=None, dropout=0.1, seed=0):
        from .synthdata import item_vocabulary

        hidden = hidden or 64
        store = ParameterStore(np.random.default_rng(np.random.SeedSequence([seed, 0xA0])))
        answers = list(header["answers"])
        items = list(header["objects"]) + list(header["verbs"])
        return cls(store, word_vocab, answers, items, hidden, int(header["d_raw"]), dropout, seed)

    # -- encoding ---------------------------------------------------------

    def ctx(self, training):
        return {"training": training, "rng": self.drop_rng}

    def encode_video(self, frames, training=False):
        x = Tensor(np.asarray(frames, dtype=self.store.dtype))
        return self.video_encoder(x, self.dropout, self.drop_rng, training)

    def encode_question(self, words, training=False):
        return self.text_encoder(words, self.dropout, self.drop_rng, training)

    def encode_item(self, item, training=False):
        """Prototype representation of an item phrase (shared text encoder)."""
        q, _ = self.text_encoder(item.split(), self.dropout, self.drop_rng, training)
        return q

    def prototypes(self, item_names, training=False):
        return [(name, self.encode_item(name, training)) for name in item_names]

    # -- forward ----------------------------------------------------------

    def forward(self, record, frames, training=False, tree=None):
        """(logits, trace, enc) for one record under its module program."""
        words = question_words(record)
        if tree is None:
            tree = dsl.parse_program(record["nmn_program"])
        tree = dsl.bind_text_spans(tree, words)
        v = self.encode_video(frames, training)
        q, t_tok = self.encode_question(words, training)
        enc = EncoderOutputs(v=v, q=q, t_tok=t_tok)
        ctx = self.ctx(training)
        root, trace = execute_program(tree, enc, self.lib, ctx)
        logits = self.lib.classify(root, q, v, ctx)
        return logits, trace, enc

    def predict(self, record, frames, tree=None):
        with no_grad():
            logits, trace, _ = self.forward(record, frames, training=False, tree=tree)
        return self.answers[int(np.argmax(logits.data))], trace

    def classify_random_root(self, record, frames, rng):
        """Fallback scoring when no executable program exists (random root)."""
        words = question_words(record)
        with no_grad():
            v = self.encode_video(frames)
            q, _ = self.encode_question(words)
            root_t = Tensor(rng.normal(0, 1, self.hidden).astype(self.store.dtype))
            from .modules import Value

            logits = self.lib.classify(Value.text(root_t), q, v)
        return self.answers[int(np.argmax(logits.data))]

    # -- persistence -------------------------------------------------------

    def save(self, path, extra_meta=None):
        meta = {
            "kind": "videonmn-model",
            "hidden": self.hidden,
            "d_raw": self.d_raw,
            "dropout": self.dropout,
            "seed": self.seed,
            "word_vocab": self.word_vocab,
            "answers": self.answers,
            "items": self.items,
        }
        meta.update(extra_meta or {})
        self.store.save(path, meta=meta)

    @classmethod
    def load(cls, path):
        store = ParameterStore(np.random.default_rng(0))
        meta = store.load(path)
        if meta.get("kind") != "videonmn-model":
            raise ValueError(f"{path} is not a model checkpoint")
        model = cls.__new__(cls)
        model.store = store
        model.word_vocab = list(meta["word_vocab"])
        model.answers = list(meta["answers"])
        model.ans_index = {a: i for i, a in enumerate(model.answers)}
        model.items = list(meta["items"])
        model.hidden = int(meta["hidden"])
        model.d_raw = int(meta["d_raw"])
        model.dropout = float(meta["dropout"])
        model.seed = int(meta.get("seed", 0))
        model.video_encoder = VideoEncoder.__new__(VideoEncoder)
        model.text_encoder = TextEncoder.__new__(TextEncoder)
        model.lib = ModuleLibrary.__new__(ModuleLibrary)
        _rebind(model)
        model.drop_rng = np.random.default_rng(np.random.SeedSequence([model.seed, 0xD0]))
        return model, meta


def _rebind(model):
    """Attach loaded parameters to fresh encoder/module shells."""
    from .encoders import BiLSTM

    store = model.store
    ve = model.video_encoder
    ve.net = BiLSTM.__new__(BiLSTM)
    _bind_bilstm(ve.net, store, "enc_vid")
    te = model.text_encoder
    te.vocab = model.word_vocab
    te.index = {w: i for i, w in enumerate(te.vocab)}
    te.table = store["enc_txt.embed"]
    te.net = BiLSTM.__new__(BiLSTM)
    _bind_bilstm(te.net, store, "enc_txt")
    lib = model.lib
    lib.store = store
    lib.hidden = model.hidden
    lib.drop = model.dropout


def _bind_bilstm(net, store, prefix):
    net.hidden = store[f"{prefix}.w_hh_f"].data.shape[0]
    for attr in ("w_ih_f", "w_hh_f", "b_f", "w_ih_b", "w_hh_b", "b_b", "proj_w", "proj_b"):
        setattr(net, attr, store[f"{prefix}.{attr}"])
