"""Dataset file formats: header-carrying JSONL and binary feature clips.

JSONL files start with one header object ({"header": true, ...}) holding
the vocabularies, answer set, generation config, and config hash; every
following line is one record. Feature files are little-endian float32
with a 12-byte header (magic, T, D_raw).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

FEATURE_MAGIC = b"VFEA"

RECORD_FIELDS = ("id", "video_id", "question", "answer", "answer_type", "sg_program", "nmn_program", "targets")


class DatasetError(ValueError):
    pass


def write_features(path, frames):
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise DatasetError(f"feature clip must be 2-D, got {frames.shape}")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        f.write(frames.tobytes())


def read_features(path):
    with open(path, "rb") as f:
        head = f.read(12)
        if head[:4] != FEATURE_MAGIC:
            raise DatasetError(f"{path}: bad feature magic")
        T, D = struct.unpack("<II", head[4:])
        data = np.frombuffer(f.read(), dtype="<f4", count=T * D)
    if not np.isfinite(data).all():
        raise DatasetError(f"{path}: non-finite values")
    return data.reshape(T, D).astype(np.float32)


def write_jsonl(path, header, records):
    with open(path, "w") as f:
        f.write(json.dumps({"header": True, **header}, sort_keys=True) + "\n")
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path):
    """Returns (header, records); errors carry 1-based line numbers."""
    header = None
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if lineno == 1 and obj.get("header"):
                header = obj
                continue
            missing = [k for k in RECORD_FIELDS if k not in obj]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            records.append(obj)
    if header is None:
        raise DatasetError(f"{path}:1: missing dataset header line")
    return header, records


@dataclass
class Dataset:
    """One split plus its header and lazily cached feature clips."""

    header: dict
    records: list
    feature_dir: str
    _cache: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, feature_dir=None):
        header, records = read_jsonl(path)
        if feature_dir is None:
            feature_dir = os.path.join(os.path.dirname(os.path.abspath(path)), "features")
        return cls(header, records, feature_dir)

    def features(self, video_id):
        arr = self._cache.get(video_id)
        if arr is None:
            arr = read_features(os.path.join(self.feature_dir, f"{video_id}.bin"))
            self._cache[video_id] = arr
        return arr

    @property
    def answers(self):
        return list(self.header["answers"])

    @property
    def items(self):
        return list(self.header["objects"]) + list(self.header["verbs"])

    def __len__(self):
        return len(self.records)


def question_words(record):
    return record["question"].split()


def parse_targets(record):
    """Decode stored targets into numpy-friendly values keyed by node path."""
    out = {}
    for path, t in record["targets"].items():
        if t["family"] == "attention":
            out[path] = {"family": "attention", "mask": np.asarray(t["mask"], dtype=np.float32)}
        elif t["family"] == "set":
            out[path] = {"family": "set", "items": frozenset(t["items"])}
        else:
            out[path] = {"family": "binary", "label": int(t["label"])}
    return out
