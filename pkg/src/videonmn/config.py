"""Run configuration: defaults, key=value config files, CLI overrides, hash.

Every output artifact embeds `config_hash(cfg)` in its header so a run can
be traced back to the exact configuration that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = "data"
    hidden: int = 64
    d_raw: int = 64
    t_frames: int = 16
    sigma: float = 0.1
    dropout: float = 0.1
    eta: float = 1.0
    batch_size: int = 32
    lr: float = 2e-4
    total_steps: int = 20000
    eval_every: int = 1000
    grad_clip: float = 5.0
    beam_size: int = 5
    prompt_p: int = 3
    n_train: int = 5000
    n_valid: int = 500
    n_test: int = 1000
    questions_per_video: int = 5
    gen_hidden: int = 128
    gen_steps: int = 3000
    gen_lr: float = 2e-3
    workers: int = 0  # parallelism hint; results are seed-deterministic regardless

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def config_hash(cfg):
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _coerce(name, raw, lineno=None, source="<config>"):
    f = _FIELDS.get(name)
    where = f"{source}:{lineno}: " if lineno is not None else ""
    if f is None:
        raise ConfigError(f"{where}unknown config key {name!r}")
    try:
        if f.type in ("int", int):
            return int(raw)
        if f.type in ("float", float):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{where}cannot parse {raw!r} as {f.type} for key {name!r}") from None


def load_config_file(path, base=None):
    """key=value lines ('#' comments); applied over `base` (or defaults)."""
    cfg = base or RunConfig()
    updates = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            updates[key] = _coerce(key, raw.strip(), lineno, path)
    return cfg.replace(**updates)


def apply_overrides(cfg, pairs):
    """CLI-style overrides: a mapping of field name -> raw string/None."""
    updates = {}
    for key, raw in pairs.items():
        if raw is None:
            continue
        updates[key] = _coerce(key, raw)
    return cfg.replace(**updates)
