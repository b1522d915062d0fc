"""Learnable parameter registry, Adam updates, and checkpoint files.

Checkpoint layout (all little-endian):
  magic b"VNMN" | u32 version | u32 meta_len | meta JSON (utf-8)
  u32 n_arrays | per array: u16 name_len, name, u8 dtype (0=f32, 1=f64),
  u8 ndim, u32 dims..., raw row-major data
Raw bytes round-trip bit-exactly; optimizer state is stored under
"opt.m:"/"opt.v:" prefixed names when requested.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from .tensor import Tensor

MAGIC = b"VNMN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(IOError):
    pass


def linear_lr(step, lr0, total_steps):
    """Linear decay from lr0 to lr0/10 over total_steps, constant after."""
    frac = min(step, total_steps) / max(total_steps, 1)
    return lr0 * (1.0 - 0.9 * frac)


class ParameterStore:
    """Named learnable arrays plus per-parameter Adam state."""

    def __init__(self, rng=None, dtype=np.float32):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = np.dtype(dtype)
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def add(self, name, array):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def param(self, name, shape, scale=None, init="uniform"):
        """Create (or fetch) a parameter; default init U(-k, k), k=1/sqrt(fan_in)."""
        if name in self._params:
            return self._params[name]
        if scale is None:
            fan_in = shape[0] if len(shape) > 0 else 1
            scale = 1.0 / np.sqrt(max(fan_in, 1))
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "uniform":
            data = self.rng.uniform(-scale, scale, size=shape)
        elif init == "normal":
            data = self.rng.normal(0.0, scale, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        return self.add(name, data)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_parameters(self):
        return sum(t.data.size for t in self._params.values())

    def clip_grad_norm(self, max_norm):
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float((t.grad.astype(np.float64) ** 2).sum())
        norm = float(np.sqrt(total))
        if norm > max_norm > 0:
            scale = max_norm / (norm + 1e-12)
            for t in self._params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """One Adam update over every parameter with a gradient."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - beta1**t
        bc2 = 1.0 - beta2**t
        for name, p in self._params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    # -- checkpointing ----------------------------------------------------

    def state_arrays(self, include_opt=True):
        out = OrderedDict((n, t.data) for n, t in self._params.items())
        if include_opt:
            for n, a in self._m.items():
                out[f"opt.m:{n}"] = a
            for n, a in self._v.items():
                out[f"opt.v:{n}"] = a
        return out

    def save(self, path, meta=None, include_opt=False):
        meta = dict(meta or {})
        meta["step_count"] = self.step_count
        save_arrays(path, self.state_arrays(include_opt), meta)

    def load(self, path):
        arrays, meta = load_arrays(path)
        for name, arr in arrays.items():
            if name.startswith("opt.m:"):
                self._m[name[6:]] = arr.copy()
            elif name.startswith("opt.v:"):
                self._v[name[6:]] = arr.copy()
            elif name in self._params:
                p = self._params[name]
                if p.data.shape != arr.shape:
                    raise CheckpointError(f"shape mismatch for {name}: {p.data.shape} vs {arr.shape}")
                p.data = arr.astype(self.dtype, copy=True)
            else:
                self.add(name, arr)
        self.step_count = int(meta.get("step_count", 0))
        return meta


def save_arrays(path, arrays, meta=None):
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            code = _DTYPE_CODES.get(arr.dtype.newbyteorder("="))
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(_DTYPES[code], copy=False).tobytes())


def load_arrays(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    meta = json.loads(blob[off : off + meta_len].decode("utf-8")) if meta_len else {}
    off += meta_len
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    arrays = OrderedDict()
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape)
        off += count * dtype.itemsize
        arrays[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    return arrays, meta
