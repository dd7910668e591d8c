"""Named parameter collections, initialisation and checkpoint files."""

from __future__ import annotations

import io
import struct
from collections import OrderedDict

import numpy as np

from .tape import Tensor

_MAGIC = b"FGCK"


class ParamSet:
    """Ordered named parameters, each a :class:`Tensor` with a gradient buffer.

    Biases are registered with ``decay=False`` and skipped by L2 regularisation.
    """

    def __init__(self, init_seed=0, dtype=np.float64):
        self.init_seed = init_seed
        self.dtype = dtype
        self.rng = np.random.Generator(np.random.Philox(key=init_seed))
        self._params = OrderedDict()
        self._decay = {}

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def decays(self, name):
        return self._decay[name]

    def add(self, name, data, decay=True):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        self._decay[name] = decay
        return t

    def glorot(self, name, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def zeros(self, name, rows, cols, decay=False):
        return self.add(name, np.zeros((rows, cols)), decay=decay)

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def state(self):
        """Deep copy of parameter values, keyed by name."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state):
        for k, t in self._params.items():
            if state[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {t.data.shape}")
            t.data = np.array(state[k], dtype=self.dtype)

    def num_values(self):
        return sum(t.data.size for t in self._params.values())


def save_checkpoint(params, path):
    """Flat binary: magic, count, then per tensor (name, rows, cols, float64 data)."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<QQ", *t.data.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    (count,) = struct.unpack_from("<I", blob, 4)
    pos, state = 8, {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rows, cols = struct.unpack_from("<QQ", blob, pos)
        pos += 16
        size = rows * cols * 8
        state[name] = np.frombuffer(blob[pos : pos + size], dtype="<f8").reshape(rows, cols).copy()
        pos += size
    if pos != len(blob):
        raise ValueError(f"trailing bytes in checkpoint {path}")
    return state
