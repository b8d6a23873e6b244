"""Seeded, splittable random streams.

Each stream is a Philox counter-based generator keyed by ``(seed, path)``,
where ``path`` is the tuple of stream ids used to split it off the root.
Normal draws use Box-Muller on the stream's uniform doubles so they do not
depend on numpy's distribution code.
"""
import json
import zlib

import numpy as np

from .tensor import Tensor, get_dtype


def _stream_key(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream ids must be non-negative, got {part}")
        return int(part)
    # string ids hash to a stable 32-bit value
    return zlib.crc32(str(part).encode("utf-8"))


class Rng:
    def __init__(self, seed, path=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_stream_key(p) for p in self.path))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *stream_ids):
        """Independent child stream; does not advance this stream."""
        return Rng(self.seed, self.path + stream_ids)

    def uniform(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size=None, p=None):
        return self._gen.choice(n, size=size, p=p)

    def normal_array(self, shape):
        """i.i.d. N(0,1) float64 draws of the given shape (Box-Muller)."""
        shape = tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self._gen.random(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], safe for log
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n].reshape(shape)

    def state_bytes(self):
        state = {"seed": self.seed, "path": [str(p) if not isinstance(p, int) else p for p in self.path],
                 "bit_generator": self._gen.bit_generator.state}
        return json.dumps(state, sort_keys=True, default=_jsonable).encode("utf-8")

    @classmethod
    def from_state_bytes(cls, blob):
        state = json.loads(blob.decode("utf-8"))
        rng = cls(state["seed"], tuple(state["path"]))
        bg = state["bit_generator"]
        rng._gen.bit_generator.state = _restore_arrays(bg)
        return rng


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _restore_arrays(bg):
    st = dict(bg)
    inner = dict(st["state"])
    inner["counter"] = np.asarray(inner["counter"], dtype=np.uint64)
    inner["key"] = np.asarray(inner["key"], dtype=np.uint64)
    st["state"] = inner
    st["buffer"] = np.asarray(st["buffer"], dtype=np.uint64)
    return st


def gaussian(rng, shape):
    """Tensor of i.i.d. standard normal draws in the current precision."""
    return Tensor(rng.normal_array(shape).astype(get_dtype()))
