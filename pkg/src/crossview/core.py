"""Dense numeric kernels and seeded randomness.

Everything is float64. Vectors are 1-D arrays; the kernels also accept a
2-D batch with one sample per row, which is how the trainer calls them.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import NumericError, SizingError

DTYPE = np.float64


def affine(x, W, b):
    """Return ``W.T @ x + b``.

    ``W`` has shape ``(in, out)``; its columns are the per-output weight
    vectors. ``x`` may be a single vector or a ``(N, in)`` batch.
    """
    x = np.asarray(x, dtype=DTYPE)
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if W.ndim != 2 or b.ndim != 1:
        raise SizingError(f"W must be 2-D and b 1-D, got {W.shape} and {b.shape}")
    if x.shape[-1] != W.shape[0]:
        raise SizingError(f"input has {x.shape[-1]} features, W expects {W.shape[0]}")
    if b.shape[0] != W.shape[1]:
        raise SizingError(f"bias has {b.shape[0]} entries, W has {W.shape[1]} columns")
    return x @ W + b


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def log_softmax(logits):
    """Stable ``logits - logsumexp(logits)`` along the last axis."""
    z = np.asarray(logits, dtype=DTYPE)
    if not np.all(np.isfinite(z)):
        raise NumericError("log_softmax received non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def derive_seed(root, *labels):
    """Derive a 64-bit sub-seed from a root seed and a label path.

    The seed is the first 8 bytes (big-endian) of
    ``sha256("root/label1/label2/...")``, so sub-streams are stable across
    runs, platforms and implementations.
    """
    key = "/".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


class SeededRng:
    """Philox-4x64 counter-based stream behind numpy's ``Generator`` API.

    One instance belongs to one consumer; derive a fresh one with
    :meth:`child` instead of sharing.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.gen = np.random.Generator(np.random.Philox(seed))

    def child(self, *labels):
        return SeededRng(derive_seed(self.seed, *labels))

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)
