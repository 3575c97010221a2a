"""View-specific dense feature extractors with a softmax classifier head.

A network is ``D -> hidden... -> embed_dim`` with ReLU after every layer
except the last. The last layer's output is the embedding that the
cross-view constraints act on; the head maps it to ``M`` logits.

Checkpoint grammar (``CVSE-CKPT v1``), one token group per line::

    CVSE-CKPT v1
    view <int>
    layers <L>
    dims <d0> <d1> ... <dL>
    classes <M>
    W <k> <rows> <cols>        followed by <rows> lines of <cols> values
    b <k> <n>                  followed by 1 line of <n> values
    ...                        (k = 0..L-1)
    headW <embed_dim> <M>      followed by <embed_dim> lines
    headb <M>                  followed by 1 line

Values are written with ``%.17g`` so a save/load round trip is exact.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DTYPE, SeededRng, affine, relu
from .errors import ParseError, SizingError, StorageError, ValidationError

MAGIC = "CVSE-CKPT v1"


@dataclass(eq=False)
class ViewNetwork:
    view: int
    weights: list
    biases: list
    head_W: np.ndarray
    head_b: np.ndarray

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def embed_dim(self):
        return self.weights[-1].shape[1]

    @property
    def n_classes(self):
        return self.head_W.shape[1]

    def params(self):
        """Parameter arrays in a fixed order (layers, then head)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.head_W, self.head_b]

    def copy(self, view=None):
        net = copy.deepcopy(self)
        if view is not None:
            net.view = view
        return net

    def equals(self, other):
        a, b = self.params(), other.params()
        return len(a) == len(b) and all(
            x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b)
        )


@dataclass(eq=False)
class ParamGrads:
    weights: list
    biases: list
    head_W: np.ndarray
    head_b: np.ndarray

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.head_W, self.head_b]

    def __add__(self, other):
        return ParamGrads(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            self.head_W + other.head_W,
            self.head_b + other.head_b,
        )


@dataclass(eq=False)
class ForwardTape:
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activation of each layer
    embedding: np.ndarray = None
    shapes: tuple = ()


def _shapes(net):
    return tuple(p.shape for p in net.params())


def init(view, D, hidden_dims, embed_dim, M, seed) -> ViewNetwork:
    """Glorot-uniform weights, zero biases.

    Layer ``k`` draws ``U(-a, a)`` with ``a = sqrt(6 / (fan_in + fan_out))``
    from a stream keyed on ``(seed, "layer", k)``; the view label does not
    enter the draw, so nets sharing a seed start identical.
    """
    dims = [int(D)] + [int(h) for h in hidden_dims] + [int(embed_dim)]
    if any(d < 1 for d in dims) or int(M) < 1:
        raise ValidationError(f"network dimensions must be >= 1, got {dims} and M={M}")
    root = SeededRng(seed)
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(root.child("layer", k).uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=DTYPE))
    a = math.sqrt(6.0 / (dims[-1] + M))
    head_W = root.child("head").uniform(-a, a, size=(dims[-1], int(M)))
    return ViewNetwork(int(view), weights, biases, head_W, np.zeros(int(M), dtype=DTYPE))


def forward(net: ViewNetwork, features):
    """Return ``(embedding, logits, tape)`` for one vector or a row batch."""
    x = np.asarray(features, dtype=DTYPE)
    if x.shape[-1] != net.input_dim:
        raise SizingError(f"network expects {net.input_dim} features, got {x.shape[-1]}")
    tape = ForwardTape(shapes=_shapes(net))
    h = x
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        tape.inputs.append(h)
        z = affine(h, W, b)
        tape.pre.append(z)
        h = z if k == last else relu(z)
    tape.embedding = h
    logits = affine(h, net.head_W, net.head_b)
    return h, logits, tape


def embed(net: ViewNetwork, features):
    return forward(net, features)[0]


def backward(net: ViewNetwork, tape: ForwardTape, grad_embedding, grad_logits) -> ParamGrads:
    """Chain-rule parameter gradients.

    ``grad_embedding`` is the loss gradient arriving directly at the
    embedding (constraint path); ``grad_logits`` arrives at the logits
    (softmax path). Batched inputs sum their per-sample gradients.
    """
    if tape.shapes != _shapes(net):
        raise ValidationError("forward tape was not produced by this network")
    emb = tape.embedding
    g_emb = np.asarray(grad_embedding, dtype=DTYPE)
    g_log = np.asarray(grad_logits, dtype=DTYPE)
    if g_emb.shape != emb.shape:
        raise SizingError(f"grad_embedding shape {g_emb.shape} != embedding shape {emb.shape}")
    if g_log.shape != emb.shape[:-1] + (net.n_classes,):
        raise SizingError(f"grad_logits shape {g_log.shape} does not match the head")

    batched = emb.ndim == 2
    outer = (lambda a, g: a.T @ g) if batched else np.outer
    colsum = (lambda g: g.sum(axis=0)) if batched else (lambda g: g)

    head_W = outer(emb, g_log)
    head_b = colsum(g_log)
    delta = g_emb + g_log @ net.head_W.T

    L = len(net.weights)
    gW, gb = [None] * L, [None] * L
    for k in range(L - 1, -1, -1):
        if k < L - 1:
            delta = delta * (tape.pre[k] > 0)
        gW[k] = outer(tape.inputs[k], delta)
        gb[k] = colsum(delta)
        if k > 0:
            delta = delta @ net.weights[k].T
    return ParamGrads(gW, gb, head_W, head_b)


def _fmt(values):
    return " ".join("%.17g" % v for v in values)


def save_checkpoint(net: ViewNetwork, path) -> None:
    lines = [MAGIC, f"view {net.view}", f"layers {len(net.weights)}",
             "dims " + " ".join(str(d) for d in net.dims), f"classes {net.n_classes}"]
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W {k} {W.shape[0]} {W.shape[1]}")
        lines += [_fmt(row) for row in W]
        lines.append(f"b {k} {b.shape[0]}")
        lines.append(_fmt(b))
    lines.append(f"headW {net.head_W.shape[0]} {net.head_W.shape[1]}")
    lines += [_fmt(row) for row in net.head_W]
    lines.append(f"headb {net.head_b.shape[0]}")
    lines.append(_fmt(net.head_b))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc


class _Lines:
    def __init__(self, text):
        self.lines = text.split("\n")
        self.pos = 0

    def next(self):
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines):
            raise ParseError("unexpected end of checkpoint", self.pos)
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def header(self, tag, n_ints):
        tok = self.next()
        if not tok or tok[0] != tag or len(tok) != n_ints + 1:
            raise ParseError(f"expected '{tag}' header with {n_ints} integers", self.pos)
        try:
            return [int(t) for t in tok[1:]]
        except ValueError:
            raise ParseError(f"non-integer field in '{tag}' header", self.pos) from None

    def block(self, rows, cols):
        out = np.empty((rows, cols), dtype=DTYPE)
        for r in range(rows):
            tok = self.next()
            if len(tok) != cols:
                raise ParseError(f"expected {cols} values, found {len(tok)}", self.pos)
            try:
                out[r] = [float(t) for t in tok]
            except ValueError:
                raise ParseError("non-numeric parameter value", self.pos) from None
        return out


def load_checkpoint(path) -> ViewNetwork:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise StorageError(f"checkpoint not found: {path}") from None
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    rd = _Lines(text)
    if " ".join(rd.next()) != MAGIC:
        raise ParseError(f"{path} is not a {MAGIC} file", 1)
    (view,) = rd.header("view", 1)
    (L,) = rd.header("layers", 1)
    dims = rd.header("dims", L + 1)
    (M,) = rd.header("classes", 1)
    weights, biases = [], []
    for k in range(L):
        kk, rows, cols = rd.header("W", 3)
        if (kk, rows, cols) != (k, dims[k], dims[k + 1]):
            raise ParseError(f"layer {k} weight header disagrees with dims", rd.pos)
        weights.append(rd.block(rows, cols))
        kk, n = rd.header("b", 2)
        if (kk, n) != (k, dims[k + 1]):
            raise ParseError(f"layer {k} bias header disagrees with dims", rd.pos)
        biases.append(rd.block(1, n)[0])
    rows, cols = rd.header("headW", 2)
    if (rows, cols) != (dims[-1], M):
        raise ParseError("head weight header disagrees with dims/classes", rd.pos)
    head_W = rd.block(rows, cols)
    (n,) = rd.header("headb", 1)
    if n != M:
        raise ParseError("head bias header disagrees with classes", rd.pos)
    head_b = rd.block(1, n)[0]
    return ViewNetwork(view, weights, biases, head_W, head_b)
