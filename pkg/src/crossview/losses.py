"""Loss values and exact analytic gradients.

Cross-view losses take embeddings grouped by identity: a mapping from
identity label to a ``(K, d)`` array holding that identity's embeddings in
one view. Gradients come back in the same layout. Identities that appear in
only one of the two views add nothing to the cross-view terms and are
counted in ``skipped``.

All gradients are the exact partial derivatives of the averaged losses,
including the ``1/(2M)`` and ``1/K`` normalisers, so they pass finite
difference checks. Per pair, they point in the same direction as the plain
``x1 - x2`` / ``(x - C_v) + (x - C)`` forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, NamedTuple

import numpy as np

from .core import DTYPE, log_softmax, softmax
from .errors import ValidationError

Groups = Mapping[int, np.ndarray]


class PairLoss(NamedTuple):
    value: float
    grads1: dict
    grads2: dict
    skipped: int


class CenterGrads(NamedTuple):
    global_: dict
    per_view: dict  # view -> {identity: grad}


class CenterPairLoss(NamedTuple):
    value: float
    grads1: dict
    grads2: dict
    center_grads: CenterGrads
    skipped: int


@dataclass(eq=False)
class CenterBank:
    """Global centers ``global_[i]`` and per-view centers ``per_view[v][i]``."""

    global_: dict
    per_view: dict
    embed_dim: int

    def copy(self):
        return CenterBank(
            {i: c.copy() for i, c in self.global_.items()},
            {v: {i: c.copy() for i, c in cs.items()} for v, cs in self.per_view.items()},
            self.embed_dim,
        )

    def distance_to(self, other):
        """Sum of squared differences between matching centers."""
        total = sum(float(((c - other.global_[i]) ** 2).sum()) for i, c in self.global_.items())
        for v, cs in self.per_view.items():
            total += sum(float(((c - other.per_view[v][i]) ** 2).sum()) for i, c in cs.items())
        return total


@dataclass
class LossReport:
    softmax_per_view: list
    cv_ec: float = 0.0
    cv_cl: float = 0.0
    center: float = 0.0
    joint: float = 0.0
    phase: str = "cvec"


def softmax_loss(logits, labels):
    """Summed negative log-likelihood and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=DTYPE))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(y) != len(z):
        raise ValidationError(f"{len(z)} logit rows but {len(y)} labels")
    M = z.shape[1]
    if y.size and (y.min() < 0 or y.max() >= M):
        raise ValidationError(f"labels must lie in 0..{M - 1}")
    rows = np.arange(len(y))
    value = -float(log_softmax(z)[rows, y].sum())
    grad = softmax(z)
    grad[rows, y] -= 1.0
    if np.ndim(logits) == 1:
        grad = grad[0]
    return value, grad


def _shared(g1: Groups, g2: Groups):
    shared = sorted(set(g1) & set(g2))
    skipped = len(set(g1) ^ set(g2))
    return shared, skipped


def cv_ec(g1: Groups, g2: Groups) -> PairLoss:
    """Mean squared cross-view distance between same-identity embeddings.

    ``(1/2M) sum_i 1/(K1_i K2_i) sum_p sum_q ||x1_ip - x2_iq||^2``
    """
    shared, skipped = _shared(g1, g2)
    if not shared:
        raise ValidationError("no identity has embeddings in both views")
    M = len(shared)
    value = 0.0
    grads1, grads2 = {}, {}
    for i in shared:
        a = np.asarray(g1[i], dtype=DTYPE)
        b = np.asarray(g2[i], dtype=DTYPE)
        K1, K2 = len(a), len(b)
        # sum_pq ||a_p - b_q||^2 = K2 sum ||a||^2 + K1 sum ||b||^2 - 2 <sum a, sum b>
        diff = a[:, None, :] - b[None, :, :]
        value += float((diff ** 2).sum()) / (K1 * K2)
        scale = 1.0 / (M * K1 * K2)
        grads1[i] = scale * (K2 * a - b.sum(axis=0))
        grads2[i] = scale * (K1 * b - a.sum(axis=0))
    return PairLoss(value / (2 * M), grads1, grads2, skipped)


def center_loss(groups: Groups, centers: Mapping[int, np.ndarray]):
    """Single-center loss ``(1/2M) sum_i (1/K_i) sum_j ||x_ij - C_i||^2``."""
    if not groups:
        raise ValidationError("center_loss needs at least one identity")
    missing = [i for i in groups if i not in centers]
    if missing:
        raise ValidationError(f"no center for identities {sorted(missing)[:10]}")
    M = len(groups)
    value = 0.0
    grads = {}
    for i in sorted(groups):
        x = np.asarray(groups[i], dtype=DTYPE)
        d = x - centers[i]
        value += float((d ** 2).sum()) / len(x)
        grads[i] = d / (M * len(x))
    return value / (2 * M), grads


def cv_cl(g1: Groups, g2: Groups, bank: CenterBank, views=(0, 1)) -> CenterPairLoss:
    """Cross-view center loss.

    Each embedding is pulled toward its own view's center and toward the
    identity's global center; ``views`` names the bank entries used for
    ``g1`` and ``g2``.
    """
    shared, skipped = _shared(g1, g2)
    if not shared:
        raise ValidationError("no identity has embeddings in both views")
    v1, v2 = views
    for i in shared:
        if i not in bank.global_ or i not in bank.per_view.get(v1, {}) or i not in bank.per_view.get(v2, {}):
            raise ValidationError(f"center bank has no entry for identity {i}")
    M = len(shared)
    value = 0.0
    grads1, grads2 = {}, {}
    cg_global, cg_view = {}, {v1: {}, v2: {}}
    for i in shared:
        C = bank.global_[i]
        cg = np.zeros_like(C)
        for v, g, out in ((v1, g1, grads1), (v2, g2, grads2)):
            x = np.asarray(g[i], dtype=DTYPE)
            K = len(x)
            Cv = bank.per_view[v][i]
            dv, dg = x - Cv, x - C
            value += float((dv ** 2).sum() + (dg ** 2).sum()) / K
            scale = 1.0 / (M * K)
            out[i] = scale * (dv + dg)
            cg_view[v][i] = -scale * dv.sum(axis=0)
            cg -= scale * dg.sum(axis=0)
        cg_global[i] = cg
    return CenterPairLoss(value / (2 * M), grads1, grads2, CenterGrads(cg_global, cg_view), skipped)


def joint_loss_L1(softmax_values, cv_ec_value, lambda1):
    if lambda1 < 0:
        raise ValidationError("lambda1 must be >= 0")
    return float(sum(softmax_values)) + lambda1 * cv_ec_value


def joint_loss_L2(softmax_values, cv_cl_value, lambda2):
    if lambda2 < 0:
        raise ValidationError("lambda2 must be >= 0")
    return float(sum(softmax_values)) + lambda2 * cv_cl_value


def init_centers(by_identity_view: Mapping[int, Mapping[int, np.ndarray]], views=None) -> CenterBank:
    """Centers as means of the current embeddings.

    ``by_identity_view[i][v]`` holds identity ``i``'s view-``v`` embeddings.
    A view with no embeddings for ``i`` gets ``i``'s global mean.
    """
    if views is None:
        views = sorted({v for per in by_identity_view.values() for v in per})
    global_, per_view = {}, {v: {} for v in views}
    dim = None
    for i in sorted(by_identity_view):
        parts = [np.asarray(x, dtype=DTYPE) for x in by_identity_view[i].values() if len(x)]
        if not parts:
            raise ValidationError(f"identity {i} has no embeddings")
        allx = np.concatenate(parts)
        dim = allx.shape[1]
        global_[i] = allx.mean(axis=0)
        for v in views:
            x = by_identity_view[i].get(v)
            per_view[v][i] = np.asarray(x, dtype=DTYPE).mean(axis=0) if x is not None and len(x) else global_[i].copy()
    if dim is None:
        raise ValidationError("init_centers needs at least one identity")
    return CenterBank(global_, per_view, dim)


def group_rows(identities, views):
    """``rows[v][i]`` is the index array of samples with identity i in view v."""
    identities = np.asarray(identities)
    views = np.asarray(views)
    rows = {}
    for v in np.unique(views):
        in_view = np.flatnonzero(views == v)
        ids = identities[in_view]
        rows[int(v)] = {int(i): in_view[ids == i] for i in np.unique(ids)}
    return rows


def gather(embeddings, rows_for_view):
    return {i: embeddings[r] for i, r in rows_for_view.items()}


def scatter(grads, rows_for_view, out):
    for i, g in grads.items():
        out[rows_for_view[i]] += g
    return out


def cross_view_intra_class_distance(embeddings, identities, views, pairs=None):
    """CV-EC value over a whole sample set.

    With more than two views the value is averaged over all view pairs that
    share at least one identity (or over ``pairs`` if given).
    """
    emb = np.asarray(embeddings, dtype=DTYPE)
    rows = group_rows(identities, views)
    if pairs is None:
        pairs = list(combinations(sorted(rows), 2))
    values = []
    for v1, v2 in pairs:
        if v1 in rows and v2 in rows and set(rows[v1]) & set(rows[v2]):
            values.append(cv_ec(gather(emb, rows[v1]), gather(emb, rows[v2])).value)
    if not values:
        raise ValidationError("no identity appears in two views")
    return float(np.mean(values))
