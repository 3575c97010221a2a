"""Central finite-difference checks of every analytic gradient.

The error for one instance is ``max|analytic - numeric|`` divided by
``max(max|analytic|, max|numeric|, 1e-8)``, i.e. relative to the scale of
the gradient being checked. A group passes when the worst instance stays
below ``tol``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from .core import SeededRng, derive_seed
from .network import backward, forward, init

H = 1e-5
TOL = 1e-4
FLOOR = 1e-8

GROUPS = ("softmax", "cv_ec", "center_loss", "cv_cl_embeddings", "cv_cl_centers",
          "network_weights", "network_biases", "network_head")


@dataclass
class CheckResult:
    group: str
    instances: int
    max_rel_err: float
    tol: float = TOL

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def numeric_grad(f, x, h=H):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f()
        flat[k] = old - h
        down = f()
        flat[k] = old
        gflat[k] = (up - down) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=FLOOR):
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / scale)


def random_groups(rng: SeededRng, n_ids, dim, max_k=3, offset=0):
    return {i + offset: rng.normal(size=(int(rng.integers(1, max_k + 1)), dim)) for i in range(n_ids)}


def random_bank(rng, ids, dim, views=(0, 1)):
    return L.CenterBank({i: rng.normal(size=dim) for i in ids},
                        {v: {i: rng.normal(size=dim) for i in ids} for v in views}, dim)


def _check_softmax(rng, corrupt):
    n, m = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    z = rng.normal(scale=3.0, size=(n, m))
    y = rng.integers(0, m, size=n)
    _, g = L.softmax_loss(z, y)
    num = numeric_grad(lambda: L.softmax_loss(z, y)[0], z)
    return [(g + corrupt, num)]


def _check_cv_ec(rng, corrupt):
    m, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    g1, g2 = random_groups(rng, m, d), random_groups(rng, m, d)
    res = L.cv_ec(g1, g2)
    pairs = []
    for groups, grads in ((g1, res.grads1), (g2, res.grads2)):
        for i in groups:
            num = numeric_grad(lambda: L.cv_ec(g1, g2).value, groups[i])
            pairs.append((grads[i] + corrupt, num))
    return pairs


def _check_center(rng, corrupt):
    m, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    groups = random_groups(rng, m, d)
    centers = {i: rng.normal(size=d) for i in groups}
    _, grads = L.center_loss(groups, centers)
    return [(grads[i] + corrupt, numeric_grad(lambda: L.center_loss(groups, centers)[0], groups[i]))
            for i in groups]


def _cv_cl_instance(rng):
    m, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    g1, g2 = random_groups(rng, m, d), random_groups(rng, m, d)
    return g1, g2, random_bank(rng, list(g1), d)


def _check_cv_cl_embeddings(rng, corrupt):
    g1, g2, bank = _cv_cl_instance(rng)
    res = L.cv_cl(g1, g2, bank)
    pairs = []
    for groups, grads in ((g1, res.grads1), (g2, res.grads2)):
        for i in groups:
            num = numeric_grad(lambda: L.cv_cl(g1, g2, bank).value, groups[i])
            pairs.append((grads[i] + corrupt, num))
    return pairs


def _check_cv_cl_centers(rng, corrupt):
    g1, g2, bank = _cv_cl_instance(rng)
    cg = L.cv_cl(g1, g2, bank).center_grads
    f = lambda: L.cv_cl(g1, g2, bank).value  # noqa: E731
    pairs = [(cg.global_[i] + corrupt, numeric_grad(f, bank.global_[i])) for i in g1]
    for v in (0, 1):
        pairs += [(cg.per_view[v][i] + corrupt, numeric_grad(f, bank.per_view[v][i])) for i in g1]
    return pairs


def random_network_instance(rng: SeededRng, margin=1e-3):
    """A small random net plus inputs whose hidden pre-activations avoid ReLU kinks."""
    D, M = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    hidden = [int(h) for h in rng.integers(2, 6, size=int(rng.integers(0, 3)))]
    net = init(0, D, hidden, int(rng.integers(2, 5)), M, int(rng.integers(0, 2**62)))
    for b in net.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    net.head_b[:] = rng.normal(scale=0.1, size=M)
    while True:
        x = rng.normal(size=(int(rng.integers(1, 4)), D))
        _, _, tape = forward(net, x)
        if all(np.abs(z).min() > margin for z in tape.pre[:-1]):
            break
    y = rng.integers(0, M, size=len(x))
    probe = rng.normal(size=(len(x), net.embed_dim))
    return net, x, y, probe


def probe_loss(net, x, y, probe):
    emb, logits, _ = forward(net, x)
    return float((probe * emb).sum()) + L.softmax_loss(logits, y)[0]


def _network_pairs(rng, corrupt, which):
    net, x, y, probe = random_network_instance(rng)
    emb, logits, tape = forward(net, x)
    _, glog = L.softmax_loss(logits, y)
    grads = backward(net, tape, probe, glog)
    f = lambda: probe_loss(net, x, y, probe)  # noqa: E731
    if which == "weights":
        return [(g + corrupt, numeric_grad(f, p)) for g, p in zip(grads.weights, net.weights)]
    if which == "biases":
        return [(g + corrupt, numeric_grad(f, p)) for g, p in zip(grads.biases, net.biases)]
    return [(grads.head_W + corrupt, numeric_grad(f, net.head_W)),
            (grads.head_b + corrupt, numeric_grad(f, net.head_b))]


_CHECKS = {
    "softmax": _check_softmax,
    "cv_ec": _check_cv_ec,
    "center_loss": _check_center,
    "cv_cl_embeddings": _check_cv_cl_embeddings,
    "cv_cl_centers": _check_cv_cl_centers,
    "network_weights": lambda rng, c: _network_pairs(rng, c, "weights"),
    "network_biases": lambda rng, c: _network_pairs(rng, c, "biases"),
    "network_head": lambda rng, c: _network_pairs(rng, c, "head"),
}


def run_checks(instances=100, seed=0, groups=GROUPS, corrupt=None, corrupt_by=1e-2, tol=TOL):
    """Run every group on ``instances`` random problems.

    ``corrupt`` names a group whose analytic gradients get ``corrupt_by``
    added before comparison (a negative control).
    """
    results = []
    for group in groups:
        rng = SeededRng(derive_seed(seed, "gradcheck", group))
        shift = corrupt_by if group == corrupt else 0.0
        worst = 0.0
        for _ in range(instances):
            for analytic, numeric in _CHECKS[group](rng, shift):
                worst = max(worst, rel_error(analytic, numeric))
        results.append(CheckResult(group, instances, worst, tol))
    return results
