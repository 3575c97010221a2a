"""Optimisation of view-specific networks under the cross-view constraints.

Two-view training alternates a CV-EC phase and a CV-CL phase
(:func:`train_icv_eccl`); more than two views are handled one view at a time
against a shared public network (:func:`train_multiview`).

Batches hold up to ``batch_identities`` identities that appear in both
views and up to ``batch_per_view`` samples of each identity per view. An
epoch makes enough rounds over the identities that every sample is drawn at
least once. Identity order is keyed on ``(seed, epoch)`` and each view's
sample order on ``(seed, epoch, view)``, so one view's batches do not
depend on the other view's data.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import losses as L
from .core import SeededRng, derive_seed
from .dataset import Dataset, index_by_identity_view, one_vs_rest
from .errors import NumericError, StorageError, ValidationError
from .network import ViewNetwork, backward, embed, forward, init

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training hyperparameters.

    Defaults for ``lambda1``, ``lambda2``, ``lr``, ``alpha``, ``momentum`` and
    ``weight_decay`` are the published full-scale settings. Small synthetic
    problems need a larger learning rate; see :func:`desk_config`.
    """

    lambda1: float = 0.1
    lambda2: float = 0.1
    lr: float = 1e-4
    alpha: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_identities: int = 8
    batch_per_view: int = 2
    eps1: float = 1e-3
    eps2: float = 1e-3
    eps: float = 1e-3
    max_epochs_per_phase: int = 30
    max_outer_iters: int = 2
    warmup_epochs: int = 5
    hidden_dims: tuple = (64, 64)
    embed_dim: int = 32
    freeze_centers: bool = False
    multiview_passes: int = 1
    seed: int = 0

    def validate(self):
        for name in ("lr", "alpha", "eps1", "eps2", "eps"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        for name in ("lambda1", "lambda2", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        for name in ("batch_identities", "batch_per_view", "max_epochs_per_phase",
                     "max_outer_iters", "multiview_passes", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.warmup_epochs < 0:
            raise ValidationError("warmup_epochs must be >= 0")
        return self

    def replace(self, **changes):
        values = asdict(self)
        unknown = set(changes) - set(values)
        if unknown:
            raise ValidationError(f"unknown TrainConfig fields: {sorted(unknown)}")
        values.update(changes)
        return TrainConfig(**values)


def desk_config(**changes) -> TrainConfig:
    """Settings tuned for the seeded synthetic problems (tens of identities).

    Two multi-view passes let the early view networks re-align with the
    public network after it has seen every view.
    """
    base = TrainConfig(lr=1e-3, alpha=0.5, weight_decay=1e-2, max_epochs_per_phase=30,
                       warmup_epochs=5, multiview_passes=2)
    return base.replace(**changes) if changes else base


# ----------------------------------------------------------------- updates


class OptimizerState:
    """Velocity buffers mirroring one network's parameters."""

    def __init__(self, net: ViewNetwork):
        self.velocity = [np.zeros_like(p) for p in net.params()]


def sgd_step(net: ViewNetwork, grads, state: OptimizerState, cfg: TrainConfig):
    """Heavy-ball step: ``v = m*v - lr*(g + wd*theta); theta += v`` (in place)."""
    params, gs = net.params(), grads.params()
    if len(params) != len(gs) or len(params) != len(state.velocity):
        raise ValidationError("gradient/optimizer state does not match the network")
    for p, g, v in zip(params, gs, state.velocity):
        if p.shape != g.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in sgd_step")
        v *= cfg.momentum
        v -= cfg.lr * (g + cfg.weight_decay * p)
        p += v
    return net, state


def center_step(bank: L.CenterBank, center_grads: L.CenterGrads, alpha: float):
    """``C -= alpha * dL/dC`` for every center that received a gradient (in place)."""
    for i, g in center_grads.global_.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for global center {i}")
        bank.global_[i] -= alpha * g
    for v, gs in center_grads.per_view.items():
        for i, g in gs.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for view {v} center {i}")
            bank.per_view[v][i] -= alpha * g
    return bank


# ----------------------------------------------------------------- logging


@dataclass
class LogRow:
    epoch: int
    phase: str
    softmax: list
    cv_ec: float
    cv_cl: float
    joint: float
    crossview_dist: float
    crossview_dist_heldout: float = float("nan")


@dataclass
class PhaseMarker:
    phase: str
    first_epoch: int
    last_epoch: int
    crossview_dist: float
    crossview_dist_heldout: float = float("nan")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    markers: list = field(default_factory=list)
    # (phase, crossview, heldout) snapshot taken after warmup
    initial: PhaseMarker = None
    outer_losses: list = field(default_factory=list)
    epoch: int = 0

    def extend(self, other: "TrainLog"):
        self.rows += other.rows
        self.markers += other.markers
        self.outer_losses += other.outer_losses
        self.epoch = max(self.epoch, other.epoch)

    def boundary_distances(self, heldout=False):
        """Cross-view distance after warmup and at the end of every constraint phase."""
        key = "crossview_dist_heldout" if heldout else "crossview_dist"
        seq = [] if self.initial is None else [getattr(self.initial, key)]
        return seq + [getattr(m, key) for m in self.markers]

    def to_csv(self, path):
        n_views = max((len(r.softmax) for r in self.rows), default=2)
        header = (["epoch", "phase"] + [f"loss_softmax_v{v}" for v in range(n_views)]
                  + ["cv_ec", "cv_cl", "joint", "crossview_dist", "crossview_dist_heldout"])
        try:
            with Path(path).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in self.rows:
                    w.writerow([r.epoch, r.phase] + [repr(float(s)) for s in r.softmax]
                               + [repr(float(x)) for x in (r.cv_ec, r.cv_cl, r.joint,
                                                           r.crossview_dist, r.crossview_dist_heldout)])
        except OSError as exc:
            raise StorageError(f"cannot write training log {path}: {exc}") from exc

    def markers_to_csv(self, path):
        try:
            with Path(path).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["phase", "first_epoch", "last_epoch", "crossview_dist", "crossview_dist_heldout"])
                rows = ([self.initial] if self.initial else []) + self.markers
                for m in rows:
                    w.writerow([m.phase, m.first_epoch, m.last_epoch,
                                repr(float(m.crossview_dist)), repr(float(m.crossview_dist_heldout))])
        except OSError as exc:
            raise StorageError(f"cannot write phase log {path}: {exc}") from exc


# ----------------------------------------------------------------- batching


def _batch_identities(data: Dataset):
    views = range(data.V)
    present = [set(np.unique(data.identities[data.views == v]).tolist()) for v in views]
    return np.array(sorted(set.intersection(*present)), dtype=np.int64)


def plan_batches(data: Dataset, index, cfg: TrainConfig, epoch: int, views=None):
    """Row indices per view for every batch of one epoch.

    Returns a list of batches; each batch maps view -> (rows, labels).
    """
    ids = _batch_identities(data)
    if ids.size == 0:
        raise ValidationError("no identity has samples in every training view")
    views = range(data.V) if views is None else views
    order = SeededRng(derive_seed(cfg.seed, "epoch", epoch, "order")).permutation(len(ids))
    ids = ids[order]
    perms = {}
    for v in views:
        rng = SeededRng(derive_seed(cfg.seed, "epoch", epoch, "view", v))
        perms[v] = {int(i): np.asarray(index[i][v])[rng.permutation(len(index[i][v]))]
                    for i in sorted(ids.tolist())}
    K, P = cfg.batch_per_view, cfg.batch_identities
    most = max(len(p) for per in perms.values() for p in per.values())
    batches = []
    for r in range(math.ceil(most / K)):
        for start in range(0, len(ids), P):
            chunk = ids[start:start + P]
            batch = {}
            for v in views:
                rows, labels = [], []
                for i in chunk.tolist():
                    p = perms[v][i]
                    take = [p[(r * K + j) % len(p)] for j in range(min(K, len(p)))]
                    rows += take
                    labels += [i] * len(take)
                batch[v] = (np.array(rows, dtype=np.int64), np.array(labels, dtype=np.int64))
            batches.append(batch)
    return batches


# ----------------------------------------------------------------- epochs


def embed_dataset(nets, data: Dataset):
    """Embed each sample with the network of its own view."""
    out = np.empty((len(data), nets[0].embed_dim))
    for v in range(data.V):
        rows = np.flatnonzero(data.views == v)
        if rows.size:
            out[rows] = embed(nets[v], data.features[rows])
    return out


def crossview_distance(nets, data: Dataset):
    return L.cross_view_intra_class_distance(embed_dataset(nets, data), data.identities, data.views)


def _snapshot(nets):
    return [n.copy() for n in nets]


def _groups(emb, labels):
    return {int(i): emb[labels == i] for i in np.unique(labels)}


def _scatter(grads, labels, out, scale):
    for i, g in grads.items():
        out[labels == i] += scale * g


def run_epoch(nets, states, data: Dataset, index, cfg: TrainConfig, epoch: int,
              mode: str, bank: L.CenterBank | None = None, views=None):
    """One pass of mini-batch updates.

    ``mode`` is ``"softmax"`` (no constraint), ``"cvec"`` or ``"cvcl"``.
    ``views`` restricts training to a subset of the nets; the remaining nets
    are untouched. Returns the epoch-mean :class:`LossReport`.
    """
    views = list(range(data.V)) if views is None else list(views)
    if mode != "softmax" and views != [0, 1]:
        raise ValidationError("cross-view constraints need exactly views 0 and 1")
    totals = np.zeros(len(views) + 3)
    batches = plan_batches(data, index, cfg, epoch, views)
    for batch in batches:
        embs, tapes, glogs, sm = {}, {}, {}, []
        for v in views:
            rows, labels = batch[v]
            e, logits, tape = forward(nets[v], data.features[rows])
            value, glog = L.softmax_loss(logits, labels)
            embs[v], tapes[v], glogs[v] = e, tape, glog
            sm.append(value)
        gembs = {v: np.zeros_like(embs[v]) for v in views}
        cvec_value = cvcl_value = 0.0
        center_grads = None
        if mode == "cvec":
            lam = cfg.lambda1
            res = L.cv_ec(_groups(embs[0], batch[0][1]), _groups(embs[1], batch[1][1]))
            cvec_value = res.value
            joint = L.joint_loss_L1(sm, cvec_value, lam)
        elif mode == "cvcl":
            lam = cfg.lambda2
            res = L.cv_cl(_groups(embs[0], batch[0][1]), _groups(embs[1], batch[1][1]), bank)
            cvcl_value = res.value
            center_grads = res.center_grads
            joint = L.joint_loss_L2(sm, cvcl_value, lam)
        else:
            lam = 0.0
            joint = float(sum(sm))
        if mode != "softmax" and lam:
            _scatter(res.grads1, batch[0][1], gembs[0], lam)
            _scatter(res.grads2, batch[1][1], gembs[1], lam)
        if not math.isfinite(joint):
            raise NumericError(f"loss became non-finite at epoch {epoch}")
        for v in views:
            grads = backward(nets[v], tapes[v], gembs[v], glogs[v])
            sgd_step(nets[v], grads, states[v], cfg)
        if center_grads is not None and not cfg.freeze_centers:
            center_step(bank, center_grads, cfg.alpha)
        totals += [*sm, cvec_value, cvcl_value, joint]
    totals /= len(batches)
    return L.LossReport(
        softmax_per_view=totals[:len(views)].tolist(),
        cv_ec=float(totals[-3]), cv_cl=float(totals[-2]), joint=float(totals[-1]),
        phase=mode,
    )


class _Run:
    """Mutable state shared by the phases of one two-view training run."""

    def __init__(self, nets, data, cfg, heldout=None, log_=None, label=""):
        if len(nets) != 2 or data.V != 2:
            raise ValidationError("two-view training needs two networks and a two-view dataset")
        if nets[0].embed_dim != nets[1].embed_dim:
            raise ValidationError("view networks must share embed_dim")
        self.nets = nets
        self.data = data
        self.cfg = cfg
        self.heldout = heldout
        self.index = index_by_identity_view(data)
        self.states = [OptimizerState(n) for n in nets]
        self.log = log_ if log_ is not None else TrainLog()
        self.label = label

    def distances(self):
        d = crossview_distance(self.nets, self.data)
        h = crossview_distance(self.nets, self.heldout) if self.heldout is not None else float("nan")
        return d, h

    def epochs(self, mode, phase, max_epochs, eps, bank=None, views=None):
        first = self.log.epoch
        for _ in range(max_epochs):
            good = _snapshot(self.nets)
            try:
                rep = run_epoch(self.nets, self.states, self.data, self.index, self.cfg,
                                self.log.epoch, mode, bank, views)
            except NumericError as exc:
                raise NumericError(f"{phase}: {exc}", last_good=good) from exc
            d, h = self.distances()
            softmax = rep.softmax_per_view if views is None else [
                rep.softmax_per_view[views.index(v)] if v in views else float("nan") for v in range(2)]
            self.log.rows.append(LogRow(self.log.epoch, self.label + phase, softmax,
                                        rep.cv_ec, rep.cv_cl, rep.joint, d, h))
            log.debug("epoch %d %s joint=%.6g crossview=%.6g", self.log.epoch, phase, rep.joint, d)
            self.log.epoch += 1
            if rep.joint < eps:
                break
        return first

    def mark(self, phase, first):
        d, h = self.distances()
        self.log.markers.append(PhaseMarker(self.label + phase, first, self.log.epoch - 1, d, h))

    def warmup(self):
        if self.cfg.warmup_epochs:
            # eps=0 keeps warmup at its fixed length
            self.epochs("softmax", "warmup", self.cfg.warmup_epochs, 0.0)
        d, h = self.distances()
        self.log.initial = PhaseMarker(self.label + "initial", 0, self.log.epoch - 1, d, h)

    def cvec_phase(self, tag=""):
        first = self.epochs("cvec", "cvec" + tag, self.cfg.max_epochs_per_phase, self.cfg.eps1)
        self.mark("cvec" + tag, first)

    def cvcl_phase(self, bank=None, tag=""):
        if bank is None:
            bank = current_centers(self.nets, self.data)
        first = self.epochs("cvcl", "cvcl" + tag, self.cfg.max_epochs_per_phase, self.cfg.eps2, bank=bank)
        self.mark("cvcl" + tag, first)
        return bank


def current_centers(nets, data: Dataset) -> L.CenterBank:
    """Centers of the embeddings the current networks produce."""
    emb = embed_dataset(nets, data)
    rows = L.group_rows(data.identities, data.views)
    by_id = {}
    for v, per in rows.items():
        for i, r in per.items():
            by_id.setdefault(i, {})[v] = emb[r]
    return L.init_centers(by_id, views=list(range(data.V)))


def evaluate_losses(nets, data: Dataset, cfg: TrainConfig, bank=None) -> tuple:
    """Full-set ``(L1, L2)`` under the current parameters.

    Softmax terms are summed over every sample; ``bank`` defaults to the
    current embedding means.
    """
    emb = embed_dataset(nets, data)
    sm = []
    for v in range(2):
        rows = np.flatnonzero(data.views == v)
        _, logits, _ = forward(nets[v], data.features[rows])
        sm.append(L.softmax_loss(logits, data.identities[rows])[0])
    rows = L.group_rows(data.identities, data.views)
    g1, g2 = L.gather(emb, rows[0]), L.gather(emb, rows[1])
    bank = current_centers(nets, data) if bank is None else bank
    l1 = L.joint_loss_L1(sm, L.cv_ec(g1, g2).value, cfg.lambda1)
    l2 = L.joint_loss_L2(sm, L.cv_cl(g1, g2, bank).value, cfg.lambda2)
    return l1, l2


def init_pair(data: Dataset, cfg: TrainConfig):
    """Two identically initialised view networks."""
    return [init(v, data.D, cfg.hidden_dims, cfg.embed_dim, data.M, derive_seed(cfg.seed, "init"))
            for v in range(2)]


# ----------------------------------------------------------------- phases


def train_phase_cvec(nets, data: Dataset, cfg: TrainConfig, heldout=None) -> TrainLog:
    """Softmax + lambda1 * CV-EC until the epoch-mean L1 < eps1 or the epoch cap (in place)."""
    run = _Run(nets, data, cfg.validate(), heldout)
    run.log.initial = PhaseMarker("initial", 0, -1, *run.distances())
    run.cvec_phase()
    return run.log


def train_phase_cvcl(nets, bank, data: Dataset, cfg: TrainConfig, heldout=None) -> TrainLog:
    """Softmax + lambda2 * CV-CL with center updates (nets and bank updated in place)."""
    run = _Run(nets, data, cfg.validate(), heldout)
    run.log.initial = PhaseMarker("initial", 0, -1, *run.distances())
    run.cvcl_phase(bank if bank is not None else current_centers(nets, data))
    return run.log


def _icv_loop(run: _Run):
    cfg = run.cfg
    for outer in range(1, cfg.max_outer_iters + 1):
        run.cvec_phase(f"-{outer}")
        bank = current_centers(run.nets, run.data)
        run.cvcl_phase(bank, f"-{outer}")
        l1, l2 = evaluate_losses(run.nets, run.data, cfg)
        run.log.outer_losses.append(l1 + l2)
        if l1 + l2 < cfg.eps:
            break


def train_icv_eccl(nets, data: Dataset, cfg: TrainConfig, heldout=None):
    """Warmup, then alternate CV-EC and CV-CL phases until L1 + L2 < eps or the iteration cap.

    ``nets`` may be ``None`` to start from :func:`init_pair`. Returns
    ``(nets, log)``; the inputs are not modified.
    """
    cfg.validate()
    nets = init_pair(data, cfg) if nets is None else [n.copy() for n in nets]
    run = _Run(nets, data, cfg, heldout)
    run.warmup()
    _icv_loop(run)
    return run.nets, run.log


def train_method(method: str, data: Dataset, cfg: TrainConfig, heldout=None, nets=None):
    """Train with one of ``softmax``, ``cvec``, ``cvcl`` or ``icv``.

    ``softmax`` and the single-constraint methods run warmup plus one phase
    of ``max_epochs_per_phase`` epochs; ``icv`` runs the full alternation.
    """
    if method == "icv":
        return train_icv_eccl(nets, data, cfg, heldout)
    cfg.validate()
    nets = init_pair(data, cfg) if nets is None else [n.copy() for n in nets]
    run = _Run(nets, data, cfg, heldout)
    run.warmup()
    if method == "softmax":
        first = run.epochs("softmax", "softmax", cfg.max_epochs_per_phase, 0.0)
        run.mark("softmax", first)
    elif method == "cvec":
        run.cvec_phase()
    elif method == "cvcl":
        run.cvcl_phase()
    else:
        raise ValidationError(f"unknown training method {method!r}")
    return run.nets, run.log


def train_independent(net: ViewNetwork, view: int, data: Dataset, cfg: TrainConfig, epochs: int):
    """Softmax-only training of one view's network on the shared batch schedule."""
    cfg.validate()
    net = net.copy()
    nets = [net if v == view else None for v in range(data.V)]
    states = [OptimizerState(net) if v == view else None for v in range(data.V)]
    index = index_by_identity_view(data)
    for epoch in range(epochs):
        run_epoch(nets, states, data, index, cfg, epoch, "softmax", views=[view])
    return net


# ----------------------------------------------------------------- multi-view


def _softmax_single(net, data: Dataset, cfg: TrainConfig, epochs: int, epoch0=0):
    pooled = Dataset(data.identities, np.zeros(len(data), dtype=np.int64), data.features,
                     data.M, 1, origin=data.origin)
    index = index_by_identity_view(pooled)
    state = [OptimizerState(net)]
    for e in range(epochs):
        run_epoch([net], state, pooled, index, cfg, epoch0 + e, "softmax")


def train_multiview(data: Dataset, cfg: TrainConfig, heldout=None):
    """One-view-versus-the-rest training for ``V >= 3`` views.

    The public network is first warmed up on all views pooled. For each view
    ``v`` in turn, the pair (view-``v`` network, public network) is trained
    with the CV-EC / CV-CL alternation on ``v`` versus the pooled other
    views. The public network carries its parameters into the next view, and
    on the first pass each view network starts as a copy of the current
    public network. Later passes continue from the existing view networks.

    Returns ``(view_nets, public_net, log)``.
    """
    cfg.validate()
    if data.V < 3:
        raise ValidationError(f"multi-view training needs >= 3 views, got {data.V}; "
                              "use train_icv_eccl for two views")
    for v in range(data.V):
        if not np.any(data.views == v):
            raise ValidationError(f"view {v} has no samples")
    public = init(-1, data.D, cfg.hidden_dims, cfg.embed_dim, data.M, derive_seed(cfg.seed, "init"))
    full_log = TrainLog()
    _softmax_single(public, data, cfg, cfg.warmup_epochs)
    full_log.epoch = cfg.warmup_epochs
    view_nets = {v: public.copy(view=v) for v in range(data.V)}
    full_log.initial = PhaseMarker("initial", 0, cfg.warmup_epochs - 1,
                                   multiview_distance(view_nets, public, data, own=False),
                                   multiview_distance(view_nets, public, heldout, own=False)
                                   if heldout is not None else float("nan"))
    for p in range(cfg.multiview_passes):
        for v in range(data.V):
            if p == 0:
                view_nets[v] = public.copy(view=v)
            pair = one_vs_rest(data, v)
            pair_held = one_vs_rest(heldout, v) if heldout is not None else None
            run = _Run([view_nets[v], public], pair, cfg, pair_held,
                       TrainLog(epoch=full_log.epoch), label=f"v{v}.p{p + 1}:")
            _icv_loop(run)
            full_log.extend(run.log)
            view_nets[v], public = run.nets
            public.view = -1
    return view_nets, public, full_log


def multiview_distance(view_nets, public, data: Dataset, own=True):
    """Cross-view distance with each sample embedded by its own view's net (or the public net)."""
    emb = np.empty((len(data), public.embed_dim))
    for v in range(data.V):
        rows = np.flatnonzero(data.views == v)
        net = view_nets.get(v, public) if own else public
        if rows.size:
            emb[rows] = embed(net, data.features[rows])
    return L.cross_view_intra_class_distance(emb, data.identities, data.views)
