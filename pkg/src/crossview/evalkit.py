"""Re-identification evaluation: distances, CMC, mAP and test protocols."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .core import DTYPE, SeededRng, derive_seed
from .dataset import Dataset
from .errors import SizingError, StorageError, ValidationError
from .network import embed

REPORT_RANKS = (1, 5, 10, 20)
PROTOCOLS = ("single-shot", "multi-shot", "single-query", "multi-query")


@dataclass(eq=False)
class DistanceMatrix:
    values: np.ndarray
    probe_ids: np.ndarray
    gallery_ids: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=DTYPE)
        self.probe_ids = np.asarray(self.probe_ids)
        self.gallery_ids = np.asarray(self.gallery_ids)
        if self.values.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise SizingError("distance matrix shape does not match the id lists")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValidationError("distances must be finite and non-negative")


@dataclass
class EvalReport:
    cmc: np.ndarray
    rank_k: dict
    map: float
    crossview_distance: float
    trials: int
    protocol: str = "single-query"
    extra: dict = field(default_factory=dict)

    def rows(self):
        out = [("protocol", self.protocol), ("trials", self.trials)]
        out += [(f"rank{k}", self.rank_k[k]) for k in sorted(self.rank_k)]
        out += [("mAP", self.map), ("crossview_distance", self.crossview_distance)]
        out += sorted(self.extra.items())
        return out

    def to_csv(self, path):
        try:
            with Path(path).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["metric", "value"])
                for k, v in self.rows():
                    w.writerow([k, repr(float(v)) if isinstance(v, (float, np.floating)) else v])
        except OSError as exc:
            raise StorageError(f"cannot write report {path}: {exc}") from exc

    def cmc_to_csv(self, path):
        try:
            with Path(path).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["rank", "match_rate"])
                for r, c in enumerate(self.cmc, start=1):
                    w.writerow([r, repr(float(c))])
        except OSError as exc:
            raise StorageError(f"cannot write CMC curve {path}: {exc}") from exc

    def table(self):
        lines = [f"protocol: {self.protocol} ({self.trials} trial{'s' if self.trials != 1 else ''})"]
        lines.append("  ".join(f"rank-{k:<3d}" for k in sorted(self.rank_k)) + "  mAP")
        lines.append("  ".join(f"{100 * self.rank_k[k]:7.2f}%" for k in sorted(self.rank_k))
                     + f"  {100 * self.map:6.2f}%")
        lines.append(f"cross-view intra-class distance: {self.crossview_distance:.6g}")
        for k, v in sorted(self.extra.items()):
            lines.append(f"{k}: {v:.6g}")
        return "\n".join(lines)


def embed_all(nets, dataset: Dataset, public=None, normalize=False):
    """Embed every sample with the network of its view.

    ``nets`` maps view -> network (a list works too). Views without a
    network fall back to ``public``.
    """
    lookup = dict(enumerate(nets)) if isinstance(nets, (list, tuple)) else dict(nets)
    dims = {n.embed_dim for n in lookup.values()} | ({public.embed_dim} if public else set())
    if len(dims) != 1:
        raise ValidationError("networks disagree on embed_dim")
    out = np.empty((len(dataset), dims.pop()))
    for v in range(dataset.V):
        rows = np.flatnonzero(dataset.views == v)
        if not rows.size:
            continue
        net = lookup.get(v, public)
        if net is None:
            raise ValidationError(f"no network for view {v} and no public network")
        out[rows] = embed(net, dataset.features[rows])
    if normalize:
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        out = out / np.where(norms > 0, norms, 1.0)
    return out


def distances(probe, gallery, probe_ids=None, gallery_ids=None) -> DistanceMatrix:
    """Squared Euclidean distances, probe rows by gallery columns."""
    P = np.atleast_2d(np.asarray(probe, dtype=DTYPE))
    G = np.atleast_2d(np.asarray(gallery, dtype=DTYPE))
    if P.shape[1] != G.shape[1]:
        raise SizingError(f"probe dim {P.shape[1]} != gallery dim {G.shape[1]}")
    d = ((P[:, None, :] - G[None, :, :]) ** 2).sum(axis=-1)
    pid = np.arange(len(P)) if probe_ids is None else probe_ids
    gid = np.arange(len(G)) if gallery_ids is None else gallery_ids
    return DistanceMatrix(d, pid, gid)


def _ranked_matches(dm: DistanceMatrix):
    """Boolean match matrix with gallery columns in ranked order per probe."""
    missing = set(dm.probe_ids.tolist()) - set(dm.gallery_ids.tolist())
    if missing:
        raise ValidationError(f"probe identities absent from gallery: {sorted(missing)[:10]}")
    # stable sort: ties keep gallery order
    order = np.argsort(dm.values, axis=1, kind="stable")
    return dm.gallery_ids[order] == dm.probe_ids[:, None]


def cmc(dm: DistanceMatrix):
    """``cmc[k]`` is the fraction of probes whose first true match is within the top k+1."""
    matches = _ranked_matches(dm)
    first = matches.argmax(axis=1)
    hits = np.zeros(matches.shape[1])
    np.add.at(hits, first, 1)
    return np.cumsum(hits) / len(first)


def average_precision(matches_row):
    hits = np.flatnonzero(matches_row)
    return float(np.mean(np.arange(1, len(hits) + 1) / (hits + 1)))


def mean_ap(dm: DistanceMatrix):
    matches = _ranked_matches(dm)
    return float(np.mean([average_precision(row) for row in matches]))


def rank_k(curve, ranks=REPORT_RANKS):
    return {k: float(curve[min(k, len(curve)) - 1]) for k in ranks}


def _split_views(emb, dataset, probe_view, gallery_view):
    p = np.flatnonzero(dataset.views == probe_view)
    g = np.flatnonzero(dataset.views == gallery_view)
    if not p.size or not g.size:
        raise ValidationError(f"empty probe (view {probe_view}) or gallery (view {gallery_view})")
    gallery_ids = set(dataset.identities[g].tolist())
    # probes without any gallery match cannot be ranked
    p = p[np.isin(dataset.identities[p], list(gallery_ids))]
    if not p.size:
        raise ValidationError("no probe identity appears in the gallery")
    return p, g


def evaluate_embeddings(emb, dataset: Dataset, protocol="single-query", trials=10, seed=0,
                        probe_view=0, gallery_view=1, ranks=REPORT_RANKS) -> EvalReport:
    """Protocol evaluation on precomputed per-sample embeddings."""
    if protocol not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    p, g = _split_views(emb, dataset, probe_view, gallery_view)
    ids = dataset.identities
    xdist = L.cross_view_intra_class_distance(emb, ids, dataset.views,
                                              pairs=[(probe_view, gallery_view)])
    if protocol == "single-shot":
        if trials < 1:
            raise ValidationError("trials must be >= 1")
        gal_ids = np.unique(ids[g])
        curves, aps = [], []
        for t in range(trials):
            rng = SeededRng(derive_seed(seed, "single-shot", t))
            pick = np.array([rng.choice(g[ids[g] == i]) for i in gal_ids])
            dm = distances(emb[p], emb[pick], ids[p], ids[pick])
            curves.append(cmc(dm))
            aps.append(mean_ap(dm))
        curve, mAP, n = np.mean(curves, axis=0), float(np.mean(aps)), trials
    else:
        if protocol == "multi-query":
            qids = np.unique(ids[p])
            probe = np.stack([emb[p][ids[p] == i].mean(axis=0) for i in qids])
        else:
            qids, probe = ids[p], emb[p]
        dm = distances(probe, emb[g], qids, ids[g])
        curve, mAP, n = cmc(dm), mean_ap(dm), 1
    return EvalReport(curve, rank_k(curve, ranks), mAP, xdist, n, protocol)


def evaluate_protocol(nets, dataset: Dataset, protocol="single-query", trials=10, seed=0,
                      probe_view=0, gallery_view=1, public=None, normalize=False,
                      ranks=REPORT_RANKS) -> EvalReport:
    """Embed ``dataset`` with its view networks, then run the protocol.

    ``single-shot`` draws one gallery sample per identity per trial and
    averages over ``trials``; ``multi-shot`` and ``single-query`` rank every
    probe sample against the full gallery; ``multi-query`` averages each
    identity's probe embeddings first.
    """
    emb = embed_all(nets, dataset, public=public, normalize=normalize)
    return evaluate_embeddings(emb, dataset, protocol, trials, seed, probe_view, gallery_view, ranks)
