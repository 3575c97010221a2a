"""Multi-view identity data: synthetic generation, CSV I/O and splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DTYPE, SeededRng
from .errors import ParseError, StorageError, ValidationError


@dataclass(frozen=True)
class Sample:
    identity: int
    view: int
    features: np.ndarray


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample store.

    ``identities``, ``views`` and ``features`` are parallel arrays in sample
    order. Arrays are read-only once the dataset exists.
    """

    identities: np.ndarray
    views: np.ndarray
    features: np.ndarray
    M: int
    V: int
    # original identity labels, kept through splits
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        ids = _frozen(self.identities, np.int64)
        views = _frozen(self.views, np.int64)
        feats = _frozen(self.features, DTYPE)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-D array")
        if not (len(ids) == len(views) == len(feats)):
            raise ValidationError("identities, views and features differ in length")
        if len(ids) == 0:
            raise ValidationError("dataset has no samples")
        if ids.min() < 0 or ids.max() >= self.M:
            raise ValidationError(f"identity labels must lie in 0..{self.M - 1}")
        if views.min() < 0 or views.max() >= self.V:
            raise ValidationError(f"view labels must lie in 0..{self.V - 1}")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite values")
        missing = np.setdiff1d(np.arange(self.M), ids)
        if missing.size:
            raise ValidationError(f"identities without samples: {missing[:10].tolist()}")
        origin = np.arange(self.M) if self.origin is None else self.origin
        object.__setattr__(self, "identities", ids)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "origin", _frozen(origin, np.int64))

    @property
    def D(self):
        return self.features.shape[1]

    def __len__(self):
        return len(self.identities)

    def __getitem__(self, n):
        return Sample(int(self.identities[n]), int(self.views[n]), self.features[n])

    def __iter__(self):
        for n in range(len(self)):
            yield self[n]

    def index_by_identity_view(self):
        return index_by_identity_view(self)

    def cross_view_identities(self, v1=0, v2=1):
        """Sorted identities with samples in both ``v1`` and ``v2``."""
        a = np.unique(self.identities[self.views == v1])
        b = np.unique(self.identities[self.views == v2])
        return np.intersect1d(a, b)

    def equals(self, other):
        return (
            self.M == other.M
            and self.V == other.V
            and np.array_equal(self.identities, other.identities)
            and np.array_equal(self.views, other.views)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class GenSpec:
    M: int = 40
    V: int = 2
    samples_per_identity_per_view: int = 6
    latent_dim: int = 8
    D: int = 32
    view_transform_scale: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self):
        for name in ("M", "V", "samples_per_identity_per_view", "latent_dim", "D"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"GenSpec.{name} must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("GenSpec.noise_sigma must be >= 0")
        if self.view_transform_scale < 0:
            raise ValidationError("GenSpec.view_transform_scale must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "half-identity"
    train_identities: int | None = None
    seed: int = 0


def generate(spec: GenSpec) -> Dataset:
    """Draw a synthetic multi-view dataset.

    Identity ``i`` gets a latent code ``z_i``. View ``v`` observes it through
    ``A_v = P + s * R_v`` and offset ``b_v = s * r_v``, where ``P`` is shared
    by all views and ``s`` is ``view_transform_scale``; Gaussian noise of
    scale ``noise_sigma`` is added per sample. Samples are ordered by
    identity, then view, then repetition.
    """
    spec.validate()
    rng = SeededRng(spec.seed)
    L, D, s = spec.latent_dim, spec.D, spec.view_transform_scale
    Z = rng.child("latent").normal(size=(spec.M, L))
    P = rng.child("projection").normal(size=(D, L)) / math.sqrt(L)
    maps = []
    for v in range(spec.V):
        vr = rng.child("view", v)
        R = vr.normal(size=(D, L)) / math.sqrt(L)
        r = vr.normal(size=D)
        maps.append((P + s * R, s * r))

    K = spec.samples_per_identity_per_view
    noise = rng.child("noise").normal(size=(spec.M, spec.V, K, D)) * spec.noise_sigma
    ids, views, feats = [], [], []
    for i in range(spec.M):
        for v, (A, b) in enumerate(maps):
            clean = A @ Z[i] + b
            for k in range(K):
                ids.append(i)
                views.append(v)
                feats.append(clean + noise[i, v, k])
    return Dataset(np.array(ids), np.array(views), np.array(feats), spec.M, spec.V)


def load_csv(path) -> Dataset:
    """Read ``identity,view,f1,...,fD`` rows (no header)."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read dataset {path}: {exc}") from exc

    ids, views, feats = [], [], []
    D = None
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise ParseError("expected identity,view and at least one feature", lineno)
        try:
            i, v = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(f"identity/view must be integers, got {row[:2]}", lineno) from None
        try:
            x = [float(c) for c in row[2:]]
        except ValueError:
            raise ParseError("non-numeric feature value", lineno) from None
        if D is None:
            D = len(x)
        elif len(x) != D:
            raise ParseError(f"expected {D} features, found {len(x)}", lineno)
        if i < 0 or v < 0:
            raise ParseError("identity and view labels must be non-negative", lineno)
        if not all(math.isfinite(c) for c in x):
            raise ParseError("non-finite feature value", lineno)
        ids.append(i)
        views.append(v)
        feats.append(x)
    if not ids:
        raise ParseError(f"dataset file {path} contains no samples")
    M, V = max(ids) + 1, max(views) + 1
    for label, seen, n in (("identity", ids, M), ("view", views, V)):
        gaps = sorted(set(range(n)) - set(seen))
        if gaps:
            raise ParseError(f"{label} labels must be dense 0..{n - 1}; missing {gaps[:10]}")
    return Dataset(np.array(ids), np.array(views), np.array(feats), M, V)


def save_csv(ds: Dataset, path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for i, v, x in zip(ds.identities, ds.views, ds.features):
                fh.write(",".join([str(int(i)), str(int(v))] + [repr(float(c)) for c in x]))
                fh.write("\n")
    except OSError as exc:
        raise StorageError(f"cannot write dataset {path}: {exc}") from exc


def subset_identities(ds: Dataset, keep) -> Dataset:
    """Samples of the identities in ``keep``, relabeled densely by ascending label."""
    keep = np.sort(np.asarray(keep, dtype=np.int64))
    relabel = {int(o): n for n, o in enumerate(keep)}
    mask = np.isin(ds.identities, keep)
    ids = np.array([relabel[int(i)] for i in ds.identities[mask]], dtype=np.int64)
    return Dataset(ids, ds.views[mask], ds.features[mask], len(keep), ds.V,
                   origin=ds.origin[keep])


def split(ds: Dataset, spec: SplitSpec):
    """Identity-disjoint (train, test) partition."""
    if ds.M < 2:
        raise ValidationError("split needs at least 2 identities")
    if spec.mode == "half-identity":
        n_train = ds.M // 2
    elif spec.mode == "fixed-counts":
        if spec.train_identities is None:
            raise ValidationError("fixed-counts split needs train_identities")
        n_train = int(spec.train_identities)
        if not 1 <= n_train < ds.M:
            raise ValidationError(f"train_identities must be in 1..{ds.M - 1}, got {n_train}")
    else:
        raise ValidationError(f"unknown split mode {spec.mode!r}")
    perm = SeededRng(spec.seed).permutation(ds.M)
    return subset_identities(ds, perm[:n_train]), subset_identities(ds, perm[n_train:])


def index_by_identity_view(ds: Dataset):
    """``index[i][v]`` is the ordered list of sample positions for identity i in view v."""
    index = [[[] for _ in range(ds.V)] for _ in range(ds.M)]
    for n, (i, v) in enumerate(zip(ds.identities, ds.views)):
        index[int(i)][int(v)].append(n)
    return index


def one_vs_rest(ds: Dataset, view: int) -> Dataset:
    """Two-view dataset: ``view`` becomes view 0, every other view is pooled as view 1."""
    if not np.any(ds.views == view):
        raise ValidationError(f"view {view} has no samples")
    views = np.where(ds.views == view, 0, 1)
    return Dataset(ds.identities, views, ds.features, ds.M, 2, origin=ds.origin)


def raw_view_gap(ds: Dataset, v1=0, v2=1):
    """Mean squared distance (cross-view, within-view) over same-identity pairs."""
    index = index_by_identity_view(ds)
    cross, within = [], []
    X = ds.features
    for per_view in index:
        a, b = X[per_view[v1]], X[per_view[v2]]
        if len(a) and len(b):
            cross.append(((a[:, None] - b[None]) ** 2).sum(-1).mean())
        for rows in (per_view[v1], per_view[v2]):
            if len(rows) > 1:
                Y = X[rows]
                d = ((Y[:, None] - Y[None]) ** 2).sum(-1)
                within.append(d[np.triu_indices(len(rows), 1)].mean())
    return float(np.mean(cross)), float(np.mean(within)) if within else 0.0
