"""Run configuration: ``key = value`` text with ``[section]`` headers.

Grammar (parsed with :mod:`configparser`)::

    # comment
    [section]
    key = value

Sections and keys:

``[data]``      ``csv`` (path; when absent a synthetic dataset is generated)
``[generate]``  ``M V samples_per_identity_per_view latent_dim D
                view_transform_scale noise_sigma seed``
``[split]``     ``mode`` (half-identity | fixed-counts), ``train_identities``, ``seed``
``[train]``     ``preset`` (desk | published), ``method`` (icv | cvec | cvcl | softmax)
                and every :class:`~crossview.trainer.TrainConfig` field;
                ``hidden_dims`` is a comma list
``[eval]``      ``protocol``, ``trials``, ``probe_view``, ``gallery_view``,
                ``normalize``, ``checkpoints``, ``seed``
``[sweep]``     ``lambdas`` (comma list), ``target`` (both | lambda1 | lambda2)
``[output]``    ``out``

Command-line overrides use ``--key value`` when the key exists in one
section only, or ``--section.key value`` otherwise; dashes in keys are read
as underscores. Seeds left unset are derived from the root seed as
``derive_seed(root, "<section>")``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import derive_seed
from .dataset import GenSpec, SplitSpec
from .errors import StorageError, ValidationError
from .trainer import TrainConfig, desk_config


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    s = str(s).strip()
    return tuple(int(x) for x in s.split(",") if x.strip()) if s else ()


def _floats(s):
    return tuple(float(x) for x in str(s).split(",") if x.strip())


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_CONVERT = {"float": float, "int": int, "bool": _bool, "tuple": _ints}

SCHEMA = {
    "data": {"csv": str},
    "generate": {"M": int, "V": int, "samples_per_identity_per_view": int, "latent_dim": int,
                 "D": int, "view_transform_scale": float, "noise_sigma": float, "seed": int},
    "split": {"mode": str, "train_identities": int, "seed": int},
    "train": {"preset": str, "method": str,
              **{k: _CONVERT[t] for k, t in _TRAIN_TYPES.items()}},
    "eval": {"protocol": str, "trials": int, "probe_view": int, "gallery_view": int,
             "normalize": _bool, "checkpoints": str, "seed": int},
    "sweep": {"lambdas": _floats, "target": str},
    "output": {"out": str},
}

# canonical synthetic instance used when no dataset file is configured
CANONICAL_GEN = dict(M=40, V=2, samples_per_identity_per_view=6, latent_dim=4, D=32,
                     view_transform_scale=1.0, noise_sigma=0.1)


@dataclass
class EvalOptions:
    protocol: str = "single-query"
    trials: int = 10
    probe_view: int = 0
    gallery_view: int = 1
    normalize: bool = False
    checkpoints: str | None = None
    seed: int = 0


@dataclass
class RunConfig:
    root_seed: int = 0
    data_csv: str | None = None
    gen: GenSpec = None
    split: SplitSpec = None
    train: TrainConfig = None
    method: str = "icv"
    eval: EvalOptions = field(default_factory=EvalOptions)
    lambdas: tuple = (0.0, 1e-3, 1e-1, 1e1)
    sweep_target: str = "both"
    out: str = "runs"


def read_sections(path):
    """Parse a config file into ``{section: {key: raw string}}``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise StorageError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValidationError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ValidationError(f"unknown key {key!r} in [{section}]")
            out.setdefault(section, {})[key] = value
    return out


def _locate(key):
    if "." in key:
        section, name = key.split(".", 1)
        if section in SCHEMA and name in SCHEMA[section]:
            return section, name
        raise ValidationError(f"unknown override --{key}")
    hits = [s for s, keys in SCHEMA.items() if key in keys]
    if not hits:
        # allow case-insensitive match for keys such as M, V, D
        hits = [(s, k) for s, keys in SCHEMA.items() for k in keys if k.lower() == key.lower()]
        if len(hits) == 1:
            return hits[0]
        raise ValidationError(f"unknown override --{key}")
    if len(hits) > 1:
        raise ValidationError(f"--{key} is ambiguous; use one of "
                              + ", ".join(f"--{s}.{key}" for s in hits))
    return hits[0], key


def parse_overrides(tokens):
    """Turn ``['--max-outer-iters', '2', '--split.seed=3']`` into section/key pairs."""
    out = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise ValidationError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            key = body
            try:
                value = next(it)
            except StopIteration:
                raise ValidationError(f"override {tok} needs a value") from None
        section, name = _locate(key.replace("-", "_"))
        out.setdefault(section, {})[name] = value
    return out


def _typed(section, raw):
    out = {}
    for key, value in raw.get(section, {}).items():
        try:
            out[key] = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ValidationError(f"[{section}] {key}: {exc}") from None
    return out


def build(sections, root_seed=0, out=None) -> RunConfig:
    cfg = RunConfig(root_seed=int(root_seed))
    data = _typed("data", sections)
    cfg.data_csv = data.get("csv")

    gen = {**CANONICAL_GEN, "seed": derive_seed(root_seed, "generate"), **_typed("generate", sections)}
    cfg.gen = GenSpec(**gen)

    sp = {"seed": derive_seed(root_seed, "split"), **_typed("split", sections)}
    cfg.split = SplitSpec(**sp)

    tr = _typed("train", sections)
    preset = tr.pop("preset", "desk")
    cfg.method = tr.pop("method", "icv")
    if preset == "desk":
        base = desk_config()
    elif preset == "published":
        base = TrainConfig()
    else:
        raise ValidationError(f"unknown preset {preset!r} (desk | published)")
    tr.setdefault("seed", derive_seed(root_seed, "train"))
    cfg.train = base.replace(**tr).validate()

    ev = {"seed": derive_seed(root_seed, "eval"), **_typed("eval", sections)}
    cfg.eval = EvalOptions(**ev)

    sw = _typed("sweep", sections)
    cfg.lambdas = sw.get("lambdas", cfg.lambdas)
    cfg.sweep_target = sw.get("target", cfg.sweep_target)
    if cfg.sweep_target not in ("both", "lambda1", "lambda2"):
        raise ValidationError("sweep target must be both, lambda1 or lambda2")

    cfg.out = out or _typed("output", sections).get("out", cfg.out)
    return cfg


def load(path=None, overrides=(), root_seed=0, out=None) -> RunConfig:
    sections = read_sections(path) if path else {}
    for section, values in parse_overrides(list(overrides)).items():
        sections.setdefault(section, {}).update(values)
    return build(sections, root_seed, out)
