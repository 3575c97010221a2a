"""``crossview`` command-line entry point.

    crossview <command> --config <path> [--seed N] [--out DIR] [overrides...]

Commands: generate, train, eval, gradcheck, sweep. Exit codes: 0 success,
2 validation error, 3 numeric failure (divergence or failed gradient
check), 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import evalkit, gradcheck
from .dataset import Dataset, generate, load_csv, save_csv, split
from .errors import CrossViewError, NumericError, StorageError, ValidationError
from .losses import cross_view_intra_class_distance
from .network import load_checkpoint, save_checkpoint
from .trainer import multiview_distance, train_method, train_multiview

log = logging.getLogger("crossview")

COMMANDS = ("generate", "train", "eval", "gradcheck", "sweep")


def _out_dir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def load_data(cfg) -> Dataset:
    ds = load_csv(cfg.data_csv) if cfg.data_csv else generate(cfg.gen)
    if ds.V < 2:
        raise ValidationError(f"cross-view training needs at least 2 views, dataset has {ds.V}")
    return ds


def fit(cfg, train_set, test_set, train_cfg=None):
    """Train per the config; returns ``(view_nets, public_or_None, log)``."""
    tc = train_cfg or cfg.train
    if train_set.V == 2:
        nets, tlog = train_method(cfg.method, train_set, tc, heldout=test_set)
        return {0: nets[0], 1: nets[1]}, None, tlog
    if cfg.method != "icv":
        raise ValidationError("only method=icv is defined for more than two views")
    return train_multiview(train_set, tc, heldout=test_set)


def final_report(view_nets, public, train_set, test_set, cfg) -> evalkit.EvalReport:
    ev = cfg.eval
    report = evalkit.evaluate_protocol(view_nets, test_set, ev.protocol, ev.trials, ev.seed,
                                       ev.probe_view, ev.gallery_view, public=public,
                                       normalize=ev.normalize)
    emb_train = evalkit.embed_all(view_nets, train_set, public=public, normalize=ev.normalize)
    report.extra["crossview_distance_train"] = cross_view_intra_class_distance(
        emb_train, train_set.identities, train_set.views, pairs=[(ev.probe_view, ev.gallery_view)])
    if public is not None:
        report.extra["crossview_distance_allviews"] = multiview_distance(view_nets, public, test_set)
        report.extra["crossview_distance_public_only"] = multiview_distance(
            view_nets, public, test_set, own=False)
    return report


def write_report(report, out, prefix=""):
    report.to_csv(out / f"{prefix}report.csv")
    report.cmc_to_csv(out / f"{prefix}cmc.csv")


def cmd_generate(cfg):
    if cfg.data_csv:
        raise ValidationError("generate writes a synthetic dataset; remove [data] csv")
    if cfg.gen.V < 2:
        raise ValidationError("cross-view methods need at least 2 views (V >= 2)")
    ds = generate(cfg.gen)
    out = _out_dir(cfg)
    path = out / "dataset.csv"
    save_csv(ds, path)
    print(f"wrote {path}: M={ds.M} V={ds.V} D={ds.D} samples={len(ds)}")
    return path


def cmd_train(cfg):
    ds = load_data(cfg)
    train_set, test_set = split(ds, cfg.split)
    out = _out_dir(cfg)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    try:
        view_nets, public, tlog = fit(cfg, train_set, test_set)
    except NumericError as exc:
        if exc.last_good:
            for net in exc.last_good:
                if net is not None:
                    save_checkpoint(net, ckpt_dir / f"last_good_view{net.view}.ckpt")
        raise
    for v, net in sorted(view_nets.items()):
        save_checkpoint(net, ckpt_dir / f"view{v}.ckpt")
    if public is not None:
        save_checkpoint(public, ckpt_dir / "public.ckpt")
    tlog.to_csv(out / "train_log.csv")
    tlog.markers_to_csv(out / "phases.csv")
    report = final_report(view_nets, public, train_set, test_set, cfg)
    write_report(report, out)
    print(report.table())
    return report


def load_nets(ckpt_dir, V):
    ckpt_dir = Path(ckpt_dir)
    if not ckpt_dir.is_dir():
        raise StorageError(f"checkpoint directory not found: {ckpt_dir}")
    public_path = ckpt_dir / "public.ckpt"
    public = load_checkpoint(public_path) if public_path.exists() else None
    nets = {}
    for v in range(V):
        path = ckpt_dir / f"view{v}.ckpt"
        if path.exists():
            nets[v] = load_checkpoint(path)
        elif public is None:
            raise StorageError(f"checkpoint not found: {path}")
    return nets, public


def cmd_eval(cfg):
    ds = load_data(cfg)
    train_set, test_set = split(ds, cfg.split)
    out = _out_dir(cfg)
    ckpt_dir = cfg.eval.checkpoints or (out / "checkpoints")
    view_nets, public = load_nets(ckpt_dir, ds.V)
    for net in list(view_nets.values()) + ([public] if public else []):
        if net.input_dim != ds.D:
            raise ValidationError(f"checkpoint expects {net.input_dim} features, dataset has {ds.D}")
    report = final_report(view_nets, public, train_set, test_set, cfg)
    write_report(report, out, prefix="eval_")
    print(report.table())
    return report


def cmd_gradcheck(instances=100, seed=0, corrupt=None, out=None):
    results = gradcheck.run_checks(instances=instances, seed=seed, corrupt=corrupt)
    print(f"{'group':<20} {'instances':>9} {'max_rel_err':>12}  result")
    for r in results:
        print(f"{r.group:<20} {r.instances:>9d} {r.max_rel_err:>12.3e}  {'pass' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_err)
        print(f"worst offender: {worst.group} (max relative error {worst.max_rel_err:.3e})")
    return results


def cmd_sweep(cfg):
    ds = load_data(cfg)
    train_set, test_set = split(ds, cfg.split)
    out = _out_dir(cfg)
    rows = []
    for lam in cfg.lambdas:
        change = {"both": {"lambda1": lam, "lambda2": lam},
                  "lambda1": {"lambda1": lam}, "lambda2": {"lambda2": lam}}[cfg.sweep_target]
        view_nets, public, _ = fit(cfg, train_set, test_set, cfg.train.replace(**change))
        rep = final_report(view_nets, public, train_set, test_set, cfg)
        rows.append((lam, rep.rank_k[1], rep.map, rep.crossview_distance))
        print(f"lambda={lam:<8g} rank1={100 * rep.rank_k[1]:6.2f}%  mAP={100 * rep.map:6.2f}%  "
              f"crossview={rep.crossview_distance:.6g}")
    path = out / "sweep.csv"
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "rank1", "mAP", "crossview_distance"])
            for row in rows:
                w.writerow([repr(float(x)) for x in row])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return rows


def build_parser():
    p = argparse.ArgumentParser(prog="crossview", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--instances", type=int, default=100, help="gradcheck: random instances per group")
    p.add_argument("--corrupt", choices=gradcheck.GROUPS, help="gradcheck: perturb one group (negative control)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args, rest = build_parser().parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            results = cmd_gradcheck(args.instances, args.seed, args.corrupt)
            return 0 if all(r.passed for r in results) else NumericError.exit_code
        cfg = config_mod.load(args.config, rest, root_seed=args.seed, out=args.out)
        {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
         "sweep": cmd_sweep}[args.command](cfg)
    except CrossViewError as exc:
        print(f"crossview {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
