"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .adaptation import adapt, calibrate_from_teacher, evaluate, warmup
from .config import RunConfig, dump_config, load_config
from .core import IGNORE, ClassSet
from .errors import ConfigError, CosmixError, NonFiniteGradient, NonFiniteLoss
from .experiment import BENCH_PRESET
from .mixing import cosmix_pair
from .segmenter import ToySegmenter
from .selection import ClassHistogram, Prediction, class_frequency

log = logging.getLogger("cosmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "workers", None) is not None:
        out["workers"] = str(args.workers)
    for flag, key in (("no_local_aug", "local_aug"), ("no_global_aug", "global_aug")):
        if getattr(args, flag, False):
            out[key] = "false"
    if getattr(args, "keep", None) is not None:
        out["keep_fraction"] = str(args.keep)
    return out


def _run_config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), _overrides(args))


def _read_classes(root) -> ClassSet | None:
    path = Path(root) / "classes.txt"
    if not path.is_file():
        return None
    ids, names = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            cid, name = body.split(maxsplit=1)
            ids.append(int(cid))
            names.append(name)
    return ClassSet(tuple(ids), tuple(names))


def write_classes(root, classes: ClassSet) -> None:
    text = "".join(f"{c} {n}\n" for c, n in zip(classes.ids, classes.names))
    Path(root).mkdir(parents=True, exist_ok=True)
    (Path(root) / "classes.txt").write_text(text, encoding="utf-8")


def _dataset_classes(root, dataset) -> ClassSet:
    classes = _read_classes(root)
    if classes is not None:
        return classes
    ids = sorted(class_frequency(lab for _, lab in dataset).counts)
    return ClassSet(tuple(ids), tuple(f"class_{c}" for c in ids))


def _segmenter(classes, cfg: RunConfig, params=None) -> ToySegmenter:
    return ToySegmenter(classes, cfg.scene_radius, cfg.voxel_size, params=params, seed=cfg.seed)


# --------------------------------------------------------------------------
# commands


def cmd_stats(args) -> int:
    cfg = _run_config(args)
    cmap = formats.load_class_map(args.class_map) if args.class_map else None
    data = formats.load_dataset(args.dataset, unlabeled_id=cfg.unlabeled_id, class_map=cmap)
    hist = class_frequency(lab for _, lab in data)
    if args.out:
        formats.write_histogram(hist.counts, args.out)
    else:
        for c, n in sorted(hist.counts.items()):
            print(f"{c} {n}")
    log.info("%d scans, %d labelled points", len(data), hist.total)
    return EXIT_OK


def cmd_mix(args) -> int:
    cfg = _run_config(args)
    a = cfg.adaptation
    src = formats.read_scan(args.source_scan)
    src_labels = formats.read_labels(args.source_labels, src.count, unlabeled_id=cfg.unlabeled_id)
    tgt = formats.read_scan(args.target_scan)
    pred_labels, pred_conf = formats.read_predictions(args.predictions)
    prediction = Prediction(pred_labels, pred_conf)
    if args.histogram:
        hist = ClassHistogram(formats.read_histogram(args.histogram))
    else:
        hist = class_frequency([src_labels])
    rng = np.random.default_rng(a.seed)
    s2t, t2s = cosmix_pair(
        src, src_labels, tgt, prediction, a.selection(), a.local(), a.global_(), hist, rng,
        s2t=a.branch_s2t, t2s=a.branch_t2s,
    )
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    for name, sample in (("s2t", s2t), ("t2s", t2s)):
        if sample is None:
            continue
        formats.write_scan(sample.cloud, f"{prefix}.{name}.bin")
        formats.write_labels(sample.labels, f"{prefix}.{name}.label", cfg.unlabeled_id)
        formats.write_mask(sample.provenance, f"{prefix}.{name}.prov")
        if args.ply:
            ids = sorted(set(np.unique(sample.labels).tolist()) - {IGNORE})
            palette = formats.default_palette(ClassSet(tuple(ids), tuple(map(str, ids))))
            formats.export_ply(sample.cloud, sample.labels, palette, f"{prefix}.{name}.ply")
        print(f"{name} patch classes: {' '.join(map(str, sample.patch_classes())) or '-'}")
    return EXIT_OK


def _checkpoint_miou(eval_set, classes, cfg, path) -> float:
    """mIoU of the parameters exactly as stored on disk."""
    seg = _segmenter(classes, cfg, params=formats.load_params(path))
    return evaluate(eval_set, seg, cfg.adaptation.miou_convention).miou


def cmd_adapt(args) -> int:
    cfg = _run_config(args)
    a = cfg.adaptation
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source = formats.load_dataset(args.source, unlabeled_id=cfg.unlabeled_id)
    target = formats.load_dataset(args.target, unlabeled_id=cfg.unlabeled_id, with_labels=False)
    classes = _dataset_classes(args.source, source)
    eval_set = None
    if args.eval_dir:
        eval_set = formats.load_dataset(args.eval_dir, unlabeled_id=cfg.unlabeled_id)
    hist = class_frequency(lab for _, lab in source)
    formats.write_histogram(hist.counts, out / "histogram.txt")

    state = warmup(source, _segmenter(classes, cfg), a)
    formats.save_params(state.student.params(), out / "warmup.ckpt")
    if cfg.zeta_target_fraction is not None:
        zeta = calibrate_from_teacher(state.teacher, target, cfg.zeta_target_fraction)
        a = replace(a, zeta=zeta)
        cfg = replace(cfg, adaptation=a)
        log.info("calibrated zeta = %.6f", zeta)
    (out / "run.cfg").write_text(dump_config(cfg), encoding="utf-8")

    metrics = open(out / "metrics.log", "w", encoding="utf-8")
    metrics.write("iter epoch loss_s2t loss_t2s miou\n")
    if eval_set is not None:
        miou = _checkpoint_miou(eval_set, classes, cfg, out / "warmup.ckpt")
        metrics.write(f"0 0 nan nan {miou!r}\n")
        metrics.flush()

    def on_epoch(row):
        formats.save_params(state.student.params(), out / "student.ckpt")
        formats.save_params(state.teacher.params(), out / "teacher.ckpt")
        miou = _checkpoint_miou(eval_set, classes, cfg, out / "student.ckpt") if eval_set else math.nan
        metrics.write(f"{row['iter']} {row['epoch']} {row['loss_s2t']!r} {row['loss_t2s']!r} {miou!r}\n")
        metrics.flush()

    try:
        adapt(state, source, target, a, histogram=hist, on_epoch=on_epoch)
    except KeyboardInterrupt:
        formats.save_params(state.student.params(), out / "student.ckpt")
        formats.save_params(state.teacher.params(), out / "teacher.ckpt")
        raise
    finally:
        metrics.close()
    if a.epochs_adapt == 0:
        formats.save_params(state.student.params(), out / "student.ckpt")
        formats.save_params(state.teacher.params(), out / "teacher.ckpt")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    data = formats.load_dataset(args.dataset, unlabeled_id=cfg.unlabeled_id)
    classes = _dataset_classes(args.dataset, data)
    seg = _segmenter(classes, cfg, params=formats.load_params(args.checkpoint))
    result = evaluate(data, seg, cfg.adaptation.miou_convention)
    print(result.table(classes))
    print(f"miou {result.miou!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import toybench as tb

    src_spec = tb.source_spec()
    tgt_spec = tb.target_spec()
    if args.target_density is not None:
        tgt_spec = replace(tgt_spec, density=args.target_density)
    if args.target_noise is not None:
        tgt_spec = replace(tgt_spec, noise=args.target_noise)
    if args.intensity_offset is not None:
        tgt_spec = replace(tgt_spec, intensity_offset=args.intensity_offset)
    out = Path(args.out_dir)
    source, target = tb.make_domain_pair(src_spec, tgt_spec, args.n_scans, seed=args.seed, workers=args.workers or 1)
    splits = [("source", source), ("target", target)]
    if args.n_val:
        splits.append(("target_val", tb.generate_dataset(tgt_spec, args.n_val, seed=args.seed + 10_000, workers=args.workers or 1)))
    for name, data in splits:
        formats.save_dataset(out / name, data, unlabeled_id=tb.UNLABELED_ID)
        write_classes(out / name, tb.TOY_CLASSES)
        n_points = sum(c.count for c, _ in data)
        print(f"{name}: {len(data)} scans, {n_points} points")
    (out / "bench.cfg").write_text(BENCH_PRESET, encoding="utf-8")
    return EXIT_OK


def cmd_export_ply(args) -> int:
    cfg = _run_config(args)
    cloud = formats.read_scan(args.scan)
    if args.labels:
        labels = formats.read_labels(args.labels, cloud.count, unlabeled_id=cfg.unlabeled_id)
    else:
        labels = np.full(cloud.count, IGNORE)
    ids = sorted(set(np.unique(labels).tolist()) - {IGNORE})
    palette = formats.default_palette(ClassSet(tuple(ids), tuple(map(str, ids))))
    formats.export_ply(cloud, labels, palette, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p, mixing=False):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    if mixing:
        p.add_argument("--no-local-aug", action="store_true")
        p.add_argument("--no-global-aug", action="store_true")
        p.add_argument("--keep", type=float, help="fraction of patch points kept by local augmentation")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cosmix", description="Compositional semantic mixing for LiDAR domain adaptation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="per-class point counts of a dataset")
    p.add_argument("dataset")
    p.add_argument("--class-map")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mix", help="build one s->t / t->s mixed pair")
    p.add_argument("source_scan")
    p.add_argument("source_labels")
    p.add_argument("target_scan")
    p.add_argument("predictions", help="per point: u16 class id + f32 confidence")
    p.add_argument("out_prefix")
    p.add_argument("--histogram", help="source class histogram file")
    p.add_argument("--ply", action="store_true")
    _common(p, mixing=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("adapt", help="warm up on source, then adapt to target")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("out_dir")
    p.add_argument("--eval-dir")
    _common(p, mixing=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="per-class IoU of a checkpoint")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="write the synthetic two-domain benchmark")
    p.add_argument("out_dir")
    p.add_argument("--n-scans", type=int, default=200)
    p.add_argument("--n-val", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--target-density", type=float)
    p.add_argument("--target-noise", type=float)
    p.add_argument("--intensity-offset", type=float)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-ply", help="write a coloured ASCII PLY of a scan")
    p.add_argument("scan")
    p.add_argument("out")
    p.add_argument("--labels")
    _common(p)
    p.set_defaults(func=cmd_export_ply)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"cosmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, NonFiniteGradient, FloatingPointError) as exc:
        print(f"cosmix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CosmixError, OSError, ValueError) as exc:
        print(f"cosmix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
