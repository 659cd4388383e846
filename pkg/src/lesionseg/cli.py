"""Command-line entry point: ``lesionseg <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import imageio
from ._fileutil import atomic_write_bytes
from .config import ConfigError, RunConfig, describe_keys
from .ensemble import Model, ensemble_predict, mean_ensemble
from .metrics import score_report
from .postproc import refine
from .synthdata import generate
from .train import load_checkpoint, save_checkpoint, stratified_folds, train

log = logging.getLogger("lesionseg")

MASK_SUFFIX = "_mask"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


# ------------------------------------------------------------- file helpers


def write_text_atomic(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _require_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} directory not found: {path}")
    return p


def list_images(data_dir):
    """id -> image path for every ``<id>.png`` that is not a ``*_mask.png``."""
    d = _require_dir(data_dir, "data")
    out = {p.stem: p for p in sorted(d.glob("*.png")) if not p.stem.endswith(MASK_SUFFIX)}
    if not out:
        raise DataError(f"no images found in {data_dir}")
    return out


def list_masks(mask_dir):
    """id -> mask path; uses ``<id>_mask.png`` when present, else ``<id>.png``."""
    d = _require_dir(mask_dir, "mask")
    files = sorted(d.glob("*.png"))
    suffixed = [p for p in files if p.stem.endswith(MASK_SUFFIX)]
    if suffixed:
        return {p.stem[: -len(MASK_SUFFIX)]: p for p in suffixed}
    if not files:
        raise DataError(f"no masks found in {mask_dir}")
    return {p.stem: p for p in files}


def load_samples(data_dir, need_masks=True):
    images = list_images(data_dir)
    masks = {}
    if need_masks:
        masks = {k: v for k, v in list_masks(data_dir).items()}
        missing = sorted(set(images) - set(masks))
        if missing:
            raise DataError(f"images without a <id>_mask.png in {data_dir}: {missing}")
    samples = []
    for image_id, path in images.items():
        s = imageio.load_image(path)
        if need_masks:
            s = imageio.ImageSample(s.id, s.pixels, imageio.load_mask(masks[image_id]))
        samples.append(s)
    return samples


def read_folds(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DataError(f"cannot read folds file {path}: {e.strerror}") from None
    if not rows or rows[0] != ["image_id", "fold"]:
        raise DataError(f"{path}: expected header 'image_id,fold'")
    try:
        return {r[0]: int(r[1]) for r in rows[1:] if r}
    except (IndexError, ValueError):
        raise DataError(f"{path}: malformed fold row") from None


def write_folds(folds, path):
    lines = ["image_id,fold"] + [f"{k},{v}" for k, v in sorted(folds.items())]
    write_text_atomic(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------- commands


def cmd_synth(args, rc):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in generate(rc.synth_spec()):
        imageio.save_image(s.pixels, out / f"{s.id}.png")
        imageio.save_mask(s.mask, out / f"{s.id}{MASK_SUFFIX}.png")
    print(f"wrote {rc['synth.count']} image/mask pairs to {out}")


def cmd_stats(args, rc):
    samples = load_samples(args.data, need_masks=False)
    stats = imageio.compute_dataset_stats(samples)
    imageio.write_stats(stats, args.out)
    print(f"mean={','.join(f'{v:.6f}' for v in stats.mean)} std={','.join(f'{v:.6f}' for v in stats.std)}")


def cmd_split(args, rc):
    samples = load_samples(args.data)
    folds = stratified_folds(samples, rc["split.k"], rc["split.bins"], rc["split.seed"])
    write_folds(folds, args.out)
    print(f"wrote {len(folds)} assignments over {rc['split.k']} folds to {args.out}")


def cmd_train(args, rc):
    cfg = rc.train_config()
    samples = load_samples(args.data)
    if args.folds:
        folds = read_folds(args.folds)
        missing = sorted(s.id for s in samples if s.id not in folds)
        if missing:
            raise DataError(f"samples missing from {args.folds}: {missing}")
        train_set = [s for s in samples if folds[s.id] != cfg.fold]
        val_set = [s for s in samples if folds[s.id] == cfg.fold]
    else:
        train_set, val_set = samples, []
    if not train_set:
        raise DataError("training set is empty after holding out the validation fold")
    stats = imageio.read_stats(args.stats) if args.stats else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    snapshots = train(train_set, val_set, cfg, stats=stats, on_epoch=lines.append)
    for ck in snapshots:
        save_checkpoint(ck, out / f"snapshot_{ck.cycle}.lsgw")
    write_text_atomic(out / "train.log", "".join(l + "\n" for l in lines))
    print(f"trained on {len(train_set)} images ({len(val_set)} held out); "
          f"wrote {len(snapshots)} snapshots to {out}")


def cmd_predict(args, rc):
    models = [Model.from_checkpoint(load_checkpoint(p)) for p in args.checkpoint]
    tta = rc.tta_set()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = list_images(args.data)
    for image_id, path in images.items():
        s = imageio.load_image(path)
        prob = ensemble_predict(models, s.image, tta)
        imageio.save_probmap(prob, out / f"{image_id}.png")
    print(f"wrote {len(images)} probability maps to {out}")


def cmd_postprocess(args, rc):
    src = _require_dir(args.probs, "probability map")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(src.glob("*.png"))
    if not paths:
        raise DataError(f"no probability maps found in {args.probs}")
    for path in paths:
        prob = imageio.load_probmap(path)
        mask = refine(prob, rc["post.threshold"], rc["post.erode"], rc["post.dilate"], rc["post.largest_only"])
        imageio.save_mask(mask, out / path.name)
    print(f"wrote {len(paths)} masks to {out}")


def cmd_ensemble(args, rc):
    dirs = [_require_dir(d, "input") for d in args.inputs]
    ids = [sorted(p.stem for p in d.glob("*.png")) for d in dirs]
    for d, id_list in zip(dirs[1:], ids[1:]):
        if id_list != ids[0]:
            diff = sorted(set(id_list) ^ set(ids[0]))
            raise DataError(f"{d} and {dirs[0]} hold different ids: {diff}")
    if not ids[0]:
        raise DataError(f"no probability maps in {dirs[0]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image_id in ids[0]:
        maps = [imageio.load_probmap(d / f"{image_id}.png") for d in dirs]
        imageio.save_probmap(mean_ensemble(maps), out / f"{image_id}.png")
    print(f"averaged {len(dirs)} inputs into {len(ids[0])} maps in {out}")


def cmd_score(args, rc):
    preds = {k: imageio.load_mask(p) for k, p in list_masks(args.pred).items()}
    gts = {k: imageio.load_mask(p) for k, p in list_masks(args.gt).items()}
    if args.folds:
        folds = read_folds(args.folds)
        if args.fold is None:
            raise UsageError("--folds needs --fold")

        def keep(i):
            if i not in folds:
                raise DataError(f"id {i} missing from {args.folds}")
            held_out = folds[i] == args.fold
            return held_out if args.part == "val" else not held_out

        preds = {k: v for k, v in preds.items() if keep(k)}
        gts = {k: v for k, v in gts.items() if keep(k)}
    report = score_report(preds, gts, rc["score.tau"], rc["score.empty_value"])
    write_text_atomic(args.out, report.to_csv())
    agg = report.aggregate()
    print(f"images={len(report.rows)} dice={agg.dice:.6f} jaccard={agg.jaccard:.6f} "
          f"thresholded_jaccard={agg.thresholded_jaccard:.6f}")


# ------------------------------------------------------------------ parser

_OVERRIDES = {
    # flag dest -> config key
    "count": "synth.count",
    "size": "synth.size",
    "seed": None,  # per-command, resolved in _apply_flags
    "k": "split.k",
    "bins": "split.bins",
    "fold": "train.fold",
    "tau": "score.tau",
    "threshold": "post.threshold",
    "erode": "post.erode",
    "dilate": "post.dilate",
    "tta": "tta.set",
}
_SEED_KEY = {"synth": "synth.seed", "split": "split.seed", "train": "train.seed"}


def build_parser():
    epilog = "configuration keys (key = default):\n" + describe_keys()
    parser = _Parser(prog="lesionseg", description="Lesion boundary segmentation pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        return p

    p = add("synth", "generate synthetic ellipse images and masks")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = add("stats", "compute per-channel mean/std of a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = add("split", "write stratified folds (folds.csv)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="folds.csv")
    p.add_argument("--k", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = add("train", "train snapshots; writes snapshot_<cycle>.lsgw and train.log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", help="folds.csv; the --fold fold is held out for validation")
    p.add_argument("--fold", type=int)
    p.add_argument("--stats", help="stats file from 'stats' (default: computed from the training split)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = add("predict", "TTA + snapshot ensemble prediction to 16-bit probability PNGs")
    p.add_argument("--checkpoint", action="append", required=True, help="repeat for each ensemble member")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tta", help="comma-separated dihedral elements")
    p.set_defaults(func=cmd_predict)

    p = add("postprocess", "watershed refinement of probability maps to binary masks")
    p.add_argument("--probs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--erode", type=int)
    p.add_argument("--dilate", type=int)
    p.add_argument("--largest-only", action="store_true", default=None)
    p.set_defaults(func=cmd_postprocess)

    p = add("ensemble", "average probability-map directories")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = add("score", "Dice / Jaccard / thresholded Jaccard report as CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--folds")
    p.add_argument("--fold", type=int)
    p.add_argument("--part", choices=("train", "val"), default="val",
                   help="with --folds: score the held-out fold (val) or the rest (train)")
    p.set_defaults(func=cmd_score)
    return parser


def _run_config(args):
    rc = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        rc.set(key.strip(), value.strip())
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "seed":
            key = _SEED_KEY[args.command]
        rc.set(key, value if not isinstance(value, (int, float)) else str(value))
    if getattr(args, "largest_only", None):
        rc.set("post.largest_only", True)
    return rc


def _validate(args, rc):
    builders = {"train": rc.train_config, "synth": rc.synth_spec, "predict": rc.tta_set}
    try:
        if args.command in builders:
            builders[args.command]()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help (0) or a usage error (1)
        return e.code if isinstance(e.code, int) else 1
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return 1
    try:
        rc = _run_config(args)
        _validate(args, rc)
        args.func(args, rc)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as e:
        # bad images, masks, checkpoints, id mismatches, missing files
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
