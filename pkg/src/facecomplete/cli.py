"""Command-line entry points: prepare, gen-masks, train, eval, inpaint.

Exit codes: 0 success, 1 usage/configuration, 2 data error, 3 runtime
error. Every command is deterministic under --seed, never mutates its
inputs, and writes all outputs under its --out target.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, training
from .exceptions import ConfigurationError, DataError
from .masks import (
    EVAL_SITES,
    apply_mask,
    eval_masks,
    gen_block_mask,
    gen_noise_mask,
    gen_pattern_mask,
    load_mask_png,
    save_mask_png,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

SEG_PALETTE = [
    (0, 0, 0), (255, 204, 153), (153, 102, 51), (102, 68, 34), (0, 153, 255),
    (0, 102, 204), (255, 153, 153), (204, 0, 102), (255, 255, 255), (153, 0, 51),
]

_INT_KEYS = {"epochs", "batch_size", "seed", "resolution", "n_classes",
             "block_size", "eval_every", "checkpoint_every"}
_FLOAT_KEYS = {"learning_rate", "beta1", "beta2", "noise_fraction",
               "pattern_fraction", "heatmap_sigma"}
_BOOL_KEYS = {"concentrated", "augment", "skip"}
_TUPLE_KEYS = {"enc_channels", "disc_widths"}
_STR_KEYS = {"mask_kind", "task_set"}
REQUIRED_KEYS = ("task_set",)


def _parse_bool(value, key):
    v = value.lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigurationError(f"config key {key}: expected boolean, got {value!r}")


def parse_train_config(path):
    """Flat `key = value` config file -> TrainConfig.

    Per-task weight overrides use keys like lambda_adv_i / lambda_rec_s.
    Unknown and missing required keys are errors naming the key.
    """
    kwargs = {}
    overrides_adv, overrides_rec = {}, {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key in _BOOL_KEYS:
            kwargs[key] = _parse_bool(value, key)
        elif key in _TUPLE_KEYS:
            kwargs[key] = tuple(int(v) for v in value.replace(",", " ").split())
        elif key in _STR_KEYS:
            kwargs[key] = value
        elif key.startswith("lambda_adv_"):
            overrides_adv[key[len("lambda_adv_"):]] = float(value)
        elif key.startswith("lambda_rec_"):
            overrides_rec[key[len("lambda_rec_"):]] = float(value)
        else:
            raise ConfigurationError(f"unknown config key: {key}")
    for key in REQUIRED_KEYS:
        if key not in kwargs:
            raise ConfigurationError(f"missing required config key: {key}")
    if overrides_adv:
        kwargs["lambda_adv"] = overrides_adv
    if overrides_rec:
        kwargs["lambda_rec"] = overrides_rec
    return training.TrainConfig(**kwargs)


def cmd_prepare(args):
    root = Path(args.root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits_payload = {}
    counts = {}
    all_issues = []
    for split in data_mod.SPLITS:
        manifest, issues = data_mod.load_manifest(
            root, split, resolution=args.resolution, on_error="skip"
        )
        records = []
        for rec in manifest.records:
            try:
                raw, lms, labels = data_mod.load_raw(rec)
            except Exception as exc:
                issues.append(f"{rec.name}: unreadable ({exc})")
                continue
            if labels.max(initial=0) >= args.classes or labels.min(initial=0) < 0:
                issues.append(
                    f"{rec.name}: corrupt label map {rec.label_path} "
                    f"(class ids outside [0, {args.classes}))"
                )
                continue
            h, w = raw.shape[:2]
            xs, ys = lms[:, 0], lms[:, 1]
            if (xs < 0).any() or (xs >= w).any() or (ys < 0).any() or (ys >= h).any():
                issues.append(f"{rec.name}: landmarks outside {w}x{h} image")
                continue
            records.append(
                {
                    "name": rec.name,
                    "image": str(rec.image_path.relative_to(root)),
                    "label": str(rec.label_path.relative_to(root)),
                    "landmarks": [[float(x), float(y)] for x, y in lms],
                }
            )
        splits_payload[split] = sorted(records, key=lambda r: r["name"])
        counts[split] = len(records)
        all_issues.extend(issues)

    manifest_path = out / "manifest.json"
    payload = {
        "version": 1,
        "root": str(root),
        "resolution": args.resolution,
        "n_classes": args.classes,
        "splits": splits_payload,
    }
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    for issue in all_issues:
        print(f"issue: {issue}")
    print(f"counts: train={counts['train']} val={counts['val']} test={counts['test']}")
    print(f"manifest: {manifest_path}")
    empty = [s for s, c in counts.items() if c == 0]
    if empty:
        print(f"error: empty split(s): {', '.join(empty)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_gen_masks(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    entries = []
    params = {}
    if args.kind == "block":
        params["block"] = args.block or args.size // 2
    elif args.kind == "pattern":
        params["target_fraction"] = args.fraction if args.fraction is not None else 0.25
    elif args.kind == "noise":
        params["fraction"] = args.fraction if args.fraction is not None else 0.80
    for k in range(args.n):
        if args.kind == "block":
            mask = gen_block_mask(rng, args.size, params["block"])
        elif args.kind == "pattern":
            mask = gen_pattern_mask(rng, args.size, params["target_fraction"])
        elif args.kind == "noise":
            mask = gen_noise_mask(rng, args.size, params["fraction"])
        else:  # eval sites
            mask = eval_masks(args.size)[EVAL_SITES[k % len(EVAL_SITES)]]
        name = f"mask_{k:05d}.png"
        save_mask_png(mask, out / name)
        entries.append({"file": name, "occluded_fraction": mask.occluded_fraction})
    manifest = {
        "kind": args.kind,
        "seed": args.seed,
        "size": args.size,
        "count": args.n,
        "params": params,
        "masks": entries,
    }
    (out / "masks.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.n} {args.kind} mask(s) to {out}")
    return EXIT_OK


def cmd_train(args):
    config = parse_train_config(args.config)
    train_manifest = data_mod.load_manifest(args.data, "train", resolution=config.resolution)
    try:
        val_manifest = data_mod.load_manifest(args.data, "val", resolution=config.resolution)
    except DataError:
        val_manifest = None  # fall back to train-set validation metrics
    state, ckpt = training.train(
        config, train_manifest, val_manifest, out_dir=args.out,
        device=args.device, resume_from=args.resume,
    )
    print(f"trained {state.step} step(s), checkpoint: {ckpt}")
    return EXIT_OK


def _load_generator(path, device="cpu"):
    state = training.load_checkpoint(path, device=device)
    state.generator.eval()
    return state


def cmd_eval(args):
    state = _load_generator(args.checkpoint, args.device)
    config = state.config
    manifest = data_mod.load_manifest(args.data, args.split, resolution=config.resolution)
    samples = training.build_dataset(
        manifest, config, crop_rng=np.random.default_rng([args.seed, 0x6576616C])
    )
    sites = tuple(s.strip() for s in args.sites.split(",") if s.strip())
    if args.metrics:
        evaluation.require_tasks(
            [m.strip() for m in args.metrics.split(",")], config.task_set
        )
    report = evaluation.evaluate(
        state.generator, samples, sites=sites, task_set=config.task_set,
        n_classes=config.n_classes, seed=args.seed,
        occluded_only=args.occluded_only,
        config_echo={"checkpoint": str(args.checkpoint), "split": args.split},
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    print(f"report: {out}")
    if args.csv_dir:
        csv_dir = Path(args.csv_dir)
        csv_dir.mkdir(parents=True, exist_ok=True)
        (csv_dir / "sites.csv").write_text(report.site_csv())
        for name, table in (("dice", report.dice), ("landmarks", report.landmark_error)):
            if table:
                lines = [f"{k},{v}" for k, v in table.items()]
                (csv_dir / f"{name}.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_inpaint(args):
    from PIL import Image, ImageDraw

    state = _load_generator(args.checkpoint, args.device)
    s = state.config.resolution
    img_path = Path(args.image)
    if not img_path.is_file():
        raise DataError(f"missing input image: {img_path}")
    image = Image.open(img_path).convert("RGB")
    if image.size != (s, s):
        image = image.resize((s, s), Image.BILINEAR)
    image_np = data_mod.normalize_image(np.array(image))
    mask_path = Path(args.mask)
    if not mask_path.is_file():
        raise DataError(f"missing mask file: {mask_path}")
    mask = load_mask_png(mask_path)
    if mask.grid.shape != (s, s):
        raise DataError(f"mask {mask.grid.shape} does not match model resolution {s}")

    rng = np.random.default_rng(args.seed)
    x_np = apply_mask(image_np, mask, fill=args.fill, rng=rng)

    import torch

    x = torch.from_numpy(x_np.transpose(2, 0, 1).astype(np.float32))[None]
    with torch.no_grad():
        out = state.generator(x)
    g_i = out.g_i[0].numpy().transpose(1, 2, 0)
    hole = mask.grid[:, :, None] == 0
    composed = np.where(hole, g_i, image_np)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data_mod.to_uint8(composed)).save(out_path)
    print(f"composed: {out_path}")

    if args.overlays:
        missing = [t for t in ("s", "d") if t not in state.config.task_set]
        if missing:
            raise ConfigurationError(
                f"--overlays needs segmentation and detection heads; checkpoint "
                f"trained without task(s) {missing}"
            )
        labels = data_mod.channels_to_labelmap(out.g_s[0].numpy())
        seg = Image.fromarray(labels.astype(np.uint8), mode="P")
        palette = []
        for c in range(256):
            palette.extend(SEG_PALETTE[c % len(SEG_PALETTE)] if c < state.config.n_classes else (0, 0, 0))
        seg.putpalette(palette)
        seg_path = out_path.with_name(out_path.stem + "_seg.png")
        seg.save(seg_path)

        overlay = Image.fromarray(data_mod.to_uint8(composed))
        draw = ImageDraw.Draw(overlay)
        for x_pk, y_pk in evaluation.heatmap_peaks(out.g_d[0].numpy()):
            draw.line([(x_pk - 3, y_pk), (x_pk + 3, y_pk)], fill=(0, 255, 0))
            draw.line([(x_pk, y_pk - 3), (x_pk, y_pk + 3)], fill=(0, 255, 0))
        lm_path = out_path.with_name(out_path.stem + "_landmarks.png")
        overlay.save(lm_path)
        print(f"overlays: {seg_path} {lm_path}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="facecomplete", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="validate a dataset root and write its manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--classes", type=int, default=data_mod.N_CLASSES)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("gen-masks", help="emit occlusion mask fixtures with a manifest")
    p.add_argument("--kind", required=True, choices=("block", "pattern", "noise", "eval"))
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--block", type=int, default=0)
    p.add_argument("--fraction", type=float, default=None)
    p.set_defaults(func=cmd_gen_masks)

    p = sub.add_parser("train", help="train a model from a flat key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--device", default="cpu")
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over occlusion sites")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLITS)
    p.add_argument("--sites", default=",".join(EVAL_SITES))
    p.add_argument("--metrics", default=None,
                   help="comma list to validate against the checkpoint's tasks")
    p.add_argument("--out", required=True)
    p.add_argument("--csv-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--occluded-only", action="store_true")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inpaint", help="complete one masked image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fill", default="noise", choices=("noise", "zeros"))
    p.add_argument("--overlays", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_inpaint)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - uniform runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
