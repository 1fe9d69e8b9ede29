"""Command-line entry points.

Subcommands: train, derain, evaluate, make-synthetic, ablate. Every training
option exists twice with identical names: as a key in the flat key=value
config file and as a CLI flag; flags override the file. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .data import (
    SyntheticRainSpec,
    UnpairedDataset,
    load_image,
    load_paired_testset,
    random_clean_image,
    save_image,
    split_stems,
    synthesize_rain,
    write_manifest,
)
from .metrics import EvalReport, evaluate, format_eval_table, write_eval_csv
from .networks import apply_generator
from .train import (
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    load_derain_generator,
    read_config_file,
    train,
)

log = logging.getLogger(__name__)

ABLATION_VARIANTS = (
    ("full", {}),
    ("no_rgm", {"no_rgm": "true"}),
    ("no_bgm", {"no_bgm": "true"}),
    ("no_lum", {"no_lum": "true"}),
    ("benchmark", {"no_rgm": "true", "no_bgm": "true", "no_lum": "true"}),
)


def _add_config_flags(parser) -> None:
    group = parser.add_argument_group(
        "run configuration", "each flag mirrors the config-file key of the same name"
    )
    group.add_argument("--config", metavar="FILE", help="flat key=value config file")
    for f in fields(TrainConfig):
        group.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f"cfg_{f.name}",
            metavar="VALUE",
            help=f"config key {f.name}",
        )


def _cli_overrides(args) -> dict:
    out = {}
    for f in fields(TrainConfig):
        value = getattr(args, f"cfg_{f.name}")
        if value is not None:
            out[f.name] = value
    return out


def _config_from_args(args) -> TrainConfig:
    mapping = {}
    if args.config is not None:
        mapping.update(read_config_file(args.config))
    mapping.update(_cli_overrides(args))
    return TrainConfig.from_mapping(mapping)


def _default_list(root, name="test.list"):
    candidate = Path(root) / name
    return str(candidate) if candidate.is_file() else None


def _cmd_train(args) -> int:
    if args.resume is not None:
        if args.config is not None or _cli_overrides(args):
            raise ConfigError("resume uses the checkpoint's saved config; drop config flags")
        seed = int(read_config_file(Path(args.resume) / "meta.txt")["seed"])
        dataset = UnpairedDataset.from_root(args.data, seed=seed)
        state = train(None, dataset, args.out, resume=args.resume)
    else:
        cfg = _config_from_args(args)
        dataset = UnpairedDataset.from_root(args.data, seed=cfg.seed)
        state = train(cfg, dataset, args.out)
    print(f"trained to iteration {state.iteration}, outputs in {args.out}")
    return 0


def _cmd_derain(args) -> int:
    net = load_derain_generator(args.checkpoint)
    src, dst = Path(args.input), Path(args.output)
    if src.is_dir():
        paths = sorted(src.glob("*.png"))
        if not paths:
            raise ConfigError(f"{src}: no .png images to derain")
        for p in paths:
            save_image(apply_generator(net, load_image(p)), dst / p.name)
        print(f"derained {len(paths)} images into {dst}")
    elif src.is_file():
        save_image(apply_generator(net, load_image(src)), dst)
        print(f"derained {src} -> {dst}")
    else:
        raise ConfigError(f"{src}: no such file or directory")
    return 0


def _cmd_evaluate(args) -> int:
    net = load_derain_generator(args.checkpoint)
    list_file = args.list if args.list is not None else _default_list(args.data)
    pairs = load_paired_testset(args.data, list_file)
    report = evaluate(lambda img: apply_generator(net, img), pairs, model_tag=args.tag)
    print(format_eval_table([report]), end="")
    if args.csv is not None:
        write_eval_csv(report, args.csv)
    return 1 if report.failed or not report.per_image else 0


def _cmd_make_synthetic(args) -> int:
    clean_dir = Path(args.clean)
    if args.generate:
        clean_dir.mkdir(parents=True, exist_ok=True)
        for i in range(args.generate):
            save_image(random_clean_image(args.size, args.seed + i), clean_dir / f"gen_{i:04d}.png")
    paths = sorted(clean_dir.glob("*.png")) if clean_dir.is_dir() else []
    if not paths:
        raise ConfigError(f"{clean_dir}: no clean .png images found")
    out = Path(args.out)
    stems = []
    for i, p in enumerate(paths):
        clean = load_image(p)
        spec = SyntheticRainSpec(
            angle_deg=args.angle,
            streak_length_px=args.length,
            density=args.density,
            intensity=args.intensity,
            seed=args.seed + i,
        )
        rainy, streaks = synthesize_rain(clean, spec)
        save_image(clean, out / "gt" / f"{p.stem}.png")
        save_image(rainy, out / "rainy" / f"{p.stem}.png")
        save_image(streaks, out / "streaks" / f"{p.stem}.png")
        stems.append(p.stem)
    write_manifest(out / "manifest.list", stems)
    train_stems, test_stems = split_stems(stems, args.test_fraction, args.seed)
    write_manifest(out / "train.list", train_stems)
    write_manifest(out / "test.list", test_stems)
    print(f"wrote {len(stems)} synthetic pairs to {out} "
          f"({len(train_stems)} train / {len(test_stems)} test)")
    return 0


def _cmd_ablate(args) -> int:
    base = _config_from_args(args)
    dataset = UnpairedDataset.from_root(args.data, seed=base.seed)
    test_root = args.test_data if args.test_data is not None else args.data
    pairs = load_paired_testset(test_root, _default_list(test_root))
    reports = []
    any_failed = False
    for name, overrides in ABLATION_VARIANTS:
        mapping = dict(base.to_flat())
        mapping.update(overrides)
        cfg = TrainConfig.from_mapping(mapping)
        try:
            state = train(cfg, dataset, Path(args.out) / name)
            net = state.nets.g_c.eval()
            report = evaluate(
                lambda img, n=net: apply_generator(n, img), pairs, model_tag=name
            )
        except (TrainingDiverged, RuntimeError, ValueError) as exc:
            log.error("variant %s failed: %s", name, exc)
            report = EvalReport(model_tag=f"{name} [FAILED]")
            any_failed = True
        if report.failed:
            any_failed = True
        reports.append(report)
    print(format_eval_table(reports), end="")
    return 1 if any_failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unrain", description="unpaired single-image deraining toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on an unpaired corpus")
    p.add_argument("--data", required=True, help="corpus root directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--resume", metavar="CKPT", help="checkpoint directory to continue from")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("derain", help="restore one image or a directory of images")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True, help="rainy .png file or directory")
    p.add_argument("--output", required=True, help="output file or directory")
    p.set_defaults(func=_cmd_derain)

    p = sub.add_parser("evaluate", help="score a checkpoint on a paired test set")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="paired test root (rainy/ and gt/)")
    p.add_argument("--list", help="manifest restricting the evaluated stems")
    p.add_argument("--csv", help="write per-image scores to this CSV file")
    p.add_argument("--tag", default="model", help="label for the report row")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("make-synthetic", help="render a synthetic rain corpus")
    p.add_argument("--clean", required=True, help="directory of clean .png images")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--generate", type=int, default=0, metavar="N",
                   help="first generate N synthetic clean images into --clean")
    p.add_argument("--size", type=int, default=64, help="side length of generated clean images")
    p.add_argument("--seed", type=int, default=0, help="base seed for rain and splits")
    p.add_argument("--angle", type=float, default=-10.0, help="streak angle in degrees")
    p.add_argument("--length", type=int, default=9, help="streak length in pixels")
    p.add_argument("--density", type=float, default=0.03, help="streak seed density in [0, 1]")
    p.add_argument("--intensity", type=float, default=0.8, help="streak brightness in (0, 1]")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out fraction")
    p.set_defaults(func=_cmd_make_synthetic)

    p = sub.add_parser("ablate", help="train and score all loss-ablation variants")
    p.add_argument("--data", required=True, help="corpus root directory")
    p.add_argument("--out", required=True, help="output root; one subdirectory per variant")
    p.add_argument("--test-data", help="paired test root (defaults to --data)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
