"""``scoreforge`` command line: augment, train, generate, translate, evaluate, report.

Exit codes: 0 success, 1 usage error, 2 runtime error. ``SCOREFORGE_DEVICE``
selects the torch device (default ``cpu``).
"""

from __future__ import annotations

import argparse
import dataclasses
import shutil
import sys
from pathlib import Path

import numpy as np

from . import dataprep, metrics, report
from .traincore import (
    DEVICE_ENV, ConfigError, LossLog, NonFiniteLossError, TrainConfig, default_config,
    load_checkpoint, load_config,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _claim_output(path: Path, overwrite: bool, kind: str = "directory") -> None:
    """Refuse to reuse a non-empty output unless ``--overwrite`` was given."""
    exists = path.exists() and (path.is_file() or any(path.iterdir()))
    if exists and not overwrite:
        raise UsageError(f"{kind} {path} already exists; pass --overwrite to replace it")
    if exists and path.is_dir():
        shutil.rmtree(path)
    elif exists:
        path.unlink()


# ---------------------------------------------------------------------------
# augment


def cmd_augment(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"input directory {src} does not exist")
    out = Path(args.output)
    domain = dataprep.Domain(args.domain)
    manifest_file = dataprep.manifest_path(out, domain)
    stale = sorted(out.glob(f"{domain.value}_*.png")) if out.is_dir() else []
    if (stale or manifest_file.exists()) and not args.overwrite:
        raise UsageError(f"{out} already holds {domain.value} crops; pass --overwrite to replace them")
    for p in stale:
        p.unlink()
    out.mkdir(parents=True, exist_ok=True)

    sources, rejects = dataprep.load_source_images(src, domain)
    n_crops = 0
    for image in sources:
        gray = dataprep.to_grayscale(image)
        try:
            crops = dataprep.extract_square_crops(gray, args.crop_size, args.stride)
        except ValueError as exc:
            rejects.append((image.source_id, str(exc)))
            continue
        dataprep.save_crops(crops, out)
        n_crops += len(crops)
    manifest = dataprep.build_manifest(out, domain, args.eval_fraction)
    manifest.crop_size = manifest.crop_size or args.crop_size
    manifest.save(manifest_file)
    print(f"domain={domain.value} sources={len(sources)} crops={manifest.count}")
    if rejects or manifest.rejects:
        for name, reason in rejects + manifest.rejects:
            print(f"rejected {name}: {reason}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

_OVERRIDABLE = [f for f in dataclasses.fields(TrainConfig) if f.name not in ("model", "seed", "output_dir")]


def _parse_field(f: dataclasses.Field, raw: str):
    default = f.default
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise UsageError(f"--{f.name} expects true/false")
        return raw.lower() in ("true", "1")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    try:
        return type(default)(raw) if default is not dataclasses.MISSING else float(raw)
    except ValueError:
        raise UsageError(f"--{f.name}: cannot parse {raw!r}") from None


def _resolve_manifest(path: str, what: str) -> dataprep.DatasetManifest:
    if not path:
        raise UsageError(f"no {what} given (set it in the config file or with --{what})")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return dataprep.DatasetManifest.load(p)


def cmd_train(args) -> int:
    overrides = {}
    for f in _OVERRIDABLE:
        raw = getattr(args, f.name)
        if raw is not None:
            overrides[f.name] = _parse_field(f, raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        if args.config:
            if not Path(args.config).is_file():
                raise UsageError(f"config file {args.config} does not exist")
            config = load_config(args.config, args.model, **overrides)
        else:
            config = default_config(args.model, **overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.output or config.output_dir or f"runs/{config.model}")
    config = config.replace(output_dir=str(out))
    if config.model == "cyclewgan":
        manifests = (_resolve_manifest(config.manifest_p, "manifest_p"),
                     _resolve_manifest(config.manifest_h, "manifest_h"))
    else:
        manifests = (_resolve_manifest(config.manifest, "manifest"),)
    if args.resume and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint {args.resume} does not exist")
    _claim_output(out, args.overwrite)
    out.mkdir(parents=True)
    (out / "config.toml").write_text(config.to_toml(), encoding="utf-8")

    if config.model == "dcgan":
        from .dcgan import train_dcgan as train
    elif config.model == "progan":
        from .progan import train_progan as train
    else:
        from .cyclewgan import train_cyclewgan as train
    try:
        result = train(config, *manifests, output_dir=out, resume=args.resume)
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc} (loss term {exc.name}, step {exc.step})", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"model={config.model} steps={len(result.losslog)} epochs={result.checkpoint.epoch + 1} "
          f"log={out / 'losslog.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate / translate


def cmd_generate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = ck.config.get("model")
    out = Path(args.output)
    _claim_output(out, args.overwrite)
    seed = args.seed if args.seed is not None else 0
    if model == "dcgan":
        from .dcgan import generate, generator_from_checkpoint
        if args.resolution not in (None, ck.config["resolution"]):
            raise UsageError(f"DCGAN checkpoint generates {ck.config['resolution']}px images only")
        paths = generate(generator_from_checkpoint(ck), args.n, out, seed=seed)
    elif model == "progan":
        from .progan import generate, generator_from_checkpoint
        paths = generate(generator_from_checkpoint(ck), args.n, out, args.resolution, seed=seed)
    else:
        raise UsageError(f"cannot sample from a {model!r} checkpoint; use translate")
    print(f"wrote {len(paths)} images to {out}")
    return EXIT_OK


def cmd_translate(args) -> int:
    import torch
    from .cyclewgan import Direction, contact_sheet, model_from_checkpoint, translate

    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"input directory {src} does not exist")
    if args.seed is not None:
        torch.manual_seed(args.seed)
    model = model_from_checkpoint(args.checkpoint)
    names, images = dataprep.load_image_dir(src, model.resolution if args.resize else None)
    out = Path(args.output)
    _claim_output(out, args.overwrite)
    out.mkdir(parents=True)
    direction = Direction(args.direction)
    prefix = "fake_hw" if direction is Direction.P2H else "fake_pr"
    outputs = translate(model, images, direction) if names else images
    pixels = dataprep.to_uint8(outputs[:, 0]) if names else []
    from PIL import Image
    for name, px in zip(names, pixels):
        Image.fromarray(np.ascontiguousarray(px)).save(out / f"{prefix}_{name}.png")
    if args.contact_sheet and names:
        contact_sheet(images[:args.sheet_size], outputs[:args.sheet_size], args.contact_sheet)
    print(f"translated {len(names)} images ({direction.value}) into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / report


def _extractor(name: str, seed: int):
    if name == "random":
        return metrics.RandomProjectionExtractor(seed=seed)
    return metrics.InceptionExtractor()


def cmd_evaluate(args) -> int:
    for d in (args.real, args.fake):
        if not Path(d).is_dir():
            raise UsageError(f"directory {d} does not exist")
    extractor = _extractor(args.extractor, args.seed or 0)
    rep = metrics.evaluate(args.real, args.fake, extractor, args.splits, args.resolution)
    text = rep.to_json()
    if args.output:
        out = Path(args.output)
        _claim_output(out, args.overwrite, "file")
        out.write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _labelled(pairs: list[str], flag: str) -> list[tuple[str, Path]]:
    out = []
    for item in pairs:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise UsageError(f"{flag} expects LABEL=PATH, got {item!r}")
        out.append((label, Path(path)))
    return out


def _load_matrix(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_report(args) -> int:
    if not (args.losslog or args.pca_features or args.pca_images):
        raise UsageError("nothing to report: give --losslog and/or --pca-features/--pca-images")
    out = Path(args.output)
    _claim_output(out, args.overwrite)
    out.mkdir(parents=True)
    written = []
    if args.losslog:
        path = Path(args.losslog)
        if not path.is_file():
            raise UsageError(f"loss log {path} does not exist")
        try:
            log = LossLog.load(path)
        except ValueError as exc:
            print(f"malformed loss log {path}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        if len(log) == 0:
            print(f"loss log {path} has no rows", file=sys.stderr)
            return EXIT_RUNTIME
        paths, n_curves = report.loss_report(log, out, args.title)
        print(f"curves={n_curves} steps={len(log)}")
        written += paths
    sets = []
    for label, p in _labelled(args.pca_features or [], "--pca-features"):
        sets.append((label, _load_matrix(p)))
    if args.pca_images:
        extractor = _extractor(args.extractor, args.seed or 0)
        for label, d in _labelled(args.pca_images, "--pca-images"):
            _, images = dataprep.load_image_dir(d)
            sets.append((label, extractor.embed(images)))
    if sets:
        result = metrics.pca_project(sets)
        written.append(metrics.save_pca_csv(result, out / "pca.csv"))
        written.append(report.plot_pca(result, out / "pca.png", args.title))
    for p in written:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scoreforge", description=__doc__.split("\n")[0],
                     epilog=f"Set {DEVICE_ENV} to choose the torch device (default: cpu).")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed_help="random seed"):
        p.add_argument("--seed", type=int, default=None, help=seed_help)
        p.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    p = sub.add_parser("augment", help="cut staff scans into square grayscale crops and write a manifest")
    p.add_argument("--input", required=True, help="directory of staff images")
    p.add_argument("--output", required=True, help="directory for crops and manifest")
    p.add_argument("--domain", required=True, choices=[d.value for d in dataprep.Domain])
    p.add_argument("--crop-size", type=int, default=128, help="side of the square crops in pixels")
    p.add_argument("--stride", type=int, default=None, help="horizontal step between crops (default: crop size)")
    p.add_argument("--eval-fraction", type=float, default=0.0, help="fraction of source pages held out for eval")
    common(p, "unused; crop extraction is deterministic")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("model", choices=["dcgan", "progan", "cyclewgan"])
    p.add_argument("--config", default=None, help="flat TOML config; keys are TrainConfig field names")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--output", default=None, help="run directory (default: config output_dir or runs/<model>)")
    common(p, "overrides the config seed")
    for f in _OVERRIDABLE:
        p.add_argument(f"--{f.name}", default=None, metavar="VALUE", help=f"override config field {f.name}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images from a DCGAN or ProGAN checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16, help="number of images")
    p.add_argument("--output", required=True, help="directory for PNGs")
    p.add_argument("--resolution", type=int, default=None, help="ProGAN stage resolution (default: final)")
    common(p, "latent seed (default 0)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("translate", help="translate a directory of crops with a CycleWGAN checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of PNG crops")
    p.add_argument("--output", required=True, help="directory for fake_hw_<name>.png outputs")
    p.add_argument("--direction", choices=["p2h", "h2p"], default="p2h")
    p.add_argument("--resize", action="store_true", help="area-resample inputs to the trained resolution")
    p.add_argument("--contact-sheet", default=None, help="also write an input/output contact sheet PNG")
    p.add_argument("--sheet-size", type=int, default=8, help="images on the contact sheet")
    common(p, "torch seed; translation itself is deterministic")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="IS / FID / KID of a fake directory against a real one")
    p.add_argument("--real", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--extractor", choices=["random", "inception"], default="random")
    p.add_argument("--splits", type=int, default=10, help="Inception Score splits")
    p.add_argument("--resolution", type=int, default=None, help="area-resample images to this size first")
    p.add_argument("--output", default=None, help="write the JSON report here as well")
    common(p, "seed of the random-projection extractor")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="loss-curve and PCA figures")
    p.add_argument("--losslog", default=None, help="loss log CSV from a training run")
    p.add_argument("--pca-features", action="append", metavar="LABEL=FILE",
                   help="feature matrix (.npy or .csv) to include in the PCA plot; repeatable")
    p.add_argument("--pca-images", action="append", metavar="LABEL=DIR",
                   help="image directory embedded with --extractor for the PCA plot; repeatable")
    p.add_argument("--extractor", choices=["random", "inception"], default="random")
    p.add_argument("--title", default=None)
    p.add_argument("--output", required=True, help="directory for figures")
    common(p, "seed of the random-projection extractor")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"scoreforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, NonFiniteLossError, metrics.ExtractorError, metrics.NumericalError,
            OSError, RuntimeError, ValueError) as exc:
        print(f"scoreforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
