"""Command-line pipeline: gallery build | calibrate | evolve | evaluate |
gen-sample. Every run is seeded, writes only inside its --out directory,
and leaves a manifest.json from which it can be reproduced.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, engine, synthetic
from .errors import ConfigurationError, DataError, MasterprintError, NumericalStateError
from .gallery import (enroll, impostor_scores, ingest, load_template_gallery,
                      load_threshold, read_split, save_template_gallery,
                      split_identities, threshold_for_fmr, write_split)
from .generator import generate, generate_raw, load_generator_file
from .image import load_image, save_image
from .matcher import MATCHERS, get_matcher, load_matcher_params
from .minutiae import extract

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

DEFAULT_FMRS = (0.01, 0.001, 0.0001)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, subcommand: str, config: dict, inputs: list[str]) -> None:
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            artifacts[str(p.relative_to(out))] = _sha256(p)
    manifest = {
        "tool": "masterprint",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    data = json.loads(Path(path).read_text())
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]  # accept a previous run's manifest
    return data


def _merge_config(args: argparse.Namespace, explicit: dict, config: dict) -> None:
    """Resolution order: parser defaults < config file < explicit flags."""
    for key, value in config.items():
        attr = key.replace("-", "_")
        if attr in ("func", "config", "command", "gallery_command"):
            continue
        if hasattr(args, attr) and attr not in explicit:
            setattr(args, attr, value)


def _resolved(args: argparse.Namespace, skip=("func", "config")) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k not in skip and not k.startswith("_")}


def _fmr_tag(fmr: float) -> str:
    return format(fmr, "g")


def _threshold_path(thr_dir: Path, matcher_id: str, fmr: float) -> Path:
    return thr_dir / f"threshold_{matcher_id}_{_fmr_tag(fmr)}.json"


# --- gallery build -------------------------------------------------------------

def cmd_gallery_build(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed or 0
    if args.synthetic:
        source = out / "images"
        synthetic.write_gallery(source, args.synthetic, k=args.partials,
                                partial_size=args.partial_size, seed=seed)
        crop = None
    else:
        if not args.source:
            raise ConfigurationError("gallery build needs --source or --synthetic")
        source = Path(args.source)
        crop = args.crop_size
    g = ingest(source, crop_size=crop, seed=seed)
    for err in g.errors:
        print(f"warning: {err}", file=sys.stderr)
    print(f"ingested {len(g)} identities "
          f"({sum(len(gi.images) for gi in g.identities)} images, "
          f"{len(g.errors)} skipped)", file=sys.stderr)
    tg = enroll(g, workers=args.workers or 1)
    save_template_gallery(tg, out / "templates")
    train, test = split_identities(g.ids, ratio=args.split_ratio, seed=seed)
    write_split(out / "split.tsv", train, test)
    index = {
        "source": str(source),
        "crop_size": crop,
        "seed": seed,
        "identities": {gi.identity_id: len(gi.images) for gi in g.identities},
        "templates_dir": "templates",
        "split_file": "split.tsv",
        "skipped": list(g.errors),
    }
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    _write_manifest(out, "gallery-build", _resolved(args), [str(source)])
    print(f"gallery: {len(g)} identities, split {len(train)} train / {len(test)} test")
    return EXIT_OK


def _load_gallery_side(gallery_dir: Path, side: str):
    tg = load_template_gallery(gallery_dir / "templates")
    if side == "all":
        return tg
    train, test = read_split(gallery_dir / "split.tsv")
    return tg.subset(train if side == "train" else test)


# --- calibrate -----------------------------------------------------------------

def cmd_calibrate(args) -> int:
    gallery_dir = Path(args.gallery)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fmrs = [float(f) for f in (args.fmr or DEFAULT_FMRS)]
    for f in fmrs:
        if not (0.0 < f <= 1.0):
            raise ConfigurationError(f"fmr {f} outside (0, 1]")
    seed = args.seed or 0
    params = get_matcher(args.matcher)
    tg = _load_gallery_side(gallery_dir, args.use)
    scores = impostor_scores(tg, args.pairs, seed=seed, params=params)
    n = len(scores)
    lines = []
    for fmr in fmrs:
        if n < 10.0 / fmr:
            print(f"warning: only {n} calibration pairs for fmr {fmr} "
                  f"(want >= {int(10 / fmr)}); threshold is low-confidence",
                  file=sys.stderr)
        thr = threshold_for_fmr(scores, fmr, matcher_id=args.matcher)
        path = _threshold_path(out, args.matcher, fmr)
        path.write_text(thr.to_json())
        lines.append(f"fmr {_fmr_tag(fmr):>8}: threshold {thr.score:3d}  "
                     f"empirical {thr.empirical_fmr:.6f}  pairs {n}")
    _write_manifest(out, "calibrate", _resolved(args), [str(gallery_dir)])
    print("\n".join(lines))
    return EXIT_OK


# --- evolve --------------------------------------------------------------------

def cmd_evolve(args) -> int:
    out = Path(args.out)
    cfg = engine.AttackConfig(
        weights=args.weights, gallery_dir=args.gallery,
        thresholds_dir=args.thresholds, split=args.split,
        matcher_id=args.matcher, fmr=float(args.fmr), fmr_targets=DEFAULT_FMRS,
        sigma0=args.sigma0, lam=getattr(args, "lambda_", None),
        budget=args.budget, seed=args.seed or 0, workers=args.workers or 1,
        smoothed_fitness=args.smoothed, out_dir=str(out), resume=args.resume,
        verbose=not args.quiet)
    result = engine.evolve_masterprint(cfg)
    _write_manifest(out, "evolve", _resolved(args),
                    [args.weights, args.gallery, args.thresholds])
    print(f"evolved print matches {result.fitness_train} identities "
          f"at fmr {_fmr_tag(cfg.fmr)} ({result.stopped})")
    return EXIT_OK


# --- evaluate ------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    if bool(args.result) == bool(args.image):
        raise ConfigurationError("evaluate needs exactly one of --result or --image")
    gallery_dir = Path(args.gallery)
    thr_dir = Path(args.thresholds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img = load_image(Path(args.result) / "best.png" if args.result else args.image)
    matchers = [m.strip() for m in args.matchers.split(",") if m.strip()]
    for m in matchers:
        get_matcher(m)
    splits = [s.strip() for s in args.splits.split(",") if s.strip()]
    rows = []
    for matcher_id in matchers:
        thresholds = []
        for f in DEFAULT_FMRS:
            p = _threshold_path(thr_dir, matcher_id, f)
            if p.exists():
                thresholds.append(load_threshold(p))
        if not thresholds:
            raise DataError(f"no threshold files for matcher {matcher_id!r} in {thr_dir}")
        for side in splits:
            tg = _load_gallery_side(gallery_dir, side)
            for r in engine.evaluate_masterprint(img, tg, matcher_id, thresholds):
                rows.append((matcher_id, side, r))

    header = f"{'matcher':<10} {'split':<6} {'fmr':>8} {'threshold':>9} {'matched':>8} {'total':>6} {'percent':>8}"
    text = [header, "-" * len(header)]
    csv_lines = ["matcher,split,fmr,threshold,matched,total,percent"]
    for matcher_id, side, r in rows:
        text.append(f"{matcher_id:<10} {side:<6} {_fmr_tag(r.fmr):>8} "
                    f"{r.threshold:>9} {r.matched:>8} {r.total:>6} {r.percent:>7.2f}%")
        csv_lines.append(f"{matcher_id},{side},{_fmr_tag(r.fmr)},{r.threshold},"
                         f"{r.matched},{r.total},{r.percent:.4f}")
    report = "\n".join(text)
    (out / "report.txt").write_text(report + "\n")
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n")
    _write_manifest(out, "evaluate", _resolved(args),
                    [args.result or args.image, str(gallery_dir), str(thr_dir)])
    print(report)
    return EXIT_OK


# --- gen-sample ------------------------------------------------------------------

def cmd_gen_sample(args) -> int:
    model = load_generator_file(args.weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed or 0
    rng = np.random.default_rng(seed)
    latents = []
    if args.latent:
        latents.append(np.loadtxt(args.latent, delimiter=",").reshape(-1))
    else:
        for _ in range(args.n):
            latents.append(rng.standard_normal(model.latent_dim))
    gen_counts = []
    for i, z in enumerate(latents):
        if len(z) != model.latent_dim:
            raise DataError(f"latent length {len(z)} != model latent_dim {model.latent_dim}")
        img = generate(model, z)
        save_image(img, out / f"sample_{i:02d}.png")
        if args.raw:
            np.save(out / f"sample_{i:02d}_raw.npy", generate_raw(model, z))
        gen_counts.append(len(extract(img)))
    noise_counts = []
    for i in range(max(4, len(latents))):
        noise = synthetic.white_noise_image(model.output_shape, seed + 1000 + i)
        noise_counts.append(len(extract(noise)))
    summary = {
        "n_samples": len(latents),
        "minutiae_per_sample": gen_counts,
        "mean_minutiae_generated": float(np.mean(gen_counts)),
        "mean_minutiae_noise_control": float(np.mean(noise_counts)),
        "noise_counts": noise_counts,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _write_manifest(out, "gen-sample", _resolved(args), [str(args.weights)])
    print(f"samples: {len(latents)}  mean minutiae {summary['mean_minutiae_generated']:.1f}  "
          f"noise control {summary['mean_minutiae_noise_control']:.1f}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser(suppress_defaults: bool = False) -> argparse.ArgumentParser:
    """The CLI grammar; with suppress_defaults a parse yields only the
    options that were explicitly present on the command line."""

    def add(p, *names, **kw):
        if suppress_defaults:
            kw.pop("default", None)
            kw["default"] = argparse.SUPPRESS
        p.add_argument(*names, **kw)

    parser = argparse.ArgumentParser(
        prog="masterprint",
        description="Evolve and evaluate fingerprint images that match many "
                    "enrolled identities.")
    parser.add_argument("--version", action="version", version=__version__)

    common = argparse.ArgumentParser(add_help=False)
    add(common, "--seed", type=int, default=0, help="run seed")
    add(common, "--workers", type=int, default=None,
        help="parallel evaluation workers (default: cpu count)")
    add(common, "--config", default=None,
        help="JSON config file (or a previous manifest.json); explicit flags win")

    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gallery", help="gallery operations")
    gsub = g.add_subparsers(dest="gallery_command", required=True)
    gb = gsub.add_parser("build", parents=[common],
                         help="ingest (or synthesize) images, enroll templates, split")
    add(gb, "--source", default=None, help="identity-per-directory image tree")
    add(gb, "--synthetic", type=int, default=None, metavar="N",
        help="generate N synthetic identities instead of reading --source")
    add(gb, "--partials", type=int, default=12, help="partials per synthetic identity")
    add(gb, "--partial-size", type=int, default=128, help="synthetic partial size")
    add(gb, "--crop-size", type=int, default=None,
        help="random-crop source images to this size")
    add(gb, "--split-ratio", type=float, default=0.5)
    gb.add_argument("--out", required=True)
    gb.set_defaults(func=cmd_gallery_build)

    c = sub.add_parser("calibrate", parents=[common],
                       help="estimate impostor scores and write FMR thresholds")
    c.add_argument("--gallery", required=True, help="gallery build output directory")
    add(c, "--use", choices=("train", "test", "all"), default="train")
    add(c, "--matcher", default="default", choices=sorted(MATCHERS))
    add(c, "--matcher-params", default=None,
        help="JSON tolerance file overriding the selected matcher")
    add(c, "--fmr", type=float, nargs="+", default=None,
        help="target FMRs as fractions (default 0.01 0.001 0.0001)")
    add(c, "--pairs", type=int, default=50000)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evolve", parents=[common], help="run latent evolution")
    e.add_argument("--weights", required=True)
    e.add_argument("--gallery", required=True)
    e.add_argument("--thresholds", required=True)
    add(e, "--split", choices=("train", "test", "all"), default="train")
    add(e, "--matcher", default="default", choices=sorted(MATCHERS))
    add(e, "--matcher-params", default=None,
        help="JSON tolerance file overriding the selected matcher")
    add(e, "--fmr", type=float, default=0.01)
    add(e, "--budget", type=int, default=5000)
    add(e, "--sigma0", type=float, default=1.0)
    add(e, "--lambda", dest="lambda_", type=int, default=None)
    add(e, "--smoothed", action="store_true",
        help="add the tie-break fitness term (reports will say so)")
    add(e, "--resume", default=None, help="checkpoint file to resume from")
    add(e, "--quiet", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evolve)

    v = sub.add_parser("evaluate", parents=[common],
                       help="match percentages per matcher, FMR, and split")
    add(v, "--result", default=None, help="evolution result directory")
    add(v, "--image", default=None, help="probe image file")
    v.add_argument("--gallery", required=True)
    v.add_argument("--thresholds", required=True)
    add(v, "--matchers", default="default")
    add(v, "--matcher-params", default=None,
        help="JSON tolerance file overriding every selected matcher")
    add(v, "--splits", default="train,test")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gen-sample", parents=[common],
                       help="render latents (random or given) and report minutiae")
    s.add_argument("--weights", required=True)
    add(s, "--n", type=int, default=4)
    add(s, "--latent", default=None, help="CSV file with one latent vector")
    add(s, "--raw", action="store_true",
        help="also write pre-quantization outputs as .npy")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if config:
        explicit = vars(build_parser(suppress_defaults=True).parse_args(argv))
        _merge_config(args, explicit, config)
    try:
        if getattr(args, "workers", None) is None:
            args.workers = os.cpu_count() or 1
        override = getattr(args, "matcher_params", None)
        if override:
            params = load_matcher_params(override)
            for m in {getattr(args, "matcher", None)} | set(
                    (getattr(args, "matchers", "") or "").split(",")):
                if m:
                    MATCHERS[m.strip()] = params
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalStateError as exc:
        print(f"numerical error: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, MasterprintError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
