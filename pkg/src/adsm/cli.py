"""``adsm`` command line: generate, train, score, eval, demo-modes, plot.

Every run writes one JSON manifest next to its output (``manifest.json``
inside output directories, ``<file>.manifest.json`` beside output files).
``adsm --manifest <path>`` re-runs the recorded command after checking that
its inputs still match the recorded checksums, then compares the outputs.

Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric fault.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, apply_kv, read_kv
from .dataset import (DataFormatError, load_split, read_labels, resolve_split, tree_checksum,
                      write_dataset)
from .evaluation import (GaussianMixture2D, LabeledScores, UndefinedAUC, macro_auc, micro_auc,
                         minor_mode, mixture_score_field)
from .plots import emit_plots, mixture_heatmap_svg
from .presets import PRESETS
from .scoring import ScoreConfig, read_final_scores, score_video, write_scores
from .tensor import ContractViolation, NumericFault
from .training import CheckpointError, load_checkpoint, save_checkpoint, train

log = logging.getLogger("adsm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
    return vals


def _rates(text):
    return tuple(_floats(text, 3))


def _grid(text):
    ext, res = _floats(text, 2)
    if ext <= 0 or res < 2 or res != int(res):
        raise argparse.ArgumentTypeError("grid needs a positive extent and an integer resolution >= 2")
    return ext, int(res)


def _fusion(text):
    return None if text == "uniform" else _floats(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adsm", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"adsm {__version__}")
    p.add_argument("--manifest", type=Path, help="replay the run recorded in this manifest")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    data0, train0, score0 = PRESETS["tiny"]

    g = sub.add_parser("generate", help="write a synthetic video dataset")
    g.add_argument("--scenes", type=int, default=data0.scenes)
    g.add_argument("--videos-per-scene", type=int, default=data0.videos_per_scene)
    g.add_argument("--test-videos-per-scene", type=int, default=None)
    g.add_argument("--frames", type=int, default=data0.frames)
    g.add_argument("--size", type=int, default=data0.size)
    g.add_argument("--channels", type=int, default=data0.channels)
    g.add_argument("--anomaly-rates", type=_rates, default=data0.anomaly_rates,
                   help="scene,motion,appearance per-segment firing probabilities")
    g.add_argument("--seed", type=int, default=data0.seed)
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="fit an NCST on the train split")
    t.add_argument("--preset", choices=sorted(PRESETS), default="tiny")
    t.add_argument("--config", type=Path, help="flat key = value file; flags override it")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--no-motion-weights", action="store_true")
    t.add_argument("--no-scene-condition", action="store_true")

    s = sub.add_parser("score", help="per-frame anomaly indicators for the test split")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--levels", type=int, default=score0.levels)
    s.add_argument("--sigma-min", type=float, default=score0.sigma_min)
    s.add_argument("--sigma-max", type=float, default=score0.sigma_max)
    s.add_argument("--schedule", choices=["geometric", "linear"], default=score0.schedule)
    s.add_argument("--clip-frames", type=int, default=None, help="default: twice the window length")
    s.add_argument("--fusion-weights", type=_fusion, default=None, metavar="CSV|uniform")
    s.add_argument("--noise", choices=["fresh", "shared"], default=score0.noise)
    s.add_argument("--no-autoregressive", action="store_true")
    s.add_argument("--no-appearance", action="store_true")
    s.add_argument("--variant", default=None, help="name reported by eval (default: output dir name)")
    s.add_argument("--seed", type=int, default=score0.seed)

    e = sub.add_parser("eval", help="micro and macro frame-level AUC")
    e.add_argument("--scores", type=Path, required=True,
                   help="a score directory, or a directory of score directories")
    e.add_argument("--labels", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True)

    d = sub.add_parser("demo-modes", help="two-Gaussian score field and the minor-mode exhibit")
    d.add_argument("--mixture", default="0.95,0,0,1;0.05,4,0,1", help="'w,mx,my,var;...'")
    d.add_argument("--grid", type=_grid, default=(7.0, 141), metavar="EXTENT,RESOLUTION")
    d.add_argument("--out", type=Path, required=True)

    pl = sub.add_parser("plot", help="SVG score curves with shaded anomaly intervals")
    pl.add_argument("--scores", type=Path, required=True)
    pl.add_argument("--labels", type=Path)
    pl.add_argument("--out", type=Path, required=True)
    return p


# ---------------------------------------------------------------- manifest

def file_checksum(path: Path) -> str:
    path = Path(path)
    if path.is_dir():
        return tree_checksum(path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _output_checksums(paths: list[Path]) -> dict[str, str]:
    return {str(p.resolve()): file_checksum(p) for p in paths}


def write_manifest(out: Path, *, command, argv, config, seed, inputs, outputs, started, jobs) -> Path:
    manifest = {
        "tool": "adsm",
        "version": __version__,
        "command": command,
        "argv": argv,
        "cwd": os.getcwd(),
        "jobs": jobs,
        "config": config,
        "seed": seed,
        "inputs": {str(Path(p).resolve()): file_checksum(p) for p in inputs},
        "outputs": _output_checksums(outputs),
        "timings": {"wall_seconds": round(time.time() - started, 3)},
    }
    path = _manifest_path(out)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- commands

def cmd_generate(args, argv):
    started = time.time()
    data0 = PRESETS["tiny"][0]
    try:
        spec = replace(data0, scenes=args.scenes, videos_per_scene=args.videos_per_scene,
                       test_videos_per_scene=args.test_videos_per_scene, frames=args.frames, size=args.size,
                       channels=args.channels, anomaly_rates=tuple(args.anomaly_rates), seed=args.seed)
    except ContractViolation as exc:
        raise UsageError(str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    summary = write_dataset(args.out, spec)
    outputs = sorted(p for p in args.out.rglob("*") if p.is_file() and p.name != "manifest.json")
    write_manifest(args.out, command="generate", argv=argv, config=spec.to_dict(), seed=spec.seed,
                   inputs=[], outputs=outputs, started=started, jobs=args.jobs)
    print(f"wrote {summary['train_videos']} train and {summary['test_videos']} test videos "
          f"({summary['anomalous_test_frames']} anomalous frames) to {args.out}")


def _train_config(args):
    cfg = PRESETS[args.preset][1]
    if args.config is not None:
        cfg = apply_kv(cfg, read_kv(args.config))
    over = {k: getattr(args, k) for k in ("seed", "epochs", "batch", "lr") if getattr(args, k) is not None}
    if args.no_motion_weights:
        over["motion_weights"] = False
    if args.no_scene_condition:
        over["scene_condition"] = False
    # content checksum rather than path, so the checkpoint does not depend on where the data lives
    over["data"] = "sha256:" + tree_checksum(resolve_split(args.data, "train"))
    return replace(cfg, **over)


def _dataset_fingerprint(split: Path) -> str:
    meta = split.parent / "dataset.json"
    return file_checksum(meta if meta.exists() else split)


def cmd_train(args, argv):
    started = time.time()
    cfg = _train_config(args)
    split = resolve_split(args.data, "train")
    videos = load_split(split)
    mc = cfg.resolved_model()
    geo = sorted({v.geometry for v in videos})
    if geo != [(mc.size, mc.size, mc.channels)]:
        raise DataFormatError(
            f"incompatible geometry: dataset frames {geo} (dataset {_dataset_fingerprint(split)[:12]}) vs model "
            f"({mc.size}, {mc.size}, {mc.channels}) (config {mc.fingerprint()[:12]})")

    def progress(epoch, loss):
        log.info("epoch %d loss %.5f", epoch, loss)

    ckpt = train(cfg, videos=videos, progress=progress)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, args.out)
    write_manifest(args.out, command="train", argv=argv, config=cfg.to_dict(), seed=cfg.seed,
                   inputs=[split], outputs=[args.out], started=started, jobs=args.jobs)
    hist = ckpt.metadata["loss_history"]
    print(f"trained {cfg.epochs} epochs: loss {hist[0]:.4f} -> {hist[-1]:.4f}; wrote {args.out}")


_WORKER: dict = {}


def _score_init(ckpt_path):
    _WORKER["model"] = load_checkpoint(ckpt_path).model()


def _score_one(job):
    video, cfg = job
    return score_video(video, _WORKER["model"], cfg)


def cmd_score(args, argv):
    started = time.time()
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.model()
    cfg = ScoreConfig(levels=args.levels, sigma_min=args.sigma_min, sigma_max=args.sigma_max,
                      schedule=args.schedule, clip_frames=args.clip_frames, fusion_weights=args.fusion_weights,
                      noise=args.noise, autoregressive=not args.no_autoregressive,
                      appearance=not args.no_appearance, seed=args.seed)
    split = resolve_split(args.data, "test")
    videos = load_split(split)
    mc = ckpt.config
    bad = sorted({v.geometry for v in videos} - {(mc.size, mc.size, mc.channels)})
    if bad:
        raise DataFormatError(
            f"incompatible geometry: dataset frames {bad} (dataset {_dataset_fingerprint(split)[:12]}) vs "
            f"checkpoint ({mc.size}, {mc.size}, {mc.channels}) (config {mc.fingerprint()[:12]})")
    if args.jobs > 1 and len(videos) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs, initializer=_score_init, initargs=(str(args.ckpt),)) as ex:
            series = list(ex.map(_score_one, [(v, cfg) for v in videos]))
    else:
        series = [score_video(v, model, cfg) for v in videos]
    write_scores(args.out, series)
    outputs = [args.out / "scores_raw.csv", args.out / "scores_final.csv"]
    config = {"score": cfg.to_dict(), "variant": args.variant or args.out.name, "checkpoint_config": mc.to_dict()}
    write_manifest(args.out, command="score", argv=argv, config=config, seed=cfg.seed,
                   inputs=[args.ckpt, split], outputs=outputs, started=started, jobs=args.jobs)
    print(f"scored {len(series)} videos ({cfg.schedule} ladder, L={cfg.levels}); wrote {args.out}")


def _score_dirs(root: Path) -> list[tuple[str, Path]]:
    def name_of(d: Path) -> str:
        m = d / "manifest.json"
        if m.exists():
            try:
                return json.loads(m.read_text())["config"]["variant"]
            except (KeyError, TypeError, ValueError):
                pass
        return d.name

    if (root / "scores_final.csv").exists():
        return [(name_of(root), root)]
    dirs = sorted(d for d in root.iterdir() if (d / "scores_final.csv").exists()) if root.is_dir() else []
    if not dirs:
        raise DataFormatError(f"no scores_final.csv under {root}")
    return [(name_of(d), d) for d in dirs]


def cmd_eval(args, argv):
    started = time.time()
    labels = read_labels(args.labels)
    rows, inputs = [], [args.labels]
    for name, d in _score_dirs(args.scores):
        data = LabeledScores.join(read_final_scores(d / "scores_final.csv"), labels)
        micro = micro_auc(data)
        macro, excluded = macro_auc(data)
        rows.append((name, micro, macro, excluded))
        inputs.append(d / "scores_final.csv")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "micro_auc", "macro_auc", "excluded_videos"])
        for name, micro, macro, excluded in rows:
            w.writerow([name, f"{micro:.9g}", f"{macro:.9g}", " ".join(excluded)])
    write_manifest(args.out, command="eval", argv=argv, config={"variants": [r[0] for r in rows]}, seed=None,
                   inputs=inputs, outputs=[args.out], started=started, jobs=args.jobs)
    for name, micro, macro, excluded in rows:
        print(f"{name}: micro {micro:.4f} macro {macro:.4f} (excluded {len(excluded)})")


def cmd_demo_modes(args, argv):
    started = time.time()
    try:
        mix = GaussianMixture2D.parse(args.mixture)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    extent, res = args.grid
    axis = np.linspace(-extent, extent, res)
    gx, gy = np.meshgrid(axis, axis)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    f = mixture_score_field(mix, pts)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "density", "score_x", "score_y", "score_norm"])
        for p, dens, sc, nm in zip(pts, f["density"], f["score"], f["norm"]):
            w.writerow([f"{p[0]:.9g}", f"{p[1]:.9g}", f"{dens:.9g}", f"{sc[0]:.9g}", f"{sc[1]:.9g}", f"{nm:.9g}"])
    svg = args.out.with_suffix(".svg")
    mixture_heatmap_svg(axis, axis, f["norm"].reshape(res, res), f["density"].reshape(res, res), svg)
    outputs = [args.out, svg]
    if len(mix.weights) == 2:
        major, minor = int(np.argmax(mix.weights)), int(np.argmin(mix.weights))
        x = minor_mode(mix, k=minor, axis_point=major)
        at = mixture_score_field(mix, np.vstack([x, mix.means[major]]))
        print(f"minor mode at ({x[0]:.6f}, {x[1]:.6f}): score norm {at['norm'][0]:.3e}, "
              f"density ratio to major mode {at['density'][0] / at['density'][1]:.4f}")
    write_manifest(args.out, command="demo-modes", argv=argv, config={"mixture": args.mixture,
                   "grid": list(args.grid)}, seed=None, inputs=[], outputs=outputs, started=started, jobs=args.jobs)
    print(f"wrote {args.out} and {svg}")


def cmd_plot(args, argv):
    started = time.time()
    src = args.scores / "scores_final.csv" if args.scores.is_dir() else args.scores
    scores = read_final_scores(src)
    labels = read_labels(args.labels) if args.labels else None
    written = emit_plots(scores, labels, args.out)
    inputs = [src] + ([args.labels] if args.labels else [])
    write_manifest(args.out, command="plot", argv=argv, config={}, seed=None, inputs=inputs,
                   outputs=written, started=started, jobs=args.jobs)
    print(f"wrote {len(written)} plots to {args.out}")


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "score": cmd_score, "eval": cmd_eval,
            "demo-modes": cmd_demo_modes, "plot": cmd_plot}


# ---------------------------------------------------------------- replay

def replay(path: Path, jobs: int | None = None) -> int:
    try:
        manifest = json.loads(Path(path).read_text())
        argv, cwd = manifest["argv"], manifest["cwd"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"adsm: unreadable manifest {path}: {exc}", file=sys.stderr)
        return EXIT_DATA
    for p, digest in manifest.get("inputs", {}).items():
        if not Path(p).exists() or file_checksum(Path(p)) != digest:
            print(f"adsm: input {p} changed since the recorded run", file=sys.stderr)
            return EXIT_DATA
    if jobs is not None:
        argv = ["--jobs", str(jobs)] + list(argv)
    here = os.getcwd()
    os.chdir(cwd)
    try:
        code = main(argv)
    finally:
        os.chdir(here)
    if code != EXIT_OK:
        return code
    # the replay rewrote the manifest; compare its outputs with the recorded ones
    fresh = json.loads(Path(path).read_text()) if Path(path).exists() else {}
    if fresh.get("outputs") != manifest["outputs"]:
        print("adsm: replay outputs differ from the recorded checksums", file=sys.stderr)
        return EXIT_DATA
    print(f"replayed {manifest['command']}: outputs match")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.jobs < 1:
        print("adsm: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.manifest is not None:
        if args.command is not None:
            print("adsm: --manifest replays a run and takes no command", file=sys.stderr)
            return EXIT_USAGE
        return replay(args.manifest, args.jobs if "--jobs" in argv else None)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    # record argv without the replay-only global flags
    rec = [a for a in argv]
    if "--jobs" in rec[:rec.index(args.command)]:
        k = rec.index("--jobs")
        del rec[k:k + 2]
    try:
        COMMANDS[args.command](args, rec)
    except NumericFault as exc:
        print(f"adsm: numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError) as exc:
        print(f"adsm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, ContractViolation, UndefinedAUC, ValueError, OSError) as exc:
        print(f"adsm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
