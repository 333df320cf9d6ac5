"""Command line entry point: build-db, augment, stats, render, validate."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .database import build_database, load_database, save_database
from .errors import CaAugError
from .kitti import list_frames, load_native_frame, read_frame, read_velodyne
from .pipeline import AugConfig, FrameStats, augment_dataset
from .render import render_rgb, write_ppm
from .validate import validate_output


def _frames_arg(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    p = Path(text)
    if p.is_file():
        return [line.strip() for line in p.read_text().splitlines() if line.strip()]
    return [f.strip() for f in text.split(",") if f.strip()]


def _kitti_frames(root, frames_arg) -> List[str]:
    if not Path(root).is_dir():
        raise FileNotFoundError(f"no such KITTI root: {root}")
    return _frames_arg(frames_arg) or list_frames(root)


def cmd_build_db(args) -> int:
    config = AugConfig.load(args.config) if args.config else AugConfig()
    frames = _kitti_frames(args.kitti_root, args.frames)
    db = build_database((read_frame(args.kitti_root, f) for f in frames), config.spec)
    save_database(db, args.out)
    counts = ", ".join(f"{k}={v}" for k, v in db.counts().items())
    print(f"wrote {args.out}: {len(db)} objects ({counts}); skipped {db.skipped}")
    return 0


def cmd_augment(args) -> int:
    config = AugConfig.load(args.config) if args.config else AugConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.strategy is not None:
        config.strategy = args.strategy
        config.__post_init__()
    stats = augment_dataset(args.kitti_root, args.db, args.out_dir, config,
                            _kitti_frames(args.kitti_root, args.frames), args.workers)
    accepted = sum(s.accepted for s in stats)
    drawn = sum(s.candidates for s in stats)
    print(f"augmented {len(stats)} frames: {accepted}/{drawn} candidates placed")
    return 0


def summarize(stats: List[FrameStats], bins: int = 10) -> str:
    drawn = sum(s.candidates for s in stats)
    accepted = sum(s.accepted for s in stats)
    culled = sum(s.culled for s in stats)
    rejections: dict = {}
    for s in stats:
        for k, v in s.rejections.items():
            rejections[k] = rejections.get(k, 0) + v
    lines = [f"frames {len(stats)}", f"candidates {drawn}", f"accepted {accepted}",
             f"acceptance_rate {accepted / drawn if drawn else 0.0:.4f}", f"culled {culled}"]
    lines += [f"rejected {k} {v}" for k, v in sorted(rejections.items())]
    ratios = np.array([r for s in stats for r in s.ratios])
    hist, edges = np.histogram(ratios, bins=bins, range=(0.0, 1.0))
    lines += [f"ratio_hist [{edges[i]:.1f},{edges[i + 1]:.1f}) {hist[i]}" for i in range(bins)]
    fractions = np.array([o.fraction for s in stats if s.occlusion for o in s.occlusion.objects])
    if len(fractions):
        q = np.quantile(fractions, [0.0, 0.25, 0.5, 0.75, 1.0])
        lines.append(f"retained_fraction mean {fractions.mean():.4f} "
                     + " ".join(f"q{int(k * 100)} {v:.4f}" for k, v in zip([0, .25, .5, .75, 1], q)))
    totals = np.array([s.timings.get("total", np.nan) for s in stats])
    if len(totals):
        lines.append(f"latency_ms median {1e3 * np.nanmedian(totals):.2f} max {1e3 * np.nanmax(totals):.2f}")
    return "\n".join(lines)


def cmd_stats(args) -> int:
    files = sorted(Path(args.out_dir, "stats").glob("*.txt"))
    if not files:
        print(f"caaug: error: no stats under {args.out_dir}", file=sys.stderr)
        return 2
    stats = []
    for f in files:
        text = f.read_text()
        timing = f.parent.parent / "timings" / f.name
        if timing.is_file():
            text = timing.read_text() + text
        stats.append(FrameStats.from_text(text))
    print(summarize(stats))
    return 0


def cmd_render(args) -> int:
    config = AugConfig.load(args.config) if args.config else AugConfig()
    path = Path(args.frame)
    tags = None
    if path.suffix == ".npz":
        bundle, spec = load_native_frame(path)
        cloud, tags = bundle.cloud, bundle.cloud.tags
    else:
        cloud, spec = read_velodyne(path), config.spec
        aux = path.parent.parent / "aux" / f"{path.stem}.npz"
        if aux.is_file():
            with np.load(aux) as z:
                if len(z["tags"]) == len(cloud):
                    tags = z["tags"]
    write_ppm(args.out, render_rgb(cloud, spec, tags))
    print(f"wrote {args.out} ({spec.width}x{spec.height})")
    return 0


def cmd_validate(args) -> int:
    violations = validate_output(args.out_dir)
    for v in violations:
        print(v)
    if violations:
        return 1
    print("all invariants hold")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caaug", description="Context-aware GT-object augmentation for lidar frames.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", help="build the ground-truth object database")
    p.add_argument("kitti_root")
    p.add_argument("out")
    p.add_argument("--config")
    p.add_argument("--frames", help="comma-separated ids or a file with one id per line")
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("augment", help="augment frames into an output tree")
    p.add_argument("kitti_root")
    p.add_argument("db")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=["naive", "culling", "drilling", "none"])
    p.add_argument("--frames")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("stats", help="aggregate per-frame statistics")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("render", help="write a range image as PPM")
    p.add_argument("frame")
    p.add_argument("out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="re-check placement and occlusion invariants")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CaAugError, OSError) as exc:
        print(f"caaug: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
