"""Command line entry point: ``voxterrain run ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .io import FormatError, PipelineConfig, SequenceDataset, load_config
from .pipeline import dataset_source, run_benchmark, run_sequence, scene_source
from .sim import load_scene

log = logging.getLogger("voxterrain")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxterrain", description="Lidar voxel mapping and terrain layers")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="process a recorded or simulated sequence")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--input", type=Path, help="dataset directory (*.gvpc frames + poses.txt)")
    src.add_argument("--scene", type=Path, help="scene description file to simulate")
    run.add_argument("--config", type=Path, help="key = value config file")
    run.add_argument("--output", type=Path, help="output directory (overrides config output_dir)")
    run.add_argument("--frames", type=int, help="process at most N frames")
    run.add_argument("--bench", action="store_true", help="run the throughput benchmark")
    run.add_argument("--preview", action="store_true", help="also write PNG previews")
    run.add_argument("--seed", type=int, default=0, help="simulation seed")
    run.add_argument("--workers", type=int, help="scan integration worker threads")
    run.add_argument("--keep-going", action="store_true", help="continue past per-frame errors")
    run.add_argument("--sequential", action="store_true", help="disable stage pipelining")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def _bench(cfg: PipelineConfig, out: Path, frames, workers: int) -> int:
    cycles = frames or 20
    results = [
        run_benchmark((128, 128, 32), 32768, cycles=cycles, buffer=cfg.buffer_capacity, workers=workers,
                      params=cfg.layers),
        run_benchmark((256, 256, 64), 65536, cycles=max(5, cycles // 2), buffer=cfg.buffer_capacity,
                      workers=workers, params=cfg.layers),
    ]
    lines = [r.summary() for r in results]
    print("\n".join(lines))
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.txt").write_text("\n".join(lines) + "\n")
    kv = []
    for tag, r in zip(("proxy", "full"), results):
        kv += [f"{tag}_median_ms={r.median_ms!r}", f"{tag}_median_hz={r.median_hz!r}", f"{tag}_points={r.n_points}"]
    (out / "bench.kv").write_text("\n".join(kv) + "\n")
    return 0


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
    except (OSError, ValueError) as exc:
        log.error("config: %s", exc)
        return 2
    if args.workers is not None:
        cfg.workers = args.workers if args.workers > 0 else (os.cpu_count() or 1)
    out = args.output or Path(cfg.output_dir)

    if args.bench:
        return _bench(cfg, out, args.frames, cfg.workers)

    try:
        if args.input is not None:
            loaders = dataset_source(SequenceDataset.open(args.input))
            if args.frames is not None:
                loaders = loaders[: args.frames]
        elif args.scene is not None:
            loaders = scene_source(load_scene(args.scene), args.frames, seed=args.seed)
        else:
            log.error("one of --input or --scene is required")
            return 2
    except (OSError, FormatError, ValueError) as exc:
        log.error("startup: %s", exc)
        return 2

    report = run_sequence(loaders, cfg, output_dir=out, preview=args.preview, pipelined=not args.sequential,
                          keep_going=args.keep_going)
    print(report.table(), end="")
    if report.errors and not args.keep_going:
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
