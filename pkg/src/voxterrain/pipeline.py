"""Two-stage mapping pipeline: scan integration feeding map processing.

Stage one loads and integrates frame k+1 while stage two pushes frame k's
map into the buffer, fuses the buffer, derives the layers and writes them.
The handoff holds one map.  Offline runs apply back-pressure so every frame
is processed; with ``drop_stale`` the map stage folds every waiting map into
the buffer but only processes the newest one.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fusion import MapBuffer, combine
from .grid import GridSpec, VoxelMap
from .integrate import Pose, ScanFrame, integrate_scan
from .io import PipelineConfig, SequenceDataset, serialize_layer
from .layers import LayerParams, LayerStack, build_layers
from .preview import render_preview
from .sim import LidarModel, Scene, SceneFile, simulate_scan

log = logging.getLogger(__name__)

STAGES = ("integrate", "combine", "layers", "write", "cycle")


@dataclass
class FrameError:
    index: int
    message: str


@dataclass
class RunReport:
    frames_in: int = 0
    frames_out: int = 0
    errors: List[FrameError] = field(default_factory=list)
    latencies: Dict[str, List[float]] = field(default_factory=lambda: {s: [] for s in STAGES})
    completions: List[float] = field(default_factory=list)
    wall_time: float = 0.0
    outputs: List[Path] = field(default_factory=list)

    def stage_stats(self, stage: str) -> Dict[str, float]:
        v = np.asarray(self.latencies[stage], dtype=np.float64) * 1e3
        if v.size == 0:
            return {"mean_ms": math.nan, "p50_ms": math.nan, "p99_ms": math.nan}
        return {"mean_ms": float(v.mean()), "p50_ms": float(np.percentile(v, 50)), "p99_ms": float(np.percentile(v, 99))}

    def rate_stats(self) -> Dict[str, float]:
        """Cycle rate from intervals between successive outputs (Hz)."""
        c = np.asarray(self.completions, dtype=np.float64)
        if c.size < 2:
            cyc = np.asarray(self.latencies["cycle"], dtype=np.float64)
            if cyc.size == 0:
                return {"mean_hz": math.nan, "p50_hz": math.nan, "p99_hz": math.nan}
            gaps = cyc
        else:
            gaps = np.diff(c)
        gaps = np.maximum(gaps, 1e-9)
        return {
            "mean_hz": float(1.0 / gaps.mean()),
            "p50_hz": float(1.0 / np.percentile(gaps, 50)),
            # slowest 1% of cycles
            "p99_hz": float(1.0 / np.percentile(gaps, 99)),
        }

    def as_kv(self) -> Dict[str, float]:
        kv = {"frames_in": self.frames_in, "frames_out": self.frames_out, "errors": len(self.errors),
              "wall_time_s": self.wall_time}
        for s in STAGES:
            for k, v in self.stage_stats(s).items():
                kv[f"{s}_{k}"] = v
        for k, v in self.rate_stats().items():
            kv[f"rate_{k}"] = v
        return kv

    def table(self) -> str:
        rows = [f"{'stage':<10} {'mean ms':>10} {'p50 ms':>10} {'p99 ms':>10}"]
        for s in STAGES:
            st = self.stage_stats(s)
            rows.append(f"{s:<10} {st['mean_ms']:>10.2f} {st['p50_ms']:>10.2f} {st['p99_ms']:>10.2f}")
        r = self.rate_stats()
        rows.append("")
        rows.append(f"cycle rate: mean {r['mean_hz']:.2f} Hz, p50 {r['p50_hz']:.2f} Hz, p99 {r['p99_hz']:.2f} Hz")
        rows.append(f"frames: {self.frames_in} in, {self.frames_out} out, {len(self.errors)} errors")
        return "\n".join(rows) + "\n"

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "timing.txt").write_text(self.table())
        (directory / "timing.kv").write_text("".join(f"{k}={v!r}\n" for k, v in self.as_kv().items()))


# --------------------------------------------------------------------------
# frame sources

FrameLoader = Callable[[], ScanFrame]


def dataset_source(dataset: SequenceDataset) -> List[FrameLoader]:
    return [(lambda k=k: dataset.frame(k)) for k in range(len(dataset))]


def default_trajectory(scene: Scene, n: int, height: float = 1.8, speed: float = 0.5,
                       period: float = 0.1) -> List[Tuple[float, Pose]]:
    out = []
    for k in range(n):
        x = speed * k
        z = float(scene.height(x, 0.0)) + height
        out.append((period * k, Pose.from_yaw((x, 0.0, z), 0.0)))
    return out


def scene_source(scene_file: SceneFile, n_frames: Optional[int] = None, seed: int = 0) -> List[FrameLoader]:
    poses = scene_file.poses or default_trajectory(scene_file.scene, n_frames or 10)
    if n_frames is not None:
        poses = poses[:n_frames]
    return [
        (lambda k=k, t=t, p=p: simulate_scan(scene_file.scene, p, scene_file.lidar, seed=seed + k, timestamp=t))
        for k, (t, p) in enumerate(poses)
    ]


# --------------------------------------------------------------------------
# pipeline


def write_stack(stack: LayerStack, directory, preview: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for layer in stack:
        serialize_layer(layer, directory / f"{layer.name}.gvl")
    if preview:
        render_preview(stack, directory)
    return directory


def run_sequence(
    loaders: Sequence[FrameLoader],
    config: PipelineConfig = PipelineConfig(),
    output_dir=None,
    preview: bool = False,
    pipelined: bool = True,
    keep_going: bool = False,
    drop_stale: bool = False,
    on_stack: Optional[Callable[[int, LayerStack], None]] = None,
) -> RunReport:
    """Run integrate -> push -> combine -> layers -> write over every frame.

    ``output_dir`` None skips writing.  Per-frame failures are recorded with
    the frame index; without ``keep_going`` the run stops at the first one.
    """
    report = RunReport(frames_in=len(loaders))
    if not loaders:
        log.warning("no frames to process")
        return report
    out_root = Path(output_dir) if output_dir is not None else None
    buffer = MapBuffer(config.buffer_capacity, config.grid)
    stop = threading.Event()
    t_start = time.perf_counter()

    def produce(k: int):
        t0 = time.perf_counter()
        try:
            frame = loaders[k]()
            vmap = integrate_scan(frame, config.grid, workers=config.workers)
        except Exception as exc:  # per-frame failure, reported with its index
            return ("err", k, FrameError(k, f"{type(exc).__name__}: {exc}"), t0, time.perf_counter())
        return ("ok", k, vmap, t0, time.perf_counter())

    def process(item) -> bool:
        kind, k, payload, t0, t1 = item
        if kind == "err":
            log.error("frame %d: %s", k, payload.message)
            report.errors.append(payload)
            return keep_going
        report.latencies["integrate"].append(t1 - t0)
        buffer.push(payload)
        ta = time.perf_counter()
        fused = combine(buffer)
        tb = time.perf_counter()
        stack = build_layers(fused, config.layers)
        tc = time.perf_counter()
        if out_root is not None:
            report.outputs.append(write_stack(stack, out_root / f"frame_{k:06d}", preview=preview))
        td = time.perf_counter()
        if on_stack is not None:
            on_stack(k, stack)
        report.latencies["combine"].append(tb - ta)
        report.latencies["layers"].append(tc - tb)
        report.latencies["write"].append(td - tc)
        report.latencies["cycle"].append(td - t0)
        report.completions.append(td)
        report.frames_out += 1
        return True

    if not pipelined:
        for k in range(len(loaders)):
            if not process(produce(k)):
                break
    else:
        handoff: "queue.Queue" = queue.Queue(maxsize=1)
        done = object()

        def producer():
            for k in range(len(loaders)):
                if stop.is_set():
                    break
                item = produce(k)
                while not stop.is_set():
                    try:
                        handoff.put(item, timeout=0.05)
                        break
                    except queue.Full:
                        continue
            handoff.put(done)

        th = threading.Thread(target=producer, name="scan-integration", daemon=True)
        th.start()
        try:
            while True:
                item = handoff.get()
                if item is done:
                    break
                if drop_stale:
                    # fold every waiting map into the buffer, process the newest
                    while True:
                        try:
                            nxt = handoff.get_nowait()
                        except queue.Empty:
                            break
                        if nxt is done:
                            handoff.put(done)
                            break
                        if item[0] == "ok":
                            buffer.push(item[2])
                        item = nxt
                if not process(item):
                    stop.set()
                    break
        finally:
            stop.set()
            while th.is_alive():
                try:
                    handoff.get(timeout=0.05)
                except queue.Empty:
                    pass
            th.join()

    report.wall_time = time.perf_counter() - t_start
    if out_root is not None:
        report.write(out_root)
    return report


# --------------------------------------------------------------------------
# benchmark


def bench_scene() -> Scene:
    from .sim import Box, Step, Vegetation

    return Scene(
        base=(0.0, 0.03, -0.02),
        steps=[Step("x", 14.0, -1.5)],
        solids=[Box((5.0, 4.0, 0.0), (6.0, 5.0, 1.0)), Box((-7.0, -6.0, -0.5), (-5.5, -4.0, 1.5))],
        vegetation=[Vegetation((-9.0, 2.0, -0.5), (-6.0, 6.0, 1.2), 0.1)],
        rng_seed=11,
    )


def bench_frames(n_points: int, n_frames: int, seed: int = 0, scene: Optional[Scene] = None) -> List[ScanFrame]:
    """Simulated frames trimmed to exactly ``n_points`` returns each."""
    scene = scene or bench_scene()
    channels = 64 if n_points <= 40000 else 128
    lidar = LidarModel(channels=channels, azimuth_steps=1024,
                       vertical_fov=(math.radians(-22.5), math.radians(22.5)), range_noise_sigma=0.01)
    frames = []
    for k in range(n_frames):
        x = 0.4 * k
        pose = Pose.from_yaw((x, 0.0, float(scene.height(x, 0.0)) + 1.8), 0.02 * k)
        f = simulate_scan(scene, pose, lidar, seed=seed + k, timestamp=0.1 * k)
        pts = f.points
        if pts.shape[0] >= n_points:
            pts = pts[np.linspace(0, pts.shape[0] - 1, n_points).astype(np.int64)]
        else:
            pts = np.resize(pts, (n_points, 3))
        frames.append(ScanFrame(pts, f.sensor_pose, f.timestamp))
    return frames


@dataclass
class BenchResult:
    dims: Tuple[int, int, int]
    n_points: int
    buffer: int
    cycle_s: List[float]
    stage_s: Dict[str, List[float]]

    @property
    def median_hz(self) -> float:
        return 1.0 / float(np.median(self.cycle_s))

    @property
    def median_ms(self) -> float:
        return 1e3 * float(np.median(self.cycle_s))

    def summary(self) -> str:
        parts = [f"grid {self.dims[0]}x{self.dims[1]}x{self.dims[2]}, {self.n_points} pts/frame, buffer {self.buffer}:",
                 f"median cycle {self.median_ms:.1f} ms ({self.median_hz:.1f} Hz)"]
        for s, v in self.stage_s.items():
            parts.append(f"{s} {1e3 * float(np.median(v)):.1f} ms")
        return " ".join(parts)


def run_benchmark(dims=(128, 128, 32), n_points: int = 32768, cycles: int = 20, buffer: int = 8,
                  workers: int = 1, resolution: float = 0.4, params: LayerParams = LayerParams(),
                  seed: int = 0) -> BenchResult:
    """Time the full map cycle with a full buffer (frames are pre-generated)."""
    spec = GridSpec(tuple(dims), resolution)
    frames = bench_frames(n_points, buffer + cycles, seed=seed)
    buf = MapBuffer(buffer, spec)
    # warm-up: compile kernels and fill the buffer
    for f in frames[:buffer]:
        buf.push(integrate_scan(f, spec, workers=workers))
    build_layers(combine(buf), params)
    cycle, stages = [], {"integrate": [], "combine": [], "layers": []}
    for f in frames[buffer:]:
        t0 = time.perf_counter()
        vmap = integrate_scan(f, spec, workers=workers)
        t1 = time.perf_counter()
        buf.push(vmap)
        fused = combine(buf)
        t2 = time.perf_counter()
        build_layers(fused, params)
        t3 = time.perf_counter()
        cycle.append(t3 - t0)
        stages["integrate"].append(t1 - t0)
        stages["combine"].append(t2 - t1)
        stages["layers"].append(t3 - t2)
    return BenchResult(tuple(dims), n_points, buffer, cycle, stages)
