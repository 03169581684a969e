"""Quality evaluation and throughput/size benchmarking.

FLOP accounting (per pixel, additions and multiplications counted once each,
transcendentals counted as one op):

full evaluation, N primitives:
  per primitive: diff 3, forward substitution 9 (3 divs + 6 mul/sub fused as
  one op each), squared norm 5, q assembly 3 (scale, +log-const, exp) -> 20
  mixture: max-scan N, subtract/exp/normalize 3N, weighted affine blend
  (3x3 matvec 15 + weight apply 6) 21N, denominator sum N + eps add/div 4
  global affine 18, clamp 3
  total(N) ~= 20N + 25N + 25 = 45N + 25

sparse evaluation, keep K = ceil(kf * N):
  distance scan over all means 8N (diff 3, sqnorm 5), top-K partition ~N,
  then the full pipeline over K -> 9N + 45K + 25

Reduction at kf = 0.5 is ~= (45N - 9N - 22.5N) / (45N + 25) -> ~30% for the
model sizes used here, which is what the sparse mode is for. Counts are a
documented model of the arithmetic, not hardware profiling.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import color
from .glut_core import GlutModel, apply_to_image, evaluate
from .lut_io import CubeLut, trilinear_sample

RESOLUTIONS = {
    "512": (512, 512),
    "hd": (1280, 720),
    "4k": (3840, 2160),
}


@dataclass
class EvalReport:
    """Aggregate prediction quality over one input/target set."""

    psnr_db: float
    delta_e76: float
    delta_e00: float
    sample_count: int
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "delta_e76": self.delta_e76,
            "delta_e00": self.delta_e00,
            "sample_count": self.sample_count,
            "wall_ms": self.wall_ms,
        }

    def to_text(self) -> str:
        return (f"PSNR {self.psnr_db:8.2f} dB | dE76 {self.delta_e76:7.4f} | "
                f"dE00 {self.delta_e00:7.4f} | {self.sample_count} samples | "
                f"{self.wall_ms:.0f} ms")


@dataclass
class BenchReport:
    """Throughput measurement for one (resolution, threads, keep) setting."""

    resolution: str
    width: int
    height: int
    threads: int
    keep_fraction: float
    fps: float
    ms_per_frame: float
    runs: int
    warmup: int

    def __post_init__(self):
        if self.runs < 20 or self.warmup < 3:
            raise ValueError("benchmark needs >= 3 warmup and >= 20 timed runs")

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "threads": self.threads,
            "keep_fraction": self.keep_fraction,
            "fps": self.fps,
            "ms_per_frame": self.ms_per_frame,
            "runs": self.runs,
            "warmup": self.warmup,
        }

    def to_text(self) -> str:
        return (f"{self.resolution:>4} ({self.width}x{self.height}) | "
                f"threads {self.threads} | keep {self.keep_fraction:.2f} | "
                f"{self.fps:8.2f} fps | {self.ms_per_frame:8.2f} ms/frame")


def _predict(candidate, inputs: np.ndarray) -> np.ndarray:
    if isinstance(candidate, GlutModel):
        return evaluate(candidate, inputs)
    if isinstance(candidate, CubeLut):
        return np.clip(trilinear_sample(candidate, inputs), 0.0, 1.0)
    raise TypeError(f"cannot evaluate a {type(candidate).__name__}")


def eval_on_split(candidate, reference, inputs: np.ndarray | None = None,
                  chunk: int = 1 << 16) -> EvalReport:
    """Quality of `candidate` against `reference` on `inputs`.

    Either side may be a fitted model or a lattice LUT; `reference` may also
    be an explicit (B, 3) target array aligned with `inputs`. When `inputs`
    is omitted the reference must be a target array's companion — pass the
    probe colors explicitly for LUT-vs-LUT comparisons.
    """
    if inputs is None:
        raise ValueError("inputs are required")
    inputs = np.asarray(inputs, dtype=np.float64)
    t0 = time.perf_counter()
    preds = []
    targets = []
    ref_is_array = isinstance(reference, np.ndarray)
    if ref_is_array and reference.shape != inputs.shape:
        raise ValueError("target array must align with inputs")
    for s in range(0, inputs.shape[0], chunk):
        e = min(s + chunk, inputs.shape[0])
        preds.append(_predict(candidate, inputs[s:e]))
        targets.append(np.clip(reference[s:e], 0.0, 1.0) if ref_is_array
                       else _predict(reference, inputs[s:e]))
    pred = np.concatenate(preds)
    target = np.concatenate(targets)
    lab_p = color.srgb_to_lab(pred)
    lab_t = color.srgb_to_lab(target)
    return EvalReport(
        psnr_db=color.psnr(pred, target),
        delta_e76=float(np.mean(color.delta_e76(lab_p, lab_t))),
        delta_e00=float(np.mean(color.delta_e00(lab_p, lab_t))),
        sample_count=int(inputs.shape[0]),
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )


def compression_ratio(model_bytes: int, cube_bytes: int) -> float:
    """Model size as a percentage of the reference LUT file size."""
    if model_bytes <= 0 or cube_bytes <= 0:
        raise ValueError("sizes must be positive")
    return 100.0 * model_bytes / cube_bytes


def flops_per_pixel(n: int, keep_fraction: float = 1.0) -> int:
    """Documented arithmetic count for one pixel (see module docstring)."""
    if n < 1:
        raise ValueError("need at least one primitive")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    k = math.ceil(keep_fraction * n)
    if k >= n:
        return 45 * n + 25
    return 9 * n + 45 * k + 25


def flops_per_image(n: int, width: int, height: int,
                    keep_fraction: float = 1.0) -> int:
    return flops_per_pixel(n, keep_fraction) * width * height


def synthetic_image(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Deterministic random RGB test frame in [0, 1]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, (height, width, 3))


def throughput_bench(model: GlutModel, resolution="512", threads: int = 1,
                     keep_fraction: float = 1.0, runs: int = 20,
                     warmup: int = 3, seed: int = 0) -> BenchReport:
    """Median-of-runs frames/second on a synthetic frame.

    `resolution` is a named preset ("512", "hd", "4k") or an explicit
    (width, height) pair.
    """
    if isinstance(resolution, str):
        if resolution not in RESOLUTIONS:
            raise ValueError(f"unknown resolution {resolution!r}; "
                             f"choose from {sorted(RESOLUTIONS)}")
        width, height = RESOLUTIONS[resolution]
        label = resolution
    else:
        width, height = resolution
        label = f"{width}x{height}"
    img = synthetic_image(width, height, seed)
    for _ in range(warmup):
        apply_to_image(model, img, threads=threads,
                       keep_fraction=keep_fraction)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        apply_to_image(model, img, threads=threads,
                       keep_fraction=keep_fraction)
        times.append(time.perf_counter() - t0)
    med = float(np.median(times))
    return BenchReport(
        resolution=label, width=width, height=height, threads=threads,
        keep_fraction=keep_fraction, fps=1.0 / med,
        ms_per_frame=med * 1000.0, runs=runs, warmup=warmup,
    )
