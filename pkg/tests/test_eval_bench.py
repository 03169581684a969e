"""Quality reports, compression ratios, the per-pixel cost model, and the
throughput benchmark."""

import numpy as np
import pytest

from glut3d.eval_bench import (
    RESOLUTIONS,
    BenchReport,
    EvalReport,
    compression_ratio,
    eval_on_split,
    flops_per_image,
    flops_per_pixel,
    synthetic_image,
    throughput_bench,
)
from glut3d.glut_core import bake_to_cube, evaluate, serialize
from glut3d.glut_train import init_glut
from glut3d.lut_io import write_cube

from conftest import random_model


def test_eval_identical_model_hits_cap():
    model = random_model(6, seed=0)
    x = np.random.default_rng(1).uniform(0, 1, (500, 3))
    rep = eval_on_split(model, model, x)
    assert rep.psnr_db == 100.0  # capped for identical outputs
    assert rep.delta_e76 == 0.0 and rep.delta_e00 == 0.0
    assert rep.sample_count == 500


def test_eval_against_target_array():
    model = random_model(6, seed=2)
    x = np.random.default_rng(3).uniform(0, 1, (400, 3))
    y = evaluate(model, x)
    rep = eval_on_split(model, y, x)
    assert rep.psnr_db == 100.0
    noisy = np.clip(y + 0.1, 0.0, 1.0)
    rep2 = eval_on_split(model, noisy, x)
    assert rep2.psnr_db < 30.0
    with pytest.raises(ValueError):
        eval_on_split(model, y[:100], x)
    with pytest.raises(ValueError):
        eval_on_split(model, model, None)


def test_eval_model_vs_its_bake():
    model = random_model(6, seed=4)
    lut = bake_to_cube(model, 33)
    x = np.random.default_rng(5).uniform(0, 1, (1000, 3))
    rep = eval_on_split(lut, model, x)
    assert rep.psnr_db > 40.0  # 33-point trilinear tracks the smooth model


def test_eval_report_serialization():
    rep = EvalReport(psnr_db=42.0, delta_e76=0.5, delta_e00=0.3,
                     sample_count=10, wall_ms=1.5)
    d = rep.to_dict()
    assert d["psnr_db"] == 42.0 and d["sample_count"] == 10
    assert "42.0" in rep.to_text()


def test_compression_ratio_formula():
    assert compression_ratio(10, 1000) == 1.0      # percent of cube size
    assert compression_ratio(500, 1000) == 50.0
    with pytest.raises(ValueError):
        compression_ratio(0, 1000)
    with pytest.raises(ValueError):
        compression_ratio(10, 0)


def test_compression_of_64_primitive_model():
    model = init_glut(64)
    blob = serialize(model)
    assert len(blob) < 12_000
    cube_bytes = len(write_cube(bake_to_cube(model, 64)).encode())
    assert compression_ratio(len(blob), cube_bytes) < 0.5  # < 0.5% of .cube


def test_flops_per_pixel_formulas():
    # dense evaluation: 45N + 25
    for n in (16, 32, 64):
        assert flops_per_pixel(n) == 45 * n + 25
    # top-K evaluation: 9N + 45K + 25
    assert flops_per_pixel(32, 0.5) == 9 * 32 + 45 * 16 + 25
    # K >= N falls back to the dense count
    assert flops_per_pixel(32, 0.999) == flops_per_pixel(32)


def test_sparse_flop_reduction_at_half_keep():
    for n, expect_pct in ((16, 29.0), (32, 29.5), (64, 29.7)):
        full = flops_per_pixel(n)
        half = flops_per_pixel(n, 0.5)
        reduction = 100.0 * (1.0 - half / full)
        assert reduction >= 25.0
        assert reduction == pytest.approx(expect_pct, abs=0.05)


def test_flops_per_image():
    assert flops_per_image(32, 100, 10) == 1000 * flops_per_pixel(32)


def test_synthetic_image_properties():
    img = synthetic_image(64, 32, seed=7)
    assert img.shape == (32, 64, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert np.array_equal(img, synthetic_image(64, 32, seed=7))
    assert not np.array_equal(img, synthetic_image(64, 32, seed=8))


def test_bench_report_rejects_flimsy_runs():
    kw = dict(resolution="512", width=512, height=512, threads=1,
              keep_fraction=1.0, fps=10.0, ms_per_frame=100.0)
    BenchReport(runs=20, warmup=3, **kw)
    with pytest.raises(ValueError):
        BenchReport(runs=19, warmup=3, **kw)
    with pytest.raises(ValueError):
        BenchReport(runs=20, warmup=2, **kw)


def test_throughput_bench_runs_and_orders_by_size():
    small = init_glut(16)
    big = init_glut(64)
    rep_small = throughput_bench(small, resolution=(64, 64))
    rep_big = throughput_bench(big, resolution=(64, 64))
    assert rep_small.runs == 20 and rep_small.warmup == 3
    assert rep_small.width == 64 and rep_small.height == 64
    assert rep_small.fps > 0.0
    assert rep_small.ms_per_frame == pytest.approx(1000.0 / rep_small.fps,
                                                   rel=1e-9)
    # a quarter of the primitives should be clearly faster
    assert rep_small.fps > rep_big.fps


def test_throughput_bench_named_resolution():
    assert RESOLUTIONS["hd"] == (1280, 720)
    with pytest.raises(ValueError):
        throughput_bench(init_glut(16), resolution="8k")
