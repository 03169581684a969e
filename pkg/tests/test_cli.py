"""Command-line interface: fitting, applying, baking, editing, evaluation,
benchmarking, exit codes, and config files."""

import argparse
import json

import numpy as np
import pytest

from glut3d.cli import (
    EXIT_IO,
    EXIT_KIND,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_USAGE,
    main,
    parse_color,
)
from glut3d.cglut import deserialize_cglut, materialize_style
from glut3d.glut_core import deserialize, evaluate, serialize
from glut3d.lut_io import (
    lattice_colors,
    parse_cube,
    read_image,
    write_cube,
    write_image,
)

from conftest import make_cube


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A module-shared directory with a small fitted model."""
    d = tmp_path_factory.mktemp("cli")
    cube = d / "target.cube"
    cube.write_text(write_cube(make_cube(lambda x: np.clip(x * 0.8 + 0.05,
                                                           0, 1), size=9)))
    model = d / "model.bin"
    rc = main(["fit", "--cube", str(cube), "-n", "8", "--epochs", "3",
               "--train-q", "16", "--holdout-size", "64",
               "--log", str(d / "fit_log.jsonl"), "--out", str(model)])
    assert rc == EXIT_OK
    return d


def test_parse_color_forms():
    assert parse_color("#ff8000") == pytest.approx(
        (1.0, 128 / 255.0, 0.0))
    assert parse_color("0.1,0.2,0.3") == pytest.approx((0.1, 0.2, 0.3))
    assert parse_color(" 0.1 , 0.2 , 0.3 ") == pytest.approx((0.1, 0.2, 0.3))
    for bad in ("#ff80", "1,2", "0.1,0.2,1.4", "#gg8000", "hello"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_color(bad)


def test_fit_produces_model_and_log(workdir):
    blob = (workdir / "model.bin").read_bytes()
    model = deserialize(blob)
    assert model.n == 8
    lines = (workdir / "fit_log.jsonl").read_text().strip().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[-1])
    assert {"epoch", "train_loss", "holdout_psnr"} <= set(rec)


def test_fit_json_summary(workdir, capsys):
    out = workdir / "m2.bin"
    rc = main(["fit", "--cube", str(workdir / "target.cube"), "-n", "8",
               "--epochs", "2", "--train-q", "16", "--holdout-size", "64",
               "--json", "--out", str(out)])
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["out"] == str(out)
    assert summary["bytes"] == 11 + 4 * (22 * 8 + 12) + 4
    assert "holdout_psnr" in summary


def test_fit_determinism_through_cli(workdir):
    a, b = workdir / "det_a.bin", workdir / "det_b.bin"
    args = ["fit", "--cube", str(workdir / "target.cube"), "-n", "8",
            "--epochs", "2", "--train-q", "16", "--holdout-size", "64"]
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_apply_round_trip(workdir, tmp_path):
    src = tmp_path / "in.png"
    dst = tmp_path / "out.png"
    rng = np.random.default_rng(0)
    write_image(str(src), rng.uniform(0, 1, (24, 32, 3)))
    rc = main(["apply", "--model", str(workdir / "model.bin"),
               str(src), str(dst)])
    assert rc == EXIT_OK
    model = deserialize((workdir / "model.bin").read_bytes())
    expect = evaluate(model, read_image(str(src)))
    got = read_image(str(dst))
    assert np.max(np.abs(got - expect)) <= 0.5 / 255.0 + 1e-12


def test_bake_writes_cube(workdir, tmp_path):
    out = tmp_path / "baked.cube"
    rc = main(["bake", "--model", str(workdir / "model.bin"),
               "--size", "17", str(out)])
    assert rc == EXIT_OK
    lut = parse_cube(out.read_text())
    assert lut.size == 17
    model = deserialize((workdir / "model.bin").read_bytes())
    assert np.max(np.abs(lut.entries
                         - evaluate(model, lattice_colors(17)))) < 1e-6


def test_edit_reduces_residual(workdir, tmp_path, capsys):
    out = tmp_path / "edited.bin"
    journal = tmp_path / "journal.jsonl"
    rc = main(["edit", "--model", str(workdir / "model.bin"),
               "--cin", "0.4,0.5,0.6", "--cout", "0.6,0.5,0.4",
               "-k", "4", "--journal", str(journal), "--json",
               "--out", str(out)])
    assert rc == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["residual_after"] < info["residual_before"]
    assert len(info["touched"]) == 4
    assert journal.exists() and len(journal.read_text().splitlines()) == 1
    edited = deserialize(out.read_bytes())
    model = deserialize((workdir / "model.bin").read_bytes())
    assert not np.array_equal(edited.local_biases, model.local_biases)


def test_eval_json_matches_fit_log(workdir, capsys):
    # same probe convention as the fit holdout: off-lattice samples with the
    # fit's own seed reproduce the logged final PSNR
    rc = main(["eval", "--model", str(workdir / "model.bin"),
               "--cube", str(workdir / "target.cube"),
               "--samples", "64", "--train-q", "16", "--json"])
    assert rc == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    logged = json.loads((workdir / "fit_log.jsonl")
                        .read_text().strip().splitlines()[-1])
    assert rep["psnr_db"] == pytest.approx(logged["holdout_psnr"], abs=0.75)


def test_bench_json(workdir, capsys):
    rc = main(["bench", "--model", str(workdir / "model.bin"),
               "--resolution", "64x48", "--runs", "20", "--json"])
    assert rc == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["width"] == 64 and rep["height"] == 48
    assert rep["fps"] > 0
    assert rep["flops_per_pixel"] == 45 * 8 + 25


def test_config_file_defaults_and_override(workdir, tmp_path, capsys):
    conf = tmp_path / "defaults.conf"
    conf.write_text("# defaults for tiny runs\nepochs=2\ntrain_q=16\n"
                    "holdout_size=64\ngaussians=8\n")
    out1 = tmp_path / "c1.bin"
    rc = main(["--config", str(conf), "fit", "--cube",
               str(workdir / "target.cube"), "--out", str(out1)])
    assert rc == EXIT_OK
    assert deserialize(out1.read_bytes()).n == 8
    # explicit flags beat config values
    out2 = tmp_path / "c2.bin"
    rc = main(["--config", str(conf), "fit", "--cube",
               str(workdir / "target.cube"), "-n", "27", "--out", str(out2)])
    assert rc == EXIT_OK
    assert deserialize(out2.read_bytes()).n == 27


def test_conditional_fit_and_style_flags(tmp_path, capsys):
    c1 = tmp_path / "a.cube"
    c2 = tmp_path / "b.cube"
    c1.write_text(write_cube(make_cube(lambda x: x, size=8)))
    c2.write_text(write_cube(make_cube(
        lambda x: np.clip(1.0 - x, 0, 1), size=8)))
    out = tmp_path / "multi.bin"
    rc = main(["fit", "--cube", str(c1), "--cube", str(c2), "-n", "8",
               "--epochs", "2", "--train-q", "16", "--holdout-size", "64",
               "--out", str(out)])
    assert rc == EXIT_OK
    cm = deserialize_cglut(out.read_bytes())
    assert cm.l == 2

    baked = tmp_path / "s1.cube"
    assert main(["bake", "--model", str(out), "--style", "1",
                 "--size", "9", str(baked)]) == EXIT_OK
    lut = parse_cube(baked.read_text())
    expect = evaluate(materialize_style(cm, 1), lattice_colors(9))
    assert np.max(np.abs(lut.entries - expect)) < 1e-6

    blended = tmp_path / "mix.cube"
    assert main(["bake", "--model", str(out), "--blend", "0", "1",
                 "--alpha", "0.25", "--size", "5", str(blended)]) == EXIT_OK

    # conditional model without --style/--blend is a kind mismatch
    assert main(["bake", "--model", str(out), "--size", "5",
                 str(tmp_path / "x.cube")]) == EXIT_KIND
    # style flags on a single-style model are a kind mismatch too
    single = tmp_path / "single.bin"
    assert main(["fit", "--cube", str(c1), "-n", "8", "--epochs", "2",
                 "--train-q", "16", "--holdout-size", "64",
                 "--out", str(single)]) == EXIT_OK
    assert main(["bake", "--model", str(single), "--style", "0",
                 "--size", "5", str(tmp_path / "y.cube")]) == EXIT_KIND


def test_exit_code_malformed_cube(tmp_path, capsys):
    bad = tmp_path / "bad.cube"
    bad.write_text("LUT_3D_SIZE 2\n0 0 0\nnot numbers\n")
    rc = main(["fit", "--cube", str(bad), "--out", str(tmp_path / "m.bin")])
    assert rc == EXIT_PARSE
    err = capsys.readouterr().err
    assert "line 3" in err


def test_exit_code_missing_file(tmp_path):
    rc = main(["fit", "--cube", str(tmp_path / "absent.cube"),
               "--out", str(tmp_path / "m.bin")])
    assert rc == EXIT_IO


def test_exit_code_corrupt_model(workdir, tmp_path):
    bad = tmp_path / "corrupt.bin"
    bad.write_bytes((workdir / "model.bin").read_bytes()[:-3])
    rc = main(["bake", "--model", str(bad), "--size", "5",
               str(tmp_path / "o.cube")])
    assert rc == EXIT_PARSE


def test_exit_code_bad_usage(workdir, tmp_path):
    # malformed colors are rejected by the argument parser itself
    with pytest.raises(SystemExit) as exc:
        main(["edit", "--model", str(workdir / "model.bin"),
              "--cin", "not-a-color", "--cout", "0.5,0.5,0.5",
              "--out", str(tmp_path / "e.bin")])
    assert exc.value.code == EXIT_USAGE


def test_serialized_model_round_trips_through_cli_files(workdir):
    blob = (workdir / "model.bin").read_bytes()
    assert serialize(deserialize(blob)) == blob
