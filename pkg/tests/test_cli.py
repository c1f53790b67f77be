from __future__ import annotations

import numpy as np
import pytest

from kunn import io
from kunn.cli import main
from kunn.metrics import score

TINY = ["--z-arch", "3,8", "--csm-arch", "3,8,3", "--phase-arch", "3,8,3"]


def simulate(out, *extra):
    return main(["simulate", "--n", "16", "--coils", "2", "--acs", "4", "--out", str(out), *extra])


def test_simulate_writes_scene_and_is_reproducible(tmp_path):
    assert simulate(tmp_path / "a", "--r", "2", "--sigma", "0.01") == 0
    assert simulate(tmp_path / "b", "--r", "2", "--sigma", "0.01") == 0
    for name in ("z_true", "csm", "phase", "kspace_full", "mask", "y", "noise"):
        a = (tmp_path / "a" / f"{name}.kten").read_bytes()
        assert a == (tmp_path / "b" / f"{name}.kten").read_bytes()
    assert (tmp_path / "a" / "config.txt").read_text().startswith("n=16\n")


def test_unaccelerated_noiseless_y_equals_kspace(tmp_path):
    assert simulate(tmp_path, "--r", "1") == 0
    assert (tmp_path / "y.kten").read_bytes() == (tmp_path / "kspace_full.kten").read_bytes()


def test_r5_mask_has_13_lines(tmp_path):
    rc = main(["simulate", "--n", "64", "--coils", "4", "--r", "5", "--acs", "8", "--out", str(tmp_path)])
    assert rc == 0
    mask = io.read_kten(tmp_path / "mask.kten")
    assert int(np.count_nonzero(mask.any(axis=1))) == 13
    assert mask.sum() == 13 * 64


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("n=16\ncoils=3\nacs=4\nr=2\n")
    assert main(["simulate", "--config", str(cfg), "--coils", "1", "--out", str(tmp_path / "s")]) == 0
    assert io.read_kten(tmp_path / "s" / "y.kten").shape == (16, 16, 1)


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "48"],
    ["simulate", "--mask", "spiral"],
    ["simulate", "--config", "/nonexistent/cfg.txt"],
    ["verify", "--trials", "0"],
    ["frobnicate"],
    [],
    ["reconstruct", "--scene", "/nonexistent/scene"],
    ["reconstruct"],
    ["evaluate", "--recon", "/nonexistent/a.kten", "--reference", "/nonexistent/b.kten"],
])
def test_usage_errors_exit_1(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv and argv[0] in ("simulate", "verify") else [])) == 1


def test_bad_thread_setting_exits_1(tmp_path, monkeypatch):
    monkeypatch.setenv("KUNN_THREADS", "zero")
    assert simulate(tmp_path) == 1
    monkeypatch.setenv("KUNN_THREADS", "1")
    assert simulate(tmp_path) == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exits_2(tmp_path):
    assert simulate(tmp_path / "s", "--r", "2") == 0
    rc = main(["reconstruct", "--scene", str(tmp_path / "s"), "--iters", "3", "--lr", "1e308",
               "--out", str(tmp_path / "r"), *TINY])
    assert rc == 2


def test_reconstruct_smoke_and_determinism(tmp_path):
    assert simulate(tmp_path / "s", "--r", "2") == 0
    for tag in ("a", "b"):
        rc = main(["reconstruct", "--scene", str(tmp_path / "s"), "--iters", "4", "--lr", "1e-3",
                   "--out", str(tmp_path / tag), *TINY])
        assert rc == 0
    for name in ("kspace_recon.kten", "image_recon.kten", "loss_history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    cfg_a, cfg_b = ((tmp_path / t / "config.txt").read_text().splitlines() for t in "ab")
    assert [ln for ln in cfg_a if not ln.startswith("out=")] == [ln for ln in cfg_b if not ln.startswith("out=")]
    assert len(io.read_loss_csv(tmp_path / "a" / "loss_history.csv")) == 4
    assert "iters=4\n" in (tmp_path / "a" / "config.txt").read_text()


def test_dc_flag_changes_only_sampled_entries(tmp_path):
    assert simulate(tmp_path / "s", "--r", "2") == 0
    for dc in ("true", "false"):
        assert main(["reconstruct", "--scene", str(tmp_path / "s"), "--iters", "2", "--dc", dc,
                     "--out", str(tmp_path / dc), *TINY]) == 0
    on = io.read_kten(tmp_path / "true" / "kspace_recon.kten")
    off = io.read_kten(tmp_path / "false" / "kspace_recon.kten")
    mask = io.read_kten(tmp_path / "s" / "mask.kten") != 0
    np.testing.assert_array_equal(on[~mask], off[~mask])
    np.testing.assert_array_equal(on[mask], io.read_kten(tmp_path / "s" / "y.kten")[mask])


def test_evaluate_outputs(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ref = rng.random((16, 16))
    x = rng.random((16, 16))
    io.write_kten(tmp_path / "ref.kten", ref)
    io.write_kten(tmp_path / "x.kten", x)
    io.write_kten(tmp_path / "x2.kten", 2 * ref)
    assert main(["evaluate", "--recon", str(tmp_path / "ref.kten"), "--reference",
                 str(tmp_path / "ref.kten"), "--scores", str(tmp_path / "s0.csv")]) == 0
    assert (tmp_path / "s0.csv").read_text().splitlines()[1] == "0,0.0,inf,1.0"
    assert main(["evaluate", "--recon", str(tmp_path / "x2.kten"), "--reference",
                 str(tmp_path / "ref.kten"), "--scores", str(tmp_path / "s1.csv")]) == 0
    assert (tmp_path / "s1.csv").read_text().splitlines()[1].split(",")[1] == "1.0"
    assert main(["evaluate", "--recon", str(tmp_path / "x.kten"), "--reference",
                 str(tmp_path / "ref.kten"), "--slice-id", "7", "--scores", str(tmp_path / "s2.csv")]) == 0
    assert (tmp_path / "s2.csv").read_text().splitlines()[1] == score(x, ref).csv_row("7")


def test_evaluate_shape_mismatch(tmp_path):
    io.write_kten(tmp_path / "a.kten", np.zeros((8, 8)))
    io.write_kten(tmp_path / "b.kten", np.ones((16, 16)))
    assert main(["evaluate", "--recon", str(tmp_path / "a.kten"), "--reference", str(tmp_path / "b.kten")]) == 1


def test_verify_full_mask_ratios_are_one(tmp_path):
    rc = main(["verify", "--n", "16", "--coils", "2", "--mask", "full", "--iters", "2", "--trials", "3",
               "--out", str(tmp_path), *TINY])
    assert rc == 0
    rows = (tmp_path / "lemma1_ratios.csv").read_text().splitlines()[1:]
    assert [float(r.split(",")[1]) for r in rows] == [1.0, 1.0, 1.0]
    report = io.read_metadata(tmp_path / "theory_report.txt")
    assert report["trials"] == "3" and "c2_estimate" in report
    assert (tmp_path / "theory_trials.csv").read_text().count("\n") == 4
    assert io.read_metadata(tmp_path / "assumption1.txt")["structural_ok"] == "true"


@pytest.mark.parametrize("coils, ablation", [(1, "sensitivity_only"), (4, "phase_only")])
def test_ablate_rejects_incompatible_variants(tmp_path, coils, ablation):
    rc = main(["ablate", "--n", "16", "--coils", str(coils), "--ablation", ablation,
               "--out", str(tmp_path), *TINY])
    assert rc == 1


def test_ablate_emits_three_rows(tmp_path, capsys):
    rc = main(["ablate", "--n", "16", "--coils", "2", "--acs", "4", "--r", "2", "--iters", "2",
               "--out", str(tmp_path), *TINY])
    assert rc == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "method,nmse,psnr_db,ssim"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["zero_filled", "sensitivity_only", "full"]
    assert (tmp_path / "full" / "image_recon.kten").is_file()
