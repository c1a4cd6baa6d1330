"""Command-line driver: config parsing, CSV output, determinism, exit codes."""

from hqclab.cli import main, parse_config_file, write_csv
from hqclab.experiments import ConfigError, run_converge_1d, run_equivalence

import pytest


def test_parse_config_file(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("# comment\nn = 16\nseed = 3   # trailing\n\nh_list = 1/4,1/8\n")
    parsed = parse_config_file(str(cfg))
    assert parsed == {"n": "16", "seed": "3", "h_list": "1/4,1/8"}


def test_parse_config_rejects_garbage(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("just some words\n")
    with pytest.raises(ConfigError):
        parse_config_file(str(cfg))


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense_key = 1\n")
    code = main(["equivalence", "--config", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert code == 2


def test_bad_value_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("eps = banana\n")
    code = main(["converge-1d", "--config", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert code == 2


def test_equivalence_cli_deterministic(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    cfg = tmp_path / "eq.cfg"
    cfg.write_text("trials_spring = 6\ntrials_lj = 2\ntrials_simple = 1\nseed = 5\n")
    assert main(["equivalence", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["equivalence", "--config", str(cfg), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = tmp_path / "eq.cfg"
    cfg.write_text("trials_spring = 6\ntrials_lj = 0\ntrials_simple = 0\n")
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    assert main(["equivalence", "--config", str(cfg), "--out", str(out1), "--seed", "1"]) == 0
    assert main(["equivalence", "--config", str(cfg), "--out", str(out2), "--seed", "2"]) == 0
    assert out1.read_bytes() != out2.read_bytes()


def test_converge_cli_small(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("eps = 1/256\nh_list = 1/4,1/8\nfit_range_h1 = 0:2\nfit_range_l2 = 0:2\n")
    out = tmp_path / "c.csv"
    assert main(["converge-1d", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "psi,eps,h,uhc_err_h1,uh_err_h1,uh_err_l2,status"
    assert len(lines) == 3
    captured = capsys.readouterr()
    assert "slope_uhc_h1" in captured.out


def test_dynamics_cli_small(tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("n_atoms = 128\nh_list = 1/4,1/8\nt_final = 1/80\n")
    out = tmp_path / "d.csv"
    assert main(["dynamics-1d", "--config", str(cfg), "--out", str(out)]) == 0
    assert out.read_text().startswith("n_atoms,h,tau,linf_l2,l2_h1,status")


def test_stochastic_cli_small(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("n = 16\nh_list = 1/4,1/8\nn_rep_list = 4,16\nfit_range = 0:2\n")
    out = tmp_path / "s.csv"
    assert main(["stochastic-2d", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "n,seed,n_rep,h,err_hqc,err_ad,status"
    assert len(lines) == 5


def test_csv_float_format(tmp_path):
    res = run_equivalence({"trials_spring": "3", "trials_lj": "0", "trials_simple": "0"})
    out = tmp_path / "fmt.csv"
    write_csv(str(out), res)
    row = out.read_text().splitlines()[1].split(",")
    # energies printed with 17 significant digits round-trip exactly
    val = float(row[3])
    assert f"{val:.17g}" == row[3]


def test_converge_rows_reproducible():
    r1 = run_converge_1d({"eps": "1/256", "h_list": "1/4,1/8", "fit_range_h1": "0:2", "fit_range_l2": "0:2"})
    r2 = run_converge_1d({"eps": "1/256", "h_list": "1/4,1/8", "fit_range_h1": "0:2", "fit_range_l2": "0:2"})
    assert r1.rows == r2.rows


def test_threaded_rows_match_sequential():
    base = {"eps": "1/256", "h_list": "1/4,1/8,1/16", "fit_range_h1": "0:3", "fit_range_l2": "0:3"}
    seq = run_converge_1d(dict(base, threads="1"))
    par = run_converge_1d(dict(base, threads="3"))
    assert seq.rows == par.rows


def test_misaligned_mesh_is_config_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("eps = 1/256\nh_list = 1/3\n")
    assert main(["converge-1d", "--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == 2


def test_negative_tolerance_is_config_error(tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("tol_spring = -1e-9\n")
    assert main(["equivalence", "--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == 2
