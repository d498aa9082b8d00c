import csv
import subprocess
import sys

import pytest

from ksblowup import cli
from ksblowup.errors import ParameterError


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_spectrum_files(tmp_path, capsys):
    code = cli.main(["spectrum", "nu=1e-2,1e-3,1e-4", "beta=0.5", "n=4", "--out", str(tmp_path)])
    assert code == 0
    for nu in ("0.01", "0.001", "0.0001"):
        rows = _rows(tmp_path / f"spectrum_nu{nu}.csv")
        assert rows[0] == ["n", "alpha_computed", "alpha_leading", "alpha_refined",
                           "residual_scaled", "norm_sq"]
        assert all(float(r[4]) <= 5 for r in rows[1:])
        assert [bool(r[3]) for r in rows[1:]] == [True, True, False, False]
        assert (tmp_path / f"spectrum_nu{nu}.json").exists()
    assert "gap=ok" in capsys.readouterr().out


def test_missing_beta_exit_2(tmp_path, capsys):
    assert cli.main(["spectrum", "nu=1e-3", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "beta" in err and "usage" in err


@pytest.mark.parametrize("argv", [
    ["spectrum", "beta=0.5", "colour=red"],
    ["spectrum", "beta=abc"],
    ["modulate", "mode=unstable"],
    ["verify", "items=11"],
    ["nonsense"],
])
def test_parameter_errors_exit_2(tmp_path, argv, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 2


def test_config_round_trip(tmp_path):
    cfg = cli.RunConfig.build("modulate", {"tau_end": "1e4", "mode": "unstable(3)"}, tmp_path, 7)
    back = cli.RunConfig.from_text(cfg.to_text(), tmp_path)
    assert back == cfg
    assert back.parameters["tau_end"] == 1e4 and back.seed == 7
    for command in cli.DEFAULTS:
        if command == "spectrum":
            cfg = cli.RunConfig.build(command, {"beta": "0.5"})
        else:
            cfg = cli.RunConfig.build(command, {})
        assert cli.RunConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ParameterError):
        cli.RunConfig.from_text("tau_end = 3\n")


def test_config_file_and_inline_override(tmp_path):
    conf = tmp_path / "run.config"
    conf.write_text("# stable run\ntau_end = 1e3\nsamples_per_decade = 50\n")
    out = tmp_path / "o"
    assert cli.main(["modulate", "--config", str(conf), "tau_end=2e3", "--out", str(out)]) == 0
    written = cli.RunConfig.from_text((out / "modulate.config").read_text())
    assert written.parameters["tau_end"] == 2e3
    assert written.parameters["samples_per_decade"] == 50


def test_modulate_stable(tmp_path, capsys):
    assert cli.main(["modulate", "mode=stable", "tau_end=1e5", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "trajectory.csv")
    assert rows[0] == ["tau", "nu", "beta", "mu", "a1", "a2", "a3"]
    tau, nu, beta = (float(v) for v in rows[-1][:3])
    assert 0.540 <= nu * 2.718281828459045 ** (beta * tau) ** 0.5 <= 0.562
    assert _rows(tmp_path / "law.csv")[0] == ["t", "T_minus_t", "lambda", "lambda_over_law"]


def test_simulate_subcritical(tmp_path, capsys):
    assert cli.main(["simulate", "mass_factor=0.9", "t_max=0.5", "--out", str(tmp_path)]) == 0
    assert "subcritical" in capsys.readouterr().out
    rows = _rows(tmp_path / "scale_series.csv")
    assert rows[0] == ["t", "u0", "lambda", "T_est_minus_t", "lambda_sq_over_Tmt", "profile_err"]


def test_determinism(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert cli.main(["spectrum", "nu=1e-2", "beta=0.5", "--seed", "3", "--out", str(d)]) == 0
        assert cli.main(["modulate", "tau_end=1e3", "--out", str(d)]) == 0
        outs.append([(d / f).read_bytes() for f in ("spectrum_nu0.01.csv", "trajectory.csv", "law.csv")])
    assert outs[0] == outs[1]


def test_tables(tmp_path):
    assert cli.main(["tables", "nu=1e-2", "ells=2", "--out", str(tmp_path)]) == 0
    eig = _rows(tmp_path / "eigen_table.csv")
    assert len(eig) == 5
    law = _rows(tmp_path / "law_table.csv")
    assert [r[0] for r in law[1:]] == ["stable", "unstable(2)"]


def test_verify_subset(tmp_path, capsys):
    assert cli.main(["verify", "items=1,3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS]  1" in out and "[PASS]  3" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ksblowup", "spectrum", "nu=1e-3"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
    assert "usage" in proc.stderr
