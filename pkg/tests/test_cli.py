import json

import pytest

from iq_meta.cli import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, main
from iq_meta.errors import NumericalError


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "config"))


def test_analyze_text(stroke_csv, capsys):
    assert main(["analyze", "--input", str(stroke_csv)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "IQ statistic" in out
    assert "Cochran's Q" in out


def test_analyze_structured(stroke_csv, capsys):
    code = main(["analyze", "--input", str(stroke_csv), "--format", "structured", "--stats", "iq,i2"])
    assert code == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["statistics"]["IQ"] == pytest.approx(0.41, abs=0.005)
    assert "J²" not in document["statistics"]


def test_analyze_bad_input(write_csv, capsys):
    path = write_csv("bad.csv", "study,y,n,var_y\na,1,5,1\nb,2,1,1\n")
    assert main(["analyze", "--input", str(path)]) == EXIT_INPUT
    assert "Troubleshooting" in capsys.readouterr().err


def test_analyze_missing_file(tmp_path):
    assert main(["analyze", "--input", str(tmp_path / "missing.csv")]) == EXIT_INPUT


def test_analyze_bad_alpha(stroke_csv):
    assert main(["analyze", "--input", str(stroke_csv), "--alpha", "1.5"]) == EXIT_INPUT


def test_numerical_fault_exit_code(stroke_csv, monkeypatch):
    def broken(request):
        raise NumericalError("no bracket")

    monkeypatch.setattr("iq_meta.cli.run_analysis", broken)
    assert main(["analyze", "--input", str(stroke_csv)]) == EXIT_NUMERICAL


@pytest.mark.parametrize(
    "argv",
    [
        ["analyze", "--input", "x.csv", "--bogus"],
        ["analyze"],
        ["analyze", "--input", "x.csv", "--stats", "iq,h2"],
        ["frobnicate"],
    ],
)
def test_argument_errors(argv, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == EXIT_INPUT
    assert "usage: iqmeta" in capsys.readouterr().err


def test_help_still_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0


def test_simulate_is_reproducible(write_csv, tmp_path):
    config = write_csv("sim.cfg", "tau2_list=60\nk_list=3\nn_start=10\nn_stop=20\nreplications=30\nseed=11\n")
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", str(config), "--out", str(first)]) == EXIT_OK
    assert main(["simulate", "--config", str(config), "--out", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text(encoding="utf-8").splitlines()[0] == (
        "tau2,k,pattern,n,statistic,mean,mc_se,truth,coverage,nonconv_rate"
    )

    reseeded = tmp_path / "c.csv"
    assert main(["simulate", "--config", str(config), "--out", str(reseeded), "--seed", "12"]) == EXIT_OK
    assert reseeded.read_bytes() != first.read_bytes()


def test_simulate_unknown_key(write_csv, tmp_path):
    config = write_csv("sim.cfg", "replications=10\ncolour=blue\n")
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path / "o.csv")]) == EXIT_INPUT


def test_popcurves(stroke_csv, tmp_path):
    out = tmp_path / "curves.csv"
    assert main(["popcurves", "--input", str(stroke_csv), "--out", str(out), "--points", "21"]) == EXIT_OK
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "study,x,density"
    assert len(lines) == 1 + 10 * 21


def test_summarize_then_analyze(write_csv, tmp_path, capsys):
    raw = write_csv("raw.csv", "study,value\nA,1\nA,2\nA,4\nB,5\nB,9\nC,0\nC,1\n")
    out = tmp_path / "summary.csv"
    assert main(["summarize", "--input", str(raw), "--out", str(out)]) == EXIT_OK
    assert main(["analyze", "--input", str(out), "--format", "structured"]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["statistics"]["k"] == 3


def test_measures(capsys):
    assert main(["measures", "--tau2", "6", "--sigma2", "100", "--n", "4,40,400"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "0.1935" in out
    assert "0.9600" in out


def test_settings_defaults_come_from_file(stroke_csv, tmp_path, capsys):
    assert main(["settings", "--save", "--alpha", "0.1"]) == EXIT_OK
    assert (tmp_path / "config" / "iq_meta" / "settings.json").exists()
    capsys.readouterr()
    assert main(["analyze", "--input", str(stroke_csv), "--format", "structured"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["alpha"] == 0.1


def test_simulate_output_does_not_depend_on_workers(write_csv, tmp_path):
    config = write_csv("sim.cfg", "tau2_list=6\nk_list=3\nn_start=10\nn_stop=30\nreplications=25\nstatistics=iq,i2\n")
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
    assert main(["simulate", "--config", str(config), "--out", str(serial), "--workers", "1"]) == EXIT_OK
    assert main(["simulate", "--config", str(config), "--out", str(parallel), "--workers", "3"]) == EXIT_OK
    assert serial.read_bytes() == parallel.read_bytes()


def test_settings_rejects_invalid_value(tmp_path):
    assert main(["settings", "--save", "--alpha", "1.5"]) == EXIT_INPUT
    assert not (tmp_path / "config" / "iq_meta" / "settings.json").exists()
