import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from ifrkit.bayes import GridDensity, TruncationWarning
from ifrkit.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_interval_wilson(capsys):
    code, out, err = _run(capsys, "interval", "--method", "wilson", "--k", "7", "--n", "1892", "--level", "0.95")
    assert code == 0
    assert "[0.18%, 0.76%]" in err
    row = _rows(out)[0]
    assert float(row["lower"]) == pytest.approx(0.0018, abs=5e-5)


def test_interval_json(capsys):
    code, out, _ = _run(capsys, "interval", "--method", "clopper-pearson", "--k", "7", "--n", "1892", "--out", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc[0]["method"] and doc[0]["upper"] == pytest.approx(0.0076, abs=5e-5)


def test_output_file(capsys, tmp_path):
    code, out, _ = _run(capsys, "interval", "--k", "7", "--n", "1892", "-o", str(tmp_path / "x.csv"))
    assert code == 0 and out == ""
    assert _rows((tmp_path / "x.csv").read_text())[0]["k"] == "7"


def test_ratio_and_posterior(capsys, tmp_path):
    code, out, _ = _run(capsys, "ratio", "--k1", "7", "--n1", "12597", "--k2", "138", "--n2", "919",
                        "--method", "profile")
    assert code == 0
    assert float(_rows(out)[0]["lower"]) == pytest.approx(0.0016, abs=5e-5)
    dens = tmp_path / "d.csv"
    code, out, _ = _run(capsys, "posterior", "--k1", "7", "--n1", "12597", "--k2", "138", "--n2", "919",
                        "--density-out", str(dens))
    assert code == 0
    row = _rows(out)[0]
    assert (float(row["lower"]), float(row["upper"])) == pytest.approx((0.0016, 0.0074), abs=5e-5)
    assert GridDensity.from_csv(dens).grid.size > 100


def test_coverage_csv(capsys):
    code, out, err = _run(capsys, "coverage", "--estimator", "wald", "--n", "100", "--mode", "exact",
                          "--p-step", "0.01")
    assert code == 0
    rows = _rows(out)
    cov = {float(r["p"]): float(r["coverage"]) for r in rows}
    assert min(c for p, c in cov.items() if p < 0.05) < 0.95
    assert "below 0.95" in err


def test_simulate(capsys, tmp_path):
    code, out, _ = _run(capsys, "simulate", "--k-f", "7", "--n-p", "12597", "--k-i", "138", "--n-t", "919",
                        "--n-mc", "2000", "--seed", "4")
    assert code == 0
    assert len(_rows(out)) == 8


def test_combine_prod_and_joint(capsys, tmp_path):
    files = []
    for i, (k1, k2) in enumerate([(7, 138), (20, 300), (12, 250)]):
        p = tmp_path / f"s{i}.csv"
        assert main(["posterior", "--k1", str(k1), "--n1", "12597", "--k2", str(k2), "--n2", "919",
                     "--density-out", str(p)]) == 0
        files.append(str(p))
    capsys.readouterr()
    code, out, err = _run(capsys, "combine", "--strategy", "prod", *files, "--plot", str(tmp_path / "fig"))
    assert code == 0 and "prod" in err
    assert (tmp_path / "fig" / "combine_prod.png").stat().st_size > 0
    counts = tmp_path / "counts.csv"
    counts.write_text("k1,n1,k2,n2\n7,12597,138,919\n20,12597,300,919\n")
    code, out, _ = _run(capsys, "combine", "--strategy", "joint-llr", "--counts", str(counts))
    assert code == 0 and _rows(out)[0]["strategy"] == "joint-llr"


def test_pipeline_outdir(capsys, tmp_path):
    # the high-delta-lambda ISL scale prior is truncated at zero
    with pytest.warns(TruncationWarning, match="loses"):
        code, out, err = _run(capsys, "pipeline", "--delays", "7", "--no-adaptive", "--outdir", str(tmp_path / "o"),
                              "--plot", str(tmp_path / "p"))
    assert code == 0
    prod = next(r for r in _rows(out) if r["strategy"] == "prod")
    assert float(prod["q95_lo"]) == pytest.approx(0.0031, abs=3e-4)
    assert (tmp_path / "o" / "datasets.csv").exists()
    assert len(list((tmp_path / "o" / "densities").glob("*.csv"))) == 11
    assert {p.name for p in (tmp_path / "p").glob("*.png")} == {"posteriors_7.png", "datasets_7.png",
                                                                   "combined_7.png"}
    assert "11 posteriors" in err


def test_plot_png_written(capsys, tmp_path):
    code, _, _ = _run(capsys, "coverage", "--estimator", "wilson", "--n", "50", "--p-step", "0.05",
                      "--plot", str(tmp_path))
    assert code == 0
    assert (tmp_path / "coverage_wilson_50.png").read_bytes()[:4] == b"\x89PNG"


def test_invalid_input_exit_2(capsys, tmp_path):
    assert _run(capsys, "interval", "--k", "9", "--n", "5")[0] == 2
    assert _run(capsys, "combine", "--strategy", "prod", str(tmp_path / "nope.csv"), "x")[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("date,daily_cases,daily_deaths\n2020-04-01,1,0\n2020-04-03,1,0\n")
    code, _, err = _run(capsys, "deconv", "--timeseries", str(bad))
    assert code == 2 and "2020-04-02" in err


def test_unknown_flag_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["interval", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_numeric_failure_exit_3(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    r = np.linspace(1e-4, 1e-3, 200)
    GridDensity(r, np.exp(-0.5 * ((r - 2e-4) / 1e-5) ** 2)).to_csv(a)
    r2 = np.linspace(0.5, 0.9, 200)
    GridDensity(r2, np.exp(-0.5 * ((r2 - 0.7) / 1e-2) ** 2)).to_csv(b)
    code, _, err = _run(capsys, "combine", "--strategy", "prod", str(a), str(b))
    assert code == 3 and "numerical failure" in err


def test_console_script_entry_point():
    p = subprocess.run([sys.executable, "-m", "ifrkit.cli", "interval", "--k", "7", "--n", "1892"],
                       capture_output=True, text=True, check=False)
    assert p.returncode == 0 and "wilson" in p.stdout
