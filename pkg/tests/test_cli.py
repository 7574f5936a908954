import csv
import json

import pytest
import yaml

from roughskew import cli

FAST_SMILE = ["--set", "smile.n_paths=4000", "--set", "smile.n_steps=32",
              "--set", "smile.zs=[-0.1, 0.0, 0.1]"]
FAST_ARB = ["--set", "arbitrage.n_max=48", "--set", "arbitrage.replicas=10", "--set", "arbitrage.substeps=8"]
FAST_HEDGE = ["--set", "hedge.n_paths=200", "--set", "hedge.gaps=[0.015625, 0.03125, 0.0625, 0.125]",
              "--set", "hedge.max_steps=256"]


def run(tmp_path, *argv, sub="out"):
    out = tmp_path / sub
    rc = cli.main([*argv, "--out", str(out)])
    return rc, out


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config=") and " sha256=" in lines[0]
    return list(csv.DictReader(lines[1:]))


def test_print_config(capsys):
    assert cli.main(["print-config"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["model"]["kind"] == "rough_bergomi" and cfg["smile"]["z_pair"] == [0.1, -0.1]
    assert cli.main(["print-config", "--seed", "9", "--set", "smile.n_steps=64"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["seed"] == 9 and cfg["smile"]["n_steps"] == 64


def test_config_file_and_flag_precedence(tmp_path, capsys):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 5\nmodel:\n  H: 0.2\n")
    assert cli.main(["print-config", "--config", str(f), "--seed", "6"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["seed"] == 6 and cfg["model"]["H"] == 0.2


def test_smile_default_model(tmp_path):
    rc, out = run(tmp_path, "smile", *FAST_SMILE)
    assert rc == 0
    rows = read_csv(out / "smile.csv")
    assert len(rows) == 5 * 3 and set(rows[0]) == {"theta", "z", "strike", "iv", "stderr_iv"}
    fit = json.loads((out / "fit.json").read_text())
    assert {"H_hat", "coeff_hat", "r2", "theta_range", "z_pair", "provenance"} <= set(fit)
    assert (out / "smile_plot.csv").exists()


def test_smile_constant_model_refuses(tmp_path, capsys):
    rc, out = run(tmp_path, "smile", "--model", "constant", *FAST_SMILE)
    assert rc == 3
    assert "refusal" in capsys.readouterr().err
    ivs = [float(r["iv"]) for r in read_csv(out / "smile.csv")]
    assert max(ivs) - min(ivs) < 1e-12


def test_missing_field_names_it(tmp_path, capsys):
    rc, _ = run(tmp_path, "smile", "--set", "smile.n_paths=null")
    assert rc == 2
    assert "smile.n_paths" in capsys.readouterr().err


def test_unknown_field_rejected(tmp_path, capsys):
    rc, _ = run(tmp_path, "alpha", "--set", "alpha.colour=3")
    assert rc == 2
    assert "alpha.colour" in capsys.readouterr().err


def test_invalid_value_rejected(tmp_path, capsys):
    rc, _ = run(tmp_path, "smile", "--set", "model.H=0.7")
    assert rc == 2
    assert "model.H" in capsys.readouterr().err


def test_alpha_gaussian(tmp_path):
    rc, out = run(tmp_path, "alpha", "--set", "alpha.law=gaussian")
    assert rc == 0
    rows = read_csv(out / "alpha.csv")
    assert len(rows) == 25
    assert max(abs(float(r["difference"])) for r in rows) < 1e-8


def test_alpha_zero_law(tmp_path):
    rc, out = run(tmp_path, "alpha", "--set", "alpha.law=zero")
    assert rc == 0
    assert all(float(r["alpha_quadrature"]) == 0.0 for r in read_csv(out / "alpha.csv"))


def test_alpha_half_is_linear(tmp_path):
    rc, out = run(tmp_path, "alpha", "--set", "alpha.law=gaussian", "--set", "alpha.H=0.5",
                  "--set", "alpha.sigma12=-0.02")
    assert rc == 0
    for r in read_csv(out / "alpha.csv"):
        z = float(r["z"])
        assert float(r["alpha_quadrature"]) == pytest.approx(-0.02 / (4 * 0.04) * z, abs=1e-8)
    rep = json.loads((out / "alpha.json").read_text())
    assert rep["closed_slope"] == pytest.approx(-0.125, rel=1e-14)


def test_hedge_four_point_ladder(tmp_path):
    rc, out = run(tmp_path, "hedge", *FAST_HEDGE)
    assert rc == 0
    rep = json.loads((out / "scaling.json").read_text())
    assert isinstance(rep["slope"], float)
    assert len(read_csv(out / "hedge_ledger.csv")) == 4


def test_hedge_constant_model_is_degenerate(tmp_path):
    rc, out = run(tmp_path, "hedge", "--model", "constant", *FAST_HEDGE)
    assert rc == 3
    assert json.loads((out / "scaling.json").read_text())["slope"] is None


def test_arbitrage_zero_skew_inconclusive(tmp_path):
    rc, out = run(tmp_path, "arbitrage", "--set", "arbitrage.alpha=0.0", *FAST_ARB)
    assert rc == 0
    rep = json.loads((out / "arbitrage.json").read_text())
    assert rep["verdict"] == "inconclusive" and rep["no_premium_leg"] is True
    assert read_csv(out / "blocks.csv")[0]["replica"] == "0"


def test_arbitrage_wide_strike_is_numeric_failure(tmp_path, capsys):
    rc, _ = run(tmp_path, "arbitrage", "--set", "arbitrage.Z=-1.0", *FAST_ARB)
    assert rc == 4
    assert "non-positive" in capsys.readouterr().err


@pytest.mark.parametrize("command,extra", [
    ("smile", FAST_SMILE), ("alpha", []), ("hedge", FAST_HEDGE), ("arbitrage", FAST_ARB),
])
def test_byte_identical_reruns(tmp_path, command, extra):
    rc1, a = run(tmp_path, command, *extra, "--seed", "17", "--workers", "1", sub="a")
    rc2, b = run(tmp_path, command, *extra, "--seed", "17", "--workers", "2", sub="b")
    assert rc1 == rc2 == 0
    fa = sorted(p.name for p in a.iterdir())
    assert fa == sorted(p.name for p in b.iterdir()) and fa
    for name in fa:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
