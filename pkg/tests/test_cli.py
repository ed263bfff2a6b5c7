import json

import pytest

from susylangevin.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main

OU = {
    "process": {"N": 1, "gamma_coeffs": [0.0], "force_poly": [0.0, 1.0]},
    "grid": {"epsilon": 0.05, "M": 40},
    "a": 0.5, "K": 500, "seed": 11, "burn_in": 2.0,
}
KRAMERS = {
    "process": {"N": 2, "gamma_coeffs": [0.0, 1.0], "force_poly": [0.0, 1.0]},
    "grid": {"epsilon": 0.05, "M": 40},
    "sigma": [0.25], "a": 0.5, "K": 500, "seed": 3, "burn_in": 2.0,
}


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data) if isinstance(data, dict) else data)
    return str(p)


def test_simulate_deterministic(tmp_path):
    cfg = write(tmp_path, "ou.json", OU)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == EXIT_PASS
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == EXIT_PASS
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert "# config_hash=" in text and "# seed=11" in text


def test_simulate_kramers_has_second_moment_row(tmp_path):
    out = tmp_path / "k.csv"
    assert main(["simulate", "--config", write(tmp_path, "k.json", KRAMERS), "--out", str(out)]) == EXIT_PASS
    rows = [r for r in out.read_text().splitlines() if r.startswith("x^2,")]
    assert len(rows) == 1 and float(rows[0].split(",")[4]) > 0


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, "ou.json", OU)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--config", cfg, "--out", str(a)])
    main(["simulate", "--config", cfg, "--seed", "12", "--out", str(b)])
    assert a.read_text() != b.read_text() and "# seed=12" in b.read_text()


def test_malformed_sigma_exit_2(tmp_path, capsys):
    bad = {**KRAMERS, "sigma": [1.2]}
    assert main(["simulate", "--config", write(tmp_path, "bad.json", bad)]) == EXIT_USAGE
    assert "sigma" in capsys.readouterr().err


def test_unknown_key_and_empty_exit_2(tmp_path):
    assert main(["check", "det", "--config", write(tmp_path, "u.json", {**KRAMERS, "foo": 1})]) == EXIT_USAGE
    assert main(["report", "--config", write(tmp_path, "e.json", "")]) == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE


def test_check_det_default(tmp_path):
    out = tmp_path / "det.json"
    assert main(["check", "det", "--out", str(out)]) == EXIT_PASS
    rep = json.loads(out.read_text())
    assert rep["pass"] and rep["result"]["max_relative_difference"] < 1e-10
    assert rep["seed"] is not None and rep["config_hash"]


def test_check_susy_canonical_third_order(tmp_path):
    cfg = {**KRAMERS, "process": {"N": 3, "gamma_coeffs": [0.5, 1.2, 1.0], "force_poly": [0, 1, 0, 0.5]},
           "sigma": [0.2, 0.3]}
    out = tmp_path / "s.json"
    assert main(["check", "susy", "--config", write(tmp_path, "s3.json", cfg), "--out", str(out)]) == EXIT_PASS
    assert json.loads(out.read_text())["result"]["max_QS"] < 1e-12


def test_check_susy_lagrangian(tmp_path):
    cfg = {**KRAMERS, "process": {"N": 2, "gamma_poly_in_x": [1, 0, 3], "force_poly": [0, 1]},
           "options": {"construction": "lagrangian-xfriction"}}
    out = tmp_path / "l.json"
    assert main(["check", "susy", "--config", write(tmp_path, "l.json", cfg), "--out", str(out)]) == EXIT_PASS


@pytest.mark.parametrize("inject,code", [(True, EXIT_FAIL), (False, EXIT_PASS)])
def test_check_whiteness_fault_injection(tmp_path, inject, code):
    cfg = {**KRAMERS, "K": 50000, "options": {"inject_ar1": inject}}
    out = tmp_path / "w.json"
    assert main(["check", "whiteness", "--config", write(tmp_path, "w.json", cfg), "--out", str(out)]) == code


def test_check_ward_and_ashift(tmp_path):
    cfg = {**OU, "grid": {"epsilon": 0.02, "M": 50}, "a": 0.0, "K": 5000}
    path = write(tmp_path, "w.json", cfg)
    assert main(["check", "ward", "--config", path, "--out", str(tmp_path / "w.out")]) == EXIT_PASS
    assert main(["check", "ashift", "--config", path, "--out", str(tmp_path / "a.out")]) == EXIT_PASS


def test_check_report_reproducible(tmp_path):
    cfg = write(tmp_path, "k.json", {**KRAMERS, "options": {"M": 64}})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["check", "det", "--config", cfg, "--out", str(a)])
    main(["check", "det", "--config", cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_check_equivalence_quick(tmp_path):
    cfg = {**KRAMERS, "grid": {"epsilon": 0.02, "M": 50}, "K": 3000, "burn_in": 8.0}
    out = tmp_path / "e.json"
    assert main(["check", "equivalence", "--quick", "--config", write(tmp_path, "e.json", cfg),
                 "--out", str(out)]) == EXIT_PASS
