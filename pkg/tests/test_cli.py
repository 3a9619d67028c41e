import json

import numpy as np
import pytest

from heatlands import cli, euclid, symbolcore, verify

HEAT = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): -1.0})
BAD = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): 1.0})
HEIS = symbolcore.EllipticOperatorSpec(
    d=3, m=2, coeffs={(1, 1): -1.0, (2, 2): -1.0, (3, 3): -1.0}
)


@pytest.fixture
def heat_spec(tmp_path):
    path = tmp_path / "heat.json"
    path.write_text(HEAT.to_json())
    return str(path)


@pytest.fixture
def bad_spec(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(BAD.to_json())
    return str(path)


def test_symbol_heat_spec(tmp_path, heat_spec):
    out = tmp_path / "out"
    code = cli.main(["symbol", "--spec", heat_spec, "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "ellipticity.json").read_text())
    assert doc["is_strongly_elliptic"]
    assert doc["mu"] == pytest.approx(1.0, rel=1e-6)


def test_symbol_wrong_sign(tmp_path, bad_spec):
    out = tmp_path / "out"
    code = cli.main(["symbol", "--spec", bad_spec, "--out", str(out)])
    assert code == 1
    doc = json.loads((out / "ellipticity.json").read_text())
    assert not doc["is_strongly_elliptic"]
    assert len(doc["witness_xi"]) == 1


def test_symbol_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code = cli.main(["symbol", "--spec", path.as_posix()])
    assert code == 2


def test_symbol_requires_spec():
    assert cli.main(["symbol"]) == 2


def test_kernel_euclid_default_checks(tmp_path, heat_spec):
    out = tmp_path / "out"
    code = cli.main(["kernel", "--spec", heat_spec, "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "kernel_report.json").read_text())
    assert doc["checks"]["semigroup"]["passed"]
    assert doc["checks"]["gaussfit"]["b"] == pytest.approx(0.25, abs=0.02)
    # binary kernels round-trip
    field = euclid.field_from_binary(str(out / "kernel_0.bin"))
    assert field.t == 0.25
    assert np.isfinite(field.values).all()


def test_kernel_unknown_check(tmp_path, heat_spec, capsys):
    code = cli.main(
        ["kernel", "--spec", heat_spec, "--out", str(tmp_path),
         "--checks", "semigroup,bogus"]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert "bogus" in err and "semigroup" in err


def test_kernel_heisenberg_desk_scale(tmp_path):
    spec_path = tmp_path / "heis.json"
    spec_path.write_text(HEIS.to_json())
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"t_grid": [0.1]}))
    out = tmp_path / "out"
    code = cli.main(
        ["kernel", "--spec", str(spec_path), "--group", "heisenberg3",
         "--config", str(config), "--out", str(out)]
    )
    assert code == 0
    doc = json.loads((out / "kernel_report.json").read_text())
    assert doc["checks"]["residual"]["passed"]
    assert doc["checks"]["semigroup"]["passed"]
    assert (out / "ledger.csv").exists()


def test_config_flag_precedence(tmp_path, heat_spec):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"seed": 3, "spec": heat_spec}))
    out = tmp_path / "out"
    code = cli.main(
        ["kernel", "--config", str(config), "--seed", "7", "--out", str(out)]
    )
    assert code == 0
    doc = json.loads((out / "kernel_report.json").read_text())
    assert doc["seed"] == 7


def test_bad_tol_flag(heat_spec):
    assert cli.main(["symbol", "--spec", heat_spec, "--tol", "oops"]) == 2


def test_verify_all_only_euclid_skips_group_checks(tmp_path):
    out = tmp_path / "out"
    code = cli.main(
        ["verify-all", "--seed", "7", "--only", "euclid", "--out", str(out)]
    )
    assert code == 0
    doc = json.loads((out / "verify_report.json").read_text())
    assert doc["checks"]["euclid_exactness"]["status"] == "passed"
    assert doc["checks"]["heisenberg_pipeline"]["status"] == "skipped"
    assert doc["checks"]["garding"]["status"] == "skipped"


def test_registry_run_check_unknown():
    with pytest.raises(KeyError):
        verify.run_check("not_a_check")
    assert "euclid_exactness" in verify.check_names()


def test_canonical_bytes_strips_volatile():
    report = {"a": 1.0, "volatile": {"timestamp": 123.0},
              "nested": {"volatile": {"runtime_s": 9.9}, "b": 2}}
    text = verify.canonical_bytes(report).decode()
    assert "timestamp" not in text and "runtime_s" not in text
    assert '"a"' in text and '"b"' in text


def test_tolerance_override_changes_outcome():
    report = verify.run_check("resolvent", tol={"rel_l1": 1e-12})
    assert not report["passed"]
    assert report["tolerances"]["rel_l1"] == 1e-12
