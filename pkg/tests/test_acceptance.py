"""Acceptance suite: the structural claims at their pinned tolerances.

Each test runs a named check from the verification registry (the same
registry the ``verify-all`` CLI verb uses) and asserts the published
tolerances explicitly, so the registry cannot drift away from the
contract the tests document.
"""

import json

import pytest

from heatlands import cli, verify


@pytest.fixture(scope="module")
def heisenberg_report():
    # the expensive pipeline check runs once for this module
    return verify.run_check("heisenberg_pipeline")


def test_euclid_exactness():
    rep = verify.run_check("euclid_exactness")
    errs = rep["constants"]["rel_linf"]
    assert set(errs) == {"0.25", "0.5", "1.0"}
    assert max(errs.values()) <= 1e-6
    assert rep["volatile"]["runtime_s"] < 1.0
    assert rep["passed"]


def test_convolution_semigroup():
    rep = verify.run_check("semigroup_identity")
    assert rep["constants"]["defect"]["m2"] <= 1e-6
    assert rep["constants"]["defect"]["m4"] <= 1e-4
    assert rep["passed"]


def test_gaussian_envelope_constants():
    rep = verify.run_check("gaussian_envelope")
    assert rep["constants"]["b_m2"] == pytest.approx(0.25, abs=0.02)
    assert rep["constants"]["b_m4_spread"] <= 0.10
    assert rep["passed"]


def test_derivative_scaling_euclid():
    rep = verify.run_check("derivative_slopes_euclid")
    for entry in rep["constants"]["slopes"].values():
        assert entry["slope"] == pytest.approx(entry["want"], abs=0.15)
    assert rep["passed"]


def test_derivative_scaling_heisenberg():
    rep = verify.run_check("derivative_slopes_heisenberg")
    for entry in rep["constants"]["slopes"].values():
        assert entry["slope"] == pytest.approx(entry["want"], abs=0.15)
    assert rep["passed"]


def test_parametrix_matches_exact_kernel():
    rep = verify.run_check("parametrix_abelian")
    assert max(rep["constants"]["rel_l1"].values()) <= 1e-2
    # at most four correction terms are stored and each decays
    orders = sorted(rep["constants"]["ledger_max_l1"])
    assert len(orders) <= 4
    assert all(r < 0.5 for r in rep["constants"]["ledger_ratios"])
    assert rep["passed"]


def test_heisenberg_pipeline(heisenberg_report):
    rep = heisenberg_report
    assert max(rep["constants"]["residuals"].values()) <= 1e-2
    assert rep["constants"]["defect"] <= 1e-2
    assert rep["volatile"]["runtime_s"] < 300.0
    assert rep["grid"]["n"] == 32
    assert rep["passed"]


def test_resolvent_identity_and_closed_form():
    rep = verify.run_check("resolvent")
    assert rep["constants"]["defect"] <= 1e-3
    assert rep["constants"]["rel_l1"] <= 1e-2
    assert rep["passed"]


def test_garding_constants():
    rep = verify.run_check("garding")
    c = rep["constants"]
    assert c["lambda_m2"] >= 0.999
    assert c["nu_m2"] <= 1e-6
    assert c["lambda_m4"] >= 0.99 * c["mu_m4"]
    assert c["nu_bad_cap2F"] > 2 * c["nu_bad_capF"] > 0.0
    assert rep["trials"] == 200
    assert rep["passed"]


def test_factorial_growth_envelope():
    rep = verify.run_check("factorial_growth")
    assert rep["constants"]["envelope_residual"] <= 0.5
    assert rep["constants"]["b"] > 0
    assert rep["constants"]["radius_slope"] == pytest.approx(0.5, abs=0.15)
    assert rep["passed"]


def test_representation_independence():
    rep = verify.run_check("representation_independence")
    omega_hat = rep["constants"]["omega_hat"]
    infima = rep["constants"]["form_infima"]
    assert set(infima) == {"translation", "left_regular", "schrodinger"}
    for value in infima.values():
        assert value >= -omega_hat - 1e-3
    assert rep["passed"]


def test_verify_all_deterministic(tmp_path):
    reports = []
    for tag in ("first", "second"):
        out = tmp_path / tag
        code = cli.main(
            ["verify-all", "--seed", "7", "--only", "euclid",
             "--out", str(out)]
        )
        assert code == 0
        doc = json.loads((out / "verify_report.json").read_text())
        reports.append(verify.canonical_bytes(doc))
    assert reports[0] == reports[1]
