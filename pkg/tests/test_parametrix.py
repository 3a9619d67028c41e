import math

import numpy as np
import pytest

from heatlands import euclid, liegroup, parametrix, symbolcore
from heatlands.errors import Diverging, LambdaTooSmall, TimeGridTooCoarse

SPEC1 = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): -1.0})
HEIS_SPEC = symbolcore.EllipticOperatorSpec(
    d=3, m=2, coeffs={(1, 1): -1.0, (2, 2): -1.0, (3, 3): -1.0}
)


@pytest.fixture(scope="module")
def abelian_expansion():
    model = liegroup.builtin_model("euclid", d=1)
    grid = euclid.LatticeGrid(1, 256, 2 * model.chart_radius / 256)
    exp = parametrix.ParametrixExpansion(
        model, SPEC1, grid, n_max=4, t_max=0.25, t_nodes=6
    )
    exp.build()
    return exp


def _exact_gaussian(grid, t):
    x = grid.axis()
    return np.exp(-(x**2) / (4 * t)) / math.sqrt(4 * math.pi * t)


def test_abelian_kernel_matches_closed_form(abelian_expansion):
    exp = abelian_expansion
    for t in (0.1, 0.25):
        k = exp.kernel(t)
        exact = _exact_gaussian(exp.grid, t)
        rel = np.sum(np.abs(k.values - exact)) / np.sum(np.abs(exact))
        assert rel <= 1e-2
        # partial sums use at most 4 correction terms
        assert max(exp._stored) <= 4


def test_abelian_ledger_decays(abelian_expansion):
    rows = abelian_expansion.ledger_rows()
    by_n = {}
    for n, t, l1, linf, env in rows:
        by_n.setdefault(n, 0.0)
        by_n[n] = max(by_n[n], l1)
    orders = sorted(by_n)
    for a, b in zip(orders, orders[1:]):
        assert by_n[b] < 0.5 * by_n[a]


def test_abelian_heat_residual(abelian_expansion):
    assert abelian_expansion.heat_residual(0.1) <= 1e-2


def test_abelian_semigroup_defect(abelian_expansion):
    assert abelian_expansion.semigroup_defect(0.05, 0.05) <= 1e-2


def test_abelian_kernel_mass_is_one(abelian_expansion):
    mass = abelian_expansion.kernel(0.1).mass()
    assert mass.real == pytest.approx(1.0, abs=1e-3)
    assert abs(mass.imag) < 1e-8


def test_derivative_sup_scaling(abelian_expansion):
    # sup |d K_t| ~ t^{-(d+1)/m} = t^{-1}
    exp = abelian_expansion
    s1 = exp.derivative_sup(0.05, (1,))
    s2 = exp.derivative_sup(0.2, (1,))
    slope = math.log(s1 / s2) / math.log(0.2 / 0.05)
    assert slope == pytest.approx(1.0, abs=0.15)


def test_heisenberg_residual_desk_scale():
    model = liegroup.builtin_model("heisenberg3")
    grid = euclid.LatticeGrid(3, 32, 2 * model.chart_radius / 32)
    ts = parametrix.residual_stencil_times(0.1)
    exp = parametrix.ParametrixExpansion(
        model, HEIS_SPEC, grid, n_max=1, t_list=ts, quad_points=3, fine_n=32
    )
    exp.build()
    assert exp.heat_residual(0.1) < 5e-2
    mass = exp.kernel(0.1).mass()
    assert mass.real == pytest.approx(1.0, abs=5e-2)


def test_resolvent_matches_closed_form():
    lam = 5.0
    grid = euclid.LatticeGrid(1, 512, 32.0 / 512)
    kernel, defect = parametrix.resolvent_kernel(SPEC1, lam, grid)
    assert defect <= 1e-3
    x = grid.axis()
    exact = 0.5 * lam**-0.5 * np.exp(-math.sqrt(lam) * np.abs(x))
    rel = np.sum(np.abs(kernel.values - exact)) / np.sum(np.abs(exact))
    assert rel <= 1e-2


def test_resolvent_lambda_too_small():
    grid = euclid.LatticeGrid(1, 64, 0.1)
    with pytest.raises(LambdaTooSmall):
        parametrix.resolvent_kernel(SPEC1, -1.0, grid)


def test_time_grid_errors():
    model = liegroup.builtin_model("euclid", d=1)
    grid = euclid.LatticeGrid(1, 64, 2 * model.chart_radius / 64)
    with pytest.raises(TimeGridTooCoarse):
        parametrix.ParametrixExpansion(model, SPEC1, grid, t_nodes=3)
    exp = parametrix.ParametrixExpansion(
        model, SPEC1, grid, n_max=1, t_max=0.1, t_nodes=4, fine_n=32
    )
    exp.build()
    with pytest.raises(TimeGridTooCoarse):
        exp.kernel(0.5)  # far beyond the stored grid
    with pytest.raises(TimeGridTooCoarse):
        exp._interp_term(2, 0.05)  # term never built


def test_diverging_ledger_detected(monkeypatch):
    model = liegroup.builtin_model("euclid", d=1)
    grid = euclid.LatticeGrid(1, 64, 2 * model.chart_radius / 64)
    exp = parametrix.ParametrixExpansion(
        model, SPEC1, grid, n_max=5, t_max=0.1, t_nodes=4, fine_n=32
    )

    def growing(n, t):
        vals = np.full(grid.n, float(2**n))
        return parametrix.GroupField(model, grid, t, vals)

    monkeypatch.setattr(exp, "_term_quadrature", growing)
    with pytest.raises(Diverging):
        exp.build()


def test_dimension_mismatch_rejected():
    model = liegroup.builtin_model("euclid", d=2)
    grid = euclid.LatticeGrid(2, 16, 0.2)
    with pytest.raises(ValueError):
        parametrix.ParametrixExpansion(model, SPEC1, grid)


def test_ledger_csv_roundtrip(tmp_path, abelian_expansion):
    rows = abelian_expansion.ledger_rows()
    path = tmp_path / "ledger.csv"
    parametrix.ledger_to_csv(rows, path)
    text = path.read_text().strip().splitlines()
    assert text[0] == "n,t,l1,linf,envelope"
    assert len(text) == len(rows) + 1
    n, t, l1, linf, env = text[1].split(",")
    assert int(n) == rows[0][0]
    assert float(l1) == pytest.approx(rows[0][2], rel=1e-6)


def test_stencil_times_helper():
    ts = parametrix.residual_stencil_times(0.1)
    assert len(ts) == 5
    assert ts[2] == pytest.approx(0.1)
    assert ts[0] == pytest.approx(0.08)


def test_sources_stride_preserves_mass(abelian_expansion):
    k = abelian_expansion.kernel(0.2)
    _, w1 = k.sources(threshold=1e-8, stride=1)
    _, w2 = k.sources(threshold=1e-8, stride=2)
    assert abs(np.sum(w1) - np.sum(w2)) < 5e-3 * abs(np.sum(w1))
