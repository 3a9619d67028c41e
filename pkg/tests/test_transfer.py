import math

import numpy as np
import pytest

from heatlands import euclid, liegroup, parametrix, symbolcore, transfer
from heatlands.errors import (
    ContinuityUnmeasured,
    InsufficientLevels,
    StencilOverflow,
    SupportLeak,
)

SPEC1 = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): -1.0})
SPEC4 = symbolcore.EllipticOperatorSpec(d=1, m=4, coeffs={(1, 1, 1, 1): 1.0})
BAD_SPEC = symbolcore.EllipticOperatorSpec(d=1, m=2, coeffs={(1, 1): 1.0})
HEIS_SPEC = symbolcore.EllipticOperatorSpec(
    d=3, m=2, coeffs={(1, 1): -1.0, (2, 2): -1.0, (3, 3): -1.0}
)

EUC = liegroup.builtin_model("euclid", d=1)
HEIS = liegroup.builtin_model("heisenberg3")


def abelian_kernel(grid, t, spec=SPEC1, model=EUC, cutoff=True):
    h = euclid.symbol_on_dual(spec, grid)
    ktilde = euclid.inverse_transform(grid, np.exp(-t * h))
    if cutoff:
        chi = model.cutoff(np.stack(grid.points(), axis=-1), 0.75)
        ktilde = chi * ktilde
    return parametrix.GroupField(model, grid, t, ktilde)


@pytest.fixture(scope="module")
def translation():
    rep = transfer.TranslationHandle(512, 24.0 / 512)
    rep.measure_continuity(seed=3)
    return rep


@pytest.fixture(scope="module")
def abelian_grid():
    return euclid.LatticeGrid(1, 256, 2 * EUC.chart_radius / 256)


# ---------------------------------------------------------------- handles


def test_translation_act_shifts(translation):
    u = translation.axis
    xi = np.exp(-(u**2))
    out = translation.act(np.array([1.5]), xi)
    assert np.max(np.abs(out - np.exp(-((u - 1.5) ** 2)))) < 1e-10


def test_translation_homomorphism(translation):
    xi = translation.random_vector(0, 0)
    lhs = translation.act([0.7], translation.act([0.4], xi))
    rhs = translation.act([1.1], xi)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_translation_unitary_and_continuity(translation):
    xi = translation.random_vector(0, 1)
    assert translation.norm(translation.act([2.0], xi)) == pytest.approx(
        translation.norm(xi), rel=1e-12
    )
    m_const, rho = translation.continuity
    assert m_const == pytest.approx(1.0, abs=1e-9)
    assert rho == 0.0


def test_schrodinger_homomorphism_matches_bch():
    rep = transfer.SchrodingerHandle(128, 16.0 / 128)
    xi = rep.random_vector(0, 0)
    g = np.array([0.4, -0.3, 0.2])
    h = np.array([-0.1, 0.5, 0.3])
    lhs = rep.act(g, rep.act(h, xi))
    rhs = rep.act(HEIS.bch(g, h), xi)
    # exact in the interior; the box edge only sees periodic wrap of the
    # (windowed, ~1e-4) tail interacting with the modulation phase
    inner = np.abs(rep.axis) < 6.0
    assert np.max(np.abs(lhs - rhs)[inner]) < 1e-5
    assert np.max(np.abs(lhs - rhs)) < 1e-3


def test_schrodinger_generators_satisfy_heisenberg_relation():
    rep = transfer.SchrodingerHandle(128, 16.0 / 128)
    xi = rep.random_vector(1, 0)
    comm = rep.generator(0, rep.generator(1, xi)) - rep.generator(
        1, rep.generator(0, xi)
    )
    # the position generator wraps at the box edge, so the relation is only
    # clean where the windowed vector lives
    err = np.abs(comm - rep.generator(2, xi))
    assert np.max(err[np.abs(rep.axis) < 6.0]) < 1e-5
    assert np.max(err) < 1e-3


def test_left_regular_unitary_haar():
    rep = transfer.LeftRegularHandle(HEIS, 16, 2 * HEIS.chart_radius / 16)
    xi = rep.random_vector(0, 0, freq_cap=1.0)
    moved = rep.act(np.array([0.3, -0.2, 0.1]), xi)
    assert rep.norm(moved) == pytest.approx(rep.norm(xi), rel=0.05)


# ------------------------------------------------------------- transference


def test_transfer_requires_continuity(translation, abelian_grid):
    rep = transfer.TranslationHandle(64, 0.2)
    kf = abelian_kernel(abelian_grid, 0.1)
    with pytest.raises(ContinuityUnmeasured):
        transfer.transfer_semigroup(kf, rep, rep.random_vector(0, 0))


def test_transfer_support_leak(translation):
    tiny = liegroup.model_from_json(
        '{"d": 1, "structure": [], "chart_radius": 1.0, "bch_order": 1}'
    )
    grid = euclid.LatticeGrid(1, 64, 0.1)
    values = np.exp(-(grid.axis() ** 2))
    kf = parametrix.GroupField(tiny, grid, 0.1, values)
    with pytest.raises(SupportLeak):
        transfer.transfer_semigroup(kf, translation, translation.random_vector(0, 0))


def test_trivial_representation_gives_mass(abelian_grid):
    class Trivial(transfer.RepresentationHandle):
        def act(self, g, xi):
            return np.asarray(xi, dtype=complex)

        def inner(self, a, b):
            return complex(np.vdot(a, b))

        def random_vector(self, seed, trial, freq_cap=None):
            rng = np.random.default_rng((seed, trial))
            return rng.standard_normal(8) + 0j

    rep = Trivial()
    rep.measure_continuity()
    kf = abelian_kernel(abelian_grid, 0.1)
    xi = rep.random_vector(0, 0)
    out, bound = transfer.transfer_semigroup(kf, rep, xi, threshold=1e-10)
    mass = kf.mass()
    assert np.max(np.abs(out - mass * xi)) < 1e-6
    assert bound >= abs(mass) - 1e-6


def test_transfer_matches_heat_evolution(translation, abelian_grid):
    # closed form: e^{t d^2} e^{-u^2/(4a)} = sqrt(a/(a+t)) e^{-u^2/(4(a+t))}
    a, t = 0.5, 0.2
    u = translation.axis
    xi = np.exp(-(u**2) / (4 * a))
    kf = abelian_kernel(abelian_grid, t)
    out, _ = transfer.transfer_semigroup(kf, translation, xi, threshold=1e-9)
    want = math.sqrt(a / (a + t)) * np.exp(-(u**2) / (4 * (a + t)))
    err = math.sqrt(np.sum(np.abs(out - want) ** 2) * translation.spacing)
    assert err <= 1e-4


def test_left_regular_transfer_is_group_convolution():
    rep = transfer.LeftRegularHandle(HEIS, 16, 2 * HEIS.chart_radius / 16)
    rep.measure_continuity(seed=1)
    grid = rep.grid
    r2 = np.sum(np.stack(grid.points(), axis=-1) ** 2, axis=-1)
    kf = parametrix.GroupField(HEIS, grid, 0.1, np.exp(-4.0 * r2))
    xi = rep.random_vector(0, 2)
    fast, _ = transfer.transfer_semigroup(kf, rep, xi, threshold=1e-3)
    ys, w = kf.sources(1e-3)
    slow = sum(wi * rep.act(y, xi) for y, wi in zip(ys, w))
    assert np.max(np.abs(fast - slow)) < 1e-9 * max(np.max(np.abs(slow)), 1.0)


def test_schrodinger_heat_semigroup_ground_state():
    # H_U = -(A1^2+A2^2+A3^2) = -d^2/du^2 + u^2 + 1: the ground state
    # e^{-u^2/2} has eigenvalue 2, so S_t should scale it by e^{-2t}.
    model = HEIS
    grid = euclid.LatticeGrid(3, 32, 2 * model.chart_radius / 32)
    t = 0.1
    exp = parametrix.ParametrixExpansion(
        model, HEIS_SPEC, grid, n_max=1,
        t_list=parametrix.residual_stencil_times(t), quad_points=3, fine_n=32,
    )
    exp.build()
    rep = transfer.SchrodingerHandle(128, 16.0 / 128)
    rep.measure_continuity(seed=0)
    u = rep.axis
    xi = np.exp(-(u**2) / 2).astype(complex)
    out, bound = transfer.transfer_semigroup(
        exp.kernel(t), rep, xi, threshold=1e-4
    )
    want = math.exp(-2 * t) * xi
    rel = rep.norm(out - want) / rep.norm(xi)
    assert rel < 2e-2
    assert bound >= rep.norm(out) / rep.norm(xi) - 2e-2


# ------------------------------------------------------------ growth profile


@pytest.fixture(scope="module")
def box_profile(abelian_grid):
    # handle sharing the kernel lattice (same period and step): the source
    # sum then applies the exact periodic multiplier e^{-t xi^2}, so high
    # seminorms are free of chart-cutoff and window-edge artifacts
    rep = transfer.TranslationHandle(abelian_grid.n, abelian_grid.spacing)
    rep.measure_continuity(seed=3)
    # rough vector with |omega|^{-3/4} spectrum above a low cut: its
    # derivative seminorms under the heat flow follow the factorial
    # envelope with a time-independent base
    om = np.abs(rep.freqs)
    hat = np.where(om >= 0.75, np.maximum(om, 0.75) ** -0.75, 0.0)
    xi = np.fft.ifft(hat)
    kernel_at = lambda t: abelian_kernel(abelian_grid, t, cutoff=False)
    return transfer.growth_profile(
        kernel_at, rep, xi, [0.1, 0.5, 1.0], n_max=6, m=2,
        factorized_max=3, threshold=0.0,
    )


def test_growth_profile_envelope(box_profile):
    assert box_profile.b > 0
    assert box_profile.max_residual <= 0.5
    for t in box_profile.t_list:
        norms = box_profile.norms[t]
        assert np.all(np.diff(norms) >= -1e-12)  # monotone in n


def test_growth_factorized_route_agrees(box_profile):
    for t in box_profile.t_list:
        direct = box_profile.seminorms[t][: 3 + 1]
        fact = box_profile.factorized[t]
        for k in range(1, 4):
            assert fact[k] == pytest.approx(direct[k], rel=0.05)


def test_analytic_radius_scaling(box_profile):
    radii = transfer.analytic_radius(box_profile)
    ts = box_profile.t_list
    slope = math.log(radii[ts[-1]] / radii[ts[0]]) / math.log(ts[-1] / ts[0])
    assert slope == pytest.approx(0.5, abs=0.15)


def test_analytic_radius_edge_cases(translation):
    with pytest.raises(InsufficientLevels):
        transfer.radius_from_levels([1.0, 2.0])
    assert transfer.radius_from_levels([1.0, 0.0, 0.0, 0.0]) == math.inf
    # unevolved box: derivatives explode at the jump, radius collapses
    u = translation.axis
    levels = transfer.seminorm_levels(
        translation, (np.abs(u) <= 1.0).astype(complex), 6
    )
    assert transfer.radius_from_levels(levels) < 10 * translation.spacing


def test_stencil_overflow(translation, abelian_grid):
    xi = translation.random_vector(0, 0)
    with pytest.raises(StencilOverflow):
        transfer.growth_profile(
            lambda t: abelian_kernel(abelian_grid, t),
            translation, xi, [0.1], n_max=200, m=2,
        )


# ---------------------------------------------------------- form inequalities


def test_garding_exact_for_laplacian(translation):
    res = transfer.garding_check(SPEC1, translation, trials=200, seed=7)
    assert res.lambda_hat >= 0.999
    assert res.nu_hat <= 1e-6
    assert res.lambda_hat_laplacian >= 0.999


def test_garding_quartic(translation):
    res = transfer.garding_check(SPEC4, translation, trials=100, seed=7)
    assert res.lambda_hat >= 0.99 * res.mu


def test_garding_negative_control(translation):
    cap = 0.25 * math.pi / translation.spacing
    low = transfer.garding_check(
        BAD_SPEC, translation, trials=50, seed=7, freq_cap=cap
    )
    high = transfer.garding_check(
        BAD_SPEC, translation, trials=50, seed=7, freq_cap=2 * cap
    )
    assert low.lambda_hat == 0.0
    assert high.nu_hat > 2 * low.nu_hat > 0.0


def test_garding_left_regular_positive():
    rep = transfer.LeftRegularHandle(HEIS, 16, 2 * HEIS.chart_radius / 16)
    res = transfer.garding_check(HEIS_SPEC, rep, trials=10, seed=2)
    assert res.lambda_hat >= 0.0  # recorded, not asserted beyond sanity
    inf = transfer.form_infimum(HEIS_SPEC, rep, trials=10, seed=2)
    assert inf > -1e-3


def test_regularity_ratio_stable(translation):
    a1, phi = transfer.regularity_check(SPEC1, translation, trials=50, seed=5)
    fine = transfer.TranslationHandle(1024, 24.0 / 1024)
    a2, _ = transfer.regularity_check(SPEC1, fine, trials=50, seed=5)
    assert 0 < a1 < 10
    assert a2 == pytest.approx(a1, rel=0.25)
    assert phi is not None


def test_fit_growth_rate():
    ts = [0.1, 0.2, 0.4]
    omega = 0.7
    l1s = [1.1 * math.exp(omega * t) for t in ts]
    fitted = transfer.fit_growth_rate(ts, l1s)
    assert fitted >= omega
    assert fitted == pytest.approx(omega + math.log(1.1) / 0.1, rel=1e-9)
