"""Transference of heat kernels to group representations.

Given a kernel family K_t on a group chart, the transferred semigroup on a
representation U is S_t = U(K_t) = int K_t(g) U(g) dg, realized here as a
quadrature sum over the kernel's lattice support.  The module profiles the
factorial growth of the seminorms ||S_t xi||_n (analytic vectors), and
verifies the Garding and regularity inequalities on randomized band-limited
test vectors.

Shipped handles: translations of R^1 (also the abelianized quotient action
of any chart group), the left regular representation on a chart lattice,
and the Schrodinger representation of the Heisenberg group on a 1-d
lattice.  Generators use spectral derivatives on the periodic 1-d handles
and fourth-order centered stencils on group-lattice handles.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel, liegroup, symbolcore
from .errors import (
    ContinuityUnmeasured,
    InsufficientLevels,
    NotStronglyElliptic,
    StencilOverflow,
    SupportLeak,
)

NU_TOL = 1e-6
MONOMIAL_CAP = 64
DEGENERATE_TOL = 1e-300


class RepresentationHandle:
    """A finite sample-space surrogate for a continuous representation.

    Subclasses provide ``act`` (apply U(g)), ``generator`` (apply the
    infinitesimal generator A_k = d/ds U(exp(s a_k))|_0), an inner product,
    and seeded band-limited random test vectors.  Continuity constants
    (M, rho) with ||U(g)|| <= M e^{rho|g|} are measured on samples and must
    be present before a kernel is transferred.
    """

    unitary = True
    stencil_order = None  # spectral unless a subclass overrides
    ngen = 1

    def __init__(self):
        self.continuity = None

    # -- subclass API ------------------------------------------------------
    def act(self, g, xi):
        raise NotImplementedError

    def generator(self, k, xi):
        raise NotImplementedError

    def inner(self, a, b):
        raise NotImplementedError

    def random_vector(self, seed, trial, freq_cap=None):
        raise NotImplementedError

    # -- shared ------------------------------------------------------------
    def norm(self, xi):
        return math.sqrt(max(self.inner(xi, xi).real, 0.0))

    def measure_continuity(self, seed=0, samples=16, radius=1.0):
        """Estimate (M, rho) from random group elements and vectors.

        All shipped handles are unitary up to interpolation error, so the
        measured rho is pinned at 0 and M absorbs the sampled excess.
        """
        rng = np.random.default_rng((int(seed), 987))
        worst = 1.0
        for trial in range(samples):
            g = rng.uniform(-radius, radius, size=self.ngen)
            xi = self.random_vector(seed, trial)
            nrm = self.norm(xi)
            if nrm < DEGENERATE_TOL:
                continue
            worst = max(worst, self.norm(self.act(g, xi)) / nrm)
        self.continuity = (worst, 0.0)
        return self.continuity


class TranslationHandle(RepresentationHandle):
    """Translations acting on L2 of a periodic 1-d lattice.

    ``act(g)`` shifts by the first chart coordinate, so the same handle
    serves both the abelian group R^1 and the abelianized quotient action
    of a larger chart group (the remaining generators act trivially).
    """

    def __init__(self, n, spacing, ngen=1):
        super().__init__()
        self.n = int(n)
        self.spacing = float(spacing)
        self.ngen = int(ngen)
        self.axis = (np.arange(self.n) - self.n // 2) * self.spacing
        self.freqs = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    def act(self, g, xi):
        x = float(np.asarray(g).ravel()[0])
        return np.fft.ifft(np.exp(-1j * self.freqs * x) * np.fft.fft(xi))

    def act_sum(self, ys, w, xi):
        phases = np.exp(-1j * np.asarray(ys)[:, 0, None] * self.freqs[None, :])
        return np.fft.ifft((w @ phases) * np.fft.fft(xi))

    def generator(self, k, xi):
        if k != 0:
            return np.zeros_like(np.asarray(xi, dtype=complex))
        # A_1 = d/ds U(exp(s a_1))|_0 shifts leftward: A_1 = -d/du
        return np.fft.ifft(-1j * self.freqs * np.fft.fft(xi))

    def inner(self, a, b):
        return complex(np.vdot(a, b) * self.spacing)

    def random_vector(self, seed, trial, freq_cap=None):
        if freq_cap is None:
            freq_cap = 0.5 * np.pi / self.spacing
        rng = np.random.default_rng((int(seed), int(trial)))
        coef = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
        coef[np.abs(self.freqs) > freq_cap] = 0.0
        xi = np.fft.ifft(coef)
        nrm = self.norm(xi)
        return xi / nrm if nrm > DEGENERATE_TOL else xi


class SchrodingerHandle(RepresentationHandle):
    """Schrodinger representation of the Heisenberg group on a 1-d lattice.

    U(exp a_x) psi(u) = e^{i x3} e^{i x2 (u + x1/2)} psi(u + x1), so the
    generators are A1 = d/du, A2 = iu, A3 = i, with [A1, A2] = A3 matching
    the structure relation [a1, a2] = a3.
    """

    ngen = 3

    def __init__(self, n, spacing):
        super().__init__()
        self.n = int(n)
        self.spacing = float(spacing)
        self.axis = (np.arange(self.n) - self.n // 2) * self.spacing
        self.freqs = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    def _shift(self, xi, x1):
        return np.fft.ifft(np.exp(1j * self.freqs * x1) * np.fft.fft(xi))

    def act(self, g, xi):
        x1, x2, x3 = (float(v) for v in np.asarray(g).ravel()[:3])
        phase = np.exp(1j * (x3 + x2 * (self.axis + 0.5 * x1)))
        return phase * self._shift(xi, x1)

    def act_sum(self, ys, w, xi, batch=1024):
        ys = np.asarray(ys, dtype=float)
        out = np.zeros(self.n, dtype=complex)
        xihat = np.fft.fft(xi)
        for lo in range(0, len(ys), batch):
            yb = ys[lo:lo + batch]
            wb = w[lo:lo + batch]
            shifted = np.fft.ifft(
                np.exp(1j * self.freqs[None, :] * yb[:, 0:1]) * xihat[None, :],
                axis=1,
            )
            phase = np.exp(
                1j * (yb[:, 2:3] + yb[:, 1:2] * (self.axis[None, :] + 0.5 * yb[:, 0:1]))
            )
            out += (wb[:, None] * phase * shifted).sum(axis=0)
        return out

    def generator(self, k, xi):
        xi = np.asarray(xi, dtype=complex)
        if k == 0:
            return np.fft.ifft(1j * self.freqs * np.fft.fft(xi))
        if k == 1:
            return 1j * self.axis * xi
        return 1j * xi

    def inner(self, a, b):
        return complex(np.vdot(a, b) * self.spacing)

    def random_vector(self, seed, trial, freq_cap=None):
        if freq_cap is None:
            freq_cap = 0.5 * np.pi / self.spacing
        rng = np.random.default_rng((int(seed), int(trial)))
        coef = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
        coef[np.abs(self.freqs) > freq_cap] = 0.0
        xi = np.fft.ifft(coef)
        # confine to the inner quarter of the box so translations/modulations
        # stay resolved and the position generator (with its periodic wrap
        # discontinuity) only ever multiplies a negligible tail
        half = self.axis[-1]
        xi = xi * np.exp(-((4.0 * self.axis / half) ** 2))
        nrm = self.norm(xi)
        return xi / nrm if nrm > DEGENERATE_TOL else xi


class LeftRegularHandle(RepresentationHandle):
    """Left regular representation on L2 of a chart lattice (Haar weight).

    ``act(g)`` pulls the field back along left translation,
    (U(g) psi)(x) = psi(bch(-g, x)), by trilinear interpolation; the
    generators are the left-invariant fields X_k realized with
    fourth-order centered stencils.
    """

    stencil_order = 4

    def __init__(self, model, n, spacing):
        super().__init__()
        import heatlands.euclid as euclid  # local to avoid import cycles

        self.model = model
        self.ngen = model.d
        self.grid = euclid.LatticeGrid(model.d, n, spacing)
        self.pts = np.stack(self.grid.points(), axis=-1)
        self.haar = model.haar_density(
            self.pts.reshape(-1, model.d)
        ).reshape(self.pts.shape[:-1])
        self.coeffs = liegroup.lattice_field_coeffs(model, self.grid)

    def act(self, g, xi):
        z = self.model.bch(-np.asarray(g, dtype=float), self.pts)
        return _accel.interp_linear(
            np.asarray(xi, dtype=complex), self.grid.n, self.grid.spacing, z
        )

    def act_sum(self, ys, w, xi):
        return _accel.group_convolve(
            np.asarray(xi, dtype=complex),
            self.grid.n,
            self.grid.spacing,
            np.asarray(ys, dtype=float),
            np.asarray(w, dtype=complex),
            self.model,
        )

    def _partial(self, xi, axis):
        h = self.grid.spacing
        f1 = np.roll(xi, -1, axis=axis)
        fm1 = np.roll(xi, 1, axis=axis)
        f2 = np.roll(xi, -2, axis=axis)
        fm2 = np.roll(xi, 2, axis=axis)
        return (fm2 - 8.0 * fm1 + 8.0 * f1 - f2) / (12.0 * h)

    def generator(self, k, xi):
        xi = np.asarray(xi, dtype=complex)
        out = np.zeros_like(xi)
        for axis in range(self.ngen):
            cl = self.coeffs[..., axis, k]
            if np.max(np.abs(cl)) == 0.0:
                continue
            out += cl * self._partial(xi, axis)
        return out

    def inner(self, a, b):
        return complex(
            np.sum(np.conj(a) * b * self.haar) * self.grid.spacing**self.grid.d
        )

    def random_vector(self, seed, trial, freq_cap=None):
        if freq_cap is None:
            freq_cap = 0.25 * np.pi / self.grid.spacing
        rng = np.random.default_rng((int(seed), int(trial)))
        shape = (self.grid.n,) * self.grid.d
        coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        mesh = self.grid.freq_mesh()
        rad = np.sqrt(sum(np.abs(m) ** 2 for m in mesh))
        coef[rad > freq_cap] = 0.0
        xi = np.fft.ifftn(coef)
        # keep the support inside the chart so left translations stay valid
        xi = xi * self.model.cutoff(self.pts, 0.5)
        nrm = self.norm(xi)
        return xi / nrm if nrm > DEGENERATE_TOL else xi


# ---------------------------------------------------------------------------
# transferred semigroup and operators
# ---------------------------------------------------------------------------


def transfer_semigroup(kernel_field, rep, xi, threshold=1e-6, stride=1):
    """S_t xi = sum_i w_i K_t(g_i) sigma(g_i) U(g_i) xi over the support.

    Returns ``(vector, bound)`` where bound = M * ||U_rho K_t||_1 is the
    operator-norm estimate from the handle's continuity constants.
    Raises ContinuityUnmeasured until ``rep.measure_continuity`` has run,
    and SupportLeak if the kernel support pokes out of the chart ball.
    """
    if rep.continuity is None:
        raise ContinuityUnmeasured(
            "call measure_continuity() on the handle before transferring"
        )
    model = kernel_field.model
    ys, w = kernel_field.sources(threshold, stride=stride)
    radii = model.chart_modulus(ys)
    if np.any(radii > model.chart_radius * (1.0 + 1e-12)):
        leaked = float(np.sum(np.abs(w[radii > model.chart_radius])))
        raise SupportLeak(
            f"kernel support leaves the chart ball (mass {leaked:.3e})",
            leaked=leaked,
        )
    act_sum = getattr(rep, "act_sum", None)
    if act_sum is not None:
        out = act_sum(ys, w, xi)
    else:
        out = None
        for y, wi in zip(ys, w):
            term = wi * rep.act(y, xi)
            out = term if out is None else out + term
        if out is None:
            out = np.zeros_like(np.asarray(xi, dtype=complex))
    mcont, rho = rep.continuity
    bound = mcont * kernel_field.weighted_l1(rho)
    return out, bound


def apply_rep_operator(rep, spec, xi):
    """H_U xi = sum_alpha c_alpha A^alpha xi with word-suffix caching."""
    cache = {(): np.asarray(xi, dtype=complex)}

    def word(alpha):
        if alpha not in cache:
            cache[alpha] = rep.generator(alpha[0] - 1, word(alpha[1:]))
        return cache[alpha]

    out = np.zeros_like(cache[()])
    for alpha, c in spec.coeffs.items():
        out = out + c * word(alpha)
    return out


def seminorm_levels(rep, xi, n_max, cap=MONOMIAL_CAP):
    """N_k(xi) = sup over ordered monomials |alpha| = k of ||A^alpha xi||.

    The monomial set is capped at ``cap`` words per level (lexicographic
    order), since the ordered index count grows like d^k.
    """
    cache = {(): np.asarray(xi, dtype=complex)}

    def word(alpha):
        if alpha not in cache:
            cache[alpha] = rep.generator(alpha[-1], word(alpha[:-1]))
        return cache[alpha]

    levels = [rep.norm(xi)]
    for k in range(1, n_max + 1):
        best = 0.0
        for alpha in itertools.islice(
            itertools.product(range(rep.ngen), repeat=k), cap
        ):
            best = max(best, rep.norm(word(alpha)))
        levels.append(best)
    return np.array(levels)


@dataclass
class GrowthProfile:
    """Seminorm growth of the transferred semigroup along a time list."""

    t_list: list
    n_max: int
    m: int
    xi_norm: float
    seminorms: dict  # t -> N_k array, k = 0..n_max
    norms: dict  # t -> ||S_t xi||_n = max_{k<=n} N_k
    factorized: dict = field(default_factory=dict)
    a: float = 0.0
    b: float = 0.0
    max_residual: float = 0.0


def growth_profile(
    kernel_at,
    rep,
    xi,
    t_list,
    n_max,
    m,
    cap=MONOMIAL_CAP,
    factorized_max=0,
    threshold=1e-6,
):
    """Profile ||S_t xi||_n for t in t_list, n <= n_max, and fit the envelope.

    ``kernel_at`` maps a time to the kernel GroupField.  The direct route
    applies generator monomials to the transferred vector; when
    ``factorized_max`` > 0, levels up to it are recomputed by the
    factorization A^alpha S_t = prod_j U(X_{alpha_j} K_{t/n}) as an
    internal cross-check.
    """
    grid_n = getattr(rep, "n", None) or getattr(rep, "grid").n
    if 2 * n_max >= grid_n // 2:
        raise StencilOverflow(
            f"{n_max} generator applications exceed the carrier resolution"
        )
    xi = np.asarray(xi, dtype=complex)
    xi_norm = rep.norm(xi)
    seminorms, norms, factorized = {}, {}, {}
    for t in t_list:
        kf = kernel_at(t)
        st, _ = transfer_semigroup(kf, rep, xi, threshold=threshold)
        levels = seminorm_levels(rep, st, n_max, cap)
        seminorms[t] = levels
        norms[t] = np.maximum.accumulate(levels)
        if factorized_max:
            factorized[t] = _factorized_levels(
                kernel_at, rep, xi, t, min(factorized_max, n_max), threshold
            )
    prof = GrowthProfile(
        t_list=list(t_list),
        n_max=n_max,
        m=m,
        xi_norm=xi_norm,
        seminorms=seminorms,
        norms=norms,
        factorized=factorized,
    )
    _fit_envelope(prof)
    return prof


def _factorized_levels(kernel_at, rep, xi, t, k_max, threshold):
    """N_k via products of transferred derivative kernels at time t/k."""
    out = [rep.norm(transfer_semigroup(kernel_at(t), rep, xi, threshold)[0])]
    for k in range(1, k_max + 1):
        kf = kernel_at(t / k)
        dfields = [
            type(kf)(
                kf.model,
                kf.grid,
                kf.t,
                liegroup.apply_vector_field(kf.model, kf.grid, kf.values, j),
            )
            for j in range(rep.ngen)
        ]
        best = 0.0
        for alpha in itertools.islice(
            itertools.product(range(rep.ngen), repeat=k), MONOMIAL_CAP
        ):
            vec = xi
            for j in alpha:
                vec, _ = transfer_semigroup(dfields[j], rep, vec, threshold)
            best = max(best, rep.norm(vec))
        out.append(best)
    return np.array(out)


def _fit_envelope(prof):
    """Least-squares (a, b) for ||S_t xi||_n ~ a b^n n! t^{-n/m} ||xi||."""
    rows = []
    for t in prof.t_list:
        for n_lvl, val in enumerate(prof.norms[t]):
            # the level-0 entry only records the contraction ||S_t xi||,
            # not derivative growth, so it stays out of the regression
            if n_lvl == 0 or val <= DEGENERATE_TOL:
                continue
            r = val * t ** (n_lvl / prof.m) / (
                math.factorial(n_lvl) * prof.xi_norm
            )
            rows.append((n_lvl, math.log(r)))
    if not rows:
        return
    arr = np.array(rows)
    design = np.stack([np.ones(len(arr)), arr[:, 0]], axis=-1)
    coef, *_ = np.linalg.lstsq(design, arr[:, 1], rcond=None)
    prof.a, prof.b = math.exp(coef[0]), math.exp(coef[1])
    fit = design @ coef
    prof.max_residual = float(np.max(np.abs(np.expm1(arr[:, 1] - fit))))


def radius_from_levels(levels):
    """Ratio-test radius of sum_k s^k N_k / k! from consecutive levels."""
    levels = np.asarray(levels, dtype=float)
    if len(levels) < 4:
        raise InsufficientLevels(
            f"need at least 4 seminorm levels, got {len(levels)}"
        )
    k_top = len(levels) - 1
    if levels[k_top] <= DEGENERATE_TOL * max(levels[0], 1.0):
        return math.inf
    return k_top * levels[k_top - 1] / levels[k_top]


def analytic_radius(profile):
    """Per-time analytic-radius estimates s*(t) from a growth profile."""
    return {t: radius_from_levels(profile.seminorms[t]) for t in profile.t_list}


# ---------------------------------------------------------------------------
# Garding / regularity inequalities
# ---------------------------------------------------------------------------


@dataclass
class GardingResult:
    lambda_hat: float
    nu_hat: float
    worst_phi: np.ndarray
    lambda_hat_laplacian: float
    nu_hat_laplacian: float
    mu: float
    trials: int
    seed: int
    freq_cap: float


def garding_check(spec, rep, trials=200, seed=0, freq_cap=None, mu=None):
    """Largest lambda with Re(phi, H phi) >= lambda N_{m/2}^2 - nu ||phi||^2.

    Scans lambda over (0, mu] and reports the largest value whose induced
    violation nu stays below NU_TOL over all sampled band-limited vectors,
    together with the binding vector.  The variant with the Laplacian form
    (phi, (-Delta)^{m/2} phi) in place of the seminorm is evaluated too.
    """
    if mu is None:
        try:
            mu = symbolcore.certify_ellipticity(spec).mu
        except NotStronglyElliptic:
            mu = 1.0
    half = spec.m // 2
    qs, sems, laps, nrms, phis = [], [], [], [], []
    for trial in range(trials):
        phi = rep.random_vector(seed, trial, freq_cap)
        nrm2 = rep.inner(phi, phi).real
        if nrm2 < DEGENERATE_TOL:
            continue
        sem = seminorm_levels(rep, phi, half)[half] ** 2
        if sem < DEGENERATE_TOL:
            continue
        qs.append(rep.inner(phi, apply_rep_operator(rep, spec, phi)).real)
        sems.append(sem)
        neg_lap = phi
        for _ in range(half):
            neg_lap = -sum(
                rep.generator(k, rep.generator(k, neg_lap))
                for k in range(rep.ngen)
            )
        laps.append(rep.inner(phi, neg_lap).real)
        nrms.append(nrm2)
        phis.append(phi)
    qs, sems, laps, nrms = map(np.array, (qs, sems, laps, nrms))

    def scan(seminorms_sq):
        best_lam, best_nu = 0.0, float(np.max(np.maximum(-qs / nrms, 0.0)))
        for lam in np.linspace(mu, 0.0, 2001):
            nu = float(np.max(np.maximum((lam * seminorms_sq - qs) / nrms, 0.0)))
            if nu <= NU_TOL:
                best_lam, best_nu = float(lam), nu
                break
        worst = int(np.argmax(best_lam * seminorms_sq - qs))
        return best_lam, best_nu, worst

    lam_hat, nu_hat, worst = scan(sems)
    lam_lap, nu_lap, _ = scan(laps)
    cap = freq_cap if freq_cap is not None else float("nan")
    return GardingResult(
        lambda_hat=lam_hat,
        nu_hat=nu_hat,
        worst_phi=phis[worst],
        lambda_hat_laplacian=lam_lap,
        nu_hat_laplacian=nu_lap,
        mu=float(mu),
        trials=trials,
        seed=seed,
        freq_cap=cap,
    )


def regularity_check(spec, rep, trials=100, seed=0, freq_cap=None):
    """a_hat = max over trials of N_m(phi) / (||H phi|| + ||phi||)."""
    a_hat, worst = 0.0, None
    for trial in range(trials):
        phi = rep.random_vector(seed, trial, freq_cap)
        nrm = rep.norm(phi)
        if nrm < DEGENERATE_TOL:
            continue
        n_m = seminorm_levels(rep, phi, spec.m)[spec.m]
        denom = rep.norm(apply_rep_operator(rep, spec, phi)) + nrm
        ratio = n_m / denom
        if ratio > a_hat:
            a_hat, worst = ratio, phi
    return a_hat, worst


def form_infimum(spec, rep, trials=100, seed=0, freq_cap=None):
    """Smallest sampled Rayleigh quotient Re(phi, H phi) / ||phi||^2."""
    low = math.inf
    for trial in range(trials):
        phi = rep.random_vector(seed, trial, freq_cap)
        nrm2 = rep.inner(phi, phi).real
        if nrm2 < DEGENERATE_TOL:
            continue
        low = min(low, rep.inner(phi, apply_rep_operator(rep, spec, phi)).real / nrm2)
    return low


def fit_growth_rate(t_values, l1_values):
    """Smallest omega with ||K_t||_1 <= e^{omega t} on the sampled grid."""
    return float(max(math.log(l1) / t for t, l1 in zip(t_values, l1_values)))
