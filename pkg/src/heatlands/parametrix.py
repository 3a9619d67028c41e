"""Parabolic parametrix expansion of heat kernels on chart lattices.

The expansion seeds with the cutoff frozen kernel ``K0_t = chi * Ktilde_t``
(the constant-coefficient kernel synthesized in the chart) and corrects it
through the recursion ``K^(n) = -(K^(n-1) *hat M)``, where ``M_t`` is the
defect ``(d/dt + H^)(K0_t)`` and ``*hat`` the convolution over space and
time.  Narrow kernels at small times are synthesized on adaptive fine
lattices; the group convolutions run through the selected _accel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel, euclid, liegroup, symbolcore
from .errors import (
    Diverging,
    LambdaTooSmall,
    SupportLeak,
    TimeGridTooCoarse,
)

CHART_ALIAS_TOL = 1e-3
SOURCE_THRESHOLD = 2e-3
SUPPORT_TOL = 1e-12


@dataclass
class GroupField:
    """A sampled kernel on the chart lattice of a group model."""

    model: liegroup.GroupModel
    grid: euclid.LatticeGrid
    t: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n,) * self.grid.d:
            raise ValueError("values shape does not match grid")

    def _haar(self):
        return _lattice_haar(self.model, self.grid)

    def mass(self):
        return complex(
            np.sum(self.values * self._haar()) * self.grid.spacing**self.grid.d
        )

    def l1(self):
        return float(
            np.sum(np.abs(self.values) * self._haar())
            * self.grid.spacing**self.grid.d
        )

    def linf(self):
        return float(np.max(np.abs(self.values)))

    def weighted_l1(self, rho):
        r = self.grid.radii()
        return float(
            np.sum(np.abs(self.values) * self._haar() * np.exp(rho * r))
            * self.grid.spacing**self.grid.d
        )

    def sources(self, threshold=SOURCE_THRESHOLD, modular_inverse=False, stride=1):
        """Support points and convolution weights (Haar density folded in).

        ``stride`` thins the source cloud to every stride-th lattice point
        per axis (weights rescaled), trading quadratic sampling error for a
        stride^d speedup of the convolution against a smooth partner.
        """
        vals = self.values
        haar = self._haar()
        pts = np.stack(self.grid.points(), axis=-1)
        if stride > 1:
            sl = (slice(None, None, stride),) * self.grid.d
            vals = vals[sl]
            haar = haar[sl]
            pts = pts[sl]
        mask = np.abs(vals) > threshold * max(self.linf(), 1e-300)
        pts = pts[mask]
        w = (
            vals[mask]
            * haar[mask]
            * (stride * self.grid.spacing) ** self.grid.d
        )
        if modular_inverse:
            w = w / self.model.modular_function(pts)
        return pts, w


_HAAR_CACHE = {}


def _lattice_haar(model, grid):
    key = (id(model), grid.d, grid.n, grid.spacing)
    if key not in _HAAR_CACHE:
        pts = np.stack(grid.points(), axis=-1)
        _HAAR_CACHE[key] = model.haar_density(pts.reshape(-1, grid.d)).reshape(
            (grid.n,) * grid.d
        )
    return _HAAR_CACHE[key]


def _pow2_at_least(x):
    return 1 << max(2, int(math.ceil(math.log2(x))))


class ParametrixExpansion:
    """Builds and evaluates the kernel expansion for one model/operator pair.

    Parameters
    ----------
    model, spec : the group model and the (certified) operator coefficients.
    grid : main chart lattice carrying the assembled kernels.
    n_max : deepest correction term to build.
    t_nodes : stored time-grid nodes for the correction terms.
    quad_points : Gauss-Legendre points per half of the time integral.
    t_list : explicit stored time nodes (overrides t_max/t_nodes); lets a
        caller place nodes exactly at the times a diagnostic will sample,
        so no time interpolation enters finite-difference stencils.
    fine_n : points per axis of the adaptive synthesis lattices.
    plateau_fraction : relative radius where the chart cutoff starts to fall.
    """

    def __init__(
        self,
        model,
        spec,
        grid,
        report=None,
        n_max=2,
        t_max=0.25,
        t_nodes=8,
        quad_points=4,
        fine_n=64,
        plateau_fraction=0.75,
        source_threshold=SOURCE_THRESHOLD,
        t_list=None,
    ):
        if spec.d != model.d or grid.d != model.d:
            raise ValueError("model/operator/grid dimension mismatch")
        if t_list is None and t_nodes < 4:
            raise TimeGridTooCoarse("need at least 4 stored time nodes")
        self.model = model
        self.spec = spec
        self.grid = grid
        self.report = report or symbolcore.certify_ellipticity(spec)
        self.n_max = n_max
        self.quad_points = quad_points
        self.fine_n = fine_n
        self.plateau_fraction = plateau_fraction
        self.source_threshold = source_threshold
        if t_list is not None:
            self.t_grid = np.sort(np.asarray(t_list, dtype=float))
        else:
            self.t_grid = np.geomspace(t_max / 64.0, t_max, t_nodes)
        self._seed_cache = {}
        self._seed_main_cache = {}
        self._correction_cache = {}
        self._stored = {}  # n -> list of GroupField on the main grid
        self._chi_main = model.cutoff(
            np.stack(grid.points(), axis=-1), plateau_fraction
        )
        self._ledger = []

    # ---------------- synthesis of seed and correction fields -------------

    def _synth_grid(self, t):
        """Fine lattice adapted to the kernel width at time t."""
        m = self.spec.m
        # radius where a Gaussian-type envelope with a conservative rate
        # b ~ 0.15 falls to ~1e-6 of the peak
        r_cut = t ** (1.0 / m) * (math.log(1e6) / 0.15) ** ((m - 1.0) / m)
        box = min(2.0 * self.model.chart_radius, 2.0 * r_cut)
        spacing = box / self.fine_n
        return euclid.LatticeGrid(self.model.d, self.fine_n, spacing)

    def _synthesize(self, t):
        """K~_t and H0 K~_t on the adaptive fine lattice, cutoff applied."""
        key = round(math.log(t) * 1e9)
        if key in self._seed_cache:
            return self._seed_cache[key]
        g = self._synth_grid(t)
        h = euclid.symbol_on_dual(self.spec, g)
        base = np.exp(-t * h)
        ktilde = euclid.inverse_transform(g, base)
        h0k = euclid.inverse_transform(g, h * base)
        pts = np.stack(g.points(), axis=-1)
        chi = self.model.cutoff(pts, self.plateau_fraction)
        seed = GroupField(self.model, g, t, chi * ktilde)
        # mass escaping the chart ball must be negligible
        outside = self.model.chart_modulus(pts) > self.model.chart_radius
        leak = float(np.sum(np.abs(seed.values[outside]))) * g.spacing**g.d
        if leak > SUPPORT_TOL:
            raise SupportLeak(
                f"seed mass {leak:.3e} escapes the chart ball", leaked=leak
            )
        self._seed_cache[key] = (seed, GroupField(self.model, g, t, chi * h0k), chi)
        return self._seed_cache[key]

    def seed(self, t):
        return self._synthesize(t)[0]

    def correction(self, t):
        """M_t = (d/dt + H^) K0_t = H^(chi K~_t) - chi (H0 K~_t)."""
        key = round(math.log(t) * 1e9)
        if key in self._correction_cache:
            return self._correction_cache[key]
        seed, chih0k, _ = self._synthesize(t)
        hk = liegroup.apply_group_operator(self.model, self.spec, seed.grid, seed.values)
        field = GroupField(self.model, seed.grid, t, hk - chih0k.values)
        self._correction_cache[key] = field
        return field

    # ---------------- stored correction terms -----------------------------

    def build(self, tail_tol=0.0):
        """Compute the stored terms K^(1..n_max) over the time grid.

        Stops early when the newest term's largest L1 norm falls below
        ``tail_tol``; raises Diverging after three consecutive growing terms.
        """
        grow = 0
        prev_norm = None
        for n in range(1, self.n_max + 1):
            fields = [self._term_quadrature(n, t) for t in self.t_grid]
            self._stored[n] = fields
            for t, f in zip(self.t_grid, fields):
                self._ledger.append((n, float(t), f.l1(), f.linf()))
            norm = max(f.l1() for f in fields)
            if prev_norm is not None:
                grow = grow + 1 if norm > prev_norm else 0
                if grow >= 3:
                    raise Diverging(
                        f"term L1 norms grew for {grow} consecutive orders"
                    )
            prev_norm = norm
            if tail_tol and norm < tail_tol:
                break
        return self

    def _term_quadrature(self, n, t):
        """K^(n)(t) = -int_0^t K^(n-1)_{t-s} * M_s ds on the main grid."""
        m = self.spec.m
        half = t / 2.0
        nodes, weights = np.polynomial.legendre.leggauss(self.quad_points)
        u = 0.5 * (nodes + 1.0)
        du = 0.5 * weights
        acc = np.zeros((self.grid.n,) * self.grid.d, dtype=complex)
        rmax = self.model.chart_radius

        # lower half: s = half * u^m removes the s^{-(m-1)/m} singularity of M
        for ui, dui in zip(u, du):
            s = half * ui**m
            jac = half * m * ui ** (m - 1) * dui
            if s < 1e-12:
                continue
            msrc = self.correction(s)
            ys, w = msrc.sources(
                self.source_threshold, modular_inverse=True, stride=2
            )
            psiF = self._phi_field(n - 1, t - s)
            out = _accel.group_convolve(
                psiF.values, psiF.grid.n, psiF.grid.spacing, ys, w, self.model,
                n_out=self.grid.n, spacing_out=self.grid.spacing,
                swapped=True, rmax=rmax,
            )
            acc += jac * out

        # upper half: tau = t - s in [0, half]; phi_{tau} is the narrow factor
        for ui, dui in zip(u, du):
            tau = half * ui**m
            jac = half * m * ui ** (m - 1) * dui
            s = t - tau
            if tau < 1e-12:
                continue
            phiF = self._phi_field(n - 1, tau)
            stride = 2 if phiF.grid.n >= self.fine_n else 1
            ys, w = phiF.sources(self.source_threshold, stride=stride)
            mfield = self.correction(s)
            out = _accel.group_convolve(
                mfield.values, mfield.grid.n, mfield.grid.spacing, ys, w,
                self.model, n_out=self.grid.n, spacing_out=self.grid.spacing,
                rmax=rmax,
            )
            acc += jac * out

        return GroupField(self.model, self.grid, t, -acc)

    def _phi_field(self, n, t):
        """K^(n) at arbitrary time, on its natural carrier lattice."""
        if n == 0:
            return self.seed(t)
        return self._interp_term(n, t)

    def _interp_term(self, n, t):
        if n not in self._stored:
            raise TimeGridTooCoarse(
                f"term {n} not built; call build() with n_max >= {n}"
            )
        tg = self.t_grid
        fields = self._stored[n]
        if t <= tg[0]:
            # K^(n) ~ t^{n/m} near zero: scale the first stored node down
            scale = (t / tg[0]) ** (n / self.spec.m)
            return GroupField(self.model, self.grid, t, fields[0].values * scale)
        if t >= tg[-1]:
            if t > tg[-1] * 1.25:
                raise TimeGridTooCoarse(
                    f"time {t} beyond the stored grid (max {tg[-1]:.4g})"
                )
            return GroupField(self.model, self.grid, t, fields[-1].values)
        j = int(np.searchsorted(tg, t)) - 1
        lam = (t - tg[j]) / (tg[j + 1] - tg[j])
        vals = (1 - lam) * fields[j].values + lam * fields[j + 1].values
        return GroupField(self.model, self.grid, t, vals)

    # ---------------- assembled kernel and diagnostics ---------------------

    def _seed_on_main(self, t):
        """chi * K~_t sampled on the main lattice, by direct synthesis.

        Falls back to interpolation from the adaptive fine grid only when the
        main lattice cannot resolve the multiplier at this time (relaxed
        aliasing level CHART_ALIAS_TOL); direct synthesis keeps the field
        spectrally clean for the residual diagnostics.
        """
        key = round(math.log(t) * 1e9)
        if key not in self._seed_main_cache:
            decay = t * self.report.lam * self.grid.dual_max**self.spec.m
            if decay >= math.log(1.0 / CHART_ALIAS_TOL):
                h = euclid.symbol_on_dual(self.spec, self.grid)
                vals = self._chi_main * euclid.inverse_transform(
                    self.grid, np.exp(-t * h)
                )
            else:
                seedF = self.seed(t)
                pts = np.stack(self.grid.points(), axis=-1)
                vals = self._chi_main * _accel.interp_linear(
                    seedF.values, seedF.grid.n, seedF.grid.spacing, pts
                )
            self._seed_main_cache[key] = vals
        return self._seed_main_cache[key]

    def kernel(self, t, n_terms=None):
        """Sum of the expansion terms, sampled on the main lattice."""
        if n_terms is None:
            n_terms = max(self._stored) if self._stored else 0
        vals = self._seed_on_main(t).astype(complex)
        for n in range(1, n_terms + 1):
            vals = vals + self._interp_term(n, t).values
        return GroupField(self.model, self.grid, t, vals)

    def heat_residual(self, t, n_terms=None, delta=None):
        """Haar-weighted L1 of (d/dt + H^) applied to the assembled kernel.

        The time derivative uses a fourth-order five-point stencil with a
        step scaled to t, so the finite-difference truncation error stays
        well below the parametrix defect being measured.
        """
        if delta is None:
            delta = min(0.01, t / 10.0)
        vals = {c: self.kernel(t + c * delta, n_terms).values for c in (-2, -1, 1, 2)}
        dt = (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12.0 * delta)
        k0 = self.kernel(t, n_terms)
        hk = liegroup.apply_group_operator(self.model, self.spec, self.grid, k0.values)
        resid = GroupField(self.model, self.grid, t, (dt + hk) * self._chi_main)
        return resid.l1()

    def _kernel_on_fine(self, t, n_terms=None):
        """Assembled kernel on the adaptive fine lattice for time t.

        The seed lives there natively; the correction terms are wide and
        smooth, so upsampling them from the main lattice is benign.
        """
        if n_terms is None:
            n_terms = max(self._stored) if self._stored else 0
        seedF = self.seed(t)
        vals = seedF.values.astype(complex)
        if n_terms >= 1:
            pts = np.stack(seedF.grid.points(), axis=-1)
            for n in range(1, n_terms + 1):
                term = self._interp_term(n, t)
                vals = vals + _accel.interp_linear(
                    term.values, self.grid.n, self.grid.spacing, pts
                )
        return GroupField(self.model, seedF.grid, t, vals)

    def semigroup_defect(self, s, t, n_terms=None, threshold=None):
        """Haar L1 of K_s * K_t - K_{s+t} over the chart ball.

        The convolution samples K_t on its fine synthesis lattice, where
        the interpolation error of the narrow factor is smallest; the
        source cloud from K_s uses a tighter threshold than the expansion
        itself so that discarded tail mass stays below the defect scale.
        """
        if threshold is None:
            threshold = self.source_threshold / 10.0
        ks = self.kernel(s, n_terms)
        ktF = self._kernel_on_fine(t, n_terms)
        kst = self.kernel(s + t, n_terms)
        ys, w = ks.sources(threshold)
        conv = _accel.group_convolve(
            ktF.values, ktF.grid.n, ktF.grid.spacing, ys, w, self.model,
            n_out=self.grid.n, spacing_out=self.grid.spacing,
            rmax=self.model.chart_radius,
        )
        ball = self.grid.radii() <= self.model.chart_radius
        diff = np.where(ball, conv - kst.values, 0.0)
        return GroupField(self.model, self.grid, s + t, diff).l1()

    def derivative_sup(self, t, alpha, n_terms=None):
        """sup norm of the coordinate derivative d^alpha of the kernel."""
        k = self.kernel(t, n_terms)
        vhat = np.fft.fftn(np.fft.ifftshift(k.values * self._chi_main))
        mesh = self.grid.freq_mesh()
        for j in alpha:
            vhat = vhat * (1j * mesh[j - 1])
        vals = np.fft.fftshift(np.fft.ifftn(vhat))
        return float(np.max(np.abs(vals)))

    def ledger_rows(self):
        """(n, t, l1, linf, predicted) rows with a single fitted envelope.

        The prediction is a * b^n (t^n/n!)^{1/m} * exp(omega t) with (a, b)
        fitted by least squares over all stored terms.
        """
        rows = np.array([(n, t, l1, linf) for n, t, l1, linf in self._ledger])
        if rows.size == 0:
            return []
        m = self.spec.m
        omega = self.report.omega
        base = (rows[:, 1] ** rows[:, 0] / np.array(
            [math.factorial(int(n)) for n in rows[:, 0]]
        )) ** (1.0 / m) * np.exp(omega * rows[:, 1])
        y = np.log(rows[:, 2] / base)
        A = np.stack([np.ones_like(rows[:, 0]), rows[:, 0]], axis=-1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        a, b = math.exp(coef[0]), math.exp(coef[1])
        out = []
        for (n, t, l1, linf), bs in zip(self._ledger, base):
            out.append((int(n), t, l1, linf, a * b**n * float(bs)))
        return out


def residual_stencil_times(t, delta=None):
    """Times sampled by heat_residual's five-point stencil at time t.

    Building an expansion with these as stored nodes makes the stencil read
    exactly computed terms instead of time-interpolated ones.
    """
    if delta is None:
        delta = min(0.01, t / 10.0)
    return [t + c * delta for c in (-2, -1, 0, 1, 2)]


def ledger_to_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("n,t,l1,linf,envelope\n")
        for n, t, l1, linf, env in rows:
            fh.write(f"{n},{t:.9g},{l1:.9g},{linf:.9g},{env:.9g}\n")


def resolvent_kernel(spec, lam, grid, report=None, log_t_range=(-18.0, 6.0),
                     nodes=140):
    """Resolvent kernel (lam + H)^{-1} delta on an abelian lattice.

    Laplace-transforms the synthesized kernels with a trapezoid rule in
    log-time (doubly exponential tails on both ends).  Requires
    lam > omega; raises LambdaTooSmall otherwise.
    """
    report = report or symbolcore.certify_ellipticity(spec)
    if lam <= report.omega:
        raise LambdaTooSmall(
            f"lambda {lam} is not above the growth bound {report.omega}"
        )
    xs = np.linspace(log_t_range[0], log_t_range[1], nodes)
    dx = xs[1] - xs[0]
    h = euclid.symbol_on_dual(spec, grid)
    acc_hat = np.zeros_like(h)
    for x in xs:
        t = math.exp(x)
        acc_hat += dx * t * math.exp(-lam * t) * np.exp(-t * h)
    values = euclid.inverse_transform(grid, acc_hat)
    defect_hat = (lam + h) * acc_hat - 1.0
    defect = float(
        np.sum(np.abs(euclid.inverse_transform(grid, defect_hat)))
        * grid.spacing**grid.d
    )
    return euclid.KernelField(grid, 0.0, values), defect
