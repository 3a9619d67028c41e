"""Kernel machinery on R^d: Fourier synthesis, convolution, envelopes.

The kernel of the semigroup generated by a certified spec is synthesized as
the (non-symmetric) inverse transform K_t(x) = (2pi)^{-d} int e^{ix.xi}
e^{-t h(xi)} dxi, so that the convolution-semigroup identity holds exactly
and the t -> 0 mass is 1.  Derivative fields carry the extra multiplier
(i xi)^alpha.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import symbolcore
from .errors import (
    AliasingRisk,
    BranchCut,
    DegenerateFit,
    GridMismatch,
    NotCertified,
)

ALIAS_TOL = 1e-13
ENVELOPE_FLOOR = 1e-12


@dataclass(frozen=True)
class LatticeGrid:
    """Origin-centered cubic lattice with n (power of two) points per axis."""

    d: int
    n: int
    spacing: float

    def __post_init__(self):
        if self.n < 4 or (self.n & (self.n - 1)) != 0:
            raise ValueError("points per axis must be a power of two >= 4")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def box_length(self):
        return self.n * self.spacing

    @property
    def dual_step(self):
        return 2.0 * np.pi / self.box_length

    @property
    def dual_max(self):
        return np.pi / self.spacing

    def axis(self):
        return (np.arange(self.n) - self.n // 2) * self.spacing

    def points(self):
        """Meshgrid of coordinates, shape (n,)*d per component."""
        ax = self.axis()
        return np.meshgrid(*([ax] * self.d), indexing="ij")

    def radii(self):
        mesh = self.points()
        return np.sqrt(sum(c**2 for c in mesh))

    def freq_mesh(self):
        """Dual lattice in FFT ordering, one array per axis."""
        f = 2.0 * np.pi * np.fft.fftfreq(self.n, self.spacing)
        return np.meshgrid(*([f] * self.d), indexing="ij")


@dataclass
class KernelField:
    """A sampled kernel (or kernel derivative) at a single time."""

    grid: LatticeGrid
    t: float
    values: np.ndarray
    derivative_tag: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n,) * self.grid.d:
            raise ValueError("values shape does not match grid")

    def lattice_integral(self):
        return complex(np.sum(self.values)) * self.grid.spacing**self.grid.d

    def l1(self):
        return float(np.sum(np.abs(self.values))) * self.grid.spacing**self.grid.d

    def linf(self):
        return float(np.max(np.abs(self.values)))


@dataclass
class GaussianFit:
    """Constants of the bound a t^{-(d+|alpha|)/m} e^{wt} e^{-b u(x)}."""

    a: float
    b: float
    omega: float
    residual: float


@dataclass
class SeminormProfile:
    """Seminorms N_k of an evolved function plus fitted growth constants."""

    levels: list  # (k, N_k) pairs
    a: float
    b: float
    phi_norm: float


def symbol_on_dual(spec, grid):
    """h evaluated on the grid's dual lattice (FFT ordering)."""
    mesh = grid.freq_mesh()
    xi = np.stack(mesh, axis=-1)
    return symbolcore.eval_symbol(spec, xi)


def forward_transform(grid, phi):
    """Lattice approximation of phi~(xi) = int e^{-ix.xi} phi(x) dx."""
    return np.fft.fftn(np.fft.ifftshift(phi)) * grid.spacing**grid.d


def inverse_transform(grid, phi_hat):
    """Inverse of forward_transform, returning values on the centered lattice."""
    return np.fft.fftshift(np.fft.ifftn(phi_hat)) / grid.spacing**grid.d


def l2_norm(grid, phi):
    """Lattice L2 norm sum |phi|^2 dx."""
    return float(np.sqrt(np.sum(np.abs(phi) ** 2) * grid.spacing**grid.d))


def _check_aliasing(spec, t, grid, eps=ALIAS_TOL, extra_power=0):
    """Nyquist decay check t * Re h(xi_max) >= ln(1/eps) along each axis."""
    need = math.log(1.0 / eps)
    ximax = grid.dual_max
    for axis in range(spec.d):
        for sign in (1.0, -1.0):
            xi = np.zeros(spec.d)
            xi[axis] = sign * ximax
            decay = t * np.real(symbolcore.eval_symbol(spec, xi))
            decay -= extra_power * math.log(max(ximax, 1.0))
            if decay < need:
                # suggest a grid that would pass, same box length
                n_req = grid.n
                while n_req < 2**22:
                    n_req *= 2
                    xi[axis] = sign * np.pi * n_req / grid.box_length
                    d2 = t * np.real(symbolcore.eval_symbol(spec, xi))
                    d2 -= extra_power * math.log(max(abs(xi[axis]), 1.0))
                    if d2 >= need:
                        break
                raise AliasingRisk(
                    f"multiplier decay {decay:.2f} < {need:.2f} at the dual "
                    f"boundary (axis {axis}); need about n={n_req} points",
                    required_n=n_req,
                )


def _require_report(spec, report):
    if report is None:
        report = symbolcore.certify_ellipticity(spec)
    if not report.is_strongly_elliptic:
        raise NotCertified("spec lacks a valid strong-ellipticity certificate")
    return report


def synthesize_kernel(spec, t, grid, derivs=(), report=None):
    """Synthesize K_t and the requested derivative fields on the lattice.

    Returns a list of KernelField, first the kernel itself, then one field
    per multi-index in ``derivs``.
    """
    report = _require_report(spec, report)
    if t <= 0:
        raise ValueError("time must be positive")
    if spec.d != grid.d:
        raise ValueError("spec/grid dimension mismatch")
    max_order = max((len(a) for a in derivs), default=0)
    _check_aliasing(spec, t, grid, extra_power=max_order)

    h = symbol_on_dual(spec, grid)
    base = np.exp(-t * h)
    mesh = grid.freq_mesh()
    out = [KernelField(grid, t, inverse_transform(grid, base))]
    for alpha in derivs:
        alpha = symbolcore.validate_multiindex(alpha, spec.d)
        mult = np.ones_like(base)
        for k in alpha:
            mult = mult * (1j * mesh[k - 1])
        out.append(KernelField(grid, t, inverse_transform(grid, base * mult), alpha))
    return out


def convolve(f, g):
    """Periodic lattice convolution scaled by spacing^d."""
    if f.grid != g.grid:
        raise GridMismatch("fields live on different lattices")
    fh = np.fft.fftn(np.fft.ifftshift(f.values))
    gh = np.fft.fftn(np.fft.ifftshift(g.values))
    vals = np.fft.fftshift(np.fft.ifftn(fh * gh)) * f.grid.spacing**f.grid.d
    return KernelField(f.grid, f.t + g.t, vals, f.derivative_tag + g.derivative_tag)


def delta_field(grid, t=0.0):
    """Unit lattice impulse (1/spacing^d at the origin), convolution identity."""
    vals = np.zeros((grid.n,) * grid.d, dtype=complex)
    vals[(grid.n // 2,) * grid.d] = 1.0 / grid.spacing**grid.d
    return KernelField(grid, t, vals)


def fit_gaussian_envelope(field, m, t, fit_region=None, floor=ENVELOPE_FLOOR):
    """Fit |field(x)| <= a t^{-(d+|alpha|)/m} e^{-b (|x|^m/t)^{1/(m-1)}}.

    Linear regression of log|field| (with the t-power removed) against
    u = (|x|^m / t)^{1/(m-1)}.  Points below ``floor`` times the peak are
    excluded.  ``fit_region`` may be a boolean mask on the grid.
    """
    if m < 2:
        raise ValueError("order must be >= 2")
    absf = np.abs(field.values)
    peak = float(absf.max())
    if peak == 0.0:
        raise DegenerateFit("field vanishes identically")
    mask = absf > floor * peak
    if fit_region is not None:
        mask &= fit_region
    if int(mask.sum()) < 8:
        raise DegenerateFit(f"only {int(mask.sum())} usable points")

    r = field.grid.radii()[mask]
    u = (r**m / t) ** (1.0 / (m - 1))
    power = (field.grid.d + len(field.derivative_tag)) / m
    y = np.log(absf[mask]) + power * math.log(t)
    slope, intercept = np.polyfit(u, y, 1)
    b = -float(slope)
    a = float(np.exp(intercept))
    bound = a * t ** (-power) * np.exp(-b * u)
    residual = float(np.max(absf[mask] / bound - 1.0))
    return GaussianFit(a=a, b=b, omega=0.0, residual=max(residual, 0.0))


def weighted_l1(field, rho):
    """Lattice sum of |field| e^{rho |x|} dx (may be large but finite)."""
    if rho < 0:
        raise ValueError("weight rate must be >= 0")
    r = field.grid.radii()
    with np.errstate(over="ignore"):
        w = np.abs(field.values) * np.exp(rho * r)
    w = np.where(np.isfinite(w), w, np.finfo(float).max / w.size)
    return float(np.sum(w)) * field.grid.spacing**field.grid.d


def smoothing_seminorms(spec, phi, t, k_max, grid, report=None):
    """Seminorms N_k(S_t phi) = sup_{|alpha|=k} ||d^alpha S_t phi||_2.

    Computed in frequency space; for scalar symbols the sup runs over
    multisets since ordered products commute.  Fits (a, b) by regression of
    log(N_k t^{k/m} / (k!)^{1/m}) against k.
    """
    report = _require_report(spec, report)
    _check_aliasing(spec, t, grid, extra_power=k_max)
    phi = np.asarray(phi, dtype=complex)
    phi_hat = forward_transform(grid, phi)
    h = symbol_on_dual(spec, grid)
    evolved = np.exp(-t * h) * phi_hat
    mesh = grid.freq_mesh()
    dual_weight = (grid.dual_step / (2.0 * np.pi)) ** grid.d
    phi_norm = float(np.sqrt(np.sum(np.abs(phi_hat) ** 2) * dual_weight))

    levels = []
    for k in range(k_max + 1):
        best = 0.0
        for alpha in symbolcore.unordered_indices(grid.d, k):
            mult = np.ones_like(evolved)
            for j in alpha:
                mult = mult * (1j * mesh[j - 1])
            nk = float(np.sqrt(np.sum(np.abs(mult * evolved) ** 2) * dual_weight))
            best = max(best, nk)
        levels.append((k, best))

    ks = np.array([k for k, _ in levels[1:]], dtype=float)
    rk = np.array(
        [
            nk * t ** (k / spec.m) / (math.factorial(int(k)) ** (1.0 / spec.m))
            for k, nk in levels[1:]
        ]
    )
    rk = rk / max(phi_norm, 1e-300)
    good = rk > 0
    if int(good.sum()) >= 2:
        slope, intercept = np.polyfit(ks[good], np.log(rk[good]), 1)
        a_fit, b_fit = float(np.exp(intercept)), float(np.exp(slope))
    else:
        a_fit, b_fit = 0.0, 0.0
    return SeminormProfile(levels=levels, a=a_fit, b=b_fit, phi_norm=phi_norm)


def fractional_power_apply(spec, gamma, phi, grid, report=None, omega_shift=None):
    """Apply (H + omega_shift)^gamma through the shifted-symbol multiplier.

    The principal branch of the power is taken; a BranchCut error is raised
    if the shifted symbol's real part is not positive on the dual lattice.
    """
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    report = _require_report(spec, report)
    if omega_shift is None:
        omega_shift = report.omega + report.lam * 1e-6
    h = symbol_on_dual(spec, grid) + omega_shift
    if gamma < 1.0 and np.min(h.real) <= 0.0:
        raise BranchCut(
            f"Re(h)+shift reaches {np.min(h.real):.3e} on the dual lattice"
        )
    phi_hat = forward_transform(grid, np.asarray(phi, dtype=complex))
    return inverse_transform(grid, (h**gamma) * phi_hat)


def grid_for(spec, report=None, t_min=0.25, t_max=1.0, boundary_tol=1e-14,
             max_n=2**14):
    """Pick a lattice resolving t_min (aliasing) and containing t_max (decay).

    The box length is grown until the synthesized kernel at t_max drops below
    ``boundary_tol`` times its peak at the boundary.
    """
    report = _require_report(spec, report)
    # spacing from the aliasing criterion at t_min
    need = math.log(1.0 / ALIAS_TOL)
    xi_req = ((need / t_min + report.omega) / report.lam) ** (1.0 / spec.m)
    spacing = np.pi / (1.25 * xi_req)
    # crude envelope-based box, then verify by synthesis
    width = (t_max ** (1.0 / spec.m)) / (report.lam ** (1.0 / spec.m))
    L = 16.0 * width
    while True:
        n = 2 ** int(np.ceil(np.log2(L / spacing)))
        if n > max_n:
            raise MemoryError("requested grid exceeds the configured cap")
        g = LatticeGrid(spec.d, n, L / n)
        k = synthesize_kernel(spec, t_max, g, report=report)[0]
        edge = np.abs(k.values[(0,) * spec.d])
        if edge <= boundary_tol * max(k.linf(), 1e-300):
            return g
        L *= 1.5


def field_to_csv(field, path):
    """Write x_1..x_d, re, im rows for every lattice point."""
    mesh = field.grid.points()
    cols = [c.ravel() for c in mesh]
    vals = field.values.ravel()
    header = ",".join(f"x_{i + 1}" for i in range(field.grid.d)) + ",re,im"
    data = np.column_stack(cols + [vals.real, vals.imag])
    np.savetxt(path, data, delimiter=",", header=header, comments="")


def field_to_binary(field, path):
    """Row-major complex128 dump plus a JSON sidecar with grid metadata."""
    path = str(path)
    field.values.astype(np.complex128).tofile(path)
    sidecar = {
        "d": field.grid.d,
        "n": field.grid.n,
        "spacing": field.grid.spacing,
        "t": field.t,
        "derivative_tag": list(field.derivative_tag),
        "dtype": "complex128",
        "order": "C",
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def field_from_binary(path):
    path = str(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    grid = LatticeGrid(meta["d"], meta["n"], meta["spacing"])
    vals = np.fromfile(path, dtype=np.complex128).reshape((grid.n,) * grid.d)
    return KernelField(grid, meta["t"], vals, tuple(meta["derivative_tag"]))
