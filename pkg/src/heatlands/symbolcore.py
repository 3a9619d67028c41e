"""Strongly elliptic operator specifications and ellipticity certification.

An operator is stored as a map from ordered multi-indices (tuples of
coordinate indices in 1..d) to complex coefficients.  The symbol is
``h(xi) = sum c_alpha (i xi)^alpha`` and strong ellipticity means the real
part of the principal form ``(-1)^(m/2) sum_{|alpha|=m} c_alpha xi^alpha``
has a positive minimum ``mu`` on the unit sphere.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import NotStronglyElliptic

MultiIndex = tuple


def validate_multiindex(alpha, d):
    """Check that every entry of ``alpha`` is a coordinate index in 1..d."""
    for k in alpha:
        if not (isinstance(k, (int, np.integer)) and 1 <= k <= d):
            raise ValueError(f"multi-index entry {k!r} outside 1..{d}")
    return tuple(int(k) for k in alpha)


@dataclass(frozen=True)
class EllipticOperatorSpec:
    """An even-order constant-coefficient operator sum c_alpha (-d)^alpha."""

    d: int
    m: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.m < 2 or self.m % 2 != 0:
            raise ValueError("order must be a positive even integer")
        clean = {}
        for alpha, c in self.coeffs.items():
            alpha = validate_multiindex(alpha, self.d)
            if len(alpha) > self.m:
                raise ValueError(f"multi-index {alpha} longer than order {self.m}")
            clean[alpha] = clean.get(alpha, 0.0) + complex(c)
        if not any(len(a) == self.m and c != 0 for a, c in clean.items()):
            raise ValueError("no nonzero coefficient of principal order")
        object.__setattr__(self, "coeffs", clean)

    @property
    def principal(self):
        return {a: c for a, c in self.coeffs.items() if len(a) == self.m}

    @property
    def lower(self):
        return {a: c for a, c in self.coeffs.items() if len(a) < self.m}

    @property
    def constant_term(self):
        return self.coeffs.get((), 0.0)

    def to_json(self):
        doc = {
            "d": self.d,
            "m": self.m,
            "coeffs": [
                {"alpha": list(a), "re": c.real, "im": c.imag}
                for a, c in sorted(self.coeffs.items())
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        coeffs = {
            tuple(entry["alpha"]): complex(entry.get("re", 0.0), entry.get("im", 0.0))
            for entry in doc["coeffs"]
        }
        return cls(d=int(doc["d"]), m=int(doc["m"]), coeffs=coeffs)


@dataclass
class EllipticityReport:
    """Certified constants (mu, lambda, omega) of a strong ellipticity check."""

    mu: float | None
    lam: float | None
    omega: float | None
    is_strongly_elliptic: bool
    witness_xi: np.ndarray
    principal_nonvanishing: bool = True


def eval_symbol(spec, xi):
    """Evaluate h(xi) = sum c_alpha (i xi)^alpha at a single point or batch.

    ``xi`` may have shape (d,) or (..., d); the result is scalar or (...,).
    """
    xi = np.asarray(xi, dtype=float)
    batched = xi.ndim > 1
    out = np.zeros(xi.shape[:-1] if batched else (), dtype=complex)
    for alpha, c in spec.coeffs.items():
        mono = np.ones_like(out)
        for k in alpha:
            mono = mono * xi[..., k - 1]
        out = out + c * (1j ** len(alpha)) * mono
    return out if batched else complex(out)


def principal_form(spec, xi):
    """Re((-1)^(m/2) sum_{|alpha|=m} c_alpha xi^alpha), vectorized over xi."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1], dtype=complex) if xi.ndim > 1 else 0.0 + 0.0j
    for alpha, c in spec.principal.items():
        mono = np.ones(xi.shape[:-1]) if xi.ndim > 1 else 1.0
        for k in alpha:
            mono = mono * xi[..., k - 1]
        out = out + c * mono
    sign = (-1.0) ** (spec.m // 2)
    return np.real(sign * out)


def _sphere_lattice(d, resolution):
    """Unit vectors on S^{d-1} from an angular lattice (plus axis points)."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        theta = np.linspace(0.0, 2 * np.pi, resolution, endpoint=False)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if d == 3:
        # Modest resolution per angle: the principal form is a polynomial,
        # local refinement does the precision work.
        res = min(resolution, 181)
        theta = np.linspace(0.0, np.pi, res)
        phi = np.linspace(0.0, 2 * np.pi, 2 * res, endpoint=False)
        T, P = np.meshgrid(theta, phi, indexing="ij")
        pts = np.stack(
            [np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1
        )
        return pts.reshape(-1, 3)
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((resolution**2, d))
    pts /= np.linalg.norm(pts, axis=-1, keepdims=True)
    return pts


def _refine_on_sphere(spec, x0, refine_tol):
    """Polish a sphere minimizer of the principal form by local descent."""
    d = spec.d
    if d == 1:
        return x0, float(principal_form(spec, x0))

    def fun(v):
        v = np.asarray(v)
        n = np.linalg.norm(v)
        if n == 0:
            return np.inf
        return float(principal_form(spec, v / n))

    res = optimize.minimize(
        fun, x0, method="Nelder-Mead",
        options={"xatol": refine_tol, "fatol": refine_tol, "maxiter": 2000},
    )
    x = res.x / np.linalg.norm(res.x)
    return x, float(principal_form(spec, x))


def _omega_scan(spec, lam, directions):
    """sup over xi of lam|xi|^m - Re h(xi), by direction/radius scan."""
    lower = spec.lower
    if not lower and lam <= _mu_quick(spec, directions):
        return 0.0
    # Radius beyond which the principal deficit dominates every lower term.
    csum = sum(abs(c) for c in lower.values())
    mu = _mu_quick(spec, directions)
    gap = max(mu - lam, 1e-12)
    r_max = max(2.0, 2.0 * csum / gap)
    radii = np.concatenate([[0.0], np.geomspace(1e-4, r_max, 400)])
    best = 0.0
    for u in directions:
        xi = radii[:, None] * u[None, :]
        g = lam * radii**spec.m - np.real(eval_symbol(spec, xi))
        j = int(np.argmax(g))
        best = max(best, float(g[j]))
        # local refine in radius around the grid optimum
        lo = radii[max(j - 1, 0)]
        hi = radii[min(j + 1, len(radii) - 1)]
        if hi > lo:
            r = optimize.minimize_scalar(
                lambda rr: -(lam * rr**spec.m - np.real(eval_symbol(spec, rr * u))),
                bounds=(lo, hi), method="bounded",
            )
            best = max(best, float(-r.fun))
    return max(0.0, best)


def _mu_quick(spec, directions):
    return float(np.min(principal_form(spec, directions)))


def certify_ellipticity(spec, sphere_resolution=721, refine_tol=1e-9,
                        lambda_fraction=0.9):
    """Certify strong ellipticity and compute the constants (mu, lambda, omega).

    mu is the sphere minimum of the principal form (lattice scan plus local
    refinement), lambda = lambda_fraction * mu, and omega is the positive part
    of sup(lam |xi|^m - Re h(xi)) over a direction/radius scan.

    Raises NotStronglyElliptic when the principal minimum is <= refine_tol.
    """
    directions = _sphere_lattice(spec.d, sphere_resolution)
    vals = principal_form(spec, directions)
    j = int(np.argmin(vals))
    witness, mu = _refine_on_sphere(spec, directions[j], refine_tol)
    mu = min(mu, float(vals[j]))

    abs_principal = np.abs(
        sum(
            c * np.prod([directions[:, k - 1] for k in a], axis=0)
            for a, c in spec.principal.items()
        )
    )
    principal_nonvanishing = bool(np.min(abs_principal) > refine_tol)

    if mu <= refine_tol:
        raise NotStronglyElliptic(
            f"principal form attains {mu:.3e} at xi={witness}",
            witness=witness, minimum=mu,
        )

    lam = lambda_fraction * mu
    # Coarser direction set for the radial omega scan; refinement happens
    # per direction in radius.
    step = max(1, len(directions) // 64)
    omega = _omega_scan(spec, lam, directions[::step])
    if omega > 0.0:
        omega *= 1.0 + 1e-6  # slack against scan discretization

    return EllipticityReport(
        mu=mu, lam=lam, omega=omega,
        is_strongly_elliptic=True,
        witness_xi=witness,
        principal_nonvanishing=principal_nonvanishing,
    )


def formal_adjoint(spec):
    """Adjoint coefficients c(alpha)^† = (-1)^|alpha| conj(c(reversed alpha))."""
    coeffs = {}
    for alpha, c in spec.coeffs.items():
        adj = tuple(reversed(alpha))
        coeffs[adj] = coeffs.get(adj, 0.0) + (-1.0) ** len(alpha) * np.conj(c)
    return EllipticOperatorSpec(d=spec.d, m=spec.m, coeffs=coeffs)


def real_part(spec):
    """(H + H†)/2, the symmetric part of the operator."""
    adj = formal_adjoint(spec)
    coeffs = dict(spec.coeffs)
    for alpha, c in adj.coeffs.items():
        coeffs[alpha] = coeffs.get(alpha, 0.0) + c
    coeffs = {a: c / 2.0 for a, c in coeffs.items()}
    return EllipticOperatorSpec(d=spec.d, m=spec.m, coeffs=coeffs)


def compose_abelian(spec1, spec2):
    """Spec whose symbol is the product h1 * h2 (commuting coefficients).

    ``spec2`` may be a bare coefficient mapping (e.g. the composition unit
    {(): 1.0}), in which case its order contribution is the longest index.
    """
    if isinstance(spec2, EllipticOperatorSpec):
        if spec1.d != spec2.d:
            raise ValueError("dimension mismatch")
        coeffs2, m2 = spec2.coeffs, spec2.m
    else:
        coeffs2 = {validate_multiindex(a, spec1.d): complex(c)
                   for a, c in spec2.items()}
        m2 = max((len(a) for a in coeffs2), default=0)
    coeffs = {}
    for a1, c1 in spec1.coeffs.items():
        for a2, c2 in coeffs2.items():
            alpha = tuple(sorted(a1 + a2))
            coeffs[alpha] = coeffs.get(alpha, 0.0) + c1 * c2
    return EllipticOperatorSpec(d=spec1.d, m=spec1.m + m2, coeffs=coeffs)


def ordered_indices(d, k):
    """All ordered multi-indices of length k over coordinates 1..d."""
    return list(itertools.product(range(1, d + 1), repeat=k))


def unordered_indices(d, k):
    """Multisets of length k (sufficient for abelian symbols)."""
    return list(itertools.combinations_with_replacement(range(1, d + 1), k))
