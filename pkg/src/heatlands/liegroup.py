"""Lie group chart machinery: BCH products, Haar density, vector fields.

A group is modelled in exponential coordinates of the first kind on a chart
ball.  The algebra is given by its structure tensor c[i, j, k] with
``[a_i, a_j] = sum_k c[i,j,k] a_k`` (zero-based storage, one-based JSON).
All maps below act on chart coordinate arrays of shape (..., d).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import (
    ChartDegenerate,
    EffectiveOrderViolation,
    OutsideChart,
    TruncationOverflow,
)

STRUCTURE_TOL = 1e-12
BCH_MAX_ORDER = 6
_SERIES_TERMS = 40


@lru_cache(maxsize=None)
def _bernoulli(n):
    return tuple(special.bernoulli(n))


@dataclass(frozen=True)
class LieAlgebraSpec:
    """Finite-dimensional real Lie algebra given by its structure tensor."""

    d: int
    structure: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.structure, dtype=float)
        if c.shape != (self.d, self.d, self.d):
            raise ValueError("structure tensor must have shape (d, d, d)")
        if np.max(np.abs(c + np.swapaxes(c, 0, 1))) > STRUCTURE_TOL:
            raise ValueError("structure tensor is not antisymmetric")
        # Jacobi: sum_cyc c[i,j,m] c[m,k,l] = 0
        jac = (
            np.einsum("ijm,mkl->ijkl", c, c)
            + np.einsum("jkm,mil->ijkl", c, c)
            + np.einsum("kim,mjl->ijkl", c, c)
        )
        if np.max(np.abs(jac)) > STRUCTURE_TOL:
            raise ValueError("structure tensor violates the Jacobi identity")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "structure", c)

    def bracket(self, u, v):
        """[u, v], batched over leading axes of shape (..., d)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.einsum("...i,...j,ijk->...k", u, v, self.structure)

    def adjoint(self, x):
        """Matrix of ad_{a_x}: A[k, j] = sum_i x_i c[i, j, k], batched."""
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ijk->...kj", x, self.structure)

    def nilpotency_step(self):
        """Length of the lower central series, or None if not nilpotent."""
        span = np.eye(self.d)
        for step in range(1, self.d + 1):
            brackets = np.einsum("ijk,pj->ipk", self.structure, span)
            flat = brackets.reshape(-1, self.d)
            rank = np.linalg.matrix_rank(flat, tol=1e-10)
            if rank == 0:
                return step
            # orthonormal basis of the new span
            _, s, vt = np.linalg.svd(flat)
            span = vt[: rank]
        return None

    def is_abelian(self):
        return bool(np.max(np.abs(self.structure)) == 0.0)


def bch_product(algebra, u, v, order):
    """Truncated Baker-Campbell-Hausdorff product log(exp u exp v).

    Uses the graded recursion
    ``(n+1) z_{n+1} = 1/2 [u - v, z_n]
      + sum_{2p <= n} B_{2p}/(2p)! sum_{k_1+..+k_{2p}=n} ad z_{k_1} .. ad z_{k_2p} (u+v)``
    summed to the requested order.  Exact for nilpotent algebras once the
    order reaches the nilpotency step.
    """
    if not (1 <= order <= BCH_MAX_ORDER):
        raise TruncationOverflow(
            f"product order {order} outside the implemented range 1..{BCH_MAX_ORDER}"
        )
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    if algebra.is_abelian():
        return u + v
    bern = _bernoulli(order)
    z = [None, u + v]  # z[n] is the order-n part
    w = u - v
    total = u + v
    for n in range(1, order):
        term = 0.5 * algebra.bracket(w, z[n])
        for p in range(1, n // 2 + 1):
            coeff = bern[2 * p] / math.factorial(2 * p)
            if coeff == 0.0:
                continue
            for ks in _compositions(n, 2 * p):
                nested = u + v
                for k in reversed(ks):
                    nested = algebra.bracket(z[k], nested)
                term = term + coeff * nested
        zn1 = term / (n + 1)
        z.append(zn1)
        total = total + zn1
    return total


@lru_cache(maxsize=None)
def _compositions(n, parts):
    """All tuples of ``parts`` positive integers summing to n."""
    if parts == 1:
        return ((n,),)
    out = []
    for first in range(1, n - parts + 2):
        for rest in _compositions(n - first, parts - 1):
            out.append((first,) + rest)
    return tuple(out)


def _matrix_series(A, coeffs):
    """sum_k coeffs[k] A^k for batched square matrices."""
    d = A.shape[-1]
    eye = np.broadcast_to(np.eye(d), A.shape).copy()
    out = coeffs[0] * eye
    P = eye
    for c in coeffs[1:]:
        P = P @ A
        if c != 0.0:
            out = out + c * P
        if np.max(np.abs(P)) == 0.0:
            break
    return out


@dataclass(frozen=True)
class GroupModel:
    """Chart model of a Lie group: algebra, chart ball, product truncation."""

    algebra: LieAlgebraSpec
    chart_radius: float
    bch_order: int
    name: str = "custom"

    def __post_init__(self):
        if self.chart_radius <= 0:
            raise ValueError("chart radius must be positive")
        if self.chart_radius >= 2 * np.pi:
            raise ValueError("chart radius must stay below 2*pi for the series maps")
        if not (1 <= self.bch_order <= BCH_MAX_ORDER):
            raise TruncationOverflow(
                f"bch_order {self.bch_order} outside 1..{BCH_MAX_ORDER}"
            )

    @property
    def d(self):
        return self.algebra.d

    def bch(self, u, v):
        return bch_product(self.algebra, u, v, self.bch_order)

    def inverse(self, x):
        return -np.asarray(x, dtype=float)

    def chart_modulus(self, x):
        return np.linalg.norm(np.asarray(x, dtype=float), axis=-1)

    def require_in_chart(self, x):
        r = self.chart_modulus(x)
        if np.max(r) > self.chart_radius * (1 + 1e-12):
            raise OutsideChart(
                f"point at radius {float(np.max(r)):.4f} exceeds the chart "
                f"ball of radius {self.chart_radius}"
            )

    def haar_density(self, x):
        """Left Haar density in chart coordinates: |det (1 - e^{-A})/A|."""
        A = self.algebra.adjoint(x)
        coeffs = [(-1.0) ** k / math.factorial(k + 1) for k in range(_SERIES_TERMS)]
        J = _matrix_series(A, coeffs)
        det = np.abs(np.linalg.det(J))
        if np.min(det) < 1e-14:
            raise ChartDegenerate("Haar density vanishes on the requested points")
        return det

    def modular_function(self, x):
        """Delta(exp a_x) = exp(-tr ad a_x)."""
        A = self.algebra.adjoint(x)
        return np.exp(-np.trace(A, axis1=-2, axis2=-1))

    def vector_field_coeffs(self, x):
        """Coefficients of the fields X_k = sum_l v[..., l, k] d_l.

        v(x) = -psi(ad a_x) with psi(z) = z/(e^z - 1); X_k(0) = -d_k.
        """
        A = self.algebra.adjoint(x)
        bern = _bernoulli(_SERIES_TERMS)
        coeffs = [bern[k] / math.factorial(k) for k in range(_SERIES_TERMS)]
        return -_matrix_series(A, coeffs)

    def cutoff(self, x, plateau_fraction=0.5):
        """Smooth bump: 1 inside the plateau ball, 0 outside the chart ball."""
        r = self.chart_modulus(x)
        p = plateau_fraction * self.chart_radius
        s = np.clip((r - p) / (self.chart_radius - p), 0.0, 1.0)
        return _smoothstep(1.0 - s)

    def to_json(self):
        entries = []
        c = self.algebra.structure
        for i in range(self.d):
            for j in range(i + 1, self.d):
                for k in range(self.d):
                    if c[i, j, k] != 0.0:
                        entries.append(
                            {"i": i + 1, "j": j + 1, "k": k + 1, "c": c[i, j, k]}
                        )
        doc = {
            "d": self.d,
            "structure": entries,
            "chart_radius": self.chart_radius,
            "bch_order": self.bch_order,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _smoothstep(s):
    """C^infinity transition: 0 at s<=0, 1 at s>=1, flat at both ends."""
    s = np.asarray(s, dtype=float)

    def f(u):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)

    a = f(s)
    b = f(1.0 - s)
    return a / (a + b)


def model_from_json(text):
    doc = json.loads(text)
    d = int(doc["d"])
    c = np.zeros((d, d, d))
    for entry in doc["structure"]:
        i, j, k = entry["i"] - 1, entry["j"] - 1, entry["k"] - 1
        c[i, j, k] = entry["c"]
        c[j, i, k] = -entry["c"]
    return GroupModel(
        algebra=LieAlgebraSpec(d=d, structure=c),
        chart_radius=float(doc["chart_radius"]),
        bch_order=int(doc.get("bch_order", BCH_MAX_ORDER)),
        name=str(doc.get("name", "custom")),
    )


def builtin_model(name, d=1, chart_radius=None):
    """Built-in group models: "euclid", "heisenberg3", "affine2"."""
    if name == "euclid":
        c = np.zeros((d, d, d))
        return GroupModel(
            algebra=LieAlgebraSpec(d=d, structure=c),
            chart_radius=chart_radius or 6.0,
            bch_order=1,
            name="euclid",
        )
    if name == "heisenberg3":
        c = np.zeros((3, 3, 3))
        c[0, 1, 2] = 1.0
        c[1, 0, 2] = -1.0
        return GroupModel(
            algebra=LieAlgebraSpec(d=3, structure=c),
            chart_radius=chart_radius or 3.4,
            bch_order=2,
            name="heisenberg3",
        )
    if name == "affine2":
        c = np.zeros((2, 2, 2))
        c[0, 1, 1] = 1.0
        c[1, 0, 1] = -1.0
        return GroupModel(
            algebra=LieAlgebraSpec(d=2, structure=c),
            chart_radius=chart_radius or 2.5,
            bch_order=6,
            name="affine2",
        )
    raise ValueError(f"unknown built-in group model {name!r}")


_COEFF_CACHE = {}


def lattice_field_coeffs(model, grid):
    """Vector-field coefficient tensor on a lattice, cached per model/grid."""
    key = (id(model), grid.d, grid.n, grid.spacing)
    if key not in _COEFF_CACHE:
        _COEFF_CACHE[key] = model.vector_field_coeffs(
            np.stack(grid.points(), axis=-1)
        )
    return _COEFF_CACHE[key]


def apply_vector_field(model, grid, values, k):
    """(X_k f) on the chart lattice, with spectral coordinate derivatives."""
    return _apply_with_coeffs(grid, values, lattice_field_coeffs(model, grid), k)


def _apply_with_coeffs(grid, values, coeffs, k):
    vhat = np.fft.fftn(np.fft.ifftshift(np.asarray(values, dtype=complex)))
    mesh = grid.freq_mesh()
    out = np.zeros((grid.n,) * grid.d, dtype=complex)
    for l in range(grid.d):
        cl = coeffs[..., l, k]
        if np.max(np.abs(cl)) == 0.0:
            continue
        dl = np.fft.fftshift(np.fft.ifftn(1j * mesh[l] * vhat))
        out += cl * dl
    return out


def apply_group_operator(model, spec, grid, values):
    """Apply H^ = sum c_alpha X^alpha on the chart lattice."""
    values = np.asarray(values, dtype=complex)
    cache = {(): values}

    def word(alpha):
        if alpha in cache:
            return cache[alpha]
        head, tail = alpha[0], alpha[1:]
        inner = word(tail)
        cache[alpha] = apply_vector_field(model, grid, inner, head - 1)
        return cache[alpha]

    out = np.zeros_like(values)
    for alpha, c in spec.coeffs.items():
        out = out + c * word(alpha)
    return out


def apply_frozen_operator(spec, grid, values):
    """Apply the frozen constant-coefficient part H0 = sum c_alpha (-d)^alpha."""
    vhat = np.fft.fftn(np.fft.ifftshift(np.asarray(values, dtype=complex)))
    mesh = grid.freq_mesh()
    mult = np.zeros((grid.n,) * grid.d, dtype=complex)
    for alpha, c in spec.coeffs.items():
        mono = np.full((grid.n,) * grid.d, c, dtype=complex)
        for k in alpha:
            mono = mono * (1j * mesh[k - 1])
        mult = mult + mono
    return np.fft.fftshift(np.fft.ifftn(mult * vhat))


def split_operator(model, spec, tol=1e-10):
    """Certify the frozen/remainder splitting of H^ on the model.

    The frozen part H0 has the same coefficients as ``spec`` read as a
    constant-coefficient operator; the remainder H1 = H^ - H0 must have
    coefficients vanishing at the identity.  That holds exactly when the
    vector fields satisfy X_k(0) = -d_k, which is checked here.

    Returns a pair of callables ``(apply_h0, apply_h1)`` over (grid, values).
    """
    if spec.d != model.d:
        raise ValueError("operator/model dimension mismatch")
    v0 = model.vector_field_coeffs(np.zeros(model.d))
    if np.max(np.abs(v0 + np.eye(model.d))) > tol:
        raise EffectiveOrderViolation(
            "vector-field coefficients at the identity deviate from -I; "
            "the remainder would carry a zero-order defect"
        )

    def apply_h0(grid, values):
        return apply_frozen_operator(spec, grid, values)

    def apply_h1(grid, values):
        return apply_group_operator(model, spec, grid, values) - apply_frozen_operator(
            spec, grid, values
        )

    return apply_h0, apply_h1
