"""Backend selection and hot loops for lattice group convolution.

The group convolution ``out(x) = sum_y w(y) psi(bch(-y, x))`` over a chart
lattice is the innermost loop of the parametrix recursion.  Two backends
implement it:

* ``numba``: parallel jitted triple loop with the step-2 nilpotent product
  fused in (exact for abelian and Heisenberg-type models);
* ``numpy``: batched vectorized evaluation through the model's full BCH
  series plus linear interpolation (works for every model).

``HEATLANDS_BACKEND`` forces a choice ("numba" or "numpy"); by default numba
is used when importable and applicable.  ``HEATLANDS_THREADS`` caps the
numba thread pool.

Source points and the interpolated field may live on different lattices:
the caller passes the interpolation lattice of ``psi`` separately from the
output lattice.  The ``swapped`` flag evaluates
``out(x) = sum_y w(y) psi_target(bch(x, -y))`` instead, which is the
source-swapped form of the convolution (the modular factor belongs in the
weights and is the caller's responsibility).
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

_NUMBA_KERNELS = None


def requested_backend():
    choice = os.environ.get("HEATLANDS_BACKEND", "auto").strip().lower()
    if choice in ("numba", "numpy", "auto"):
        return choice
    raise ValueError(f"HEATLANDS_BACKEND={choice!r}; expected numba or numpy")


def thread_cap():
    threads = os.environ.get("HEATLANDS_THREADS")
    return max(1, int(threads)) if threads else None


def _load_numba():
    """Compile the jitted kernels once, honoring the thread cap."""
    global _NUMBA_KERNELS
    if _NUMBA_KERNELS is not None:
        return _NUMBA_KERNELS
    import numba
    from numba import njit, prange

    cap = thread_cap()
    if cap:
        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))

    @njit(cache=True, parallel=True)
    def conv3(psi, hp, np_, h, n, ys, w, c, bsign, rmax2, out):
        half = n // 2
        halfp = np_ // 2
        S = ys.shape[0]
        for flat in prange(n * n * n):
            i = flat // (n * n)
            j = (flat // n) % n
            k = flat % n
            x1 = (i - half) * h
            x2 = (j - half) * h
            x3 = (k - half) * h
            if x1 * x1 + x2 * x2 + x3 * x3 > rmax2:
                continue
            acc = 0.0 + 0.0j
            for s in range(S):
                y1 = ys[s, 0]
                y2 = ys[s, 1]
                y3 = ys[s, 2]
                # bracket [-y, x] contracted against the structure tensor
                b1 = 0.0
                b2 = 0.0
                b3 = 0.0
                for a in range(3):
                    ya = -ys[s, a]
                    if ya == 0.0:
                        continue
                    b1 += ya * (c[a, 0, 0] * x1 + c[a, 1, 0] * x2 + c[a, 2, 0] * x3)
                    b2 += ya * (c[a, 0, 1] * x1 + c[a, 1, 1] * x2 + c[a, 2, 1] * x3)
                    b3 += ya * (c[a, 0, 2] * x1 + c[a, 1, 2] * x2 + c[a, 2, 2] * x3)
                z1 = x1 - y1 + bsign * b1
                z2 = x2 - y2 + bsign * b2
                z3 = x3 - y3 + bsign * b3
                f1 = z1 / hp + halfp
                f2 = z2 / hp + halfp
                f3 = z3 / hp + halfp
                # points outside [0, n-1] read 0; the edge sample itself
                # interpolates exactly (matching the numpy backend)
                if (
                    f1 < 0.0
                    or f2 < 0.0
                    or f3 < 0.0
                    or f1 > np_ - 1
                    or f2 > np_ - 1
                    or f3 > np_ - 1
                ):
                    continue
                i0 = min(int(np.floor(f1)), np_ - 2)
                j0 = min(int(np.floor(f2)), np_ - 2)
                k0 = min(int(np.floor(f3)), np_ - 2)
                t1 = f1 - i0
                t2 = f2 - j0
                t3 = f3 - k0
                v = (
                    psi[i0, j0, k0] * (1 - t1) * (1 - t2) * (1 - t3)
                    + psi[i0 + 1, j0, k0] * t1 * (1 - t2) * (1 - t3)
                    + psi[i0, j0 + 1, k0] * (1 - t1) * t2 * (1 - t3)
                    + psi[i0, j0, k0 + 1] * (1 - t1) * (1 - t2) * t3
                    + psi[i0 + 1, j0 + 1, k0] * t1 * t2 * (1 - t3)
                    + psi[i0 + 1, j0, k0 + 1] * t1 * (1 - t2) * t3
                    + psi[i0, j0 + 1, k0 + 1] * (1 - t1) * t2 * t3
                    + psi[i0 + 1, j0 + 1, k0 + 1] * t1 * t2 * t3
                )
                acc += w[s] * v
            out[i, j, k] = acc

    @njit(cache=True, parallel=True)
    def conv3_central(psi, hp, np_, h, n, ys, w, c, bsign, rmax2, out):
        # Specialization for structure tensors whose only brackets feed the
        # last axis from the first two ([a_i, a_j] ~ a_3): the displaced
        # first two coordinates are constant along an x3 row, so the 2-D
        # interpolation stencil can be combined once per row.
        half = n // 2
        halfp = np_ // 2
        S = ys.shape[0]
        dh = h / hp
        for i in prange(n):
            x1 = (i - half) * h
            if x1 * x1 > rmax2:
                continue
            col = np.empty(np_, dtype=np.complex128)
            for j in range(n):
                x2 = (j - half) * h
                rho2 = x1 * x1 + x2 * x2
                if rho2 > rmax2:
                    continue
                klim = int(np.sqrt(rmax2 - rho2) / h)
                klo = max(0, half - klim)
                khi = min(n, half + klim + 1)
                for s in range(S):
                    y1 = ys[s, 0]
                    y2 = ys[s, 1]
                    y3 = ys[s, 2]
                    f1 = (x1 - y1) / hp + halfp
                    f2 = (x2 - y2) / hp + halfp
                    # points outside [0, n-1] read 0; the edge sample itself
                    # interpolates exactly (matching the numpy backend)
                    if f1 < 0.0 or f2 < 0.0 or f1 > np_ - 1 or f2 > np_ - 1:
                        continue
                    i0 = min(int(np.floor(f1)), np_ - 2)
                    j0 = min(int(np.floor(f2)), np_ - 2)
                    t1 = f1 - i0
                    t2 = f2 - j0
                    c00 = (1 - t1) * (1 - t2)
                    c10 = t1 * (1 - t2)
                    c01 = (1 - t1) * t2
                    c11 = t1 * t2
                    p1 = bsign * (-y1 * c[0, 0, 2] - y2 * c[1, 0, 2])
                    p2 = bsign * (-y1 * c[0, 1, 2] - y2 * c[1, 1, 2])
                    off = -y3 + p1 * x1 + p2 * x2
                    f3 = ((klo - half) * h + off) / hp + halfp
                    # range of psi columns the row can touch
                    m0 = int(np.floor(f3))
                    m1 = int(np.floor(f3 + (khi - klo) * dh)) + 1
                    if m0 < 0:
                        m0 = 0
                    if m1 > np_ - 1:
                        m1 = np_ - 1
                    if m0 > m1:
                        continue
                    for m in range(m0, m1 + 1):
                        col[m] = (
                            psi[i0, j0, m] * c00
                            + psi[i0 + 1, j0, m] * c10
                            + psi[i0, j0 + 1, m] * c01
                            + psi[i0 + 1, j0 + 1, m] * c11
                        )
                    ws = w[s]
                    for k in range(klo, khi):
                        if 0.0 <= f3 <= np_ - 1:
                            k0 = min(int(np.floor(f3)), np_ - 2)
                            t3 = f3 - k0
                            v = 0.0 + 0.0j
                            if m0 <= k0 <= m1:
                                v += col[k0] * (1 - t3)
                            if m0 <= k0 + 1 <= m1:
                                v += col[k0 + 1] * t3
                            out[i, j, k] += ws * v
                        f3 += dh

    @njit(cache=True, parallel=True)
    def conv2(psi, hp, np_, h, n, ys, w, c, bsign, rmax2, out):
        half = n // 2
        halfp = np_ // 2
        S = ys.shape[0]
        for flat in prange(n * n):
            i = flat // n
            j = flat % n
            x1 = (i - half) * h
            x2 = (j - half) * h
            if x1 * x1 + x2 * x2 > rmax2:
                continue
            acc = 0.0 + 0.0j
            for s in range(S):
                b1 = 0.0
                b2 = 0.0
                for a in range(2):
                    ya = -ys[s, a]
                    if ya == 0.0:
                        continue
                    b1 += ya * (c[a, 0, 0] * x1 + c[a, 1, 0] * x2)
                    b2 += ya * (c[a, 0, 1] * x1 + c[a, 1, 1] * x2)
                z1 = x1 - ys[s, 0] + bsign * b1
                z2 = x2 - ys[s, 1] + bsign * b2
                f1 = z1 / hp + halfp
                f2 = z2 / hp + halfp
                # points outside [0, n-1] read 0; the edge sample itself
                # interpolates exactly (matching the numpy backend)
                if f1 < 0.0 or f2 < 0.0 or f1 > np_ - 1 or f2 > np_ - 1:
                    continue
                i0 = min(int(np.floor(f1)), np_ - 2)
                j0 = min(int(np.floor(f2)), np_ - 2)
                t1 = f1 - i0
                t2 = f2 - j0
                v = (
                    psi[i0, j0] * (1 - t1) * (1 - t2)
                    + psi[i0 + 1, j0] * t1 * (1 - t2)
                    + psi[i0, j0 + 1] * (1 - t1) * t2
                    + psi[i0 + 1, j0 + 1] * t1 * t2
                )
                acc += w[s] * v
            out[i, j] = acc

    @njit(cache=True, parallel=True)
    def conv1(psi, hp, np_, h, n, ys, w, c, bsign, rmax2, out):
        half = n // 2
        halfp = np_ // 2
        S = ys.shape[0]
        for i in prange(n):
            x1 = (i - half) * h
            if x1 * x1 > rmax2:
                continue
            acc = 0.0 + 0.0j
            for s in range(S):
                z1 = x1 - ys[s, 0]
                f1 = z1 / hp + halfp
                if f1 < 0.0 or f1 > np_ - 1:
                    continue
                i0 = min(int(np.floor(f1)), np_ - 2)
                t1 = f1 - i0
                acc += w[s] * (psi[i0] * (1 - t1) + psi[i0 + 1] * t1)
            out[i] = acc

    _NUMBA_KERNELS = {1: conv1, 2: conv2, 3: conv3, "3c": conv3_central}
    return _NUMBA_KERNELS


def central_structure(c):
    """True when all brackets feed only the last axis from earlier axes."""
    d = c.shape[0]
    if d < 3:
        return bool(np.all(c == 0.0))
    mask = np.zeros_like(c, dtype=bool)
    mask[: d - 1, : d - 1, d - 1] = True
    return bool(np.all(c[~mask] == 0.0))


def numba_applicable(model):
    """The fused product in the jitted kernels is exact only for nilpotent
    models of step at most 2 in dimension at most 3."""
    step = model.algebra.nilpotency_step()
    return step is not None and step <= 2 and model.d <= 3


def resolve_backend(model):
    choice = requested_backend()
    if choice == "numpy":
        return "numpy"
    if not numba_applicable(model):
        if choice == "numba":
            raise ValueError(
                "numba backend supports nilpotent models of step <= 2 only"
            )
        return "numpy"
    try:
        _load_numba()
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


def interp_linear(psi, n, spacing, pts):
    """Multilinear interpolation of a centered-lattice field at points (..., d)."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    coords = [pts[..., k].ravel() / spacing + n // 2 for k in range(d)]
    vals_re = ndimage.map_coordinates(psi.real, coords, order=1, cval=0.0)
    vals_im = ndimage.map_coordinates(psi.imag, coords, order=1, cval=0.0)
    return (vals_re + 1j * vals_im).reshape(pts.shape[:-1])


def _convolve_numpy(
    psi, n_psi, spacing_psi, ys, w, model, n_out, spacing_out, swapped, rmax, batch
):
    d = model.d
    ax = (np.arange(n_out) - n_out // 2) * spacing_out
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    X = np.stack(mesh, axis=-1).reshape(-1, d)
    out = np.zeros(X.shape[0], dtype=complex)
    live = np.linalg.norm(X, axis=-1) <= rmax
    S = ys.shape[0]
    bsize = max(1, batch // max(S, 1))
    idx = np.flatnonzero(live)
    for start in range(0, idx.size, bsize):
        sel = idx[start : start + bsize]
        xb = X[sel]
        if swapped:
            z = model.bch(xb[None, :, :], -ys[:, None, :])
        else:
            z = model.bch(-ys[:, None, :], xb[None, :, :])
        vals = interp_linear(psi, n_psi, spacing_psi, z)
        out[sel] = w @ vals
    return out.reshape((n_out,) * d)


def group_convolve(
    psi,
    n_psi,
    spacing_psi,
    ys,
    w,
    model,
    n_out=None,
    spacing_out=None,
    swapped=False,
    rmax=np.inf,
    batch=262144,
):
    """Lattice group convolution against point sources.

    Computes ``out(x) = sum_s w[s] psi(bch(-ys[s], x))`` (or with the product
    arguments swapped) on the output lattice.  ``psi`` is a complex field of
    shape (n_psi,)*d with lattice step ``spacing_psi``; quadrature weights,
    Haar density, and (in the swapped form) the inverse modular factor must
    already be folded into ``w``.  Points at radius beyond ``rmax`` are left
    at zero.
    """
    psi = np.ascontiguousarray(psi, dtype=complex)
    ys = np.ascontiguousarray(np.atleast_2d(ys), dtype=float)
    w = np.ascontiguousarray(w, dtype=complex)
    d = model.d
    if n_out is None:
        n_out = n_psi
    if spacing_out is None:
        spacing_out = spacing_psi
    if resolve_backend(model) == "numba":
        kernels = _load_numba()
        c = np.ascontiguousarray(model.algebra.structure)
        kern = kernels["3c"] if d == 3 and central_structure(c) else kernels[d]
        out = np.zeros((n_out,) * d, dtype=complex)
        bsign = -0.5 if swapped else 0.5
        # clamp to the lattice diameter so integer conversions stay in range
        rcap = min(float(rmax), d * n_out * spacing_out)
        rmax2 = rcap**2
        kern(psi, spacing_psi, n_psi, spacing_out, n_out, ys, w, c, bsign, rmax2, out)
        return out
    return _convolve_numpy(
        psi, n_psi, spacing_psi, ys, w, model, n_out, spacing_out, swapped,
        rmax, batch,
    )
