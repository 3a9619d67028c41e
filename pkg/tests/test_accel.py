import numpy as np
import pytest

from heatlands import _accel
from heatlands.liegroup import builtin_model

HEIS = builtin_model("heisenberg3")
AFF = builtin_model("affine2")


def _random_setup(rng, model, n):
    d = model.d
    ax = (np.arange(n) - n // 2) * 0.25
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
    r2 = np.sum(mesh**2, axis=-1)
    psi = np.exp(-2.0 * r2) * (1.0 + 0.2j * mesh[..., 0])
    S = 40
    ys = rng.uniform(-0.8, 0.8, size=(S, d))
    w = rng.standard_normal(S) + 1j * rng.standard_normal(S)
    return psi, ys, w


def test_backends_agree_heisenberg(monkeypatch):
    rng = np.random.default_rng(0)
    n = 16
    psi, ys, w = _random_setup(rng, HEIS, n)
    monkeypatch.setenv("HEATLANDS_BACKEND", "numpy")
    a = _accel.group_convolve(psi, n, 0.25, ys, w, HEIS)
    monkeypatch.setenv("HEATLANDS_BACKEND", "numba")
    b = _accel.group_convolve(psi, n, 0.25, ys, w, HEIS)
    assert np.max(np.abs(a - b)) < 1e-10 * max(np.max(np.abs(a)), 1.0)


def test_abelian_convolution_matches_direct_sum():
    model = builtin_model("euclid", d=1)
    n = 32
    h = 0.25
    ax = (np.arange(n) - n // 2) * h
    psi = np.exp(-(ax**2)).astype(complex)
    ys = np.array([[0.5], [-0.25]])
    w = np.array([2.0 + 0.0j, 1.0j])
    out = _accel.group_convolve(psi, n, h, ys, w, model)
    want = 2.0 * np.exp(-((ax - 0.5) ** 2)) + 1j * np.exp(-((ax + 0.25) ** 2))
    inner = np.abs(ax) < 3.0
    assert np.max(np.abs(out - want)[inner]) < 1e-3  # linear-interp error


def test_affine_uses_numpy_and_respects_bch():
    assert not _accel.numba_applicable(AFF)
    assert _accel.resolve_backend(AFF) == "numpy"
    n = 16
    h = 0.25
    ax = (np.arange(n) - n // 2) * h
    mesh = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
    psi = np.exp(-4.0 * np.sum(mesh**2, axis=-1)).astype(complex)
    y = np.array([[0.4, -0.2]])
    w = np.array([1.0 + 0.0j])
    out = _accel.group_convolve(psi, n, h, y, w, AFF)
    # oracle at a probe point: psi(bch(-y, x))
    i, j = 10, 6
    x = np.array([ax[i], ax[j]])
    z = AFF.bch(-y[0], x)
    # separate the product from the interpolation: compare against the
    # interpolated field at the exact displaced point
    want = _accel.interp_linear(psi, n, h, z)
    assert out[i, j].real == pytest.approx(float(want.real), abs=1e-12)
    assert out[i, j].real == pytest.approx(float(np.exp(-4.0 * np.sum(z**2))), abs=0.05)


def test_swapped_sources_give_same_convolution(monkeypatch):
    # For a unimodular group the convolution can source from either factor:
    # sum_y phi(y) psi(bch(-y, x)) == sum_y psi(y) phi(bch(x, -y)).
    n = 16
    h = 0.3
    ax = (np.arange(n) - n // 2) * h
    mesh = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    r2 = np.sum(mesh**2, axis=-1)
    phi = np.exp(-3.0 * r2) * (1.0 + 0.5 * mesh[..., 1])
    psi = np.exp(-2.0 * np.sum((mesh - 0.1) ** 2, axis=-1))
    pts = mesh.reshape(-1, 3)
    keep_phi = np.abs(phi.reshape(-1)) > 1e-4
    keep_psi = np.abs(psi.reshape(-1)) > 1e-4
    w_phi = phi.reshape(-1)[keep_phi].astype(complex) * h**3
    w_psi = psi.reshape(-1)[keep_psi].astype(complex) * h**3
    for backend in ("numba", "numpy"):
        monkeypatch.setenv("HEATLANDS_BACKEND", backend)
        a = _accel.group_convolve(
            psi.astype(complex), n, h, pts[keep_phi], w_phi, HEIS
        )
        b = _accel.group_convolve(
            phi.astype(complex), n, h, pts[keep_psi], w_psi, HEIS, swapped=True
        )
        inner = r2 < 1.0
        scale = np.max(np.abs(a))
        assert np.max(np.abs(a - b)[inner]) < 0.02 * scale


def test_rmax_masks_far_output(monkeypatch):
    rng = np.random.default_rng(1)
    n = 16
    psi, ys, w = _random_setup(rng, HEIS, n)
    out = _accel.group_convolve(psi, n, 0.25, ys, w, HEIS, rmax=1.0)
    ax = (np.arange(n) - n // 2) * 0.25
    mesh = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    far = np.linalg.norm(mesh, axis=-1) > 1.0
    assert np.all(out[far] == 0.0)
    assert np.any(out[~far] != 0.0)


def test_numba_backend_rejected_for_nonnilpotent(monkeypatch):
    monkeypatch.setenv("HEATLANDS_BACKEND", "numba")
    with pytest.raises(ValueError):
        _accel.resolve_backend(AFF)


def test_bad_backend_name(monkeypatch):
    monkeypatch.setenv("HEATLANDS_BACKEND", "cuda")
    with pytest.raises(ValueError):
        _accel.requested_backend()
