import numpy as np
import pytest

from spdelab.basis import SpectralField, dirichlet_interval
from spdelab.forms import PolyVectorField
from spdelab.malliavin import (
    MalliavinMatrix,
    assemble_adjoint,
    assemble_forward,
    inf_cone,
    smallball,
    spectrum,
    wilson_interval,
)
from spdelab.models import rd_preset
from spdelab.sde import SpdeConfig, coarsen_path, sample_wiener
from spdelab.variational import build_bundle


def linear_bundle(K=6, nu=0.2, steps=1024, seed=0, g=None):
    basis = dirichlet_interval(K, nu)
    drift = PolyVectorField(basis, linear="neg_L")
    G = np.zeros((K, 1))
    G[:, 0] = np.linspace(1.0, 0.4, K) if g is None else g
    cfg = SpdeConfig(basis, drift, G, steps=steps)
    W = sample_wiener(1, 1.0, steps, seed=seed)
    return build_bundle(cfg, SpectralField.zero(basis), W), cfg


def rd_bundle(steps=512, seed=0, K=8):
    preset = rd_preset(K=K, nu=0.05)
    cfg = SpdeConfig(
        preset["basis"], preset["drift"], preset["G"], steps=steps,
        pointwise=preset["pointwise"],
    )
    u0 = SpectralField(cfg.basis, 0.4 * np.linspace(1, 0.2, K))
    W = sample_wiener(cfg.d, 1.0, steps, seed=seed)
    return build_bundle(cfg, u0, W), cfg


def test_zero_forcing_gives_zero_matrix():
    basis = dirichlet_interval(4, 1.0)
    drift = PolyVectorField(basis, linear="neg_L")
    cfg = SpdeConfig(basis, drift, np.zeros((4, 1)), steps=64)
    bundle = build_bundle(cfg, SpectralField.zero(basis), sample_wiener(1, 1.0, 64, 0))
    M = assemble_forward(bundle, np.eye(4))
    assert np.all(M.entries == 0)
    M2 = assemble_adjoint(bundle, np.eye(4))
    assert np.all(M2.entries == 0)


def test_linear_closed_form_entries():
    bundle, cfg = linear_bundle(steps=4096)
    lam = cfg.basis.eigenvalues
    g = cfg.G[:, 0]
    M = assemble_forward(bundle, np.eye(cfg.basis.dim))
    diag_expect = g**2 * (1 - np.exp(-2 * lam)) / (2 * lam)
    assert np.abs(np.diag(M.entries) / diag_expect - 1).max() < 0.02
    # off-diagonal closed form: g_i g_j (1 - exp(-(lam_i+lam_j)T))/(lam_i+lam_j)
    i, j = 0, 3
    expect = g[i] * g[j] * (1 - np.exp(-(lam[i] + lam[j]))) / (lam[i] + lam[j])
    assert M.entries[i, j] == pytest.approx(expect, rel=0.02)


def test_representations_agree_linear_exactly():
    bundle, cfg = linear_bundle(steps=512)
    psis = np.eye(cfg.basis.dim)[:3]
    Mf = assemble_forward(bundle, psis)
    Ma = assemble_adjoint(bundle, psis)
    denom = np.linalg.norm(Mf.entries)
    assert np.linalg.norm(Mf.entries - Ma.entries) < 1e-12 * denom


def test_representations_first_order_difference_nonlinear():
    preset = rd_preset(K=8, nu=0.05)
    u0 = SpectralField(preset["basis"], 0.4 * np.linspace(1, 0.2, 8))
    fine = sample_wiener(2, 1.0, 2048, seed=3)
    diffs = {}
    for steps in (512, 1024):
        cfg = SpdeConfig(
            preset["basis"], preset["drift"], preset["G"], steps=steps,
            pointwise=preset["pointwise"],
        )
        bundle = build_bundle(cfg, u0, coarsen_path(fine, 2048 // steps))
        psis = np.eye(cfg.basis.dim)[:4]
        Mf = assemble_forward(bundle, psis)
        Ma = assemble_adjoint(bundle, psis)
        diffs[steps] = np.linalg.norm(Mf.entries - Ma.entries) / np.linalg.norm(Mf.entries)
    assert 0.4 < diffs[1024] / diffs[512] < 0.7


def test_psd_and_projection_consistency():
    bundle, cfg = rd_bundle(steps=512, seed=5)
    dim = cfg.basis.dim
    M = assemble_forward(bundle, np.eye(dim))
    vals, _ = spectrum(M)
    assert vals.min() >= -1e-10 * np.abs(M.entries).max()
    # sub-basis matrix equals the principal submatrix
    sub = assemble_forward(bundle, np.eye(dim)[:3])
    assert np.allclose(sub.entries, M.entries[:3, :3], atol=1e-13)


def test_quadrature_node_monotonicity():
    bundle, cfg = rd_bundle(steps=256, seed=7)
    psis = np.eye(cfg.basis.dim)[:4]
    M_half = assemble_forward(bundle, psis, node_slice=slice(0, 128))
    M_full = assemble_forward(bundle, psis)
    rng = np.random.default_rng(0)
    for _ in range(5):
        phi = rng.standard_normal(4)
        assert phi @ M_full.entries @ phi >= phi @ M_half.entries @ phi - 1e-15


def test_probe_validation():
    bundle, cfg = rd_bundle(steps=128)
    with pytest.raises(ValueError):
        assemble_forward(bundle, np.ones((2, cfg.basis.dim)))


def test_spectrum_contracts():
    vals, vecs = spectrum(np.eye(3))
    assert np.allclose(vals, 1.0)
    vals, _ = spectrum(np.diag([1.0, 2.0, 3.0]))
    assert np.allclose(vals, [1, 2, 3])
    rng = np.random.default_rng(1)
    A = rng.standard_normal((8, 8))
    A = A + A.T
    vals, vecs = spectrum(A)
    recon = vecs @ np.diag(vals) @ vecs.T
    assert np.linalg.norm(recon - A) <= 1e-10 * np.linalg.norm(A)
    with pytest.raises(ValueError):
        spectrum(rng.standard_normal((4, 4)))


def test_inf_cone_full_projection_is_rayleigh():
    M = np.diag([0.5, 2.0, 5.0])
    val, arg = inf_cone(M, np.eye(3), delta=0.5)
    assert val == pytest.approx(0.5, abs=1e-9)
    assert abs(arg[0]) == pytest.approx(1.0, abs=1e-6)


def test_inf_cone_forced_axis():
    M = np.diag([1.0, 10.0])
    val, arg = inf_cone(M, np.array([[0.0, 1.0]]), delta=1.0)
    assert val == pytest.approx(10.0, abs=1e-8)
    # delta = 1 pins the argmin to the projected axis
    assert abs(arg[1]) == pytest.approx(1.0, abs=1e-6)


def test_inf_cone_bounded_by_projected_minimum():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 6))
    M = A @ A.T
    P = np.linalg.qr(rng.standard_normal((6, 2)))[0].T
    val, _ = inf_cone(M, P, delta=1.0)
    sub = P @ M @ P.T
    lam_min = np.linalg.eigvalsh(sub).min()
    assert val <= lam_min + 1e-8


def test_inf_cone_delta_validation():
    with pytest.raises(ValueError):
        inf_cone(np.eye(2), np.eye(2), delta=1.5)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo < 1e-12 and hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_smallball_linear_deterministic_floor():
    # full forcing, linear drift: the quadratic form has a deterministic
    # minimum; empirical probabilities vanish below it
    basis = dirichlet_interval(4, 0.3)
    drift = PolyVectorField(basis, linear="neg_L")
    G = np.eye(4)
    cfg = SpdeConfig(basis, drift, G, steps=256)

    def make(r):
        return build_bundle(cfg, SpectralField.zero(basis), sample_wiener(4, 1.0, 256, seed=r))

    lam = basis.eigenvalues
    floor = ((1 - np.exp(-2 * lam)) / (2 * lam) / lam**2).min()  # weighted coords
    out = smallball(make, np.eye(4), delta=0.5, eps_grid=[floor / 2, floor / 4],
                    replicas=8, weights=lam)
    assert all(r["count"] == 0 for r in out["rows"])
    ps = [r["p_hat"] for r in out["rows"]]
    assert all(ps[i] >= ps[i + 1] for i in range(len(ps) - 1))
