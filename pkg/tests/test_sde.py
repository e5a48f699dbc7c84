import numpy as np
import pytest

from spdelab.basis import SpectralField, dirichlet_interval, sobolev_norm
from spdelab.forms import MultilinearForm, PolyVectorField
from spdelab.models import rd_preset
from spdelab.sde import (
    SpdeConfig,
    coarsen_path,
    holder_constant,
    integrate,
    path_norms,
    sample_wiener,
    shifted_x,
)


def test_wiener_determinism_and_moments():
    w1 = sample_wiener(2, 1.0, 64, seed=42)
    w2 = sample_wiener(2, 1.0, 64, seed=42)
    assert np.array_equal(w1.increments, w2.increments)
    assert np.array_equal(w1.values[:, 0], np.zeros(2))

    finals = np.array([sample_wiener(1, 1.0, 2, seed=s).values[0, -1] for s in range(10_000)])
    assert abs(finals.mean()) < 3 * np.sqrt(1.0 / 10_000)
    # chi-square band: relative sd of the variance estimate is sqrt(2/n)
    assert abs(finals.var() - 1.0) < 5 * np.sqrt(2.0 / 10_000)


def test_wiener_zero_steps_rejected():
    with pytest.raises(ValueError):
        sample_wiener(1, 1.0, 0, seed=0)


def test_coarsen_matches_fine_nodes():
    w = sample_wiener(2, 1.0, 64, seed=7)
    c = coarsen_path(w, 4)
    assert c.steps == 16
    assert np.allclose(c.values, w.values[:, ::4])


def linear_cfg(K=6, nu=0.5, d=1, g=None, steps=512, scheme="exponential"):
    basis = dirichlet_interval(K, nu)
    drift = PolyVectorField(basis, linear="neg_L")
    G = np.zeros((K, d))
    if g is None:
        G[:, 0] = 1.0 / np.sqrt(K)
    else:
        G[:, 0] = g
    return SpdeConfig(basis, drift, G, steps=steps, scheme=scheme)


def test_heat_decay_exact_per_mode():
    cfg = linear_cfg(steps=128)
    basis = cfg.basis
    u0 = SpectralField(basis, np.linspace(1.0, 2.0, basis.dim))
    W = sample_wiener(1, 1.0, 128, seed=0)
    zero = WZero = sample_wiener(1, 1.0, 128, seed=0)
    W0 = type(W)(1, 1.0, 128, np.zeros((1, 128)))
    traj = integrate(cfg, u0, W0)
    expect = np.exp(-basis.eigenvalues * 1.0) * u0.coeffs
    assert np.abs(traj.states[-1] - expect).max() < 1e-13


def test_ou_variance_matches_closed_form():
    # vectorized replica recursion of the same one-step map
    K, steps, R = 6, 1024, 10_000
    cfg = linear_cfg(K=K, nu=0.5, steps=steps)
    lam = cfg.basis.eigenvalues
    decay, qn = cfg.stiff_factors()
    rng = np.random.default_rng(11)
    g = cfg.G[:, 0]
    dt = cfg.dt
    x = np.zeros((K, R))
    for _ in range(steps):
        dW = rng.standard_normal(R) * np.sqrt(dt)
        x = decay[:, None] * x + (qn * g)[:, None] * dW
    var = x.var(axis=1)
    expect = g**2 * (1 - np.exp(-2 * lam)) / (2 * lam)
    assert np.abs(var / expect - 1).max() < 0.05


def test_integrate_matches_replica_recursion():
    # the production integrator agrees with the bare recursion above
    cfg = linear_cfg(K=4, steps=64)
    W = sample_wiener(1, 1.0, 64, seed=3)
    u0 = SpectralField.zero(cfg.basis)
    traj = integrate(cfg, u0, W)
    decay, qn = cfg.stiff_factors()
    x = np.zeros(4)
    for i in range(64):
        x = decay * x + qn * cfg.G[:, 0] * W.increments[0, i]
    assert np.allclose(traj.states[-1], x)


def test_rd_dissipativity_large_initial_state():
    preset = rd_preset(K=12, nu=0.05)
    cfg = SpdeConfig(
        preset["basis"], preset["drift"], preset["G"], steps=2048,
        pointwise=preset["pointwise"],
    )
    u0 = SpectralField(cfg.basis, 5.0 * np.ones(cfg.basis.dim) / np.sqrt(cfg.basis.dim))
    W = sample_wiener(cfg.d, 1.0, 2048, seed=5)
    traj = integrate(cfg, u0, W)
    assert not traj.diverged
    sup_h = np.max(np.sqrt((traj.states**2).sum(axis=1)))
    assert sup_h < 10.0  # cubic damping keeps the energy bounded
    # step-halving convergence of the endpoint
    fine = sample_wiener(cfg.d, 1.0, 4096, seed=5)
    cfg2 = SpdeConfig(
        cfg.basis, cfg.drift, cfg.G, steps=4096, pointwise=cfg.pointwise
    )
    t2 = integrate(cfg2, u0, fine)
    cfg4 = SpdeConfig(
        cfg.basis, cfg.drift, cfg.G, steps=8192, pointwise=cfg.pointwise
    )
    t4 = integrate(cfg4, u0, sample_wiener(cfg.d, 1.0, 8192, seed=5))
    # both refinements stay near the coarse solution
    base = integrate(cfg, u0, coarsen_path(fine, 2))
    err = np.abs(t2.states[-1] - base.states[-1]).max()
    assert err < 0.1


def test_strong_first_order_semi_implicit():
    # additive linear case: mean error vs an exactly-propagated fine reference
    # decays at first order in dt
    K, steps = 5, 4096
    basis = dirichlet_interval(K, 0.5)
    lam = basis.eigenvalues
    g = np.linspace(0.5, 1.0, K)
    drift = PolyVectorField(basis, linear="neg_L")
    dt = 1.0 / steps
    sq_err = {8: 0.0, 4: 0.0}
    for seed in range(24):
        fine = sample_wiener(1, 1.0, steps, seed=seed)
        x = np.zeros(K)
        for i in range(steps):
            x = np.exp(-lam * dt) * (x + g * fine.increments[0, i])
        for factor in (8, 4):
            cfg = SpdeConfig(
                basis, drift, g.reshape(-1, 1), steps=steps // factor,
                scheme="semi_implicit",
            )
            traj = integrate(cfg, SpectralField.zero(basis), coarsen_path(fine, factor))
            sq_err[factor] += np.sum((traj.states[-1] - x) ** 2)
    ratio = np.sqrt(sq_err[4] / sq_err[8])
    assert ratio < 0.75  # halving dt roughly halves the strong error


def test_blowup_flagged_not_silent():
    basis = dirichlet_interval(3, 1.0)
    cubic = MultilinearForm(3, 3)
    cubic.set_entry((0, 0, 0), 0, 1.0)  # expanding nonlinearity
    drift = PolyVectorField(basis, linear=None, forms=(cubic,))
    cfg = SpdeConfig(basis, drift, np.ones((3, 1)), steps=256, scheme="exponential")
    u0 = SpectralField(basis, np.array([50.0, 0.0, 0.0]))
    traj = integrate(cfg, u0, sample_wiener(1, 1.0, 256, seed=1))
    assert traj.diverged and traj.diverged_at is not None
    assert np.all(np.isfinite(traj.states))


def test_shifted_x():
    # G = 0: X == u
    cfg = linear_cfg(K=4, steps=32)
    zeroG = SpdeConfig(cfg.basis, cfg.drift, np.zeros((4, 1)), steps=32)
    W = sample_wiener(1, 1.0, 32, seed=2)
    u0 = SpectralField(cfg.basis, np.ones(4))
    traj = integrate(zeroG, u0, W)
    X = shifted_x(traj, zeroG.G)
    assert np.allclose(X.states, traj.states)
    # no drift at all: X stays at u0 exactly
    free = PolyVectorField(cfg.basis)  # zero vector field
    cfgF = SpdeConfig(cfg.basis, free, np.eye(4)[:, :2], steps=32)
    trajF = integrate(cfgF, u0, sample_wiener(2, 1.0, 32, seed=3))
    XF = shifted_x(trajF, cfgF.G)
    assert np.abs(XF.states - u0.coeffs).max() < 1e-14


def test_rd_shifted_process_is_lipschitz_under_refinement():
    preset = rd_preset(K=8, nu=0.05)
    u0 = SpectralField(preset["basis"], 0.3 * np.eye(8)[0] + 0.2 * np.eye(8)[1])
    fine = sample_wiener(2, 1.0, 8192, seed=13)
    lips = []
    for factor in (4, 2, 1):
        steps = 8192 // factor
        cfg = SpdeConfig(
            preset["basis"], preset["drift"], preset["G"], steps=steps,
            pointwise=preset["pointwise"],
        )
        traj = integrate(cfg, u0, coarsen_path(fine, factor))
        X = shifted_x(traj, cfg.G)
        norms = np.sqrt((X.states**2).sum(axis=1))
        res = path_norms(norms, X.times, window=(0.5, 1.0))
        lips.append(res["lip"])
    # empirical Lipschitz constant stays finite and stable under refinement
    assert max(lips) < 50.0
    assert abs(lips[2] - lips[1]) < 0.5 * max(1.0, lips[1])


def test_path_norm_examples():
    t = np.linspace(0.0, 1.0, 257)
    res = path_norms(np.full(257, 3.0), t, rho=0.25)
    assert res["sup"] == 3.0 and res["lip"] == 0.0 and res["hol"] == 0.0
    assert res["Norm"] == 3.0
    res = path_norms(t, t, rho=0.25)
    assert res["lip"] == pytest.approx(1.0)
    assert res["hol"] == pytest.approx(1.0)  # attained at the unit gap
    with pytest.raises(ValueError):
        path_norms(np.array([1.0]), np.array([0.0]))


def test_brownian_holder_threshold_trend():
    # hol_{1/4} stabilizes under refinement; hol_{3/4} grows
    rng_fine = sample_wiener(1, 1.0, 2**14, seed=21)
    vals = {}
    for factor in (16, 4, 1):
        w = coarsen_path(rng_fine, factor)
        vals[factor] = (
            holder_constant(w.values[0], w.times, 0.25),
            holder_constant(w.values[0], w.times, 0.75),
        )
    assert vals[1][0] < 3.0 * vals[16][0]  # quarter-Hoelder stays bounded
    assert vals[1][1] > 1.5 * vals[16][1]  # three-quarter constant diverges
