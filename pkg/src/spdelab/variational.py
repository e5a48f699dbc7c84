"""Linearized flows along a stored trajectory: forward variations, the
backward adjoint, directional path derivatives, and higher variations.

All flow objects are built from the one-step maps of the integrator.  With
``decay`` the exact stiff factor and ``DN`` the Jacobian of the drift
remainder at the stored state ``u_i``:

    step_j(i):   v  ->  decay . (v + dt DN(u_i) v)            (node i -> i+1)
    step_jt(i):  v  ->  (I + dt DN(u_i)^T) (decay . v)        exact transpose
    step_k(i):   w  ->  decay . (w + dt DN(u_{i+1})^T w)      (node i+1 -> i)

``step_k`` is the time-reversed adjoint built from the transposed per-step
linearizations: the stiff part is treated exactly (and is self-adjoint), so
pairing it with ``step_j`` is exact for a linear drift while the nonlinear
term contributes the first-order discretization mismatch.  ``step_jt`` is the
literal transpose, for cross-validation: pairing it with ``step_j`` is exact
to round-off.  Pass ``variant='transpose'`` to get the latter behaviour.
"""

from __future__ import annotations

import math

import numpy as np

from .basis import SpectralField
from .sde import integrate

__all__ = [
    "FlowBundle",
    "build_bundle",
    "forward_j",
    "backward_k",
    "duality_gap",
    "malliavin_derivative",
    "second_directional",
    "higher_variation",
    "set_partitions",
]

MAX_VARIATION_ORDER = 4


class FlowBundle:
    """Trajectory plus cached per-step linearization data."""

    def __init__(self, cfg, traj):
        if traj.diverged:
            raise ValueError("cannot linearize along a diverged trajectory")
        self.cfg = cfg
        self.traj = traj
        self.basis = cfg.basis
        self.dt = cfg.dt
        self.steps = cfg.steps
        self.decay, self.qnoise = cfg.stiff_factors()
        self._extra = cfg._extra_linear()
        self._pw = cfg.pointwise
        self._forms = cfg.drift.forms
        self._plain_linear = None
        if not cfg._stiff() and cfg.drift.linear is not None:
            self._plain_linear = cfg.drift.linear_matrix()
        if self._pw is not None:
            # pointwise backend: cache N'(u) on the grid along the trajectory
            self._grid_du = self._pw._poly(
                self._pw.B @ traj.states.T, self._pw.da
            )  # (npts, steps+1)
        else:
            self._grid_du = None

    # -- Jacobian action of the drift remainder -----------------------------

    def _dn(self, i, v):
        if self._grid_du is not None:
            col = self._grid_du[:, i]
            out = self._pw.BTW @ (col[:, None] * (self._pw.B @ v) if v.ndim > 1 else col * (self._pw.B @ v))
        else:
            x = self.traj.states[i]
            out = np.zeros_like(v)
            for f in self._forms:
                out = out + f.dn(x, v)
            if self._plain_linear is not None:
                out = out + self._plain_linear @ v
        if self._extra is not None:
            out = out + self._extra @ v
        return out

    def _dn_t(self, i, v):
        if self._grid_du is not None:
            out = self._dn(i, v)  # multiplication operators are self-adjoint
            if self._extra is not None:
                out = out + (self._extra.T - self._extra) @ v
            return out
        x = self.traj.states[i]
        out = np.zeros_like(v)
        for f in self._forms:
            out = out + f.dn_t(x, v)
        if self._plain_linear is not None:
            out = out + self._plain_linear.T @ v
        if self._extra is not None:
            out = out + self._extra.T @ v
        return out

    def dn_matrix(self, i):
        """Dense Jacobian of the drift remainder at node i."""
        x = self.traj.states[i]
        if self._grid_du is not None:
            J = self._pw.BTW @ (self._grid_du[:, i][:, None] * self._pw.B)
        else:
            J = np.zeros((self.basis.dim, self.basis.dim))
            for f in self._forms:
                J = J + f.dn_matrix(x)
            if self._plain_linear is not None:
                J = J + self._plain_linear
        if self._extra is not None:
            J = J + self._extra
        return J

    # -- one-step maps -------------------------------------------------------
    #
    # wide matrix arguments without a grid backend go through the dense
    # Jacobian + BLAS (the sparse gather path scales poorly in the batch)

    def _dcol(self, v):
        return self.decay[:, None] if v.ndim > 1 else self.decay

    def _wide(self, v):
        return v.ndim > 1 and self._pw is None

    def step_j(self, i, v):
        if self._wide(v):
            return self._dcol(v) * (v + self.dt * (self.dn_matrix(i) @ v))
        return self._dcol(v) * (v + self.dt * self._dn(i, v))

    def step_jt(self, i, v):
        w = self._dcol(v) * v
        if self._wide(v):
            return w + self.dt * (self.dn_matrix(i).T @ w)
        return w + self.dt * self._dn_t(i, w)

    def step_k(self, i, v):
        if self._wide(v):
            return self._dcol(v) * (v + self.dt * (self.dn_matrix(i + 1).T @ v))
        return self._dcol(v) * (v + self.dt * self._dn_t(i + 1, v))

    def step_k_matrix(self, i, variant="mirror"):
        """Dense backward step map (node i+1 -> i) for matrix sweeps."""
        D = np.diag(self.decay)
        if variant == "mirror":
            return D @ (np.eye(self.basis.dim) + self.dt * self.dn_matrix(i + 1).T)
        return (np.eye(self.basis.dim) + self.dt * self.dn_matrix(i).T) @ D

    # -- node helpers ----------------------------------------------------------

    def node(self, t):
        """Grid node index of a time; raises when t is off the grid."""
        r = t / self.dt
        i = int(round(r))
        if abs(r - i) > 1e-8 or i < 0 or i > self.steps:
            raise ValueError(f"time {t} is not a grid node")
        return i


def build_bundle(cfg, u0, W):
    """Integrate and wrap the result for variational queries."""
    return FlowBundle(cfg, integrate(cfg, u0, W))


def _as_vec(phi):
    return phi.coeffs if isinstance(phi, SpectralField) else np.asarray(phi, dtype=float)


def forward_j(bundle, s, t, phi, series=False):
    """J_{s,t} phi: solve the variation equation from node s to node t.

    With ``series=True`` returns the whole path r -> J_{s,r} phi on [s,t].
    """
    si, ti = bundle.node(s), bundle.node(t)
    if si > ti:
        raise ValueError("need s <= t")
    v = _as_vec(phi).copy()
    if series:
        out = np.empty((ti - si + 1,) + v.shape)
        out[0] = v
        for i in range(si, ti):
            v = bundle.step_j(i, v)
            out[i - si + 1] = v
        return out
    for i in range(si, ti):
        v = bundle.step_j(i, v)
    return v


def backward_k(bundle, s, t, phi, variant="mirror", series=False):
    """K_{s,t} phi: transposed linearization transported backward from t.

    ``variant='mirror'`` is the default adjoint described in the module
    docstring; ``variant='transpose'`` composes the literal transposes of the
    forward steps.  With ``series=True`` returns r -> K_{r,t} phi on [s,t].
    """
    si, ti = bundle.node(s), bundle.node(t)
    if si > ti:
        raise ValueError("need s <= t")
    step = bundle.step_k if variant == "mirror" else bundle.step_jt
    w = _as_vec(phi).copy()
    if series:
        out = np.empty((ti - si + 1,) + w.shape)
        out[ti - si] = w
        for i in range(ti - 1, si - 1, -1):
            w = step(i, w)
            out[i - si] = w
        return out
    for i in range(ti - 1, si - 1, -1):
        w = step(i, w)
    return w


def duality_gap(bundle, s, t, phi, psi, variant="mirror"):
    """Drift of r -> <J_{s,r} phi, K_{r,t} psi> over [s,t].

    The map is constant for the continuous flows; the returned maximum
    deviation from its value at r=s measures the discretization mismatch
    between the forward and backward solves (zero to round-off for a linear
    drift, and for any drift under ``variant='transpose'``).
    """
    jser = forward_j(bundle, s, t, phi, series=True)
    kser = backward_k(bundle, s, t, psi, variant=variant, series=True)
    vals = np.einsum("ri,ri->r", jser, kser)
    return float(np.max(np.abs(vals - vals[0])))


def _h_samples(bundle, h):
    """h sampled at the left nodes, as an array of shape (steps, d)."""
    if callable(h):
        ts = np.arange(bundle.steps) * bundle.dt
        return np.stack([np.asarray(h(t), dtype=float) for t in ts])
    h = np.asarray(h, dtype=float)
    if h.shape == (bundle.steps, bundle.cfg.d):
        return h
    if h.shape == (bundle.cfg.d, bundle.steps):
        return h.T
    raise ValueError("direction must be sampled on the step grid")


def malliavin_derivative(bundle, h):
    """Directional path derivative of the endpoint along h in L^2([0,T], R^d).

    Computes the integral of J_{s,T} G h(s) with the left-endpoint rule,
    propagating the source exactly like the integrator injects noise, so a
    finite-difference bump of the driving path reproduces it to O(bump).
    """
    hs = _h_samples(bundle, h)
    G = bundle.cfg.G
    v = np.zeros(bundle.basis.dim)
    if bundle.cfg.scheme == "exponential":
        for i in range(bundle.steps):
            v = bundle.step_j(i, v) + bundle.qnoise * (G @ hs[i]) * bundle.dt
    else:
        for i in range(bundle.steps):
            v = bundle.step_j(i, v + (G @ hs[i]) * bundle.dt)
    return v


def second_directional(bundle, h1, h2):
    """Second directional derivative of the endpoint along two path bumps.

    Exact second derivative of the discrete time-stepping map; the oracle for
    4-point mixed finite differences.
    """
    hs1, hs2 = _h_samples(bundle, h1), _h_samples(bundle, h2)
    G = bundle.cfg.G
    dim = bundle.basis.dim
    d1 = np.zeros(dim)
    d2 = np.zeros(dim)
    d12 = np.zeros(dim)
    exp_scheme = bundle.cfg.scheme == "exponential"
    for i in range(bundle.steps):
        x = bundle.traj.states[i]
        src = _d2n(bundle, i, d1, d2)
        d12 = bundle.step_j(i, d12) + bundle.dt * (bundle.decay * src)
        if exp_scheme:
            d1 = bundle.step_j(i, d1) + bundle.qnoise * (G @ hs1[i]) * bundle.dt
            d2 = bundle.step_j(i, d2) + bundle.qnoise * (G @ hs2[i]) * bundle.dt
        else:
            d1 = bundle.step_j(i, d1 + (G @ hs1[i]) * bundle.dt)
            d2 = bundle.step_j(i, d2 + (G @ hs2[i]) * bundle.dt)
    return d12


def _d2n(bundle, i, a, b):
    """D^2 N(u_i)(a, b) of the drift remainder."""
    if bundle._pw is not None:
        pw = bundle._pw
        dda = pw.a[2:] * np.arange(2, len(pw.a)) * np.arange(1, len(pw.a) - 1)
        vals = pw._poly(pw.B @ bundle.traj.states[i], dda)
        return pw.BTW @ (vals * (pw.B @ a) * (pw.B @ b))
    out = np.zeros_like(a)
    x = bundle.traj.states[i]
    for f in bundle._forms:
        j = f.degree
        if j < 2:
            continue
        coef = math.factorial(j) / math.factorial(j - 2)
        out = out + coef * f.apply_mixed_batch([x] * (j - 2) + [a, b])
    return out


def _dkn_series(bundle, nu, arg_series):
    """D^(nu) N(u_r)(w_1(r), .., w_nu(r)) for whole time series (dim, nt)."""
    nt = arg_series[0].shape[1]
    if bundle._pw is not None:
        pw = bundle._pw
        coeffs = pw.a.copy()
        for _ in range(nu):
            coeffs = coeffs[1:] * np.arange(1, len(coeffs))
        vals = pw._poly(pw.B @ bundle.traj.states.T[:, :nt], coeffs)
        prod = np.ones_like(vals)
        for w in arg_series:
            prod = prod * (pw.B @ w)
        return pw.BTW @ (vals * prod)
    out = np.zeros((bundle.basis.dim, nt))
    u = bundle.traj.states.T[:, :nt]
    for f in bundle._forms:
        j = f.degree
        if j < nu:
            continue
        coef = math.factorial(j) / math.factorial(j - nu)
        out = out + coef * f.apply_mixed_batch([u] * (j - nu) + list(arg_series))
    return out


def set_partitions(n, min_blocks=2):
    """All partitions of {0..n-1} into at least ``min_blocks`` blocks,
    enumerated through restricted-growth strings."""
    out = []

    def grow(prefix, maxval):
        if len(prefix) == n:
            blocks = {}
            for idx, b in enumerate(prefix):
                blocks.setdefault(b, []).append(idx)
            if len(blocks) >= min_blocks:
                out.append(tuple(tuple(b) for b in blocks.values()))
            return
        for v in range(maxval + 2):
            grow(prefix + [v], max(maxval, v))

    grow([0], 0)
    return out


def higher_variation(bundle, n, s_times, phis, t=None):
    """n-th variation J^(n)_{s_1..s_n; t}(phi_1..phi_n).

    Recursively integrates the variation hierarchy: the order-n source sums
    D^(nu) N over all partitions of the arguments into nu >= 2 blocks applied
    to lower-order variations, and is propagated by the first variation with
    the left-endpoint rule.  Zero when t <= max(s); n is capped at 4.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    if n > MAX_VARIATION_ORDER:
        raise ValueError(f"variation order capped at {MAX_VARIATION_ORDER}")
    if len(s_times) != n or len(phis) != n:
        raise ValueError("need one start time per direction")
    t = bundle.steps * bundle.dt if t is None else t
    ti = bundle.node(t)
    series = _variation_series(bundle, tuple(range(n)), s_times, phis, ti)
    return series[:, ti]


def _first_variation_series(bundle, s, phi, ti):
    si = bundle.node(s)
    v = _as_vec(phi).copy()
    out = np.zeros((bundle.basis.dim, ti + 1))
    out[:, : si + 1] = v[:, None]  # J^{(1)}_{s;t} = phi for t <= s
    for i in range(si, ti):
        v = bundle.step_j(i, v)
        out[:, i + 1] = v
    return out


def _variation_series(bundle, idx, s_times, phis, ti):
    if len(idx) == 1:
        return _first_variation_series(bundle, s_times[idx[0]], phis[idx[0]], ti)
    smax = max(bundle.node(s_times[k]) for k in idx)
    block_cache = {}

    def series_for(block):
        if block not in block_cache:
            block_cache[block] = _variation_series(bundle, block, s_times, phis, ti)
        return block_cache[block]

    source = np.zeros((bundle.basis.dim, ti + 1))
    for part in set_partitions(len(idx)):
        blocks = [tuple(idx[k] for k in blk) for blk in part]
        arg_series = [series_for(b) for b in blocks]
        source += _dkn_series(bundle, len(blocks), arg_series)
    out = np.zeros((bundle.basis.dim, ti + 1))
    a = np.zeros(bundle.basis.dim)
    for i in range(smax, ti):
        a = bundle.step_j(i, a + bundle.dt * source[:, i])
        out[:, i + 1] = a
    return out
