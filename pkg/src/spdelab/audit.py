"""Empirical audit of the moment bounds the flow machinery relies on.

Estimates, by Monte Carlo over replicas (all reported as p-th root moments,
so they are nondecreasing in p):

* ``J_star``    -- sup over forced directions and coarse (s,t) pairs of the
                   mean squared flow response  E |J_{s,t} g_k|^2.
* ``u_star``    -- moments of the windowed sup of the shifted process, both
                   its weighted norm and its base-norm Lipschitz quotient.
* ``K_star``    -- moments of windowed operator norms of the backward adjoint
                   and of the Lipschitz quotient of its end-anchored family.
* ``D_star``    -- moments of sup ||J_{s,t} g_k|| and of the gap-weighted
                   operator norm, with the weight exponent fitted empirically.

Operator norms use the spectral weight ``lambda^(2 s_v)`` with ``s_v = 1/2``
(the classical first-derivative scale); that is the scale on which the
gap-weighted norm of the flow exhibits its characteristic exponent near 1/2
for the reaction-diffusion preset.

The audit is deliberately coarse: (s,t) pairs range over recorded anchor
sets, so every estimate is a sampled lower bound of its supremum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import grid_rule, suggested_points
from .sde import integrate, sample_wiener, shifted_x
from .seeds import replica_seed
from .variational import FlowBundle

__all__ = ["AssumptionAudit", "run_audit", "sobolev_embedding_constant"]


@dataclass
class AssumptionAudit:
    estimates: dict  # name -> {p: root moment}
    alpha: float | None
    replicas: int
    p_values: tuple
    anchors: dict

    def worst_relative_change(self, other):
        worst = 0.0
        for name, mine in self.estimates.items():
            theirs = other.estimates.get(name, {})
            for p, v in mine.items():
                if p not in theirs:
                    continue
                denom = max(abs(v), abs(theirs[p]), 1e-300)
                worst = max(worst, abs(v - theirs[p]) / denom)
        return worst

    def stable_against(self, other, tol=0.10):
        worst = self.worst_relative_change(other)
        return worst <= tol, worst


def _opnorm_weighted(M, wout, win):
    """2-norm of diag(wout) M diag(1/win)."""
    return float(np.linalg.norm((wout[:, None] * M) / win[None, :], 2))


def run_audit(
    cfg,
    u0,
    replicas,
    master_seed=0,
    p_values=(2, 4, 8),
    s_anchors=6,
    t_anchors=(0.5, 0.75, 1.0),
    window_start=0.5,
    s_v=0.5,
    fit_alpha=True,
):
    """Monte Carlo audit along ``replicas`` independent trajectories."""
    basis = cfg.basis
    dim = basis.dim
    lam = basis.eigenvalues
    w_v = lam**s_v
    steps, dt, d = cfg.steps, cfg.dt, cfg.d
    win_lo = int(round(window_start * steps))
    anchor_nodes = np.unique(np.linspace(0, steps - steps // 8, s_anchors, dtype=int))
    anchor_set = set(int(a) for a in anchor_nodes) | {win_lo}
    t_nodes = sorted({int(round(a * steps)) for a in t_anchors})

    mean_sq_j = np.zeros((d, len(anchor_nodes), steps + 1))
    samples = {
        "u_star": np.zeros(replicas),
        "K_star": np.zeros(replicas),
        "D_star_sup": np.zeros(replicas),
    }
    gap_curves = []  # per replica: (gaps, opnorms) for the exponent fit

    for r in range(replicas):
        W = sample_wiener(d, cfg.T, steps, seed=replica_seed(master_seed, "audit", r))
        traj = integrate(cfg, u0, W)
        if traj.diverged:
            raise RuntimeError("audit trajectory diverged; shrink the forcing")
        bundle = FlowBundle(cfg, traj)

        # shifted-process norms over the window
        X = shifted_x(traj, cfg.G).states
        sup_v = np.sqrt(((w_v**2) * X[win_lo:] ** 2).sum(axis=1)).max()
        lip_h = np.sqrt(((np.diff(X[win_lo:], axis=0)) ** 2).sum(axis=1)).max() / dt
        samples["u_star"][r] = max(sup_v, lip_h)

        # flow response of the forced directions from each anchor
        rep_sup = 0.0
        for ai, si in enumerate(anchor_nodes):
            V = cfg.G.copy()
            mean_sq_j[:, ai, si] += (V**2).sum(axis=0) / replicas
            rep_sup = max(rep_sup, np.sqrt(((w_v[:, None] * V) ** 2).sum(axis=0)).max())
            for i in range(si, steps):
                V = bundle.step_j(i, V)
                mean_sq_j[:, ai, i + 1] += (V**2).sum(axis=0) / replicas
                rep_sup = max(
                    rep_sup, np.sqrt(((w_v[:, None] * V) ** 2).sum(axis=0)).max()
                )
        samples["D_star_sup"][r] = rep_sup

        # backward adjoint operator norms at the anchor times
        rep_k = 0.0
        k_mats_end = {}
        for ti in t_nodes:
            M = np.eye(dim)
            for i in range(ti - 1, win_lo - 1, -1):
                M = bundle.step_k(i, M)
                if i in anchor_set:
                    rep_k = max(rep_k, _opnorm_weighted(M, w_v, w_v))
                    if ti == t_nodes[-1]:
                        k_mats_end[i] = M.copy()
        lipk = 0.0
        keys = sorted(k_mats_end)
        for a, b in zip(keys[:-1], keys[1:]):
            diff = k_mats_end[b] - k_mats_end[a]
            lipk = max(
                lipk, _opnorm_weighted(diff, np.ones(dim), w_v) / ((b - a) * dt)
            )
        samples["K_star"][r] = max(rep_k, lipk)

        # gap-weighted forward operator norms (transpose sweep from T); the
        # scaling window needs 1/(2 gap) to stay inside the spectrum
        if fit_alpha:
            M = np.eye(dim)
            lo_gap = max(4 * dt, 2.0 / lam.max())
            hi_gap = min(0.125 * cfg.T, 0.25 / lam.min())
            stride = max(1, steps // 256)
            gaps, norms = [], []
            for i in range(steps - 1, -1, -1):
                M = bundle.step_jt(i, M)
                gap = (steps - i) * dt
                if lo_gap <= gap <= hi_gap and (steps - i) % stride == 0:
                    gaps.append(gap)
                    # M holds (J_{t_i,T})^T; H -> V^{s_v} norm of J itself
                    norms.append(_opnorm_weighted(M.T, w_v, np.ones(dim)))
            gap_curves.append((np.array(gaps), np.array(norms)))

    alpha = None
    alpha_window = None
    if fit_alpha and gap_curves and gap_curves[0][0].size >= 2:
        gaps = gap_curves[0][0]
        mean_norms = np.mean([c[1] for c in gap_curves], axis=0)
        alpha = float(-np.polyfit(np.log(gaps), np.log(mean_norms), 1)[0])
        alpha_window = float(gaps.max() / gaps.min())

    estimates = {
        "J_star": {2: float(mean_sq_j.max())},
        "u_star": {p: float(np.mean(samples["u_star"] ** p) ** (1.0 / p)) for p in p_values},
        "K_star": {p: float(np.mean(samples["K_star"] ** p) ** (1.0 / p)) for p in p_values},
        "D_star": {p: float(np.mean(samples["D_star_sup"] ** p) ** (1.0 / p)) for p in p_values},
    }
    if alpha is not None:
        weighted = np.array(
            [float(np.max(g**alpha * v)) for g, v in gap_curves]
        )
        estimates["D_star_weighted"] = {
            p: float(np.mean(weighted**p) ** (1.0 / p)) for p in p_values
        }
    return AssumptionAudit(
        estimates=estimates,
        alpha=alpha,
        replicas=replicas,
        p_values=tuple(p_values),
        anchors={
            "s_nodes": [int(a) for a in anchor_nodes],
            "t_nodes": t_nodes,
            "window_start": window_start,
            "s_v": s_v,
            "alpha_window": alpha_window,
        },
    )


def sobolev_embedding_constant(basis, samples=512, seed=0):
    """Sampled lower bound of sup|f| <= C |f|_(1/2) on the truncation."""
    n = suggested_points(basis, 2)
    _, _, B = grid_rule(basis, n)
    w = basis.eigenvalues**0.5
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        c = rng.standard_normal(basis.dim)
        sup = np.abs(B @ c).max()
        best = max(best, sup / np.sqrt(np.sum((w * c) ** 2)))
    return best
