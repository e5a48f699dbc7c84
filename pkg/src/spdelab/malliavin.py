"""Malliavin covariance matrices, spectra, cone-restricted minimization, and
small-ball Monte Carlo.

Two assemblies of the same operator are provided.  Both run one backward
sweep per probe direction and accumulate left-endpoint quadrature sums of

    M_ij = sum_k int_0^T <J_{s,T} g_k, psi_i> <J_{s,T} g_k, psi_j> ds .

``assemble_forward`` transports the probes with the exact transposes of the
forward step maps, so its integrand is the forward-flow pairing evaluated
without approximation.  ``assemble_adjoint`` transports them with the
backward adjoint steps; the two matrices agree to round-off for a linear
drift and differ at first order in dt otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MalliavinMatrix",
    "assemble_forward",
    "assemble_adjoint",
    "spectrum",
    "inf_cone",
    "smallball",
    "wilson_interval",
]


@dataclass(frozen=True)
class MalliavinMatrix:
    entries: np.ndarray  # (N, N) symmetric
    probes: np.ndarray  # (N, dim) orthonormal rows psi_i
    representation: str  # 'forward' | 'adjoint'
    seed: int | None = None

    def __post_init__(self):
        M = np.asarray(self.entries, dtype=float)
        scale = max(np.abs(M).max(), 1.0)
        if np.abs(M - M.T).max() > 1e-12 * scale:
            raise ValueError("assembled matrix is not symmetric")
        object.__setattr__(self, "entries", 0.5 * (M + M.T))

    @property
    def dim(self):
        return self.entries.shape[0]


def _check_probes(bundle, psis):
    psis = np.asarray(psis, dtype=float)
    if psis.ndim == 1:
        psis = psis[None, :]
    if psis.shape[1] != bundle.basis.dim:
        raise ValueError("probe directions have the wrong length")
    gram = psis @ psis.T
    if np.abs(gram - np.eye(psis.shape[0])).max() > 1e-8:
        raise ValueError("probe directions must be orthonormal")
    return psis


def _assemble(bundle, psis, variant, node_slice=None):
    psis = _check_probes(bundle, psis)
    n = psis.shape[0]
    G = bundle.cfg.G
    dt = bundle.dt
    steps = bundle.steps
    keep = np.zeros(steps, dtype=bool)
    keep[node_slice if node_slice is not None else slice(None)] = True
    step = bundle.step_k if variant == "mirror" else bundle.step_jt
    W = psis.T.copy()  # (dim, n), holds K_{s,T} Psi while sweeping s downward
    M = np.zeros((n, n))
    for i in range(steps - 1, -1, -1):
        W = step(i, W)
        if keep[i]:
            rows = G.T @ W  # rows[k, j] = <g_k, K_{t_i,T} psi_j>
            M += dt * (rows.T @ rows)
    return M


def assemble_forward(bundle, psis, node_slice=None, seed=None):
    """Forward-representation matrix via exact-transpose backward sweeps."""
    M = _assemble(bundle, psis, "transpose", node_slice)
    return MalliavinMatrix(M, _check_probes(bundle, psis), "forward", seed)


def assemble_adjoint(bundle, psis, node_slice=None, seed=None):
    """Adjoint-representation matrix via the backward adjoint flow."""
    M = _assemble(bundle, psis, "mirror", node_slice)
    return MalliavinMatrix(M, _check_probes(bundle, psis), "adjoint", seed)


def spectrum(M):
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix.

    Raises on asymmetric input; the residual ||Mv - lambda v|| of every pair
    is checked against 1e-10 ||M||.
    """
    A = M.entries if isinstance(M, MalliavinMatrix) else np.asarray(M, dtype=float)
    scale = max(np.abs(A).max(), 1e-300)
    if np.abs(A - A.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    resid = np.abs(A @ vecs - vecs * vals).max()
    if resid > 1e-10 * scale:
        raise ValueError("eigendecomposition residual too large")
    return vals, vecs


# ---------------------------------------------------------------------------
# cone-restricted quadratic-form minimization
# ---------------------------------------------------------------------------


def _project_sphere_cone(y, P, delta):
    """Project onto {|y| = 1, |P y| >= delta} (Euclidean geometry)."""
    nrm = np.linalg.norm(y)
    if nrm == 0.0:
        y = P[0] if P.ndim > 1 else P
        nrm = np.linalg.norm(y)
    y = y / nrm
    a = P.T @ (P @ y)
    alpha = np.linalg.norm(a)
    if alpha >= delta:
        return y
    b = y - a
    beta = np.linalg.norm(b)
    if alpha < 1e-300:
        anew = delta * (P[0] / np.linalg.norm(P[0]))
    else:
        anew = (delta / alpha) * a
    scale = np.sqrt(max(1.0 - delta**2, 0.0))
    bnew = (scale / beta) * b if beta > 1e-300 else 0.0 * b
    out = anew + bnew
    return out / np.linalg.norm(out)


def inf_cone(M, proj_basis, delta, weights=None, restarts=16, max_iter=400, tol=1e-10, seed=0):
    """Estimated infimum of the quadratic form over the weighted sphere cone.

    The feasible set is {phi: ||phi||_w = 1, ||Pi phi||_w >= delta} where
    ``weights`` rescales coordinates so that norm is Euclidean (pass the
    spectral eigenvalues to minimize in the graph-norm geometry).  Multi-start
    projected gradient descent, seeded at the smallest eigenvectors; the
    result is an upper bound of the true infimum.  Returns (value, argmin)
    with the argmin in the original coordinates.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    A = M.entries if isinstance(M, MalliavinMatrix) else np.asarray(M, dtype=float)
    dim = A.shape[0]
    w = np.ones(dim) if weights is None else np.asarray(weights, dtype=float)
    Dinv = 1.0 / w
    At = (Dinv[:, None] * A) * Dinv[None, :]
    S = np.asarray(proj_basis, dtype=float)
    if S.ndim == 1:
        S = S[None, :]
    Sy = S * w[None, :]  # subspace basis in weighted coordinates
    Q, _ = np.linalg.qr(Sy.T)
    P = Q.T  # orthonormal rows spanning the weighted subspace

    vals, vecs = np.linalg.eigh(At)
    rng = np.random.default_rng(seed)
    starts = [vecs[:, j] for j in range(min(dim, max(2, restarts // 2)))]
    while len(starts) < restarts:
        starts.append(rng.standard_normal(dim))
    best_val, best_y = np.inf, None
    for y0 in starts:
        y = _project_sphere_cone(np.asarray(y0, dtype=float), P, delta)
        val = y @ At @ y
        step = 1.0 / max(np.abs(vals).max(), 1e-30)
        for _ in range(max_iter):
            grad = 2.0 * (At @ y)
            cand = _project_sphere_cone(y - step * grad, P, delta)
            cval = cand @ At @ cand
            if cval < val - 1e-18:
                y, val = cand, cval
                step *= 1.2
            else:
                step *= 0.5
                if step * np.abs(vals).max() < tol:
                    break
        if val < best_val:
            best_val, best_y = val, y
    return float(best_val), Dinv * best_y


# ---------------------------------------------------------------------------
# small-ball Monte Carlo
# ---------------------------------------------------------------------------


def wilson_interval(successes, n, z=1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        raise ValueError("need at least one trial")
    p = successes / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def smallball(make_bundle, proj_basis, delta, eps_grid, replicas, weights=None, seed_list=None):
    """Monte Carlo table of P{inf over the cone < eps} with Wilson intervals.

    ``make_bundle(replica_index)`` must return a fresh FlowBundle; the full
    covariance matrix is assembled per replica (adjoint sweeps) and minimized
    over the cone.  Returns a dict with the sampled infima, per-eps rows
    (eps, count, p_hat, lo, hi) and the log-log slope over the resolved range.
    """
    eps_grid = np.asarray(sorted(eps_grid, reverse=True), dtype=float)
    if np.any(eps_grid <= 0):
        raise ValueError("eps grid must be positive")
    if replicas < 1:
        raise ValueError("need at least one replica")
    infima = np.empty(replicas)
    for r in range(replicas):
        bundle = make_bundle(r)
        dim = bundle.basis.dim
        M = assemble_adjoint(bundle, np.eye(dim))
        val, _ = inf_cone(M, proj_basis, delta, weights=weights, seed=r)
        infima[r] = val
    rows = []
    for eps in eps_grid:
        count = int(np.sum(infima < eps))
        lo, hi = wilson_interval(count, replicas)
        rows.append({"eps": float(eps), "count": count, "p_hat": count / replicas, "lo": lo, "hi": hi})
    resolved = [(np.log(r["eps"]), np.log(r["p_hat"])) for r in rows if 0 < r["count"] < replicas]
    slope = float("nan")
    if len(resolved) >= 2:
        xs, ys = np.array(resolved).T
        slope = float(np.polyfit(xs, ys, 1)[0])
    return {"infima": infima, "rows": rows, "slope": slope}
