"""Span growth through the top multilinear form, and the model conditions
that decide whether the forced directions eventually excite everything.

The recursion starts from the span of the forcing directions and repeatedly
adjoins ``N_m(g, g_{k_1}, .., g_{k_{m-1}})`` for basis vectors g of the
current span and all tuples over the original directions.  Rank decisions use
modified Gram-Schmidt with one reorthogonalization pass and a relative
residual threshold.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import gcd

import numpy as np

from .forms import constant_bracket_chain, full_bracket_sym

__all__ = [
    "SpanBasis",
    "grow_span",
    "check_subspace",
    "ns_condition",
    "rd_condition",
]

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SpanBasis:
    """Orthonormal span with per-vector provenance (step, source, tuple)."""

    vectors: np.ndarray  # (rank, dim), orthonormal rows
    provenance: tuple
    rank_tol: float = RANK_TOL

    @property
    def rank(self):
        return self.vectors.shape[0]

    def project_residual(self, v):
        """Norm of v after removing its projection onto the span."""
        r = v - self.vectors.T @ (self.vectors @ v)
        r = r - self.vectors.T @ (self.vectors @ r)
        return float(np.linalg.norm(r))


def _orthonormalize_into(rows, prov, v, tol, record):
    """Modified Gram-Schmidt insert with reorthogonalization."""
    scale = np.linalg.norm(v)
    if scale == 0.0:
        return False
    w = v.copy()
    for row in rows:
        w -= (row @ w) * row
    for row in rows:
        w -= (row @ w) * row
    nrm = np.linalg.norm(w)
    if nrm <= tol * scale:
        return False
    rows.append(w / nrm)
    prov.append(record)
    return True


def grow_span(gs, F, max_steps, rank_tol=RANK_TOL, all_degrees=False):
    """Span ladder generated by the top form of F from the directions ``gs``.

    Returns one :class:`SpanBasis` per step; growth stops at ``max_steps`` or
    when a full sweep adds nothing (saturation, which is permanent because
    every candidate is linear in the spanned vectors).  With ``all_degrees``
    the sweep also contracts the lower-degree forms.
    """
    gs = [np.asarray(g, dtype=float) for g in gs]
    if not gs or all(np.linalg.norm(g) == 0 for g in gs):
        raise ValueError("need at least one nonzero generator")
    forms = [F.top_form()] if not all_degrees else list(F.forms)
    forms = [f for f in forms if f is not None]
    rows, prov = [], []
    for j, g in enumerate(gs):
        _orthonormalize_into(rows, prov, g, rank_tol, (1, f"g{j}", ()))
    ladder = [SpanBasis(np.array(rows), tuple(prov), rank_tol)]
    frontier = list(range(len(rows)))
    for step in range(2, max_steps + 1):
        new_frontier = []
        for vec_id in frontier:
            g = rows[vec_id]
            for form in forms:
                m = form.degree
                if m < 2:
                    continue
                for tup in itertools.combinations_with_replacement(range(len(gs)), m - 1):
                    cand = form.apply_mixed([g] + [gs[k] for k in tup])
                    if _orthonormalize_into(
                        rows, prov, cand, rank_tol, (step, vec_id, tup)
                    ):
                        new_frontier.append(len(rows) - 1)
        ladder.append(SpanBasis(np.array(rows), tuple(prov), rank_tol))
        if not new_frontier:
            break
        frontier = new_frontier
    return ladder


def check_subspace(S, H, rank_tol=None):
    """Is span(S) contained in the span H?  Returns (contained, margin).

    ``margin`` is the smallest singular value of the Gram matrix between an
    orthonormalized S and the span's basis (the cosine of the largest
    principal angle); near 1 for a comfortably contained subspace.
    """
    tol = H.rank_tol if rank_tol is None else rank_tol
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[None, :]
    norms = np.linalg.norm(S, axis=1)
    if np.any(norms == 0):
        raise ValueError("subspace directions must be nonzero")
    q, r = np.linalg.qr(S.T)
    if np.abs(np.diag(r)).min() < 1e-10 * np.abs(np.diag(r)).max():
        raise ValueError("subspace directions are linearly dependent")
    Q = q.T  # orthonormal rows
    contained = all(H.project_residual(Q[i]) <= tol for i in range(Q.shape[0]))
    C = Q @ H.vectors.T
    margin = float(np.linalg.svd(C, compute_uv=False).min()) if H.rank else 0.0
    return contained, margin


def _minors_gcd(vectors):
    g = 0
    for a, b in itertools.combinations(vectors, 2):
        g = gcd(g, abs(a[0] * b[1] - a[1] * b[0]))
    return g


def ns_condition(z0):
    """Check the two lattice conditions on a forced wave-vector set.

    ``generates_Z2``: integer combinations of the symmetric part z0 & -z0
    generate the whole lattice (gcd of all 2x2 minors equals 1).
    ``unequal_norms``: the set contains two vectors of different Euclidean
    length.
    """
    z0 = [tuple(int(c) for c in k) for k in z0]
    if any(k == (0, 0) for k in z0):
        raise ValueError("the origin is not an admissible wave vector")
    sym = [k for k in z0 if (-k[0], -k[1]) in z0]
    generates = len(sym) >= 2 and _minors_gcd(sym) == 1
    norms = {k[0] * k[0] + k[1] * k[1] for k in z0}
    return {"generates_Z2": generates, "unequal_norms": len(norms) >= 2}


def rd_condition(i0_grids, gs, q, basis, n_points, rank_tol=RANK_TOL):
    """Check that products of up to 2q generator functions stay in span(gs).

    ``i0_grids`` holds grid samples of the generating functions on the
    quadrature grid of ``n_points``; products are projected back onto the
    truncation before the span test.
    """
    from .basis import from_grid

    gs = [np.asarray(g, dtype=float) for g in gs]
    rows, prov = [], []
    for j, g in enumerate(gs):
        _orthonormalize_into(rows, prov, g, rank_tol, (1, f"g{j}", ()))
    H = SpanBasis(np.array(rows), tuple(prov), rank_tol)
    for k in range(1, 2 * q + 1):
        for combo in itertools.combinations_with_replacement(range(len(i0_grids)), k):
            prod = np.ones_like(i0_grids[0])
            for idx in combo:
                prod = prod * i0_grids[idx]
            coeffs = from_grid(basis, prod, n_points).coeffs
            scale = np.linalg.norm(coeffs)
            if scale == 0.0:
                continue
            if H.project_residual(coeffs) > rank_tol * scale:
                return False
    return True


def bracket_consistency_residual(H, F, gs):
    """Largest mismatch between span candidates and their defining brackets.

    Every generation >= 2 candidate N_m(g, g-tuple) must equal the constant
    field [F, g/m!, g_{k_1}, .., g_{k_{m-1}}] obtained through the symbolic
    bracket route.
    """
    import math

    from .forms import PolyVectorField, iterated_bracket

    top = F.top_form()
    m = top.degree
    gs = [np.asarray(g, dtype=float) for g in gs]
    worst = 0.0
    for step, src, tup in H.provenance:
        if step == 1:
            continue
        g = H.vectors[src]
        Q = PolyVectorField(F.basis, constant=g / math.factorial(m))
        out = iterated_bracket(F, Q, [gs[k] for k in tup])
        cand = out.constant if out.constant is not None else np.zeros(F.basis.dim)
        assert out.linear is None and not out.forms
        direct = top.apply_mixed([g] + [gs[k] for k in tup])
        denom = max(np.linalg.norm(direct), 1e-30)
        worst = max(worst, np.linalg.norm(cand - direct) / denom)
    return worst
