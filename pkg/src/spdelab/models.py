"""Model presets: scalar reaction-diffusion on [0,1] and 2D vorticity on the torus.

Both presets produce a drift field ``-L + N`` on a truncation together with a
forcing map G (columns are the forced directions).  The reaction-diffusion
nonlinearity is a pointwise polynomial ``sum_p a_p u^p`` projected back onto
the sine basis; the vorticity nonlinearity is the symmetrized advection term
``B(Ku, w) = -(Ku . grad) w`` with the velocity recovered from vorticity.

The vorticity form is assembled from the exact mode-interaction rule below.
For half-lattice wave vectors k, l and unnormalized modes c_k = cos(k.x),
s_k = sin(k.x), with t = k_perp . l and k_perp = (-k2, k1):

    B(K c_k, c_l) =  t/(2|k|^2) (c_{k-l} - c_{k+l})
    B(K c_k, s_l) = -t/(2|k|^2) (s_{k+l} + s_{k-l})
    B(K s_k, c_l) = -t/(2|k|^2) (s_{k+l} - s_{k-l})
    B(K s_k, s_l) =  t/(2|k|^2) (c_{k+l} + c_{k-l})

so the symmetrized transfer onto k+l carries the factor (1/|k|^2 - 1/|l|^2):
generators of equal Euclidean norm exchange nothing at first generation.
"""

from __future__ import annotations

import itertools

import numpy as np

from .basis import (
    SpectralField,
    dirichlet_interval,
    from_grid,
    grid_rule,
    suggested_points,
    torus_2d,
)
from .forms import MultilinearForm, PolyVectorField

__all__ = [
    "rd_drift",
    "rd_preset",
    "ns_drift",
    "ns_preset",
    "ns_pair_interactions",
    "ns_forcing_fields",
    "PointwisePolynomial",
]


# ---------------------------------------------------------------------------
# reaction-diffusion
# ---------------------------------------------------------------------------


class PointwisePolynomial:
    """Grid backend for a pointwise nonlinearity on the interval.

    Evaluates ``N(u) = P(sum_p a_p u(x)^p)`` and its (self-adjoint) Jacobian
    action through an oversampled quadrature grid; exact to quadrature
    tolerance for fields inside the truncation.
    """

    def __init__(self, basis, coefficients):
        self.basis = basis
        self.a = np.asarray(coefficients, dtype=float)
        degree = len(self.a) - 1
        n = suggested_points(basis, degree + 1)
        _, w, B = grid_rule(basis, n)
        self.B = B
        self.BTW = (w[:, None] * B).T
        self.da = self.a[1:] * np.arange(1, len(self.a))

    def _poly(self, vals, coeffs):
        out = np.zeros_like(vals)
        for c in coeffs[::-1]:
            out = out * vals + c
        return out

    def grid_values(self, x):
        return self.B @ x

    def eval(self, x):
        return self.BTW @ self._poly(self.B @ x, self.a)

    def jac(self, x, h):
        return self.BTW @ (self._poly(self.B @ x, self.da) * (self.B @ h))

    jac_t = jac  # multiplication operators are self-adjoint

    def jac_grid(self, x):
        """Pointwise derivative N'(u(x)) on the quadrature grid."""
        return self._poly(self.B @ x, self.da)

    def jac_matrix(self, x):
        return self.BTW @ (self._poly(self.B @ x, self.da)[:, None] * self.B)


def _pointwise_form(basis, degree, amplitude):
    """Symmetric tensor of the projected pointwise product  a * u_1 ... u_p."""
    n = suggested_points(basis, degree + 1)
    _, w, B = grid_rule(basis, n)
    form = MultilinearForm(degree, basis.dim)
    for key in itertools.combinations_with_replacement(range(basis.dim), degree):
        prod = np.prod(B[:, list(key)], axis=1)
        outs = B.T @ (w * prod)
        for o in np.nonzero(np.abs(outs) > 1e-12)[0]:
            form.set_entry(key, int(o), amplitude * float(outs[o]))
    return form


def rd_drift(basis, a):
    """Drift field -L + sum_p a_p u^p for the reaction-diffusion preset.

    ``a`` lists the polynomial coefficients (a_0 .. a_m); the leading one must
    be negative with odd degree for dissipativity.
    """
    a = np.asarray(a, dtype=float)
    m = len(a) - 1
    if m < 1 or m % 2 == 0 or a[m] >= 0:
        raise ValueError("need odd leading degree with negative coefficient")
    constant = None
    if a[0] != 0.0:
        n = suggested_points(basis, 2)
        _, w, B = grid_rule(basis, n)
        constant = a[0] * (B.T @ w)
    linear = "neg_L"
    if a[1] != 0.0:
        linear = np.diag(-basis.eigenvalues) + a[1] * np.eye(basis.dim)
    forms = tuple(
        _pointwise_form(basis, p, a[p]) for p in range(2, m + 1) if a[p] != 0.0
    )
    return PolyVectorField(basis, constant, linear, forms, max_degree=max(m, 5))


def rd_preset(K=16, nu=0.05, q=1, a=None, g_modes=(1, 2)):
    """Reaction-diffusion preset: basis, drift, forcing columns, grid backend.

    Defaults to the cubic ``-u^3`` nonlinearity (q=1).  ``g_modes`` lists the
    forced sine modes (1-based).
    """
    basis = dirichlet_interval(K, nu)
    if a is None:
        a = [0.0] * (2 * q + 1) + [-1.0]
    if len(a) != 2 * q + 2:
        raise ValueError("coefficient list must have length 2q+2")
    drift = rd_drift(basis, a)
    G = np.zeros((basis.dim, len(g_modes)))
    for j, k in enumerate(g_modes):
        G[k - 1, j] = 1.0
    pointwise = PointwisePolynomial(basis, a)
    return {"basis": basis, "drift": drift, "G": G, "pointwise": pointwise, "a": list(a)}


# ---------------------------------------------------------------------------
# 2D vorticity
# ---------------------------------------------------------------------------


def _canon(m):
    """Half-lattice representative and the sin-parity sign of a wave vector."""
    mx, my = int(m[0]), int(m[1])
    if mx > 0 or (mx == 0 and my > 0):
        return (mx, my), 1.0
    return (-mx, -my), -1.0


def ns_pair_interactions(k, l):
    """Exact advection interactions of two unnormalized wave vectors.

    Returns a list of raw contributions ((kind_in1, kind_in2), target kind,
    target vector, coefficient) for B(K w1, w2) with w1 a k-mode and w2 an
    l-mode, before half-lattice canonicalization.
    """
    t = float(-k[1] * l[0] + k[0] * l[1])  # k_perp . l
    ksq = float(k[0] ** 2 + k[1] ** 2)
    if t == 0.0:
        return []
    plus = (k[0] + l[0], k[1] + l[1])
    minus = (k[0] - l[0], k[1] - l[1])
    a = t / (2.0 * ksq)
    return [
        (("cos", "cos"), "cos", minus, a),
        (("cos", "cos"), "cos", plus, -a),
        (("cos", "sin"), "sin", plus, -a),
        (("cos", "sin"), "sin", minus, -a),
        (("sin", "cos"), "sin", plus, -a),
        (("sin", "cos"), "sin", minus, a),
        (("sin", "sin"), "cos", plus, a),
        (("sin", "sin"), "cos", minus, a),
    ]


def ns_drift(basis):
    """Drift -L + sym(B(K., .)) for the vorticity preset on the torus."""
    index = {lab: j for j, lab in enumerate(basis.labels)}
    reps = []
    seen = set()
    for lab in basis.labels:
        k = lab[1:]
        if k not in seen:
            seen.add(k)
            reps.append(k)
    # normalized modes carry 1/(sqrt(2) pi); a product of two inputs against
    # one output rescales every raw coefficient by the same global factor
    scale = 1.0 / (np.sqrt(2.0) * np.pi)
    form = MultilinearForm(2, basis.dim)
    for k in reps:
        for l in reps:
            for (kind1, kind2), kind_out, target, coeff in ns_pair_interactions(k, l):
                if target == (0, 0):
                    continue  # mean-zero projection
                rep, sign = _canon(target)
                if max(abs(rep[0]), abs(rep[1])) > basis.K:
                    continue  # Galerkin truncation
                if kind_out == "sin":
                    coeff = coeff * sign
                i1 = index[(kind1,) + tuple(k)]
                i2 = index[(kind2,) + tuple(l)]
                out = index[(kind_out,) + rep]
                form.add_raw((i1, i2), out, scale * coeff)
    form.prune(1e-15)
    return PolyVectorField(basis, None, "neg_L", (form,), max_degree=5)


def ns_forcing_fields(basis, z0):
    """cos and sin directions for each +/- class of wave vectors in z0."""
    index = {lab: j for j, lab in enumerate(basis.labels)}
    cols = []
    seen = set()
    for k in z0:
        rep, _ = _canon(k)
        if rep in seen:
            continue
        seen.add(rep)
        for kind in ("cos", "sin"):
            e = np.zeros(basis.dim)
            e[index[(kind,) + rep]] = 1.0
            cols.append(e)
    return np.stack(cols, axis=1)


def ns_preset(K=4, nu=0.1, z0=((1, 0), (-1, 0), (1, 1), (-1, -1))):
    """Vorticity preset: basis, drift, forcing columns for the given wave set."""
    basis = torus_2d(K, nu)
    drift = ns_drift(basis)
    G = ns_forcing_fields(basis, z0)
    return {"basis": basis, "drift": drift, "G": G, "z0": [tuple(k) for k in z0]}


def biot_savart_velocity(basis, w_coeffs, n_points):
    """Velocity samples (u1, u2) on the grid for a vorticity coefficient vector."""
    pts, _, _ = grid_rule(basis, n_points)
    u1 = np.zeros(pts.shape[0])
    u2 = np.zeros(pts.shape[0])
    scale = 1.0 / (np.sqrt(2.0) * np.pi)
    for j, lab in enumerate(basis.labels):
        c = w_coeffs[j]
        if c == 0.0:
            continue
        kind, kx, ky = lab
        ksq = kx * kx + ky * ky
        phase = kx * pts[:, 0] + ky * pts[:, 1]
        # K cos_k = k_perp sin_k / |k|^2 ; K sin_k = -k_perp cos_k / |k|^2
        if kind == "cos":
            base = np.sin(phase) / ksq
        else:
            base = -np.cos(phase) / ksq
        u1 += c * scale * (-ky) * base
        u2 += c * scale * (kx) * base
    return u1, u2
