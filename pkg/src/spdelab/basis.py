"""Truncated eigenbases of the dissipative operator, Sobolev scales, grid transforms.

Two concrete domains are supported:

* ``dirichlet_interval`` -- [0,1] with zero boundary values, real sine basis
  ``e_k(x) = sqrt(2) sin(k pi x)`` and eigenvalues ``lambda_k = nu pi^2 k^2``.
* ``torus2d`` -- [0,2pi]^2, mean-zero, real basis ``cos(k.x)/(sqrt(2) pi)`` and
  ``sin(k.x)/(sqrt(2) pi)`` over a half-lattice of wave vectors, eigenvalues
  ``lambda_k = nu |k|^2``.

The viscosity is folded into the operator, so ``apply_l`` multiplies mode k by
``lambda_k``.  Sobolev inner products use spectral weights ``lambda_k^(2s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "BasisSpec",
    "SpectralField",
    "dirichlet_interval",
    "torus_2d",
    "sobolev_inner",
    "sobolev_norm",
    "apply_l",
    "to_grid",
    "from_grid",
    "grid_rule",
]


def _torus_half_lattice(K):
    """Half-lattice representatives (kx, ky) with |k|_inf <= K, one per {k,-k} pair.

    Sorted by (|k|^2, kx, ky) so the eigenvalue sequence is nondecreasing.
    """
    reps = []
    for kx in range(-K, K + 1):
        for ky in range(-K, K + 1):
            if (kx, ky) == (0, 0):
                continue
            if kx > 0 or (kx == 0 and ky > 0):
                reps.append((kx, ky))
    reps.sort(key=lambda k: (k[0] * k[0] + k[1] * k[1], k[0], k[1]))
    return tuple(reps)


@dataclass(frozen=True)
class BasisSpec:
    """Description of a truncated eigenbasis.

    ``labels`` identifies each real basis function: ``('sin', k)`` on the
    interval, ``('cos', kx, ky)`` / ``('sin', kx, ky)`` on the torus.
    """

    domain: str
    K: int
    nu: float
    eigenvalues: np.ndarray = field(repr=False)
    labels: tuple = field(repr=False)

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a nonempty 1-d array")
        if not np.all(lam > 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(lam) < -1e-15):
            raise ValueError("eigenvalues must be nondecreasing")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dim(self):
        return self.eigenvalues.size

    def __eq__(self, other):
        if not isinstance(other, BasisSpec):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.K == other.K
            and self.nu == other.nu
            and self.labels == other.labels
        )

    def __hash__(self):
        return hash((self.domain, self.K, self.nu, self.labels))

    def index_of(self, label):
        """Position of a basis label, e.g. ('sin', 3) or ('cos', 1, 1)."""
        return self.labels.index(label)

    def describe(self):
        """Flat description used in run manifests."""
        return {"domain": self.domain, "K": self.K, "nu": self.nu}


def dirichlet_interval(K, nu=1.0):
    """Sine basis on [0,1] with Dirichlet ends; lambda_k = nu pi^2 k^2."""
    if K < 1:
        raise ValueError("need at least one mode")
    k = np.arange(1, K + 1)
    lam = nu * np.pi**2 * k.astype(float) ** 2
    labels = tuple(("sin", int(kk)) for kk in k)
    return BasisSpec("dirichlet_interval", K, float(nu), lam, labels)


def torus_2d(K, nu=1.0):
    """Mean-zero real trigonometric basis on [0,2pi]^2; lambda_k = nu |k|^2."""
    if K < 1:
        raise ValueError("need at least one mode")
    reps = _torus_half_lattice(K)
    labels = []
    lam = []
    for kx, ky in reps:
        for kind in ("cos", "sin"):
            labels.append((kind, kx, ky))
            lam.append(nu * float(kx * kx + ky * ky))
    return BasisSpec("torus2d", K, float(nu), np.array(lam), tuple(labels))


@dataclass(frozen=True)
class SpectralField:
    """Coefficient vector of a function in a truncated eigenbasis."""

    basis: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.dim,):
            raise ValueError(
                f"coefficient length {c.shape} does not match basis dim {self.basis.dim}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @staticmethod
    def zero(basis):
        return SpectralField(basis, np.zeros(basis.dim))

    @staticmethod
    def mode(basis, index, amplitude=1.0):
        c = np.zeros(basis.dim)
        c[index] = amplitude
        return SpectralField(basis, c)

    def __add__(self, other):
        _check_same_basis(self, other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same_basis(self, other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.basis, self.coeffs * float(scalar))

    __rmul__ = __mul__


def _check_same_basis(u, v):
    if u.basis != v.basis:
        raise ValueError("fields live on different bases")


def sobolev_inner(u, v, s=0.0):
    """Spectrally weighted inner product  sum_k lambda_k^(2s) u_k v_k.

    ``s = 0`` is the base space inner product; negative ``s`` gives dual norms.
    """
    _check_same_basis(u, v)
    with np.errstate(over="ignore"):
        w = u.basis.eigenvalues ** (2.0 * s)
        out = float(np.dot(w * u.coeffs, v.coeffs))
    if not np.isfinite(out):
        raise ValueError(f"inner product overflowed for s={s}")
    return out


def sobolev_norm(u, s=0.0):
    return np.sqrt(max(sobolev_inner(u, u, s), 0.0))


def apply_l(u):
    """Apply the diagonal positive operator: mode k is scaled by lambda_k."""
    out = u.basis.eigenvalues * u.coeffs
    if not np.all(np.isfinite(out)):
        raise ValueError("operator application produced non-finite values")
    return SpectralField(u.basis, out)


# ---------------------------------------------------------------------------
# grid <-> coefficient transforms
# ---------------------------------------------------------------------------
#
# Interval: Gauss-Legendre nodes; the quadrature is used to project pointwise
# nonlinearities back onto the truncation.  Empirically the rule is exact to
# ~1e-13 once the node count exceeds (total trig degree) * K * pi / 2, so
# suggested_points adds a safety margin on top of that phase count.
#
# Torus: uniform tensor grid; the rectangle rule is exact for trigonometric
# polynomials with per-axis frequency below the grid size.


@lru_cache(maxsize=64)
def _gl_rule01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=64)
def grid_rule(basis, n_points):
    """Quadrature nodes, weights and the basis value matrix B[node, mode].

    For the torus ``n_points`` is the per-axis grid size.
    """
    if basis.domain == "dirichlet_interval":
        if n_points < 2 * basis.dim:
            raise ValueError(
                f"grid undersampled: need at least {2 * basis.dim} points, got {n_points}"
            )
        x, w = _gl_rule01(n_points)
        k = np.array([lab[1] for lab in basis.labels], dtype=float)
        B = np.sqrt(2.0) * np.sin(np.pi * np.outer(x, k))
        return x, w, B
    if basis.domain == "torus2d":
        if n_points * n_points < 2 * basis.dim:
            raise ValueError(
                f"grid undersampled: need per-axis size >= {int(np.ceil(np.sqrt(2 * basis.dim)))}"
            )
        g = np.arange(n_points) * (2.0 * np.pi / n_points)
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        w = np.full(pts.shape[0], (2.0 * np.pi / n_points) ** 2)
        B = np.empty((pts.shape[0], basis.dim))
        scale = 1.0 / (np.sqrt(2.0) * np.pi)
        for j, lab in enumerate(basis.labels):
            kind, kx, ky = lab
            phase = kx * pts[:, 0] + ky * pts[:, 1]
            B[:, j] = scale * (np.cos(phase) if kind == "cos" else np.sin(phase))
        return pts, w, B
    raise ValueError(f"unknown domain {basis.domain!r}")


def suggested_points(basis, total_degree):
    """Node count that integrates degree-``total_degree`` basis products exactly."""
    if basis.domain == "dirichlet_interval":
        phase = total_degree * basis.K * np.pi
        return max(2 * basis.dim, int(np.ceil(phase / 2.0)) + 24)
    return max(
        2 * (total_degree * basis.K) + 1,
        int(np.ceil(np.sqrt(2 * basis.dim))) + 1,
    )


def to_grid(u, n_points):
    """Point values of a field on the quadrature grid (flattened for the torus)."""
    _, _, B = grid_rule(u.basis, n_points)
    return B @ u.coeffs


def from_grid(basis, values, n_points):
    """Project grid samples back onto the truncation via the quadrature rule.

    For fields inside the truncation this inverts :func:`to_grid` to roughly
    1e-12 provided the grid is not undersampled.
    """
    values = np.asarray(values, dtype=float)
    _, w, B = grid_rule(basis, n_points)
    if values.shape[0] != B.shape[0]:
        raise ValueError("value vector does not match the quadrature grid")
    return SpectralField(basis, B.T @ (w * values))
