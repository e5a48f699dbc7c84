"""Polynomials of Brownian motions with (possibly non-adapted) process
coefficients: evaluation, quadratic variation in closed form, degree
reduction, the Ito split for constant coefficients, the smallness-event
calculus, and two deterministic Norris-type implications.

Coefficients are stored as symmetric tensors on sorted index tuples with the
full-sum convention

    Z(t) = sum_alpha sum_{sorted s} A[s](t) * mult(s) * prod_{i in s} W_i(t),

so a plain product ``c W_1 W_2`` enters as tensor value c/2 on the key (1,2).
Coefficient values are floats (constants) or arrays on the path grid.

The event thresholds of the smallness calculus involve powers like
``eps**(8**(n+2))`` that underflow float64; every comparison is therefore
done between base-2 logarithms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .sde import holder_constant

__all__ = [
    "WienerPolynomial",
    "evaluate_z",
    "discrete_qv",
    "qv_formula",
    "reduce_zr",
    "coefficient_recovery_check",
    "ito_decompose",
    "norris_lp_check",
    "integral_derivative_check",
    "build_partition",
    "epsilon0_proxy",
    "event_calculus",
    "GridTooCoarse",
]


def _mult(key):
    m = math.factorial(len(key))
    for v in set(key):
        m //= math.factorial(key.count(v))
    return m


class WienerPolynomial:
    """Symmetric coefficient family up to a fixed degree over d drivers."""

    def __init__(self, d, degree, coeffs=None):
        self.d = int(d)
        self.degree = int(degree)
        # coeffs[alpha]: sorted index tuple -> float or sampled array
        self.coeffs = {a: {} for a in range(self.degree + 1)}
        if coeffs:
            for a, cmap in coeffs.items():
                for key, val in cmap.items():
                    self.set_tensor(key, val)

    def set_tensor(self, key, value):
        """Set the symmetric tensor value at a sorted index tuple."""
        key = tuple(sorted(int(i) for i in key))
        if len(key) > self.degree:
            raise ValueError("tuple longer than the declared degree")
        if any(i < 0 or i >= self.d for i in key):
            raise ValueError("driver index out of range")
        self.coeffs[len(key)][key] = value

    def set_monomial(self, key, value):
        """Add ``value * prod W[key]``; divides by the permutation count."""
        key = tuple(sorted(int(i) for i in key))
        self.set_tensor(key, value / _mult(key) if len(key) else value)

    @staticmethod
    def from_monomials(d, degree, monomials):
        Z = WienerPolynomial(d, degree)
        for key, val in monomials.items():
            Z.set_monomial(key, val)
        return Z

    def items(self):
        for a in range(self.degree + 1):
            for key, val in sorted(self.coeffs[a].items()):
                yield a, key, val

    def is_constant(self):
        return all(np.isscalar(v) or np.ndim(v) == 0 for _, _, v in self.items())

    def snapshot(self, node):
        """Constant-coefficient polynomial frozen at one grid node."""
        Z = WienerPolynomial(self.d, self.degree)
        for a, key, val in self.items():
            Z.set_tensor(key, float(val if np.isscalar(val) else val[node]))
        return Z

    def max_abs_coeff(self, include_alpha0=True, node_range=None):
        """Largest coefficient magnitude (tensor values), optionally windowed."""
        best = 0.0
        for a, key, val in self.items():
            if a == 0 and not include_alpha0:
                continue
            arr = np.atleast_1d(np.asarray(val, dtype=float))
            if node_range is not None and arr.size > 1:
                arr = arr[node_range[0] : node_range[1] + 1]
            best = max(best, float(np.abs(arr).max()))
        return best


def _monomial_cache(W):
    values = W.values
    cache = {(): np.ones(values.shape[1])}

    def mono(key):
        if key not in cache:
            cache[key] = mono(key[:-1]) * values[key[-1]]
        return cache[key]

    return mono


def evaluate_z(Z, W):
    """Sample path of the polynomial on the grid of W."""
    mono = _monomial_cache(W)
    out = np.zeros(W.steps + 1)
    for a, key, val in Z.items():
        arr = np.asarray(val, dtype=float)
        if arr.ndim == 1 and arr.shape[0] != W.steps + 1:
            raise ValueError("coefficient process lives on a different grid")
        out = out + arr * _mult(key) * mono(key)
    return out


def discrete_qv(z1, z2, times, mesh):
    """Partition sum of increment products at the given mesh width.

    The partition must be nested in the sampling grid.
    """
    dt = times[1] - times[0]
    stride = mesh / dt
    k = int(round(stride))
    if k < 1 or abs(stride - k) > 1e-8:
        raise ValueError("partition is not nested in the sampling grid")
    a = np.asarray(z1)[::k]
    b = np.asarray(z2)[::k]
    return float(np.sum(np.diff(a) * np.diff(b)))


def _left_sum(values, dt, lo=0, hi=None):
    hi = len(values) - 1 if hi is None else hi
    return float(np.sum(values[lo:hi]) * dt)


def qv_formula(Z1, Z2, W, interval=None):
    """Closed-form cross quadratic variation over an interval.

    Integrates the delta-paired coefficient products: every shared driver
    between a degree-a key of Z1 and a degree-b key of Z2 contributes the
    product of both coefficient processes and the two reduced monomials.
    """
    mono = _monomial_cache(W)
    lo, hi = _interval_nodes(W, interval)
    integrand = np.zeros(W.steps + 1)
    items1 = [(a, k, np.asarray(v, dtype=float)) for a, k, v in Z1.items() if a >= 1]
    items2 = [(b, k, np.asarray(v, dtype=float)) for b, k, v in Z2.items() if b >= 1]
    for a, k1, v1 in items1:
        m1 = _mult(k1)
        for b, k2, v2 in items2:
            m2 = _mult(k2)
            shared = set(k1) & set(k2)
            for r in shared:
                w1 = m1 * k1.count(r)
                w2 = m2 * k2.count(r)
                r1 = list(k1)
                r1.remove(r)
                r2 = list(k2)
                r2.remove(r)
                integrand = integrand + (v1 * v2) * (w1 * w2) * mono(tuple(r1)) * mono(tuple(r2))
    return _left_sum(integrand, W.dt, lo, hi)


def reduce_zr(Z, r):
    """Degree-reduced polynomial contracting one driver index.

    The quadratic variation satisfies <Z>_I = sum_r int_I Z_r(s)^2 ds with
    Z_r the returned polynomial; tensor rule: the reduced value at s' is
    (|s'|+1) * A[s' + (r,)].
    """
    if Z.degree < 1:
        raise ValueError("cannot reduce a constant polynomial")
    out = WienerPolynomial(Z.d, Z.degree - 1)
    for a, key, val in Z.items():
        if a == 0 or r not in key:
            continue
        reduced = list(key)
        reduced.remove(r)
        rkey = tuple(reduced)
        prev = out.coeffs[len(rkey)].get(rkey, 0.0)
        out.coeffs[len(rkey)][rkey] = prev + a * np.asarray(val, dtype=float)
    return out


def coefficient_recovery_check(Z, W, tol, tol_prime=None):
    """Walk the reduction tree and report where mass survives.

    A polynomial that vanishes identically has identically vanishing
    coefficients; this runs the constructive recursion on samples: node
    (r_1..r_k) holds sup |Z_{r_1..r_k}| over the grid.  ``consistent`` is the
    sampled implication: either sup|Z| exceeds ``tol`` or every coefficient
    magnitude stays below ``tol_prime``.
    """
    if tol_prime is None:
        tol_prime = tol ** (1.0 / 3.0**max(Z.degree, 1))
    sups = {}
    nonzero_leaves = []

    def walk(poly, prefix):
        sups[prefix] = float(np.abs(evaluate_z(poly, W)).max())
        if poly.degree == 0:
            val = poly.coeffs[0].get((), 0.0)
            if float(np.abs(np.asarray(val)).max()) > tol_prime:
                nonzero_leaves.append(prefix)
            return
        for r in range(poly.d):
            walk(reduce_zr(poly, r), prefix + (r,))

    walk(Z, ())
    max_coeff = Z.max_abs_coeff(include_alpha0=True)
    consistent = (sups[()] > tol) or (max_coeff <= tol_prime)
    return {
        "sups": sups,
        "max_coeff": max_coeff,
        "nonzero_leaves": nonzero_leaves,
        "consistent": consistent,
        "tol": tol,
        "tol_prime": tol_prime,
    }


def _interval_nodes(W, interval):
    if interval is None:
        return 0, W.steps
    lo, hi = interval
    i = int(round(lo / W.dt))
    j = int(round(hi / W.dt))
    if not (0 <= i < j <= W.steps):
        raise ValueError("interval must cover at least one step of the grid")
    return i, j


def ito_decompose(Z, W, interval=None):
    """Finite-variation / martingale split for constant coefficients.

    Returns (V, M) sampled on [t_1, t_2]: V collects the polynomial value at
    t_1 plus the delta-paired Lebesgue integrals, M is the remainder (the
    stochastic-integral part).  Z = V + M holds exactly by construction.
    """
    if not Z.is_constant():
        raise ValueError("the split needs constant coefficients")
    lo, hi = _interval_nodes(W, interval)
    mono = _monomial_cache(W)
    z = evaluate_z(Z, W)
    V = np.full(W.steps + 1, z[lo])
    dt = W.dt
    for a, key, val in Z.items():
        if a < 2:
            continue
        lam = float(val)
        m = _mult(key)
        for v in set(key):
            cv = key.count(v)
            if cv < 2:
                continue
            reduced = list(key)
            reduced.remove(v)
            reduced.remove(v)
            pair_count = cv * (cv - 1)
            series = mono(tuple(reduced))
            csum = np.zeros(W.steps + 1)
            csum[lo + 1 :] = np.cumsum(series[lo:-1]) * dt
            V = V + 0.5 * lam * m * pair_count * csum
    M = z - V
    V = V[lo : hi + 1]
    M = M[lo : hi + 1] - M[lo]  # martingale part starts at zero
    return V, M


# ---------------------------------------------------------------------------
# deterministic Norris-type implications
# ---------------------------------------------------------------------------


def norris_lp_check(values, times, l, rho, eps, c, gamma):
    """Smallness transfer from an integral to the sup norm.

    Hypotheses: int |f|^l < eps and Hol_rho(f) < c eps^(-gamma) with
    rho > gamma.  Conclusion: sup|f| < (1+c) eps^((rho-gamma)/(1+l*rho)).
    Returns the indicator record; ``ok`` is the implication.
    """
    if not rho > gamma:
        raise ValueError("need rho > gamma")
    values = np.asarray(values, dtype=float)
    dt = times[1] - times[0]
    integral = float(np.sum(np.abs(values[:-1]) ** l) * dt)
    hol = holder_constant(values, times, rho)
    sup = float(np.abs(values).max())
    bound = (1.0 + c) * eps ** ((rho - gamma) / (1.0 + l * rho))
    hyp = integral < eps and hol < c * eps ** (-gamma)
    concl = sup < bound
    return {
        "integral": integral,
        "holder": hol,
        "sup": sup,
        "bound": bound,
        "hypothesis": hyp,
        "conclusion": concl,
        "ok": (not hyp) or concl,
    }


def integral_derivative_check(g0, h_values, times, alpha, gamma, c, eps):
    """Smallness transfer from a primitive to its integrand.

    With G = g0 + int H, Hol_alpha(H) <= c eps^(-gamma), alpha > gamma > 0 and
    horizon t >= eps^((1+gamma)/(1+alpha)):  sup|G| <= eps  implies
    sup|H| <= (2+c) eps^((alpha-gamma)/(1+alpha)).  Precondition failures are
    reported, not asserted.
    """
    h_values = np.asarray(h_values, dtype=float)
    dt = times[1] - times[0]
    G = g0 + np.concatenate([[0.0], np.cumsum(h_values[:-1]) * dt])
    hol = holder_constant(h_values, times, alpha)
    pre_ok = (
        alpha > gamma > 0
        and hol <= c * eps ** (-gamma)
        and times[-1] >= eps ** ((1.0 + gamma) / (1.0 + alpha))
    )
    supG = float(np.abs(G).max())
    supH = float(np.abs(h_values).max())
    bound = (2.0 + c) * eps ** ((alpha - gamma) / (1.0 + alpha))
    hyp = supG <= eps
    concl = supH <= bound
    return {
        "precondition": pre_ok,
        "sup_G": supG,
        "sup_H": supH,
        "bound": bound,
        "hypothesis": hyp,
        "conclusion": concl,
        "ok": (not pre_ok) or (not hyp) or concl,
    }


# ---------------------------------------------------------------------------
# smallness-event calculus
# ---------------------------------------------------------------------------


class GridTooCoarse(ValueError):
    """The interval partition cannot be resolved on the sampling grid."""


def build_partition(T, steps, log2_length, min_nodes=4):
    """Grid-snapped partition with lengths in (half, full] of 2**log2_length.

    Raises :class:`GridTooCoarse` when intervals would span fewer than
    ``min_nodes`` grid steps.
    """
    log2_T = math.log2(T)
    m = int(2.0 ** min(log2_T - log2_length, 60)) + 1
    if steps / m < min_nodes:
        raise GridTooCoarse(
            f"partition needs {m} intervals on {steps} steps; increase the step count"
        )
    edges = np.rint(np.linspace(0, steps, m + 1)).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def epsilon0_proxy(n, d, T=1.0):
    """Largest eps = 2^(-k) where the chain inequalities of the smallness
    embedding hold, evaluated on base-2 logarithms.

    The two binding displays are
      eps^(8^(n+2)) + (n+1) d^n eps^(-1+(3/2)8^(n+1)-1/5) < eps^((5/4)8^(n+1))
      eps  -  eps^(-1+(3/2)8^(n+1))                       > eps^(2+1/(n+1)) ;
    the first pins eps through the gap (1/4)8^(n+1), the second only keeps
    eps away from 1.
    """
    gap = 0.25 * 8 ** (n + 1) - 1.2
    const = math.log2(2.0 * max(n + 1, 1) * max(d, 1) ** n)
    for k in range(1, 200):
        neg_le = float(k)  # -log2(eps)
        cond1 = gap * neg_le > const
        cond2 = (1.0 + 1.0 / (n + 1)) * neg_le > 1.0
        if cond1 and cond2:
            return 2.0 ** (-k)
    return 0.0


def _coeff_path_stats(Z, W, subsample=16):
    """sup and Lipschitz constants of every coefficient process (alpha >= 1)."""
    times = W.times
    sups, lips = {}, {}
    for a, key, val in Z.items():
        if a == 0:
            continue
        arr = np.asarray(val, dtype=float)
        if arr.ndim == 0:
            sups[key] = float(abs(arr))
            lips[key] = 0.0
        else:
            sups[key] = float(np.abs(arr).max())
            lips[key] = float(np.max(np.abs(np.diff(arr)) / np.diff(times)))
    return sups, lips


def _monomial_quarter_norms(W, n, subsample=16):
    """Norm_{1/4} = max(sup, Hol_{1/4}) of every driver monomial, degrees 1..n."""
    values = W.values
    out = {}
    for a in range(1, n + 1):
        for key in itertools.combinations_with_replacement(range(W.d), a):
            series = np.ones(W.steps + 1)
            for i in key:
                series = series * values[i]
            sup = float(np.abs(series).max())
            hol = holder_constant(series, W.times, 0.25, subsample)
            out[key] = max(sup, hol)
    return out


def event_calculus(Z, W, eps, n=None, variant="embedding", g0=0.0, subsample=16):
    """Evaluate the smallness events and assert the pathwise inclusion.

    ``variant='embedding'`` checks  D & E^c & C  inside  B^c | F; the
    ``'integral'`` variant replaces D by smallness of g = g0 + int Z and
    rescales every threshold through the eighth-root ladder.  F is certified
    through the constant-coefficient snapshot at interval left endpoints; a
    needed-but-unresolvable partition raises :class:`GridTooCoarse`.

    Returns the indicator record; ``violation`` is True when the left side
    holds but neither right-side event could be certified.
    """
    n = Z.degree if n is None else n
    le = math.log2(eps)
    z = evaluate_z(Z, W)
    sups, lips = _coeff_path_stats(Z, W, subsample)
    record = {"eps": eps, "n": n, "variant": variant}

    if variant == "embedding":
        log2_D = 8 ** (n + 2) * le
        eps_E = eps
        log2_C = -le
        log2_B = -le / 5.0
        log2_Dstar = 1.25 * 8 ** (n + 1) * le
        log2_lam = (2.0 + 1.0 / (n + 1)) * le
        sup_target = np.abs(z)
    elif variant == "integral":
        delta = 8.0 ** (-(n + 3))
        log2_D = le  # on g = g0 + int Z
        eps_E = 2.0 ** (delta * le)
        log2_C = -delta * le
        log2_B = -delta * le / 5.0
        log2_Dstar = (5.0 / 256.0) * le
        log2_lam = delta * (2.0 + 1.0 / (n + 1)) * le
        g = g0 + np.concatenate([[0.0], np.cumsum(z[:-1]) * W.dt])
        sup_target = np.abs(g)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    with np.errstate(divide="ignore"):
        log2_sup = float(np.log2(sup_target.max())) if sup_target.max() > 0 else -np.inf
    record["D"] = log2_sup < log2_D
    record["E"] = all(s < eps_E for s in sups.values())
    record["C"] = all(np.log2(max(l, 1e-300)) < log2_C for l in lips.values())
    mono_norms = _monomial_quarter_norms(W, n, subsample)
    record["B"] = all(np.log2(max(v, 1e-300)) < log2_B for v in mono_norms.values())
    lhs = record["D"] and (not record["E"]) and record["C"]
    if variant == "integral":
        # the localization set also caps the coefficient sups
        lhs = lhs and all(np.log2(max(s, 1e-300)) < log2_C for s in sups.values())
    record["lhs"] = lhs

    record["F"] = None
    record["partition"] = None
    record["violation"] = False
    if not lhs:
        return record
    if not record["B"]:
        return record  # right side holds through B^c

    # F must be certified: build the partition from the D* threshold
    log2_len = 1.5 * 8 ** (n + 1) * log2_Dstar
    part = build_partition(W.T, W.steps, log2_len)
    record["partition"] = part
    witnesses = []
    any_local_exc = False
    for (a, b) in part:
        local_exc = any(
            np.abs(np.asarray(val, dtype=float))[a : b + 1].max() >= eps_E
            if np.ndim(val)
            else abs(val) >= eps_E
            for alpha, key, val in Z.items()
            if alpha >= 1
        )
        if not local_exc:
            continue
        any_local_exc = True
        snap = Z.snapshot(a)
        lam_max = snap.max_abs_coeff(include_alpha0=True)
        in_lambda = np.log2(max(lam_max, 1e-300)) >= log2_lam
        zl = evaluate_z(snap, W)[a : b + 1]
        small = np.log2(max(np.abs(zl).max(), 1e-300)) < log2_Dstar
        if in_lambda and small:
            witnesses.append((a, b))
    record["F"] = bool(witnesses)
    record["witnesses"] = witnesses
    record["violation"] = not record["F"]
    return record
