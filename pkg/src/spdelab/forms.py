"""Polynomial vector fields on a truncation: symmetric multilinear forms,
evaluation, Frechet derivatives, Lie brackets, and the shift expansion.

A degree-j :class:`MultilinearForm` stores the symmetric coefficient tensor
sparsely on sorted index tuples.  The stored value at a sorted key equals the
tensor entry (identical across permutations); full sums over all ordered index
tuples are recovered with multiplicity factors.  All contraction identities
below follow from that convention:

* equal arguments:      N(x,..,x)   = sum_s A[s] * mult(s) * prod(x[s])
* one direction:        DN(x)h      = sum_s A[s] * mult(s) * sum_v c_v h[v] prod(x[s\\v])
* constant contraction: the degree-(j-1) tensor of DN(.)g is
                        A'[s'] = sum_v A[s'+v] * g[v] * mult(s'+v) c_v / mult(s')

where c_v counts occurrences of index v in the key and mult(s) is the number
of distinct permutations of s.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import SpectralField, sobolev_norm

__all__ = [
    "MultilinearForm",
    "PolyVectorField",
    "evaluate",
    "frechet",
    "lie_bracket",
    "lie_bracket_sym",
    "constant_bracket_chain",
    "iterated_bracket",
    "expand_shift",
    "multilinear_bound",
]

MAX_DEGREE_DEFAULT = 5


def _multiplicity(key):
    """Number of distinct permutations of the sorted tuple ``key``."""
    m = math.factorial(len(key))
    for v in set(key):
        m //= math.factorial(key.count(v))
    return m


class MultilinearForm:
    """Sparse symmetric multilinear form of fixed degree on a truncation."""

    def __init__(self, degree, dim, entries=None):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.degree = int(degree)
        self.dim = int(dim)
        # entries: sorted input tuple -> {output index: tensor value}
        self.entries = {}
        if entries:
            for key, outs in entries.items():
                key = tuple(sorted(int(i) for i in key))
                self._check_key(key)
                slot = self.entries.setdefault(key, {})
                for out, c in outs.items():
                    slot[int(out)] = slot.get(int(out), 0.0) + float(c)
        self._compiled = None

    def _check_key(self, key):
        if len(key) != self.degree:
            raise ValueError(f"key {key} has wrong arity for degree {self.degree}")
        if any(i < 0 or i >= self.dim for i in key):
            raise ValueError(f"key {key} out of range for dim {self.dim}")

    # -- construction ------------------------------------------------------

    def set_entry(self, key, out, value):
        """Set the symmetric tensor entry at a (sorted) index tuple."""
        key = tuple(sorted(int(i) for i in key))
        self._check_key(key)
        self.entries.setdefault(key, {})[int(out)] = float(value)
        self._compiled = None

    def add_raw(self, key, out, value):
        """Accumulate one ordered-tuple contribution and symmetrize.

        Adding ``value`` at an ordered tuple is equivalent to adding
        ``value / mult(sorted(key))`` to the symmetric tensor entry.
        """
        skey = tuple(sorted(int(i) for i in key))
        self._check_key(skey)
        slot = self.entries.setdefault(skey, {})
        slot[int(out)] = slot.get(int(out), 0.0) + float(value) / _multiplicity(skey)
        self._compiled = None

    def add_monomial(self, key, out, value):
        """Accumulate ``value * prod(x[key])`` into the full-sum representation."""
        self.add_raw(key, out, value)

    def prune(self, tol=0.0):
        for key in list(self.entries):
            outs = {o: c for o, c in self.entries[key].items() if abs(c) > tol}
            if outs:
                self.entries[key] = outs
            else:
                del self.entries[key]
        self._compiled = None
        return self

    def copy(self):
        return MultilinearForm(
            self.degree, self.dim, {k: dict(v) for k, v in self.entries.items()}
        )

    def scaled(self, a):
        out = self.copy()
        for key in out.entries:
            for o in out.entries[key]:
                out.entries[key][o] *= a
        return out

    def __iadd__(self, other):
        if other.degree != self.degree or other.dim != self.dim:
            raise ValueError("incompatible forms")
        for key, outs in other.entries.items():
            slot = self.entries.setdefault(key, {})
            for o, c in outs.items():
                slot[o] = slot.get(o, 0.0) + c
        self._compiled = None
        return self

    @property
    def nnz(self):
        return sum(len(v) for v in self.entries.values())

    # -- compiled arrays for the hot paths ---------------------------------

    def _compile(self):
        if self._compiled is not None:
            return self._compiled
        keys, outs, coeffs, mults = [], [], [], []
        r_keys, r_h, r_out, r_w = [], [], [], []
        for key, outmap in sorted(self.entries.items()):
            m = _multiplicity(key)
            for out, c in sorted(outmap.items()):
                keys.append(key)
                outs.append(out)
                coeffs.append(c)
                mults.append(m)
                for v in sorted(set(key)):
                    cv = key.count(v)
                    reduced = list(key)
                    reduced.remove(v)
                    r_keys.append(reduced)
                    r_h.append(v)
                    r_out.append(out)
                    r_w.append(c * m * cv)
        compiled = {
            "keys": np.array(keys, dtype=np.intp).reshape(len(keys), self.degree),
            "outs": np.array(outs, dtype=np.intp),
            "wmult": np.array(coeffs) * np.array(mults),
            "r_keys": np.array(r_keys, dtype=np.intp).reshape(len(r_keys), self.degree - 1),
            "r_h": np.array(r_h, dtype=np.intp),
            "r_out": np.array(r_out, dtype=np.intp),
            "r_w": np.array(r_w, dtype=float),
        }
        self._compiled = compiled
        return compiled

    @staticmethod
    def _gather_prod(x, keys):
        if keys.shape[1] == 0:
            return np.ones(keys.shape[0]) if x.ndim == 1 else np.ones((keys.shape[0],) + x.shape[1:])
        out = x[keys[:, 0]]
        for j in range(1, keys.shape[1]):
            out = out * x[keys[:, j]]
        return out

    @staticmethod
    def _align(arr, ndim):
        """Append trailing singleton axes so batch axes broadcast."""
        return arr.reshape(arr.shape + (1,) * (ndim - arr.ndim))

    def apply_equal(self, x):
        """N(x,...,x) for a coefficient vector (or a (dim, batch) matrix)."""
        c = self._compile()
        out = np.zeros_like(x)
        if c["outs"].size == 0:
            return out
        w = c["wmult"].reshape((-1,) + (1,) * (x.ndim - 1))
        np.add.at(out, c["outs"], w * self._gather_prod(x, c["keys"]))
        return out

    def dn(self, x, h):
        """Directional derivative  D[N(y,..,y)](x) h = degree * N(x,..,x,h).

        ``x`` and ``h`` may carry a trailing batch axis (shapes broadcast).
        """
        c = self._compile()
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        out = np.zeros(h.shape if h.ndim >= x.ndim else x.shape)
        if c["r_out"].size == 0:
            return out
        w = c["r_w"].reshape((-1,) + (1,) * (out.ndim - 1))
        terms = (
            w
            * self._align(self._gather_prod(x, c["r_keys"]), out.ndim)
            * self._align(h[c["r_h"]], out.ndim)
        )
        np.add.at(out, c["r_out"], terms)
        return out

    def dn_t(self, x, phi):
        """Transpose of :meth:`dn` in the base inner product."""
        c = self._compile()
        x = np.asarray(x, dtype=float)
        phi = np.asarray(phi, dtype=float)
        out = np.zeros(phi.shape if phi.ndim >= x.ndim else x.shape)
        if c["r_out"].size == 0:
            return out
        w = c["r_w"].reshape((-1,) + (1,) * (out.ndim - 1))
        terms = (
            w
            * self._align(self._gather_prod(x, c["r_keys"]), out.ndim)
            * self._align(phi[c["r_out"]], out.ndim)
        )
        np.add.at(out, c["r_h"], terms)
        return out

    def dn_matrix(self, x):
        """Dense Jacobian of y -> N(y,..,y) at x."""
        c = self._compile()
        J = np.zeros((self.dim, self.dim))
        if c["r_out"].size:
            vals = c["r_w"] * self._gather_prod(x, c["r_keys"])
            np.add.at(J, (c["r_out"], c["r_h"]), vals)
        return J

    def apply_mixed_batch(self, args):
        """N(v_1, ..., v_j) where each argument is (dim,) or (dim, batch).

        Uses the polarization identity, so the cost is 2^degree batched
        equal-argument applications.
        """
        j = self.degree
        args = [np.asarray(a, dtype=float) for a in args]
        if len(args) != j:
            raise ValueError("wrong number of arguments")
        ndim = max(a.ndim for a in args)
        if ndim > 1:
            args = [a if a.ndim == ndim else a.reshape(a.shape + (1,) * (ndim - a.ndim)) for a in args]
            args = list(np.broadcast_arrays(*args))
        out = None
        for signs in itertools.product((1.0, -1.0), repeat=j):
            v = sum(s * a for s, a in zip(signs, args))
            term = float(np.prod(signs)) * self.apply_equal(v)
            out = term if out is None else out + term
        return out / (2.0**j * math.factorial(j))

    def apply_mixed(self, args):
        """N(v_1, ..., v_j) for distinct argument vectors."""
        if len(args) != self.degree:
            raise ValueError("wrong number of arguments")
        args = [np.asarray(a, dtype=float) for a in args]
        out = np.zeros(self.dim)
        for key, outmap in self.entries.items():
            acc = 0.0
            for perm in set(itertools.permutations(key)):
                term = 1.0
                for slot, idx in enumerate(perm):
                    term *= args[slot][idx]
                acc += term
            if acc == 0.0:
                continue
            for o, c in outmap.items():
                out[o] += c * acc
        return out

    def contract_constant(self, g):
        """Degree-(j-1) form (or constant vector for j=1) of  x -> DN(x) g."""
        g = np.asarray(g, dtype=float)
        if self.degree == 1:
            const = np.zeros(self.dim)
            for key, outmap in self.entries.items():
                for o, c in outmap.items():
                    const[o] += c * g[key[0]]
            return const
        new = MultilinearForm(self.degree - 1, self.dim)
        for key, outmap in self.entries.items():
            m = _multiplicity(key)
            for v in set(key):
                cv = key.count(v)
                reduced = list(key)
                reduced.remove(v)
                rkey = tuple(reduced)
                w = g[v] * m * cv / _multiplicity(rkey)
                if w == 0.0:
                    continue
                for o, c in outmap.items():
                    slot = new.entries.setdefault(rkey, {})
                    slot[o] = slot.get(o, 0.0) + c * w
        return new.prune(0.0)

    # -- serialization ------------------------------------------------------

    def to_triples(self):
        return {
            "degree": self.degree,
            "dim": self.dim,
            "triples": [
                [list(key), out, c]
                for key, outs in sorted(self.entries.items())
                for out, c in sorted(outs.items())
            ],
        }

    @staticmethod
    def from_triples(payload):
        form = MultilinearForm(payload["degree"], payload["dim"])
        for key, out, c in payload["triples"]:
            form.set_entry(tuple(key), out, c)
        return form

    def to_json(self):
        return json.dumps(self.to_triples())

    @staticmethod
    def from_json(text):
        return MultilinearForm.from_triples(json.loads(text))


@dataclass(frozen=True)
class PolyVectorField:
    """Constant + linear part + symmetric multilinear forms of degree >= 2.

    ``linear`` is one of ``None``, ``'L'`` (multiply mode k by +lambda_k),
    ``'neg_L'`` (the dissipative drift, -lambda_k), or an explicit matrix.
    """

    basis: object
    constant: np.ndarray | None = None
    linear: object = None
    forms: tuple = ()
    max_degree: int = MAX_DEGREE_DEFAULT

    def __post_init__(self):
        degs = [f.degree for f in self.forms]
        if len(set(degs)) != len(degs):
            raise ValueError("form degrees must be distinct")
        if any(d > self.max_degree for d in degs):
            raise ValueError(f"degree exceeds configured maximum {self.max_degree}")
        if self.constant is not None:
            c = np.asarray(self.constant, dtype=float)
            if c.shape != (self.basis.dim,):
                raise ValueError("constant part has wrong length")
            object.__setattr__(self, "constant", c)
        object.__setattr__(self, "forms", tuple(sorted(self.forms, key=lambda f: f.degree)))

    @property
    def degree(self):
        d = 0
        if self.constant is not None and np.any(self.constant):
            d = 0
        if self.linear is not None:
            d = max(d, 1)
        if self.forms:
            d = max(d, self.forms[-1].degree)
        return d

    def top_form(self):
        if not self.forms:
            return None
        return self.forms[-1]

    def linear_matrix(self):
        lam = self.basis.eigenvalues
        if self.linear is None:
            return np.zeros((self.basis.dim, self.basis.dim))
        if isinstance(self.linear, str):
            if self.linear == "L":
                return np.diag(lam)
            if self.linear == "neg_L":
                return np.diag(-lam)
            raise ValueError(f"unknown linear tag {self.linear!r}")
        return np.asarray(self.linear, dtype=float)

    def _apply_linear(self, x):
        if self.linear is None:
            return np.zeros_like(x)
        if isinstance(self.linear, str):
            lam = self.basis.eigenvalues
            sign = 1.0 if self.linear == "L" else -1.0
            return sign * (lam.reshape((-1,) + (1,) * (x.ndim - 1)) * x)
        return np.asarray(self.linear) @ x

    # vector-level helpers used by the integrators; arrays in, arrays out
    def eval_vec(self, x):
        out = self._apply_linear(x)
        for f in self.forms:
            out = out + f.apply_equal(x)
        if self.constant is not None:
            out = out + (self.constant.reshape((-1,) + (1,) * (x.ndim - 1)) if x.ndim > 1 else self.constant)
        return out

    def jac_vec(self, x, h):
        out = self._apply_linear(h)
        for f in self.forms:
            out = out + f.dn(x, h)
        return out

    def jac_t_vec(self, x, phi):
        if self.linear is None:
            out = np.zeros_like(phi)
        elif isinstance(self.linear, str):
            out = self._apply_linear(phi)  # diagonal, self-adjoint
        else:
            out = np.asarray(self.linear).T @ phi
        for f in self.forms:
            out = out + f.dn_t(x, phi)
        return out

    def jac_matrix(self, x):
        J = self.linear_matrix()
        for f in self.forms:
            J = J + f.dn_matrix(x)
        return J

    def nonlinear_only(self):
        """Same field without constant and linear parts."""
        return PolyVectorField(self.basis, None, None, self.forms, self.max_degree)


def _as_field(basis, vec):
    return SpectralField(basis, np.asarray(vec, dtype=float))


def evaluate(P, x):
    """Value of the polynomial field at x: F_0 + Lin(x) + sum_j N_j(x,..,x)."""
    if x.basis != P.basis:
        raise ValueError("field and argument live on different bases")
    return _as_field(P.basis, P.eval_vec(x.coeffs))


def frechet(P, x, dirs):
    """i-th Frechet derivative at x applied to the directions ``dirs``.

    Returns sum_j j!/(j-i)! N_j(x^(j-i), dirs) plus the linear part for i=1.
    """
    if not dirs:
        raise ValueError("need at least one direction")
    i = len(dirs)
    vecs = [d.coeffs for d in dirs]
    out = np.zeros(P.basis.dim)
    if i == 1:
        out += P._apply_linear(vecs[0])
    for f in P.forms:
        j = f.degree
        if j < i:
            continue
        coef = math.factorial(j) / math.factorial(j - i)
        args = [x.coeffs] * (j - i) + vecs
        out += coef * f.apply_mixed(args)
    return _as_field(P.basis, out)


def lie_bracket(A, B, x):
    """[A,B](x) = DA(x) B(x) - DB(x) A(x), evaluated pointwise."""
    ax = A.eval_vec(x.coeffs)
    bx = B.eval_vec(x.coeffs)
    return _as_field(A.basis, A.jac_vec(x.coeffs, bx) - B.jac_vec(x.coeffs, ax))


def lie_bracket_sym(A, g):
    """[A, g] as a polynomial field, for a constant field g.

    Equals DA(.) g; degree drops by one.  Raises for non-constant second
    arguments, which have no closed form in this representation.
    """
    if isinstance(g, SpectralField):
        gv = g.coeffs
    elif isinstance(g, PolyVectorField):
        if g.linear is not None or g.forms:
            raise ValueError("symbolic bracket requires a constant second field")
        gv = g.constant if g.constant is not None else np.zeros(A.basis.dim)
    else:
        gv = np.asarray(g, dtype=float)
    const = np.zeros(A.basis.dim)
    if A.linear is not None:
        const += A.linear_matrix() @ gv
    forms = []
    for f in A.forms:
        contracted = f.contract_constant(gv)
        if isinstance(contracted, np.ndarray):
            const += contracted
        elif contracted.entries:
            forms.append(contracted)
    merged = {}
    for f in forms:
        if f.degree in merged:
            merged[f.degree] += f
        else:
            merged[f.degree] = f
    # degree-1 survivors become an explicit matrix so degrees stay unique
    linear = None
    if 1 in merged:
        lin_form = merged.pop(1)
        M = np.zeros((A.basis.dim, A.basis.dim))
        for key, outs in lin_form.entries.items():
            for o, c in outs.items():
                M[o, key[0]] += c
        linear = M
    return PolyVectorField(
        A.basis,
        const if np.any(const) else None,
        linear,
        tuple(merged.values()),
        A.max_degree,
    )


def constant_bracket_chain(Q, gs):
    """Left-nested bracket chain [Q, g_1, ..., g_i] for constant g's."""
    out = Q
    for g in gs:
        out = lie_bracket_sym(out, g)
    return out


def _compose_df_q(F, Q):
    """Polynomial field x -> DF(x) Q(x), by monomial accumulation."""
    basis = F.basis
    dim = basis.dim
    qconst = Q.constant if Q.constant is not None else np.zeros(dim)
    qlin = Q.linear_matrix() if Q.linear is not None else None

    const = np.zeros(dim)
    monomials = {}  # degree -> MultilinearForm accumulator

    def add_monomial(key, out, c):
        if not key:
            const[out] += c
            return
        deg = len(key)
        form = monomials.get(deg)
        if form is None:
            form = monomials[deg] = MultilinearForm(deg, dim)
        form.add_monomial(key, out, c)

    # linear part of F composed with Q
    if F.linear is not None:
        L = F.linear_matrix()
        const += L @ qconst
        if qlin is not None:
            M = L @ qlin
            for o, v in zip(*np.nonzero(M)):
                add_monomial((v,), o, M[o, v])
        for f in Q.forms:
            for key, outs in f.entries.items():
                m = _multiplicity(key)
                for o, c in outs.items():
                    col = L[:, o]
                    for oo in np.nonzero(col)[0]:
                        add_monomial(key, oo, c * m * col[oo])

    # multilinear parts: D F_j(x) q = j F_j(x^{j-1}, q), expanded over Q's pieces
    for f in F.forms:
        j = f.degree
        for key, outs in f.entries.items():
            m = _multiplicity(key)
            for v in set(key):
                cv = key.count(v)
                reduced = list(key)
                reduced.remove(v)
                w = m * cv  # full-sum weight of placing the contraction at index v
                for o, c in outs.items():
                    base = c * w
                    if qconst[v] != 0.0:
                        add_monomial(tuple(reduced), o, base * qconst[v])
                    if qlin is not None:
                        row = qlin[v]
                        for u in np.nonzero(row)[0]:
                            add_monomial(tuple(reduced) + (int(u),), o, base * row[u])
                    for qf in Q.forms:
                        for qkey, qouts in qf.entries.items():
                            qc = qouts.get(v)
                            if qc is None:
                                continue
                            qm = _multiplicity(qkey)
                            add_monomial(
                                tuple(reduced) + tuple(qkey), o, base * qc * qm
                            )
    forms = {}
    linear = None
    for deg, form in monomials.items():
        form.prune(0.0)
        if not form.entries:
            continue
        if deg == 1:
            M = np.zeros((dim, dim))
            for key, outs in form.entries.items():
                for o, c in outs.items():
                    M[o, key[0]] += c
            linear = M
        else:
            forms[deg] = form
    return PolyVectorField(
        basis,
        const if np.any(const) else None,
        linear,
        tuple(forms.values()),
        max(F.max_degree, Q.max_degree),
    )


def _is_constant(P):
    return P.linear is None and not P.forms


def full_bracket_sym(A, B):
    """[A,B] as a polynomial field: DA(.)B(.) - DB(.)A(.)."""
    deg = max(A.degree - 1, 0) + B.degree
    deg2 = max(B.degree - 1, 0) + A.degree
    cap = max(A.max_degree, B.max_degree)
    if max(deg, deg2) > cap:
        raise ValueError(
            f"bracket degree {max(deg, deg2)} exceeds configured maximum {cap}"
        )
    if _is_constant(B):
        return lie_bracket_sym(A, B)
    first = _compose_df_q(A, B)
    second = _compose_df_q(B, A)
    return _pvf_sub(first, second)


def _pvf_sub(P, Q):
    basis = P.basis
    const = np.zeros(basis.dim)
    if P.constant is not None:
        const += P.constant
    if Q.constant is not None:
        const -= Q.constant
    linear = None
    if P.linear is not None or Q.linear is not None:
        linear = P.linear_matrix() - Q.linear_matrix()
        if not np.any(linear):
            linear = None
    forms = {}
    for f in P.forms:
        forms[f.degree] = f.copy()
    for f in Q.forms:
        if f.degree in forms:
            forms[f.degree] += f.scaled(-1.0)
        else:
            forms[f.degree] = f.scaled(-1.0)
    kept = tuple(f for f in forms.values() if f.prune(0.0).entries)
    return PolyVectorField(
        basis,
        const if np.any(const) else None,
        linear,
        kept,
        max(P.max_degree, Q.max_degree),
    )


def iterated_bracket(F, Q, gs):
    """Left-nested bracket [F, Q, g_1, ..., g_i] with constant tail fields.

    The first bracket may require polynomial composition when Q is not
    constant; subsequent brackets contract with the constants ``gs``.
    """
    out = full_bracket_sym(F, Q)
    for g in gs:
        out = lie_bracket_sym(out, g)
    return out


def expand_shift(Q, X, G, w=None):
    """Shift expansion of Q around X along constant directions.

    Returns a map  multiset of direction indices -> SpectralField  such that

        Q(X + sum_k G[k] w_k) = sum_kappa coeff[kappa] * prod(w[kappa])

    holds exactly.  The empty multiset carries Q(X); the coefficient at a
    multiset kappa is D^{|kappa|} Q(X)(G[kappa]) / prod_v count_v! .
    """
    basis = Q.basis
    coeffs = {(): evaluate(Q, X)}
    frontier = {(): Q}
    order = 0
    while frontier:
        order += 1
        new_frontier = {}
        for kappa, P in frontier.items():
            start = kappa[-1] if kappa else 0
            for k in range(start, len(G)):
                B = lie_bracket_sym(P, G[k])
                if B.constant is None and _is_constant(B):
                    continue
                kap = kappa + (k,)
                # the bracket chain equals D^i Q(.)(g_kappa); each multiset is
                # visited once (nondecreasing order), so the Taylor weight is
                # the product of count factorials
                coeffs[kap] = _as_field(basis, B.eval_vec(X.coeffs) / _taylor_norm(kap))
                new_frontier[kap] = B
        frontier = {k: v for k, v in new_frontier.items() if not _is_constant(v)}
        if order > Q.max_degree + 1:
            break
    if w is not None:
        total = np.zeros(basis.dim)
        for kap, fld in coeffs.items():
            weight = 1.0
            for k in kap:
                weight *= w[k]
            total += weight * fld.coeffs
        return coeffs, _as_field(basis, total)
    return coeffs


def _taylor_norm(kappa):
    out = 1.0
    for v in set(kappa):
        out *= math.factorial(kappa.count(v))
    return out


def multilinear_bound(form, basis, samples=256, seed=0):
    """Sampled lower bound of the continuity constant of a multilinear form.

    Measures ``|N(u_1,..,u_j)|_{-1} / (|u_1|_0 ||u_2||_1 ... ||u_j||_1)`` over
    random unit directions and over all single-mode tuples; the true constant
    is at least the returned value.
    """
    if form is None or not form.entries:
        return 0.0
    lam = basis.eigenvalues
    rng = np.random.default_rng(seed)
    j = form.degree
    best = 0.0
    # exhaustive single-mode probes (extremal for rank-one forms)
    probed = set()
    for key in form.entries:
        for tup in set(itertools.permutations(key)):
            if tup in probed:
                continue
            probed.add(tup)
            args = []
            for slot, idx in enumerate(tup):
                e = np.zeros(basis.dim)
                e[idx] = 1.0
                args.append(e)
            val = form.apply_mixed(args)
            num = np.sqrt(np.sum(val**2 / lam**2))
            den = 1.0
            for slot, idx in enumerate(tup):
                den *= 1.0 if slot == 0 else lam[idx]
            best = max(best, num / den)
    for _ in range(samples):
        args = []
        den = 1.0
        for slot in range(j):
            v = rng.standard_normal(basis.dim)
            if slot == 0:
                v /= np.sqrt(np.sum(v**2))
            else:
                v /= np.sqrt(np.sum(lam**2 * v**2))
            args.append(v)
        val = form.apply_mixed(args)
        best = max(best, np.sqrt(np.sum(val**2 / lam**2)))
    return best
