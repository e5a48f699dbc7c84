import numpy as np
import pytest

from spdelab.basis import SpectralField, dirichlet_interval
from spdelab.forms import (
    MultilinearForm,
    PolyVectorField,
    constant_bracket_chain,
    evaluate,
    expand_shift,
    frechet,
    full_bracket_sym,
    iterated_bracket,
    lie_bracket,
    lie_bracket_sym,
    multilinear_bound,
)


def random_form(degree, dim, rng, nnz=30):
    f = MultilinearForm(degree, dim)
    for _ in range(nnz):
        key = tuple(sorted(rng.integers(0, dim, size=degree)))
        f.set_entry(key, int(rng.integers(0, dim)), float(rng.standard_normal()))
    return f


@pytest.fixture
def basis6():
    return dirichlet_interval(6)


def test_linear_only_evaluates_eigenvalues(basis6):
    P = PolyVectorField(basis6, linear="L")
    for k in range(6):
        ek = SpectralField.mode(basis6, k)
        assert np.allclose(evaluate(P, ek).coeffs, basis6.eigenvalues[k] * ek.coeffs)


def test_apply_equal_matches_mixed_and_brute_force(basis6):
    rng = np.random.default_rng(0)
    for degree in (1, 2, 3):
        f = random_form(degree, 6, rng)
        x = rng.standard_normal(6)
        # brute force over all ordered tuples of the symmetric tensor
        dense = np.zeros((6,) * degree + (6,))
        for key, outs in f.entries.items():
            import itertools

            for perm in itertools.permutations(key):
                for o, c in outs.items():
                    dense[perm + (o,)] = c
        brute = np.zeros(6)
        import itertools

        for tup in itertools.product(range(6), repeat=degree):
            w = np.prod([x[i] for i in tup])
            brute += w * dense[tup]
        assert np.allclose(f.apply_equal(x), brute, atol=1e-12)
        assert np.allclose(f.apply_mixed([x] * degree), brute, atol=1e-12)


def test_apply_equal_batched(basis6):
    rng = np.random.default_rng(5)
    f = random_form(3, 6, rng)
    X = rng.standard_normal((6, 7))
    batched = f.apply_equal(X)
    for j in range(7):
        assert np.allclose(batched[:, j], f.apply_equal(X[:, j]))


def test_symmetry_under_argument_permutation(basis6):
    rng = np.random.default_rng(1)
    f = random_form(3, 6, rng)
    a, b, c = (rng.standard_normal(6) for _ in range(3))
    v1 = f.apply_mixed([a, b, c])
    v2 = f.apply_mixed([c, a, b])
    assert np.allclose(v1, v2, atol=1e-12)


def test_dn_matches_finite_differences(basis6):
    rng = np.random.default_rng(2)
    f = random_form(3, 6, rng)
    P = PolyVectorField(basis6, forms=(f,))
    x = rng.standard_normal(6)
    x /= np.linalg.norm(x)
    h = rng.standard_normal(6)
    h /= np.linalg.norm(h)
    eps = 1e-5
    fd = (P.eval_vec(x + eps * h) - P.eval_vec(x - eps * h)) / (2 * eps)
    an = P.jac_vec(x, h)
    assert np.abs(fd - an).max() <= 1e-6 * max(1.0, np.abs(an).max())
    xf = SpectralField(basis6, x)
    hf = SpectralField(basis6, h)
    assert np.allclose(frechet(P, xf, [hf]).coeffs, an)


def test_dn_t_is_transpose(basis6):
    rng = np.random.default_rng(3)
    f = random_form(3, 6, rng)
    x = rng.standard_normal(6)
    J = f.dn_matrix(x)
    h = rng.standard_normal(6)
    phi = rng.standard_normal(6)
    assert np.allclose(J @ h, f.dn(x, h))
    assert np.allclose(J.T @ phi, f.dn_t(x, phi))


def test_frechet_bilinear_rules(basis6):
    rng = np.random.default_rng(4)
    n2 = random_form(2, 6, rng)
    P = PolyVectorField(basis6, forms=(n2,))
    x = SpectralField(basis6, rng.standard_normal(6))
    h = SpectralField(basis6, rng.standard_normal(6))
    h2 = SpectralField(basis6, rng.standard_normal(6))
    # D N2(x)(h) = 2 N2(x, h)
    assert np.allclose(
        frechet(P, x, [h]).coeffs, 2 * n2.apply_mixed([x.coeffs, h.coeffs])
    )
    # D^2 N2(x)(h1,h2) = 2 N2(h1,h2), independent of x
    d2 = frechet(P, x, [h, h2]).coeffs
    assert np.allclose(d2, 2 * n2.apply_mixed([h.coeffs, h2.coeffs]))
    other = SpectralField(basis6, rng.standard_normal(6))
    assert np.allclose(frechet(P, other, [h, h2]).coeffs, d2)
    # third derivative of a quadratic field vanishes
    assert np.allclose(frechet(P, x, [h, h2, h]).coeffs, 0)


def test_lie_bracket_antisymmetry_and_constants(basis6):
    rng = np.random.default_rng(6)
    A = PolyVectorField(basis6, forms=(random_form(2, 6, rng),), linear="neg_L")
    B = PolyVectorField(basis6, forms=(random_form(3, 6, rng),))
    for _ in range(4):
        x = SpectralField(basis6, rng.standard_normal(6))
        ab = lie_bracket(A, B, x).coeffs
        ba = lie_bracket(B, A, x).coeffs
        assert np.allclose(ab, -ba, atol=1e-10)
    # two constants commute
    C1 = PolyVectorField(basis6, constant=rng.standard_normal(6))
    C2 = PolyVectorField(basis6, constant=rng.standard_normal(6))
    x = SpectralField(basis6, rng.standard_normal(6))
    assert np.allclose(lie_bracket(C1, C2, x).coeffs, 0)


def test_lie_bracket_sym_with_constant(basis6):
    rng = np.random.default_rng(7)
    n2 = random_form(2, 6, rng)
    A = PolyVectorField(basis6, forms=(n2,))
    g = SpectralField(basis6, rng.standard_normal(6))
    Bsym = lie_bracket_sym(A, g)
    for _ in range(3):
        x = SpectralField(basis6, rng.standard_normal(6))
        expect = 2 * n2.apply_mixed([g.coeffs, x.coeffs])
        assert np.allclose(Bsym.eval_vec(x.coeffs), expect, atol=1e-12)
    with pytest.raises(ValueError):
        lie_bracket_sym(A, A)


def test_constant_bracket_chain_equals_frechet(basis6):
    rng = np.random.default_rng(8)
    Q = PolyVectorField(
        basis6, forms=(random_form(2, 6, rng), random_form(3, 6, rng)), linear="neg_L"
    )
    fs = [SpectralField(basis6, rng.standard_normal(6)) for _ in range(2)]
    chain = constant_bracket_chain(Q, fs)
    for _ in range(3):
        x = SpectralField(basis6, rng.standard_normal(6))
        assert np.allclose(
            chain.eval_vec(x.coeffs), frechet(Q, x, fs).coeffs, atol=1e-10
        )


def test_iterated_bracket_top_form_identity(basis6):
    # [F, g/m!, g_{k1}, ..., g_{k_{m-1}}] equals N_m(g, g_{k1}, .., g_{k_{m-1}})
    rng = np.random.default_rng(9)
    m = 3
    nm = random_form(m, 6, rng)
    F = PolyVectorField(basis6, linear="neg_L", forms=(nm,))
    g = rng.standard_normal(6)
    gks = [rng.standard_normal(6) for _ in range(m - 1)]
    Q = PolyVectorField(basis6, constant=g / 6.0)  # g/m! with m=3
    out = iterated_bracket(F, Q, [SpectralField(basis6, v) for v in gks])
    assert not out.forms and out.linear is None
    expect = nm.apply_mixed([g] + gks)
    assert np.allclose(out.constant, expect, atol=1e-10)


def test_iterated_bracket_short_chain_degree(basis6):
    rng = np.random.default_rng(10)
    nm = random_form(3, 6, rng)
    F = PolyVectorField(basis6, linear="neg_L", forms=(nm,))
    Q = PolyVectorField(basis6, constant=rng.standard_normal(6))
    out = iterated_bracket(F, Q, [])
    assert out.degree == 2  # DF(.) g has degree m-1


def test_full_bracket_polynomial_composition(basis6):
    rng = np.random.default_rng(11)
    A = PolyVectorField(basis6, linear="neg_L", forms=(random_form(2, 6, rng),))
    B = PolyVectorField(
        basis6, constant=rng.standard_normal(6), forms=(random_form(2, 6, rng),)
    )
    C = full_bracket_sym(A, B)
    for _ in range(5):
        x = SpectralField(basis6, rng.standard_normal(6))
        assert np.allclose(
            C.eval_vec(x.coeffs), lie_bracket(A, B, x).coeffs, atol=1e-9
        )


def test_bracket_degree_guard(basis6):
    rng = np.random.default_rng(12)
    A = PolyVectorField(basis6, forms=(random_form(4, 6, rng),), max_degree=5)
    B = PolyVectorField(basis6, forms=(random_form(3, 6, rng),), max_degree=5)
    with pytest.raises(ValueError):
        full_bracket_sym(A, B)


def test_expand_shift_reassembly(basis6):
    rng = np.random.default_rng(13)
    # linear field: coefficients are Q(X) and Q(g_k)
    M = rng.standard_normal((6, 6))
    Q = PolyVectorField(basis6, linear=M)
    X = SpectralField(basis6, rng.standard_normal(6))
    G = [SpectralField(basis6, rng.standard_normal(6)) for _ in range(2)]
    coeffs = expand_shift(Q, X, G)
    assert np.allclose(coeffs[()].coeffs, M @ X.coeffs)
    assert np.allclose(coeffs[(0,)].coeffs, M @ G[0].coeffs)

    # quadratic, d=1: N2(X,X), 2 N2(g,X), N2(g,g)
    n2 = random_form(2, 6, rng)
    Q2 = PolyVectorField(basis6, forms=(n2,))
    coeffs2 = expand_shift(Q2, X, G[:1])
    assert np.allclose(coeffs2[()].coeffs, n2.apply_equal(X.coeffs))
    assert np.allclose(coeffs2[(0,)].coeffs, 2 * n2.apply_mixed([G[0].coeffs, X.coeffs]))
    assert np.allclose(coeffs2[(0, 0)].coeffs, n2.apply_equal(G[0].coeffs))

    # cubic at random X, d=2, random w: reassembly matches direct evaluation
    Q3 = PolyVectorField(
        basis6, linear="neg_L", forms=(random_form(3, 6, rng), n2), constant=rng.standard_normal(6)
    )
    w = rng.standard_normal(2)
    coeffs3, total = expand_shift(Q3, X, G, w)
    shifted = SpectralField(
        basis6, X.coeffs + w[0] * G[0].coeffs + w[1] * G[1].coeffs
    )
    assert np.abs(total.coeffs - evaluate(Q3, shifted).coeffs).max() < 1e-10


def test_multilinear_bound(basis6):
    assert multilinear_bound(MultilinearForm(2, 6), basis6) == 0.0
    # rank-one form N(u,v) = <u,e1><v,e1> e1
    f = MultilinearForm(2, 6)
    f.set_entry((0, 0), 0, 1.0)
    lam1 = basis6.eigenvalues[0]
    got = multilinear_bound(f, basis6, samples=64)
    assert got == pytest.approx(lam1**-2, rel=1e-9)
    # monotone nondecreasing in sample count
    rng = np.random.default_rng(14)
    g = random_form(2, 6, rng)
    a = multilinear_bound(g, basis6, samples=16, seed=3)
    b = multilinear_bound(g, basis6, samples=256, seed=3)
    assert b >= a - 1e-15


def test_serialization_round_trip(basis6):
    rng = np.random.default_rng(15)
    f = random_form(3, 6, rng)
    g = MultilinearForm.from_json(f.to_json())
    x = rng.standard_normal(6)
    assert np.allclose(f.apply_equal(x), g.apply_equal(x))
    assert g.entries == f.entries
