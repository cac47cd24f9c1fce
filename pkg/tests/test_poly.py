import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from nlkg.poly import (
    MultiVector,
    PolyHamiltonian,
    action_monomial,
    high_degree_filter,
    high_mode_degree,
    lie_transform,
    modulus,
    multivector_norm,
    poisson_bracket,
    polarized_vector_field,
    project_split,
    quadratic_hamiltonian,
    tame_norm_lower,
    tame_norm_upper,
    taylor_nonlinearity,
    weighted_norm,
)
from nlkg.dynamics import flow_map
from nlkg.spectral import ModeState, PotentialSpec, eigenvalues, frequencies, smoothing_multiplier


def random_poly(rng, J, degrees, nterms, cap=None):
    terms = {}
    for _ in range(nterms):
        d = int(rng.choice(degrees))
        cut = np.sort(rng.integers(0, d + 1, size=1))[0]
        j = np.bincount(rng.integers(0, J, size=cut), minlength=J)
        l = np.bincount(rng.integers(0, J, size=d - cut), minlength=J)
        terms[(tuple(j), tuple(l))] = complex(rng.standard_normal(), rng.standard_normal())
    return PolyHamiltonian.from_terms(J, terms, cap)


@st.composite
def polys(draw, J=3, degrees=(2, 3, 4), max_terms=4):
    seed = draw(st.integers(0, 2**31))
    n = draw(st.integers(1, max_terms))
    return random_poly(np.random.default_rng(seed), J, list(degrees), n)


def naive_bracket(f, g):
    """Dictionary implementation of {f, g} = i sum(df/dpsibar dg/dpsi - df/dpsi dg/dpsibar)."""
    J = f.J
    out = defaultdict(complex)
    for ef, cf in zip(f.exps.tolist(), f.coefs):
        for eg, cg in zip(g.exps.tolist(), g.coefs):
            for k in range(J):
                w = ef[J + k] * eg[k] - ef[k] * eg[J + k]
                if w == 0:
                    continue
                e = [a + b for a, b in zip(ef, eg)]
                e[k] -= 1
                e[J + k] -= 1
                out[tuple(e)] += 1j * cf * cg * w
    return {k: v for k, v in out.items() if v != 0}


def as_dict(p):
    return {tuple(e): c for e, c in zip(p.exps.tolist(), p.coefs)}


def dict_close(a, b, tol=1e-12):
    keys = set(a) | set(b)
    return all(abs(a.get(k, 0) - b.get(k, 0)) <= tol * (1 + abs(b.get(k, 0))) for k in keys)


@given(polys(), polys())
def test_bracket_matches_naive(f, g):
    assert dict_close(as_dict(poisson_bracket(f, g, None)), naive_bracket(f, g))


@given(polys(), polys())
def test_bracket_antisymmetric(f, g):
    a = poisson_bracket(f, g, None)
    b = poisson_bracket(g, f, None)
    assert (a + b).max_abs_coef() <= 1e-12 * (1 + a.max_abs_coef())


@given(polys(max_terms=3), polys(max_terms=3), polys(max_terms=3))
def test_jacobi(f, g, h):
    pb = lambda a, b: poisson_bracket(a, b, None)
    tot = pb(f, pb(g, h)) + pb(g, pb(h, f)) + pb(h, pb(f, g))
    scale = 1 + max(pb(f, pb(g, h)).max_abs_coef(), pb(h, pb(f, g)).max_abs_coef())
    assert tot.max_abs_coef() <= 1e-11 * scale


def test_bracket_with_h0_is_multiplication():
    omega = np.array([1.3, 2.9, 4.1])
    H0 = quadratic_hamiltonian(omega)
    f = PolyHamiltonian.from_terms(3, {((2, 0, 1), (0, 1, 0)): 0.7 - 0.2j})
    out = poisson_bracket(H0, f, None)
    div = omega @ (np.array([2, 0, 1]) - np.array([0, 1, 0]))
    assert out.nterms == 1
    assert out.coefs[0] == pytest.approx(1j * div * (0.7 - 0.2j))


def test_actions_commute():
    assert poisson_bracket(action_monomial(3, 1), action_monomial(3, 2, 2), None).is_zero()


@given(polys(), st.integers(0, 2**31))
def test_evaluate_matches_product(f, seed):
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    ref = 0j
    for e, c in zip(f.exps, f.coefs):
        ref += c * np.prod(psi ** e[:3]) * np.prod(np.conj(psi) ** e[3:])
    assert f.evaluate(psi) == pytest.approx(ref, rel=1e-12, abs=1e-13)


@given(polys(), st.integers(0, 2**31))
def test_gradient_by_finite_differences(f, seed):
    rng = np.random.default_rng(seed)
    zp = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    zm = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    g = f.gradient(zp, zm, wrt="psi")
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (f.evaluate(zp + e, zm) - f.evaluate(zp - e, zm)) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_degree_cap_spill():
    f = PolyHamiltonian.from_terms(2, {((3, 0), (0, 1)): 2.0, ((1, 0), (0, 1)): 1.0}, degree_cap=3)
    assert f.nterms == 1 and f.spill == {4: 2.0}
    g = PolyHamiltonian.from_terms(2, {((1, 1), (1, 0)): 1.0})
    b = poisson_bracket(g, g.conj_swap(), 3)
    assert b.is_zero() and sum(b.spill.values()) > 0


def test_json_round_trip(rng):
    f = random_poly(rng, 4, [3, 4], 6)
    g = PolyHamiltonian.from_json(f.to_json(), 4)
    assert np.array_equal(f.exps, g.exps) and np.array_equal(f.coefs, g.coefs)


def test_canonical_layout_independent_of_insertion_order(rng):
    f = random_poly(rng, 3, [3], 5)
    g = PolyHamiltonian(3, f.exps[::-1], f.coefs[::-1])
    assert np.array_equal(f.exps, g.exps) and np.array_equal(f.coefs, g.coefs)
    # duplicate rows merge, cancelling rows vanish
    h = PolyHamiltonian(3, np.vstack([f.exps, f.exps]), np.concatenate([f.coefs, -f.coefs]))
    assert h.is_zero()


def test_lie_transform_matches_flow():
    # H o Phi_chi agrees with the truncated Lie series to the next order
    rng = np.random.default_rng(4)
    J = 3
    fr = frequencies(eigenvalues(PotentialSpec.random(J, rng)), 1.0)
    H = quadratic_hamiltonian(fr) + random_poly(rng, J, [4], 4)
    chi0 = random_poly(rng, J, [4], 3)
    chi = (chi0 + chi0.conj_swap()) * 0.5  # real-valued generator
    errs = []
    radii = [0.4, 0.2, 0.1]
    for R in radii:
        psi = R * np.exp(1j * rng.uniform(0, 2 * np.pi, J)) / math.sqrt(J)
        LH, _ = lie_transform(H, chi, 6)
        errs.append(abs(H.evaluate(flow_map(chi, psi)) - LH.evaluate(psi)))
    slope = np.polyfit(np.log(radii), np.log(errs), 1)[0]
    assert slope > 7.5  # first discarded terms have degree 8


def test_high_degree_filter_partitions(rng):
    f = random_poly(rng, 6, [3, 4], 20)
    low, high = high_degree_filter(f, 3, 2)
    assert np.all(high_mode_degree(low, 3) <= 2) and np.all(high_mode_degree(high, 3) > 2)
    assert (low + high - f).is_zero()


def test_project_split(rng):
    psi = rng.standard_normal(6) + 0j
    lo, hi = project_split(psi, 2)
    assert np.all(lo.psi[2:] == 0) and np.all(hi.psi[:2] == 0)
    with pytest.raises(ValueError):
        project_split(psi, 7)


def _nonlinear_energy_quad(nl, pot, c, psi):
    J = len(psi)
    Lam = smoothing_multiplier(eigenvalues(pot), c)
    q = np.sqrt(2.0) * Lam * psi.real
    j = np.arange(1, J + 1)

    def integrand(x):
        u = np.sum(q * np.sqrt(2 / np.pi) * np.sin(j * x))
        return sum(a * u**p for p, a in nl.items())

    return quad(integrand, 0, np.pi, epsabs=1e-15, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("nl", [{4: 1.0}, {4: 0.3, 5: -1.1}, {6: 2.0}])
def test_taylor_nonlinearity_against_quadrature(nl):
    rng = np.random.default_rng(9)
    J = 4
    pot = PotentialSpec.random(J, rng)
    c = 2.0
    N1 = taylor_nonlinearity(nl, pot, c)
    for _ in range(3):
        psi = 0.4 * (rng.standard_normal(J) + 1j * rng.standard_normal(J))
        ref = _nonlinear_energy_quad(nl, pot, c, psi)
        val = N1.evaluate(psi)
        assert abs(val.imag) < 1e-12
        assert val.real == pytest.approx(ref, rel=1e-10, abs=1e-13)


def test_taylor_nonlinearity_is_real_and_capped():
    pot = PotentialSpec.zero(3)
    N1 = taylor_nonlinearity({4: 1.0, 6: 1.0}, pot, 1.0, degree_cap=4)
    assert N1.max_degree() == 4 and N1.spill[6] > 0
    assert N1.reality_defect() < 1e-14
    with pytest.raises(ValueError):
        taylor_nonlinearity({2: 1.0}, pot, 1.0)


def test_sine_integral_selection_rule():
    from nlkg.poly import _sine_product_integral

    for modes in (np.array([[1, 1, 2], [1, 2, 3], [2, 2, 3]]), np.array([[2, 2, 2, 2], [1, 1, 1, 3], [1, 2, 4, 5]])):
        for row, val in zip(modes, _sine_product_integral(modes)):
            ref = quad(lambda x: np.prod(np.sin(row * x)), 0, np.pi, epsabs=1e-12, limit=200)[0]
            assert val == pytest.approx(ref, abs=1e-12)


@given(polys(J=3, degrees=(3,), max_terms=3), st.floats(1.0, 3.0))
def test_tame_lower_below_upper(f, s):
    lo = tame_norm_lower(f, s, 30, 0)
    assert lo <= tame_norm_upper(f, s) * (1 + 1e-10)


def test_tame_norm_quadratic_is_operator_norm():
    f = quadratic_hamiltonian(np.array([1.0, 2.0, 3.0]))
    assert tame_norm_upper(f, 2.0) == pytest.approx(3.0)


def test_polarization_recovers_diagonal(rng):
    f = random_poly(rng, 3, [4], 4)
    psi = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    phi = MultiVector.from_states([psi] * 3)
    xp, xm = polarized_vector_field(f, phi, use_modulus=False)
    # on the diagonal the symmetric form reduces to the field itself
    assert np.allclose(xp, f.gradient(psi, wrt="psibar"), rtol=1e-12)
    assert np.allclose(xm, f.gradient(psi, wrt="psi"), rtol=1e-12)


def test_multivector_norm_single_part():
    z = np.array([1.0, 1.0j])
    phi = MultiVector(((z, np.conj(z)),))
    assert multivector_norm(phi, 2.0) == pytest.approx(math.sqrt(2 * (1 + 16)))


def test_weighted_norm_sums_components(rng):
    f = random_poly(rng, 3, [3, 4], 6)
    comps = f.components()
    expect = sum(tame_norm_upper(p, 2.0) * 0.1 ** (m - 1) for m, p in comps.items())
    assert weighted_norm(f, 2.0, 0.1) == pytest.approx(expect)
    assert modulus(f).coefs.imag.max() == 0


def _homog_terms(rng, J, degrees, n):
    return random_poly(rng, J, degrees, n)


@pytest.mark.parametrize("seed", range(6))
def test_lie_bracket_bound(seed):
    # <|{h, g}|>_{s, R-d} <= <|h|>_{s,R} <|g|>_{s,R} / d, with upper tame norms on both sides
    rng = np.random.default_rng(seed)
    J, s, R = 4, 2.0, 0.5
    h = _homog_terms(rng, J, [3, 4], 4)
    g = _homog_terms(rng, J, [2, 3, 4], 4)
    b = poisson_bracket(h, g, None)
    for d in (0.05, 0.2, 0.45):
        assert weighted_norm(b, s, R - d) <= weighted_norm(h, s, R) * weighted_norm(g, s, R) / d


@pytest.mark.parametrize("seed", range(4))
def test_lie_series_bound(seed):
    # <|g_l|>_{s, R-d} <= <|g|>_{s,R} (e <|chi|>_{s,R} / d)^l for l <= 4
    from nlkg.poly import lie_series_terms

    rng = np.random.default_rng(seed)
    J, s, R, d = 4, 2.0, 0.4, 0.2
    g = _homog_terms(rng, J, [2, 4], 4)
    chi = _homog_terms(rng, J, [3], 3) * 0.5
    gn, cn = weighted_norm(g, s, R), weighted_norm(chi, s, R)
    for l, gl in enumerate(lie_series_terms(g, chi, 10, max_terms=4)):
        if gl.is_zero():
            continue
        assert weighted_norm(gl, s, R - d) <= gn * (math.e * cn / d) ** l
        if l == 4:
            break
