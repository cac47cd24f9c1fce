import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlkg.dynamics import integrate_poly
from nlkg.nonresonance import certify_all
from nlkg.normal_form import (
    apply_transform,
    degree_cap_for,
    homological_residual,
    normalize,
    remainder_report,
    sample_sphere,
    select_parameters,
    solve_homological,
    verify_action_dependence,
)
from nlkg.poly import PolyHamiltonian, high_degree_filter, quadratic_hamiltonian, taylor_nonlinearity
from nlkg.rng import seeded_rng
from nlkg.spectral import PotentialSpec, eigenvalues, frequencies, sobolev_norm

from test_poly import random_poly


def _setup(J=8, c=1.0, nl=None, seed=3):
    pot = PotentialSpec.random(J, seeded_rng(seed, "pot"))
    fr = frequencies(eigenvalues(pot), c)
    N1 = taylor_nonlinearity(nl or {4: 1.0}, pot, c)
    return pot, fr, N1


def test_single_monomial_generator():
    fr = frequencies(eigenvalues(PotentialSpec.zero(2)), 1.0)
    f = PolyHamiltonian.from_terms(2, {((2, 0), (0, 1)): 1.0})
    chi, Z, Q = solve_homological(fr, f, 1e-3, 1.0)
    with mpmath.workdps(40):
        div = 2 * mpmath.sqrt(2) - mpmath.sqrt(5)
    assert float(div) == pytest.approx(0.5923591472464, abs=1e-12)
    assert chi.nterms == 1 and Z.is_zero() and Q.is_zero()
    assert chi.coefs[0] == pytest.approx(1 / (1j * float(div)), rel=1e-14)


def test_threshold_saturation():
    fr = frequencies(eigenvalues(PotentialSpec.zero(3)), 1.0)
    f = random_poly(np.random.default_rng(0), 3, [3, 4], 12)
    f = f + PolyHamiltonian.from_terms(3, {((1, 1, 0), (1, 1, 0)): 2.0})
    chi, Z, Q = solve_homological(fr, f, 1e9, 1.0)
    diag = np.all(f.jexp == f.lexp, axis=1)
    assert chi.is_zero()
    assert (Z - f.select(diag)).is_zero() and (Q - f.select(~diag)).is_zero()


@settings(max_examples=20)
@given(st.integers(0, 2**31), st.floats(1.0, 100.0))
def test_homological_residual_small(seed, c):
    rng = np.random.default_rng(seed)
    J = 5
    fr = frequencies(eigenvalues(PotentialSpec.random(J, rng)), c)
    f = random_poly(rng, J, [4], 15)
    chi, Z, Q = solve_homological(fr, f, 1e-3, 1.0)
    assert homological_residual(fr, f, chi, Z, Q) <= 1e-10 * max(1.0, f.max_abs_coef())


def test_high_mode_guard():
    fr = frequencies(eigenvalues(PotentialSpec.zero(4)), 1.0)
    f = PolyHamiltonian.from_terms(4, {((0, 0, 2, 0), (0, 0, 0, 1)): 1.0})
    with pytest.raises(ValueError):
        solve_homological(fr, f, 1e-3, 1.0, N=2)
    lo, hi = high_degree_filter(f, 2, 2)
    assert lo.is_zero() and hi.nterms == 1


def test_select_parameters():
    N, a, s_min = select_parameters(0.01, 1, 2.0)
    assert a == pytest.approx(1 / 12)
    assert N == math.ceil(0.01 ** (-1 / 12))
    assert s_min == pytest.approx(2 * 2 * 1 * 3 + 1)
    assert select_parameters(1e-12, 1, 0.5, J=4)[0] == 4
    with pytest.raises(ValueError):
        select_parameters(1.5, 1, 1.0)


def test_degree_cap():
    _, _, N1 = _setup(J=3)
    assert degree_cap_for(N1, 1) == 4 and degree_cap_for(N1, 3) == 6


def test_quartic_first_step_structure():
    pot, fr, N1 = _setup()
    res = normalize(fr, N1, 1, 1e-3, 2.0, 4, 0.05, 4.0)
    assert res.quasi_resonant.is_zero()
    assert verify_action_dependence(res.Z, 4) == []
    assert max(res.stage_residuals) < 1e-12
    cert = certify_all(fr, 4, 4, 1e-3, 2.0)
    assert all(c.passed for c in cert.values())


def test_verify_action_dependence_flags_violations():
    Z = PolyHamiltonian.from_terms(4, {
        ((1, 0, 0, 0), (1, 0, 0, 0)): 1.0,          # action: fine
        ((1, 0, 1, 0), (1, 0, 0, 1)): 1.0,          # two high exponents: fine
        ((2, 0, 0, 0), (0, 1, 0, 0)): 1.0,          # low modes not in action form
        ((1, 0, 2, 0), (1, 0, 0, 1)): 1.0,          # three high exponents
    })
    bad = verify_action_dependence(Z, 2)
    assert len(bad) == 2
    assert {b["reason"] for b in bad} == {"j != l on low modes", "high-mode degree 3 > 2"}


def test_energy_consistency_order():
    # H(T psi') - H~(psi') = O(R^6) for one quartic step; H(psi') - H_0 - Z = O(R^4)
    pot, fr, N1 = _setup(J=6)
    res = normalize(fr, N1, 1, 1e-3, 2.0, 6, 0.05, 2.0)
    H = quadratic_hamiltonian(fr) + N1
    Ht = res.transformed
    rng = seeded_rng(1, "sphere")
    base = sample_sphere(6, 0.0, 1.0, 4, rng)
    radii = np.array([0.2, 0.1, 0.05])
    err_t, err_0 = [], []
    for R in radii:
        e_t = e_0 = 0.0
        for z in base:
            psi = R * z
            old = apply_transform(res, psi).psi
            e_t = max(e_t, abs(H.evaluate(old) - Ht.evaluate(psi)))
            e_0 = max(e_0, abs(H.evaluate(psi) - Ht.evaluate(psi)))
        err_t.append(e_t)
        err_0.append(e_0)
    st = np.polyfit(np.log(radii), np.log(err_t), 1)[0]
    s0 = np.polyfit(np.log(radii), np.log(err_0), 1)[0]
    assert st == pytest.approx(6.0, abs=0.3)
    assert s0 == pytest.approx(4.0, abs=0.3)


def test_transform_inverse_round_trip():
    pot, fr, N1 = _setup(J=5)
    res = normalize(fr, N1, 1, 1e-3, 2.0, 5, 0.05, 2.0)
    psi = sample_sphere(5, 2.0, 0.1, 1, seeded_rng(2, "x"))[0]
    back = apply_transform(res, apply_transform(res, psi), inverse=True).psi
    assert np.max(np.abs(back - psi)) < 1e-13


def test_second_step_with_quintic():
    pot, fr, N1 = _setup(J=5, nl={4: 1.0, 5: 0.5})
    res = normalize(fr, N1, 2, 1e-3, 2.0, 5, 0.05, 4.0)
    assert res.params.degree_cap == 5 and len(res.chis) == 2
    assert not res.chis[1].is_zero()
    assert res.quasi_resonant.is_zero()
    assert verify_action_dependence(res.Z, 5) == []
    assert res.Z.degree_set() == [4]  # odd degrees cannot be functions of the actions


def test_z_flow_keeps_low_actions():
    pot, fr, N1 = _setup()
    N = 4
    res = normalize(fr, N1, 1, 1e-3, 2.0, N, 0.05, 4.0)
    psi = sample_sphere(8, 1.0, 0.3, 1, seeded_rng(4, "z"))[0]
    tr = integrate_poly(res.Z, psi, 10.0, 200.0, rtol=1e-13, atol=1e-18)
    I = np.abs(tr.states[:, :N]) ** 2
    assert np.max(np.abs(I - I[0])) <= 1e-10 * np.max(I[0])


def test_resonant_parameters_keep_quasi_resonant_terms():
    # a threshold above every divisor sends all non-action terms to Q
    pot, fr, N1 = _setup(J=4)
    res = normalize(fr, N1, 1, 1e6, 1.0, 4, 0.05, 2.0)
    assert not res.quasi_resonant.is_zero()
    assert all(c.is_zero() for c in res.chis)


def test_remainder_report_uses_sphere_samples():
    pot, fr, N1 = _setup(J=6)
    res = normalize(fr, N1, 1, 1e-3, 2.0, 3, 0.05, 2.0, tail_extra=2)
    rep = remainder_report(res, samples=16, seed=0)
    assert rep.samples == 16 and rep.r_T_estimate > 0 and rep.r_N_estimate > 0
    assert rep.comparator_T == pytest.approx(0.05**2.5)
    assert rep == remainder_report(res, samples=16, seed=0)


def test_sample_sphere_radius():
    z = sample_sphere(7, 3.0, 0.2, 5, np.random.default_rng(0))
    assert np.allclose([sobolev_norm(x, 3.0) for x in z], 0.2)


def test_normalize_rejects_bad_input():
    pot, fr, N1 = _setup(J=4)
    with pytest.raises(ValueError):
        normalize(fr, N1, 0, 1e-3, 2.0, 2, 0.05, 2.0)
    with pytest.raises(ValueError):
        normalize(fr, N1, 1, 1e-3, 2.0, 9, 0.05, 2.0)
