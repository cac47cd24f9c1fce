import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlkg.spectral import (
    ModeState,
    PotentialSpec,
    RealState,
    apply_linear_op,
    eigenvalues,
    frequencies,
    frequency_expansion,
    from_psi,
    linear_multiplier,
    quadratic_energy,
    smoothing_multiplier,
    sobolev_norm,
    to_psi,
)


def _mp_omega(lam, c, dps=50):
    with mpmath.workdps(dps):
        c = mpmath.mpf(c)
        return [c * mpmath.sqrt(c * c + mpmath.mpf(float(x))) for x in lam]


def test_zero_potential_c1():
    fr = frequencies(eigenvalues(PotentialSpec.zero(3)), 1.0)
    assert np.allclose(fr.omega, [math.sqrt(2), math.sqrt(5), math.sqrt(10)], rtol=0, atol=1e-14)


def test_eigenvalues_include_potential():
    pot = PotentialSpec(s=2.0, M=0.5, vprime=(0.5, -0.5, 0.25))
    j = np.arange(1, 4)
    assert np.allclose(eigenvalues(pot), j**2 + 0.5 * j**-2.0 * np.array([0.5, -0.5, 0.25]))


@pytest.mark.parametrize("c", [1.0, 3.7, 1e3, 1e6, 1e8])
def test_frequencies_against_extended_precision(c):
    pot = PotentialSpec.random(32, np.random.default_rng(1))
    lam = eigenvalues(pot)
    fr = frequencies(lam, c)
    ref = _mp_omega(lam, c)
    with mpmath.workdps(50):
        for j in range(32):
            assert abs(mpmath.mpf(float(fr.omega[j])) - ref[j]) / ref[j] < 1e-15
            # the offset keeps full relative accuracy even where omega does not
            off = ref[j] - mpmath.mpf(c) ** 2
            assert abs(mpmath.mpf(float(fr.offset[j])) - off) / off < 1e-13


@given(st.floats(1.0, 1e7), st.integers(0, 2**20))
def test_sandwich(c, seed):
    lam = eigenvalues(PotentialSpec.random(24, np.random.default_rng(seed)))
    fr = frequencies(lam, c)
    lower = lam / 2 - lam**2 / (8 * c * c)
    assert np.all(lower <= fr.offset)
    assert np.all(fr.offset <= lam / 2)


def test_expansion_correction_bounds():
    lam = np.linspace(0.5, 1e4, 97)
    half, corr = frequency_expansion(lam, 2.0)
    assert np.all(corr <= 0) and np.all(corr >= -(lam**2) / 32)
    assert np.array_equal(half, lam / 2)


def test_bad_c_and_eigenvalues():
    with pytest.raises(ValueError):
        frequencies(np.array([1.0]), 0.5)
    with pytest.raises(ValueError):
        frequencies(np.array([0.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        linear_multiplier(np.array([1.0]), 1.0, 0.3)


def test_multipliers_bounded_uniformly_in_c():
    lam = eigenvalues(PotentialSpec.zero(50))
    for c in (1.0, 10.0, 1e4):
        m = smoothing_multiplier(lam, c)
        assert np.all(m <= 1) and np.all(m > 0)
        assert np.allclose(linear_multiplier(lam, c, 0.25) * m, 1.0)


def test_apply_linear_op_inverse_pair():
    pot = PotentialSpec.random(10, np.random.default_rng(2))
    st = ModeState(np.arange(1, 11) * (1 + 1j))
    back = apply_linear_op(apply_linear_op(st, pot, 5.0, 0.25), pot, 5.0, -0.25)
    assert np.allclose(back.psi, st.psi, rtol=1e-14)


@given(st.sampled_from([1.0, 1000.0]), st.integers(0, 2**20))
def test_round_trip(c, seed):
    rng = np.random.default_rng(seed)
    pot = PotentialSpec.random(12, rng)
    rs = RealState(rng.standard_normal(12), rng.standard_normal(12) * c)
    back = from_psi(to_psi(rs, pot, c), pot, c)
    assert np.allclose(back.u, rs.u, rtol=1e-12, atol=0)
    assert np.allclose(back.ut, rs.ut, rtol=1e-12, atol=0)
    psi = ModeState(rng.standard_normal(12) + 1j * rng.standard_normal(12))
    assert np.allclose(to_psi(from_psi(psi, pot, c), pot, c).psi, psi.psi, rtol=1e-12, atol=0)


def test_quadratic_energy_matches_wave_energy():
    # H_0 written in (u, u_t)
    rng = np.random.default_rng(5)
    pot = PotentialSpec.random(8, rng)
    c = 3.0
    lam = eigenvalues(pot)
    rs = RealState(rng.standard_normal(8), rng.standard_normal(8))
    fr = frequencies(lam, c)
    a = linear_multiplier(lam, c, 0.25)
    expect = np.sum(fr.omega * (a**2 * rs.u**2 + rs.ut**2 / a**2) / 2)
    assert quadratic_energy(to_psi(rs, pot, c), fr) == pytest.approx(expect, rel=1e-13)


def test_sobolev_norm():
    st = ModeState([1.0, 1j, 0.0])
    assert sobolev_norm(st, 0) == pytest.approx(math.sqrt(2))
    assert sobolev_norm(st, 2) == pytest.approx(math.sqrt(1 + 16))
    with pytest.raises(ValueError):
        sobolev_norm(st, -1)


def test_mode_state_validation_and_json():
    with pytest.raises(ValueError):
        ModeState([np.nan])
    with pytest.raises(ValueError):
        ModeState(np.zeros((2, 2)))
    st = ModeState([1 + 2j, -0.5j])
    assert np.array_equal(ModeState.from_json(st.to_json()).psi, st.psi)


def test_potential_json_and_modes():
    pot = PotentialSpec.random(5, np.random.default_rng(0))
    assert PotentialSpec.from_json(pot.to_json()) == pot
    assert pot.with_modes(7).J == 7 and pot.with_modes(3).vprime == pot.vprime[:3]
