"""Birkhoff normalization of H_0 + N_1 by a finite chain of Lie transforms.

At step m the lowest-degree part of the running perturbation is split by
high-mode degree; the part with at most two high modes is normalized by the
homological equation {H_0, chi} + Z + Q = f, the rest is booked as the
high-mode remainder.  The transformed Hamiltonian is then

    H_0 + Z + Q + F + R_N

with Z the action-type normal form, Q the quasi-resonant terms whose divisor
fell below gamma/N^tau, F the not-yet-normalized higher-degree part and R_N
the high-mode remainder.  Everything is truncated at a degree cap; discarded
mass is tallied per degree in ``spill``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .poly import (
    PolyHamiltonian,
    _merge_spill,
    high_degree_filter,
    high_mode_degree,
    lie_series_terms,
    lie_transform,
    poisson_bracket,
    quadratic_hamiltonian,
)
from .rng import seeded_rng
from .spectral import FrequencySet, ModeState, _as_psi, sobolev_norm, sobolev_weights

__all__ = [
    "NormalFormParams",
    "NormalFormResult",
    "solve_homological",
    "homological_residual",
    "lie_transform",
    "normalize",
    "select_parameters",
    "verify_action_dependence",
    "remainder_report",
    "RemainderReport",
    "sample_sphere",
    "apply_transform",
    "degree_cap_for",
]


@dataclass(frozen=True)
class NormalFormParams:
    r: int
    N: int
    tau: float
    gamma: float
    R: float
    s: float
    degree_cap: int

    @property
    def threshold(self) -> float:
        return self.gamma / self.N**self.tau

    def to_json(self) -> dict:
        return {"r": self.r, "N": self.N, "tau": self.tau, "gamma": self.gamma, "R": self.R, "s": self.s,
                "degree_cap": self.degree_cap}


@dataclass(frozen=True)
class NormalFormResult:
    Z: PolyHamiltonian
    chis: list
    quasi_resonant: PolyHamiltonian
    spill: float
    params: NormalFormParams
    # unnormalized terms above the last normalized degree (kept when tail_extra > 0)
    overflow: PolyHamiltonian = None
    high_mode: PolyHamiltonian = None
    spill_by_degree: dict = field(default_factory=dict)
    stage_residuals: list = field(default_factory=list)
    freqs: FrequencySet | None = field(default=None, repr=False)

    @property
    def transformed(self) -> PolyHamiltonian:
        """H_0 + Z + Q + overflow + R_N: the Hamiltonian in the new variables."""
        H0 = quadratic_hamiltonian(self.freqs)
        return (H0 + self.Z + self.quasi_resonant + self.overflow + self.high_mode).without_spill()

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "Z": self.Z.to_json(),
            "quasi_resonant": self.quasi_resonant.to_json(),
            "chis": [c.to_json() for c in self.chis],
            "spill": self.spill,
            "spill_by_degree": {str(k): v for k, v in sorted(self.spill_by_degree.items())},
            "stage_residuals": self.stage_residuals,
            "n_terms": {
                "Z": self.Z.nterms,
                "quasi_resonant": self.quasi_resonant.nterms,
                "overflow": self.overflow.nterms,
                "high_mode": self.high_mode.nterms,
            },
        }


def _divisors(freqs: FrequencySet, f: PolyHamiltonian) -> np.ndarray:
    """omega.(j - l) per monomial, split as alpha c^2 + k.(omega - c^2) for accuracy at large c."""
    k = f.jexp - f.lexp
    alpha = k.sum(axis=1)
    return alpha * freqs.c**2 + k @ freqs.offset


def solve_homological(freqs: FrequencySet, f: PolyHamiltonian, gamma: float, tau: float, N: int | None = None):
    """Solve {H_0, chi} + Z + Q = f monomial by monomial.

    Diagonal monomials (j = l) go to Z.  The rest are divided by
    i omega.(j - l) when the divisor is at least gamma/N^tau and otherwise
    left in the quasi-resonant part Q.  If N is given, f may carry at most
    two exponents on modes above N.
    """
    if f.J != freqs.J:
        raise ValueError(f"polynomial has {f.J} modes, frequencies {freqs.J}")
    if N is not None:
        if not 1 <= N <= f.J:
            raise ValueError(f"N={N} outside 1..{f.J}")
        if f.nterms and high_mode_degree(f, N).max() > 2:
            raise ValueError("f carries more than two high-mode exponents; split it with high_degree_filter first")
        thr = gamma / N**tau
    else:
        thr = float(gamma)
    diag = np.all(f.jexp == f.lexp, axis=1)
    div = _divisors(freqs, f)
    ok = ~diag & (np.abs(div) >= thr) & (div != 0)
    cap = f.degree_cap
    chi = PolyHamiltonian(f.J, f.exps[ok], f.coefs[ok] / (1j * div[ok]), cap)
    Z = PolyHamiltonian(f.J, f.exps[diag], f.coefs[diag], cap)
    Q = PolyHamiltonian(f.J, f.exps[~diag & ~ok], f.coefs[~diag & ~ok], cap)
    return chi, Z, Q


def homological_residual(freqs: FrequencySet, f, chi, Z, Q) -> float:
    """max |coef| of {H_0, chi} + Z + Q - f."""
    H0 = quadratic_hamiltonian(freqs)
    res = poisson_bracket(H0, chi.with_cap(None), None) + Z.with_cap(None) + Q.with_cap(None) - f.with_cap(None)
    return res.max_abs_coef()


def degree_cap_for(N1: PolyHamiltonian, r: int) -> int:
    """Highest degree normalized after r steps: lowest degree of N1 plus r - 1."""
    return N1.min_degree() + r - 1


def select_parameters(R: float, r: int, tau: float, J: int | None = None) -> tuple[int, float, float]:
    """(N, a, s_min) with a = 1/(2 tau (r+2)), N = ceil(R^-a) clamped to [1, J]."""
    if not 0 < R < 1:
        raise ValueError("R must lie in (0, 1)")
    if r < 1 or tau <= 0:
        raise ValueError("need r >= 1 and tau > 0")
    a = 1.0 / (2.0 * tau * (r + 2))
    N = max(1, math.ceil(R ** (-a)))
    if J is not None:
        N = min(N, J)
    return N, a, 2.0 * tau * r * (r + 2) + 1.0


def _empty(J: int, cap) -> PolyHamiltonian:
    return PolyHamiltonian.zero(J, cap)


def normalize(freqs: FrequencySet, N1: PolyHamiltonian, r: int, gamma: float, tau: float, N: int, R: float,
              s: float, tail_extra: int = 0) -> NormalFormResult:
    """r steps of normalization of H_0 + N1.

    Degrees up to ``degree_cap_for(N1, r)`` are normalized.  With
    ``tail_extra`` > 0 the series are kept that many degrees further, so the
    leading unnormalized terms are available in ``overflow`` for remainder
    estimates instead of only as a spill tally.
    """
    J = freqs.J
    if N1.J != J:
        raise ValueError(f"nonlinearity has {N1.J} modes, frequencies {J}")
    if r < 1:
        raise ValueError("r must be >= 1")
    if not 1 <= N <= J:
        raise ValueError(f"N={N} outside 1..{J}")
    if N1.is_zero():
        cap = 3 + r - 1
        p = NormalFormParams(r, N, tau, gamma, R, s, cap)
        z = _empty(J, cap)
        return NormalFormResult(z, [], z, float(sum(N1.spill.values())), p, z, z, dict(N1.spill), [], freqs)
    dmin = N1.min_degree()
    if dmin < 3:
        raise ValueError("the perturbation must start at degree >= 3")
    cap = degree_cap_for(N1, r)
    work_cap = cap + int(tail_extra)
    H0 = quadratic_hamiltonian(freqs)
    f = N1.with_cap(work_cap)
    spill = dict(N1.spill)
    Z = _empty(J, work_cap)
    Q = _empty(J, work_cap)
    RN = _empty(J, work_cap)
    chis, residuals = [], []
    for m in range(1, r + 1):
        d = dmin + m - 1
        fd = f.homogeneous(d)
        f_rest = f - fd
        f0, fN = high_degree_filter(fd, N, 2)
        chi, Zm, Qm = solve_homological(freqs, f0, gamma, tau, N)
        residuals.append(homological_residual(freqs, f0, chi, Zm, Qm))
        chis.append(chi.without_spill())
        if chi.is_zero():
            Z, Q, RN = Z + Zm, Q + Qm, RN + fN
            f = f_rest
            continue
        # H_0 part: g_1 = {chi, H_0} = Z_m + Q_m - f_0 by the homological equation
        g1 = (Zm + Qm - f0).with_cap(work_cap)
        h0_terms = _empty(J, work_cap)
        for l, g in enumerate(lie_series_terms(H0, chi, work_cap, first=g1)):
            if l >= 2:
                h0_terms = h0_terms + g.without_spill()
                spill = _merge_spill(spill, g.spill)
        A = (Z + Q + f).without_spill()
        LA, sA = lie_transform(A, chi, work_cap)
        LR, sR = lie_transform(RN.without_spill(), chi, work_cap)
        spill = _merge_spill(_merge_spill(spill, sA), sR)
        f = (LA - A).without_spill() + f_rest + h0_terms
        Z, Q = Z + Zm, Q + Qm
        RN = LR.without_spill() + fN
    p = NormalFormParams(r, N, tau, gamma, R, s, cap)
    # terms of F and R_N above the normalized degrees
    over = f.select(f.degrees > cap) if f.nterms else f
    total_spill = float(sum(spill.values()))
    return NormalFormResult(
        Z.without_spill(), chis, Q.without_spill(), total_spill, p, over.without_spill(), RN.without_spill(),
        spill, residuals, freqs,
    )


def verify_action_dependence(Z: PolyHamiltonian, N: int) -> list[dict]:
    """Monomials of Z violating: j = l on modes 1..N and at most two high-mode exponents."""
    if Z.is_zero():
        return []
    N = min(N, Z.J)
    low_ok = np.all(Z.jexp[:, :N] == Z.lexp[:, :N], axis=1)
    hd = high_mode_degree(Z, N)
    bad = ~(low_ok & (hd <= 2))
    out = []
    for row, c, lo, h in zip(Z.exps[bad], Z.coefs[bad], low_ok[bad], hd[bad]):
        reasons = []
        if not lo:
            reasons.append("j != l on low modes")
        if h > 2:
            reasons.append(f"high-mode degree {int(h)} > 2")
        out.append({
            "j": [[int(k) + 1, int(e)] for k, e in enumerate(row[: Z.J]) if e],
            "l": [[int(k) + 1, int(e)] for k, e in enumerate(row[Z.J:]) if e],
            "coef": [float(c.real), float(c.imag)],
            "reason": "; ".join(reasons),
        })
    return out


def sample_sphere(J: int, s: float, radius: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Random states on the H^s sphere: Gaussian in the weighted coordinates j^s psi_j."""
    z = rng.standard_normal((samples, J)) + 1j * rng.standard_normal((samples, J))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return radius * z / sobolev_weights(J, s)[None, :]


def _field_sup(f: PolyHamiltonian, states: np.ndarray, s: float) -> float:
    if f.is_zero():
        return 0.0
    X = 1j * f.gradient(states, wrt="psibar")
    w = sobolev_weights(f.J, s)
    return float(np.max(np.sqrt(np.sum((w * np.abs(X)) ** 2, axis=1))))


@dataclass(frozen=True)
class RemainderReport:
    r_T_estimate: float
    r_N_estimate: float
    quasi_resonant_estimate: float
    spill: float
    comparator_T: float
    comparator_N: float
    samples: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def remainder_report(result: NormalFormResult, samples: int = 256, seed: int = 0, R: float | None = None) -> RemainderReport:
    """Sampled sup over the H^s sphere of radius R/3 of the remainder vector fields.

    r_T is the field of the unnormalized overflow, r_N that of the high-mode
    remainder.  The comparators are R^(r+3/2) and R^2/N^(s-1).
    """
    p = result.params
    R = p.R if R is None else R
    J = result.Z.J
    rng = seeded_rng(seed, "remainder")
    states = sample_sphere(J, p.s, R / 3.0, samples, rng)
    rT = _field_sup(result.overflow, states, p.s)
    rN = _field_sup(result.high_mode, states, p.s)
    rQ = _field_sup(result.quasi_resonant, states, p.s)
    return RemainderReport(rT, rN, rQ, result.spill, R ** (p.r + 1.5), R**2 / p.N ** (p.s - 1), samples)


def apply_transform(result: NormalFormResult, state, inverse: bool = False, rtol: float = 1e-13,
                    atol: float = 1e-16) -> ModeState:
    """Map new variables to old ones, T = Phi_chi1 o ... o Phi_chir (time-1 flows).

    ``inverse`` runs the flows backwards in the opposite order.
    """
    from .dynamics import flow_map

    psi = _as_psi(state)
    chis = result.chis
    if inverse:
        for chi in chis:
            psi = flow_map(chi, psi, -1.0, rtol=rtol, atol=atol)
    else:
        for chi in reversed(chis):
            psi = flow_map(chi, psi, 1.0, rtol=rtol, atol=atol)
    return ModeState(psi)
