"""Dirichlet sine-mode representation of the Klein-Gordon problem.

Modes are indexed j = 1..J on the basis e_j(x) = sqrt(2/pi) sin(jx) of
L^2([0, pi]).  The convolution potential acts diagonally with multiplier
v_j = M j^(-s) v'_j, so the linear spectrum is lambda_j = j^2 + v_j and the
Klein-Gordon frequencies are omega_j = c sqrt(c^2 + lambda_j).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PotentialSpec",
    "FrequencySet",
    "ModeState",
    "RealState",
    "eigenvalues",
    "frequencies",
    "frequency_expansion",
    "linear_multiplier",
    "apply_linear_op",
    "smoothing_multiplier",
    "to_psi",
    "from_psi",
    "sobolev_norm",
    "sobolev_weights",
    "quadratic_energy",
]

SUPPORTED_POWERS = (-0.5, -0.25, 0.25, 0.5, 1.0)

# below this value of lambda/c^2 the expanded form of omega is used
_EXPANSION_SWITCH = 1e-4


def _as_psi(state) -> np.ndarray:
    if isinstance(state, ModeState):
        return state.psi
    return np.asarray(state, dtype=complex)


@dataclass(frozen=True)
class PotentialSpec:
    """Random convolution potential with normalized coefficients ``vprime``."""

    s: float
    M: float
    vprime: tuple[float, ...]

    def __post_init__(self):
        vp = tuple(float(x) for x in np.atleast_1d(self.vprime))
        object.__setattr__(self, "vprime", vp)
        if len(vp) < 1:
            raise ValueError("potential needs at least one mode (J >= 1)")
        if not self.s > 0:
            raise ValueError(f"decay exponent s must be positive, got {self.s}")
        if not 0 <= self.M < 1:
            raise ValueError(f"amplitude M must lie in [0, 1) so that lambda_j > 0, got {self.M}")
        if any(not (-0.5 <= x <= 0.5) for x in vp):
            raise ValueError("normalized coefficients v'_j must lie in [-1/2, 1/2]")

    @property
    def J(self) -> int:
        return len(self.vprime)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.J + 1, dtype=float)

    @property
    def v(self) -> np.ndarray:
        j = self.modes
        return self.M * j ** (-self.s) * np.asarray(self.vprime)

    @classmethod
    def zero(cls, J: int, s: float = 2.0, M: float = 0.5) -> "PotentialSpec":
        return cls(s=s, M=M, vprime=(0.0,) * J)

    @classmethod
    def random(cls, J: int, rng: np.random.Generator, s: float = 2.0, M: float = 0.5) -> "PotentialSpec":
        return cls(s=s, M=M, vprime=tuple(rng.uniform(-0.5, 0.5, size=J)))

    def with_modes(self, J: int) -> "PotentialSpec":
        """Truncate or zero-extend the coefficient list to J modes."""
        vp = list(self.vprime[:J]) + [0.0] * max(0, J - self.J)
        return PotentialSpec(self.s, self.M, tuple(vp))

    def to_json(self) -> dict:
        return {"s": self.s, "M": self.M, "vprime": list(self.vprime)}

    @classmethod
    def from_json(cls, obj) -> "PotentialSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        extra = set(obj) - {"s", "M", "vprime"}
        if extra:
            raise ValueError(f"unknown potential keys: {sorted(extra)}")
        return cls(s=float(obj["s"]), M=float(obj["M"]), vprime=tuple(obj["vprime"]))


@dataclass(frozen=True)
class FrequencySet:
    c: float
    omega: np.ndarray
    lam: np.ndarray
    # omega - c^2, kept separately since it carries all the information at large c
    offset: np.ndarray = field(repr=False)

    @property
    def J(self) -> int:
        return len(self.omega)


@dataclass(frozen=True)
class ModeState:
    """Complex sine-mode coefficients of psi; psi-bar is the conjugate."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=complex)
        if psi.ndim != 1:
            raise ValueError("ModeState expects a 1-d coefficient vector")
        if not np.all(np.isfinite(psi)):
            raise ValueError("ModeState entries must be finite")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def J(self) -> int:
        return len(self.psi)

    def norm(self, s: float) -> float:
        return sobolev_norm(self, s)

    def __add__(self, other: "ModeState") -> "ModeState":
        return ModeState(self.psi + _as_psi(other))

    def __sub__(self, other: "ModeState") -> "ModeState":
        return ModeState(self.psi - _as_psi(other))

    def __mul__(self, a) -> "ModeState":
        return ModeState(self.psi * a)

    __rmul__ = __mul__

    def to_json(self) -> list:
        return [[float(z.real), float(z.imag)] for z in self.psi]

    @classmethod
    def from_json(cls, obj) -> "ModeState":
        if isinstance(obj, str):
            obj = json.loads(obj)
        arr = np.asarray(obj, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0] + 1j * arr[:, 1])


@dataclass(frozen=True)
class RealState:
    u: np.ndarray
    ut: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        ut = np.array(self.ut, dtype=float)
        if u.shape != ut.shape or u.ndim != 1:
            raise ValueError("u and u_t must be 1-d vectors of equal length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(ut))):
            raise ValueError("RealState entries must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "ut", ut)


def eigenvalues(pot: PotentialSpec) -> np.ndarray:
    j = pot.modes
    return j**2 + pot.v


def _check_c(c: float):
    if not c >= 1:
        raise ValueError(f"speed of light parameter must satisfy c >= 1, got {c}")


def frequency_expansion(lam, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (lambda/2, correction) with omega = c^2 + lambda/2 + correction.

    The correction -lambda^2 / (2 c^2 (1 + sqrt(1 + lambda/c^2))^2) lies in
    [-lambda^2/(8c^2), 0]; in floating point as well, since the squared
    denominator is never below 4.
    """
    lam = np.asarray(lam, dtype=float)
    den = 1.0 + np.sqrt(1.0 + lam / (c * c))
    corr = -(lam * lam / (2.0 * c * c)) / (den * den)
    return lam / 2.0, corr


def frequencies(lam, c: float) -> FrequencySet:
    """omega_j = c sqrt(c^2 + lambda_j) without cancellation at large c."""
    _check_c(c)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be positive")
    x = lam / (c * c)
    direct = lam / (1.0 + np.sqrt(1.0 + x))
    half, corr = frequency_expansion(lam, c)
    # for tiny x the two-term form keeps the ordering c^2 + lam/2 - lam^2/(8c^2) <= omega exact
    offset = np.where(x < _EXPANSION_SWITCH, half + corr, direct)
    omega = c * c + offset
    return FrequencySet(c=float(c), omega=omega, lam=lam, offset=offset)


def linear_multiplier(lam, c: float, power: float) -> np.ndarray:
    """Mode multiplier of ((c^2 - Delta + V)/c^2)^power.

    power = -1/4 is the smoothing operator (c / (c^2 - Delta + V)^(1/2))^(1/2);
    power = 1/4 is its inverse.  Normalizing by c keeps every multiplier O(1)
    uniformly in c.
    """
    _check_c(c)
    if float(power) not in SUPPORTED_POWERS:
        raise ValueError(f"unsupported operator power {power}; expected one of {SUPPORTED_POWERS}")
    lam = np.asarray(lam, dtype=float)
    return (1.0 + lam / (c * c)) ** float(power)


def smoothing_multiplier(lam, c: float) -> np.ndarray:
    return linear_multiplier(lam, c, -0.25)


def apply_linear_op(state, pot: PotentialSpec, c: float, power: float) -> ModeState:
    psi = _as_psi(state)
    lam = eigenvalues(pot)
    if len(psi) != len(lam):
        raise ValueError("state and potential have different mode counts")
    return ModeState(linear_multiplier(lam, c, power) * psi)


def to_psi(rs: RealState, pot: PotentialSpec, c: float) -> ModeState:
    lam = eigenvalues(pot)
    if len(rs.u) != len(lam):
        raise ValueError("state and potential have different mode counts")
    a = linear_multiplier(lam, c, 0.25)
    return ModeState((a * rs.u - 1j * rs.ut / a) / np.sqrt(2.0))


def from_psi(state, pot: PotentialSpec, c: float) -> RealState:
    psi = _as_psi(state)
    lam = eigenvalues(pot)
    if len(psi) != len(lam):
        raise ValueError("state and potential have different mode counts")
    a = linear_multiplier(lam, c, 0.25)
    return RealState(np.sqrt(2.0) * psi.real / a, -np.sqrt(2.0) * psi.imag * a)


def sobolev_weights(J: int, s: float) -> np.ndarray:
    return np.arange(1, J + 1, dtype=float) ** s


def sobolev_norm(state, s: float) -> float:
    if s < 0:
        raise ValueError("Sobolev exponent must be nonnegative")
    psi = _as_psi(state)
    w = sobolev_weights(psi.shape[-1], s)
    return float(np.sqrt(np.sum((w * np.abs(psi)) ** 2)))


def quadratic_energy(state, freqs: FrequencySet) -> float:
    """H_0 = sum_j omega_j |psi_j|^2."""
    psi = _as_psi(state)
    return float(np.sum(freqs.omega * np.abs(psi) ** 2))
