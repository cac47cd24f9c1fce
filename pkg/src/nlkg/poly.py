"""Sparse polynomial Hamiltonians in the mode variables (psi, psi-bar).

A monomial psi^j psibar^l is stored as one row ``j ++ l`` of an integer
exponent matrix (mode k = 1..J sits in column k-1 of each block).  Rows are
kept unique, nonzero and lexicographically sorted, so every polynomial has a
single canonical layout and all algebra is deterministic.

Conventions
-----------
Hamilton's equations read  psi' = i dH/dpsibar, so H_0 = sum omega_j |psi_j|^2
rotates psi_j -> exp(i omega_j t) psi_j.  The bracket compatible with this
flow and with the Lie series g_l = {chi, g_(l-1)}/l is

    {f, g} = i sum_k (df/dpsibar_k dg/dpsi_k - df/dpsi_k dg/dpsibar_k),

for which d/dt g(Phi^t_chi) = {chi, g}(Phi^t_chi) along psi' = i dchi/dpsibar,
and {H_0, psi^j psibar^l} = i omega.(j - l) psi^j psibar^l.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .spectral import FrequencySet, ModeState, _as_psi, sobolev_weights

__all__ = [
    "PolyHamiltonian",
    "MultiVector",
    "poisson_bracket",
    "modulus",
    "tame_norm_upper",
    "tame_norm_lower",
    "weighted_norm",
    "project_split",
    "high_degree_filter",
    "taylor_nonlinearity",
    "vector_field_eval",
    "vector_field_modulus_eval",
    "polarized_vector_field",
    "multivector_norm",
    "quadratic_hamiltonian",
    "action_monomial",
    "lie_series_terms",
    "lie_transform",
]

_PAIR_CHUNK = 400_000


def _canonical(exps: np.ndarray, coefs: np.ndarray, width: int):
    """Merge duplicate rows, drop zeros, sort lexicographically."""
    if len(coefs) == 0:
        return np.zeros((0, width), dtype=np.int64), np.zeros(0, dtype=complex)
    uniq, inv = np.unique(exps, axis=0, return_inverse=True)
    inv = inv.ravel()
    re = np.bincount(inv, weights=coefs.real, minlength=len(uniq))
    im = np.bincount(inv, weights=coefs.imag, minlength=len(uniq))
    c = re + 1j * im
    keep = c != 0
    return uniq[keep].astype(np.int64), c[keep]


@dataclass(frozen=True, eq=False)
class PolyHamiltonian:
    """Sparse polynomial sum_{j,l} f_{j,l} psi^j psibar^l on modes 1..J.

    ``spill`` maps a degree to the accumulated sum of absolute coefficients of
    terms that were discarded because they exceeded ``degree_cap``.
    """

    J: int
    exps: np.ndarray
    coefs: np.ndarray
    degree_cap: int | None = None
    spill: dict = field(default_factory=dict)

    def __post_init__(self):
        exps = np.asarray(self.exps, dtype=np.int64).reshape(-1, 2 * self.J)
        coefs = np.asarray(self.coefs, dtype=complex).ravel()
        if len(exps) != len(coefs):
            raise ValueError("exponent rows and coefficients differ in length")
        if np.any(exps < 0):
            raise ValueError("negative exponents")
        spill = dict(self.spill)
        if self.degree_cap is not None and len(coefs):
            deg = exps.sum(axis=1)
            over = deg > self.degree_cap
            if np.any(over):
                for d in np.unique(deg[over]):
                    spill[int(d)] = spill.get(int(d), 0.0) + float(np.abs(coefs[deg == d]).sum())
                exps, coefs = exps[~over], coefs[~over]
        exps, coefs = _canonical(exps, coefs, 2 * self.J)
        exps.setflags(write=False)
        coefs.setflags(write=False)
        object.__setattr__(self, "exps", exps)
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "spill", spill)

    # construction -----------------------------------------------------------

    @classmethod
    def zero(cls, J: int, degree_cap: int | None = None) -> "PolyHamiltonian":
        return cls(J, np.zeros((0, 2 * J), dtype=np.int64), np.zeros(0, dtype=complex), degree_cap)

    @classmethod
    def from_terms(cls, J: int, terms: dict, degree_cap: int | None = None) -> "PolyHamiltonian":
        """Build from ``{(j_tuple, l_tuple): coef}`` with 0-based mode positions
        given as full-length exponent tuples, or ``{((mode, exp), ...), ...}``
        pairs using 1-based modes (the JSON layout)."""
        rows, cs = [], []
        for (j, l), c in terms.items():
            rows.append(np.concatenate([_dense(j, J), _dense(l, J)]))
            cs.append(c)
        if not rows:
            return cls.zero(J, degree_cap)
        return cls(J, np.array(rows), np.array(cs, dtype=complex), degree_cap)

    def replace(self, exps=None, coefs=None, degree_cap=..., spill=None) -> "PolyHamiltonian":
        return PolyHamiltonian(
            self.J,
            self.exps if exps is None else exps,
            self.coefs if coefs is None else coefs,
            self.degree_cap if degree_cap is ... else degree_cap,
            self.spill if spill is None else spill,
        )

    # basic views --------------------------------------------------------------

    @property
    def jexp(self) -> np.ndarray:
        return self.exps[:, : self.J]

    @property
    def lexp(self) -> np.ndarray:
        return self.exps[:, self.J :]

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.exps.sum(axis=1)

    @property
    def nterms(self) -> int:
        return len(self.coefs)

    def __len__(self) -> int:
        return self.nterms

    def is_zero(self) -> bool:
        return self.nterms == 0

    @property
    def total_spill(self) -> float:
        return float(sum(self.spill.values()))

    def degree_set(self) -> list[int]:
        return sorted(int(d) for d in np.unique(self.degrees))

    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.nterms else 0

    def min_degree(self) -> int:
        return int(self.degrees.min()) if self.nterms else 0

    def homogeneous(self, d: int) -> "PolyHamiltonian":
        m = self.degrees == d
        return self.replace(self.exps[m], self.coefs[m], spill={})

    def components(self) -> dict[int, "PolyHamiltonian"]:
        return {d: self.homogeneous(d) for d in self.degree_set()}

    def select(self, mask) -> "PolyHamiltonian":
        return self.replace(self.exps[mask], self.coefs[mask], spill={})

    def terms(self) -> dict:
        return {
            (tuple(int(x) for x in r[: self.J]), tuple(int(x) for x in r[self.J :])): complex(c)
            for r, c in zip(self.exps, self.coefs)
        }

    def coefficient(self, j, l) -> complex:
        row = np.concatenate([_dense(j, self.J), _dense(l, self.J)])
        hit = np.all(self.exps == row, axis=1)
        return complex(self.coefs[hit][0]) if np.any(hit) else 0.0j

    # arithmetic -------------------------------------------------------------

    def _check(self, other: "PolyHamiltonian"):
        if not isinstance(other, PolyHamiltonian):
            raise TypeError("expected a PolyHamiltonian")
        if other.J != self.J:
            raise ValueError(f"mode cutoff mismatch: {self.J} vs {other.J}")

    def __add__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        self._check(other)
        return PolyHamiltonian(
            self.J,
            np.vstack([self.exps, other.exps]),
            np.concatenate([self.coefs, other.coefs]),
            _min_cap(self.degree_cap, other.degree_cap),
            _merge_spill(self.spill, other.spill),
        )

    def __neg__(self) -> "PolyHamiltonian":
        return self.replace(coefs=-self.coefs)

    def __sub__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        return self + (-other)

    def __mul__(self, a) -> "PolyHamiltonian":
        a = complex(a)
        return self.replace(coefs=self.coefs * a, spill={d: v * abs(a) for d, v in self.spill.items()})

    __rmul__ = __mul__

    def __truediv__(self, a) -> "PolyHamiltonian":
        return self * (1.0 / a)

    def conj_swap(self) -> "PolyHamiltonian":
        """The polynomial conj(f) written back in (psi, psibar): swaps j and l."""
        return self.replace(np.hstack([self.lexp, self.jexp]), np.conj(self.coefs))

    def reality_defect(self) -> float:
        """max |f_{j,l} - conj(f_{l,j})|; zero for real-valued Hamiltonians."""
        if self.is_zero():
            return 0.0
        d = self - self.conj_swap()
        return float(np.abs(d.coefs).max()) if d.nterms else 0.0

    def prune(self, tol: float) -> "PolyHamiltonian":
        return self.select(np.abs(self.coefs) > tol)

    def max_abs_coef(self) -> float:
        return float(np.abs(self.coefs).max()) if self.nterms else 0.0

    def with_cap(self, degree_cap: int | None) -> "PolyHamiltonian":
        return PolyHamiltonian(self.J, self.exps, self.coefs, degree_cap, self.spill)

    def without_spill(self) -> "PolyHamiltonian":
        return self.replace(spill={})

    # evaluation ---------------------------------------------------------------

    @cached_property
    def _derivative_tables(self):
        """Rows of d/dpsi_k and d/dpsibar_k of every monomial.

        Returns a dict keyed by 'psi' and 'psibar' holding (term, mode, factor,
        decremented exponents)."""
        out = {}
        for name, offset in (("psi", 0), ("psibar", self.J)):
            e = self.exps[:, offset : offset + self.J]
            t, k = np.nonzero(e)
            dex = self.exps[t].copy()
            dex[np.arange(len(t)), offset + k] -= 1
            out[name] = (t, k, e[t, k].astype(float), dex)
        return out

    def _monomials(self, exps: np.ndarray, zp: np.ndarray, zm: np.ndarray) -> np.ndarray:
        """Values of monomials ``exps`` at batch states; returns (B, n)."""
        J = self.J
        if len(exps) == 0:
            return np.zeros(zp.shape[:-1] + (0,), dtype=complex)
        emax = int(exps.max()) if exps.size else 0
        zp = np.atleast_2d(zp)
        zm = np.atleast_2d(zm)
        B = zp.shape[0]
        out = np.ones((B, len(exps)), dtype=complex)
        cols = np.arange(J)
        pw_p = np.empty((B, emax + 1, J), dtype=complex)
        pw_m = np.empty((B, emax + 1, J), dtype=complex)
        pw_p[:, 0] = 1.0
        pw_m[:, 0] = 1.0
        for e in range(1, emax + 1):
            pw_p[:, e] = pw_p[:, e - 1] * zp
            pw_m[:, e] = pw_m[:, e - 1] * zm
        for k in cols:
            jk = exps[:, k]
            if np.any(jk):
                out *= pw_p[:, jk, k]
            lk = exps[:, J + k]
            if np.any(lk):
                out *= pw_m[:, lk, k]
        return out

    def evaluate(self, psi, psibar=None) -> complex | np.ndarray:
        """Value at a state (or a batch of states along the first axis)."""
        zp = _as_psi(psi)
        zm = np.conj(zp) if psibar is None else _as_psi(psibar)
        single = zp.ndim == 1
        vals = self._monomials(self.exps, zp, zm) @ self.coefs
        return complex(vals[0]) if single else vals

    def gradient(self, psi, psibar=None, wrt: str = "psibar", coefs=None) -> np.ndarray:
        """Partial derivatives d f / d psi_k or d f / d psibar_k."""
        zp = _as_psi(psi)
        zm = np.conj(zp) if psibar is None else _as_psi(psibar)
        single = zp.ndim == 1
        zp2, zm2 = np.atleast_2d(zp), np.atleast_2d(zm)
        t, k, fac, dex = self._derivative_tables[wrt]
        c = self.coefs if coefs is None else coefs
        out = np.zeros((zp2.shape[0], self.J), dtype=complex)
        if len(t):
            vals = self._monomials(dex, zp2, zm2) * (c[t] * fac)
            for b in range(zp2.shape[0]):
                out[b] = np.bincount(k, weights=vals[b].real, minlength=self.J) + 1j * np.bincount(
                    k, weights=vals[b].imag, minlength=self.J
                )
        return out[0] if single else out

    def vector_field(self, psi) -> np.ndarray:
        """X_f(psi) = i df/dpsibar."""
        return 1j * self.gradient(psi, wrt="psibar")

    # serialization ------------------------------------------------------------

    def to_json(self) -> list:
        out = []
        for row, c in zip(self.exps, self.coefs):
            out.append(
                {
                    "j": [[int(k) + 1, int(e)] for k, e in enumerate(row[: self.J]) if e],
                    "l": [[int(k) + 1, int(e)] for k, e in enumerate(row[self.J :]) if e],
                    "re": float(c.real),
                    "im": float(c.imag),
                }
            )
        return out

    @classmethod
    def from_json(cls, obj, J: int, degree_cap: int | None = None) -> "PolyHamiltonian":
        if isinstance(obj, str):
            obj = json.loads(obj)
        rows, cs = [], []
        for term in obj:
            row = np.zeros(2 * J, dtype=np.int64)
            for key, off in (("j", 0), ("l", J)):
                for mode, e in term[key]:
                    if not 1 <= mode <= J:
                        raise ValueError(f"mode {mode} outside 1..{J}")
                    row[off + mode - 1] += e
            rows.append(row)
            cs.append(complex(term["re"], term["im"]))
        if not rows:
            return cls.zero(J, degree_cap)
        return cls(J, np.array(rows), np.array(cs), degree_cap)


def _dense(e, J: int) -> np.ndarray:
    """Accept a full exponent vector or a sparse ((mode, exp), ...) listing."""
    e = tuple(e)
    if e and isinstance(e[0], (tuple, list)):
        out = np.zeros(J, dtype=np.int64)
        for mode, p in e:
            out[mode - 1] += p
        return out
    out = np.zeros(J, dtype=np.int64)
    out[: len(e)] = e
    return out


def _min_cap(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def _merge_spill(a: dict, b: dict) -> dict:
    out = dict(a)
    for d, v in b.items():
        out[d] = out.get(d, 0.0) + v
    return out


def quadratic_hamiltonian(freqs: FrequencySet | np.ndarray) -> PolyHamiltonian:
    """H_0 = sum_j omega_j psi_j psibar_j."""
    omega = freqs.omega if isinstance(freqs, FrequencySet) else np.asarray(freqs, dtype=float)
    J = len(omega)
    eye = np.eye(J, dtype=np.int64)
    return PolyHamiltonian(J, np.hstack([eye, eye]), omega.astype(complex))


def action_monomial(J: int, k: int, power: int = 1) -> PolyHamiltonian:
    """I_k^power = (psi_k psibar_k)^power for the 1-based mode k."""
    row = np.zeros(2 * J, dtype=np.int64)
    row[k - 1] = power
    row[J + k - 1] = power
    return PolyHamiltonian(J, row[None, :], np.array([1.0 + 0j]))


# brackets -------------------------------------------------------------------


def _bracket_spill_bound(f: PolyHamiltonian, g: PolyHamiltonian) -> float:
    """Upper bound for the sum of |coefficients| of {f, g} without forming it."""
    af, ag = np.abs(f.coefs), np.abs(g.coefs)
    fj = af @ f.jexp
    fl = af @ f.lexp
    gj = ag @ g.jexp
    gl = ag @ g.lexp
    return float(fl @ gj + fj @ gl)


def _bracket_raw(f: PolyHamiltonian, g: PolyHamiltonian):
    J = f.J
    fj, fl, gj, gl = f.jexp, f.lexp, g.jexp, g.lexp
    rows, cs = [], []
    step = max(1, _PAIR_CHUNK // max(1, g.nterms))
    for a0 in range(0, f.nterms, step):
        a1 = min(f.nterms, a0 + step)
        for k in range(J):
            w = np.outer(fl[a0:a1, k], gj[:, k]) - np.outer(fj[a0:a1, k], gl[:, k])
            ia, ib = np.nonzero(w)
            if len(ia) == 0:
                continue
            e = f.exps[a0 + ia] + g.exps[ib]
            e[:, k] -= 1
            e[:, J + k] -= 1
            rows.append(e)
            cs.append(1j * f.coefs[a0 + ia] * g.coefs[ib] * w[ia, ib])
        if len(rows) > 64:
            ex, cc = _canonical(np.vstack(rows), np.concatenate(cs), 2 * J)
            rows, cs = [ex], [cc]
    if not rows:
        return np.zeros((0, 2 * J), dtype=np.int64), np.zeros(0, dtype=complex)
    return _canonical(np.vstack(rows), np.concatenate(cs), 2 * J)


def poisson_bracket(f: PolyHamiltonian, g: PolyHamiltonian, degree_cap: int | None = ...) -> PolyHamiltonian:
    """{f, g} with terms above the degree cap moved into the spill tally.

    Homogeneous pieces whose bracket lies entirely above the cap are never
    formed; their spill contribution is the bound of ``_bracket_spill_bound``.
    """
    if not isinstance(f, PolyHamiltonian) or not isinstance(g, PolyHamiltonian):
        raise TypeError("poisson_bracket expects PolyHamiltonian arguments")
    if f.J != g.J:
        raise ValueError(f"mode cutoff mismatch: {f.J} vs {g.J}")
    cap = _min_cap(f.degree_cap, g.degree_cap) if degree_cap is ... else degree_cap
    J = f.J
    spill: dict = {}
    rows, cs = [], []
    fc, gc = f.components(), g.components()
    for df, fp in fc.items():
        for dg, gp in gc.items():
            d = df + dg - 2
            if cap is not None and d > cap:
                b = _bracket_spill_bound(fp, gp)
                if b:
                    spill[d] = spill.get(d, 0.0) + b
                continue
            e, c = _bracket_raw(fp, gp)
            rows.append(e)
            cs.append(c)
    if rows:
        exps, coefs = np.vstack(rows), np.concatenate(cs)
    else:
        exps, coefs = np.zeros((0, 2 * J), dtype=np.int64), np.zeros(0, dtype=complex)
    return PolyHamiltonian(J, exps, coefs, cap, spill)


def modulus(f: PolyHamiltonian) -> PolyHamiltonian:
    return f.replace(coefs=np.abs(f.coefs).astype(complex))


def lie_series_terms(H: PolyHamiltonian, chi: PolyHamiltonian, degree_cap: int | None, first=None, max_terms: int = 64):
    """Yield g_0 = H, g_l = {chi, g_(l-1)}/l until the series is exhausted.

    ``first`` optionally overrides g_1 (used when {chi, H_0} is known in closed
    form from the homological equation).
    """
    g = H.with_cap(degree_cap)
    yield g
    for l in range(1, max_terms + 1):
        if l == 1 and first is not None:
            g = first.with_cap(degree_cap)
        else:
            g = poisson_bracket(chi, g.without_spill(), degree_cap) / l
        yield g
        if g.is_zero():
            return
    raise RuntimeError("Lie series did not terminate below the degree cap")


def lie_transform(H: PolyHamiltonian, chi: PolyHamiltonian, degree_cap: int | None = None):
    """Pull back H along the time-1 flow of X_chi, truncated at ``degree_cap``.

    Returns (transformed, spill) where spill is the per-degree tally of the
    discarded mass.
    """
    if chi.is_zero():
        return H.with_cap(degree_cap), dict(H.spill)
    if chi.min_degree() < 3:
        raise ValueError("generating function must have degree >= 3 for a terminating Lie series")
    if degree_cap is None:
        degree_cap = max(H.max_degree(), chi.max_degree())
    total = PolyHamiltonian.zero(H.J, degree_cap)
    spill: dict = dict(H.spill)
    for k, g in enumerate(lie_series_terms(H, chi, degree_cap)):
        if k > 0:
            spill = _merge_spill(spill, g.spill)
        total = total + g.without_spill()
    return total.replace(spill=spill), spill


# multivectors and tame norms -------------------------------------------------


@dataclass(frozen=True)
class MultiVector:
    """Ordered list of r elements of H^s + H^s; each is stored as (zp, zm)."""

    parts: tuple

    def __post_init__(self):
        parts = tuple((np.asarray(p, dtype=complex), np.asarray(m, dtype=complex)) for p, m in self.parts)
        if len(parts) < 1:
            raise ValueError("multivector needs r >= 1 parts")
        J = parts[0][0].shape[-1]
        if any(p.shape[-1] != J or m.shape[-1] != J for p, m in parts):
            raise ValueError("all parts must share the mode cutoff")
        object.__setattr__(self, "parts", parts)

    @property
    def r(self) -> int:
        return len(self.parts)

    @classmethod
    def from_states(cls, states) -> "MultiVector":
        return cls(tuple((_as_psi(s), np.conj(_as_psi(s))) for s in states))


def _pair_norm(zp, zm, s):
    w = sobolev_weights(zp.shape[-1], s)
    return np.sqrt(np.sum((w * np.abs(zp)) ** 2, axis=-1) + np.sum((w * np.abs(zm)) ** 2, axis=-1))


def multivector_norm(phi: MultiVector, s: float) -> float | np.ndarray:
    """||phi||_{s,1}: average over l of ||phi_l||_s times prod_{i != l} ||phi_i||_1."""
    n1 = [_pair_norm(p, m, 1.0) for p, m in phi.parts]
    ns = [_pair_norm(p, m, s) for p, m in phi.parts]
    r = phi.r
    tot = 0.0
    for l in range(r):
        term = ns[l]
        for i in range(r):
            if i != l:
                term = term * n1[i]
        tot = tot + term
    return tot / r


def vector_field_eval(f: PolyHamiltonian, state) -> ModeState:
    return ModeState(f.vector_field(_as_psi(state)))


def vector_field_modulus_eval(f: PolyHamiltonian, zp, zm) -> tuple[np.ndarray, np.ndarray]:
    """Both components of the modulus vector field of f at independent (zp, zm).

    The psi-component is d|f|/dpsibar and the psibar-component d|f|/dpsi.
    """
    mf = modulus(f)
    return mf.gradient(zp, zm, wrt="psibar"), mf.gradient(zp, zm, wrt="psi")


def polarized_vector_field(f: PolyHamiltonian, phi: MultiVector, use_modulus: bool = True):
    """Symmetric r-linear form of the (modulus) vector field at a multivector.

    Uses the polarization identity
    X~(phi_1..phi_r) = 1/(r! 2^r) sum_eps (prod eps) X(sum eps_i phi_i).
    Requires f homogeneous of degree r + 1.
    """
    degs = f.degree_set()
    r = phi.r
    if degs and degs != [r + 1]:
        raise ValueError(f"polynomial of degrees {degs} does not match a {r}-vector")
    g = modulus(f) if use_modulus else f
    J = f.J
    out_p = np.zeros(J, dtype=complex)
    out_m = np.zeros(J, dtype=complex)
    for eps in itertools.product((1.0, -1.0), repeat=r):
        zp = sum(e * p for e, (p, _) in zip(eps, phi.parts))
        zm = sum(e * m for e, (_, m) in zip(eps, phi.parts))
        sgn = float(np.prod(eps))
        out_p += sgn * g.gradient(zp, zm, wrt="psibar")
        out_m += sgn * g.gradient(zp, zm, wrt="psi")
    norm = math.factorial(r) * 2**r
    return out_p / norm, out_m / norm


def _require_homogeneous(f: PolyHamiltonian) -> int:
    degs = f.degree_set()
    if len(degs) > 1:
        raise ValueError(f"expected a homogeneous polynomial, got degrees {degs}")
    return degs[0] if degs else 0


def tame_norm_upper(f: PolyHamiltonian, s: float) -> float:
    """Certified upper bound on the tame s-norm of a homogeneous polynomial.

    Degree 2: the exact weighted operator norm of the linear modulus field.
    Degree >= 3: each monomial of a field component of output mode v with
    input modes m_1..m_r (largest M) is bounded by putting the s-norm on the
    largest-mode factor and 1-norms elsewhere,
        |term| <= (v/M)^s prod_{other} (1/m_i) * ||phi||_{s,1},
    which survives symmetrization because the largest factor visits every
    slot equally often.  Components are combined in l^2.
    """
    d = _require_homogeneous(f)
    if f.is_zero():
        return 0.0
    if f.degree_cap is not None and d > f.degree_cap:
        return math.inf
    J = f.J
    w = sobolev_weights(J, s)
    mf = modulus(f)
    if d == 2:
        A = np.zeros((2 * J, 2 * J))
        # output psi_k from d/dpsibar_k, output psibar_k from d/dpsi_k
        for out_off, name in ((0, "psibar"), (J, "psi")):
            t, k, fac, dex = mf._derivative_tables[name]
            col = np.argmax(dex, axis=1)
            A[out_off + k, col] += (mf.coefs[t].real * fac)
        W = np.concatenate([w, w])
        B = (W[:, None] * A) / W[None, :]
        return float(np.linalg.norm(B, 2))
    beta = np.zeros(2 * J)
    modes = np.arange(1, J + 1, dtype=float)
    for out_off, name in ((0, "psibar"), (J, "psi")):
        t, k, fac, dex = mf._derivative_tables[name]
        if not len(t):
            continue
        mult = dex[:, :J] + dex[:, J:]  # exponent per input mode
        present = mult > 0
        Mi = np.where(present, modes[None, :], 0).max(axis=1)
        # prod over all inputs of 1/m, then restore one factor of the largest mode
        logprod = -(mult * np.log(modes)[None, :]).sum(axis=1) + np.log(Mi)
        vals = mf.coefs[t].real * fac * (modes[k] / Mi) ** s * np.exp(logprod)
        beta += np.bincount(out_off + k, weights=vals, minlength=2 * J)
    return float(np.sqrt(np.sum(beta**2)))


def _random_pair(rng: np.random.Generator, J: int):
    """Random direction in H^s + H^s with random sparse support."""
    zp = rng.standard_normal(J) + 1j * rng.standard_normal(J)
    zm = rng.standard_normal(J) + 1j * rng.standard_normal(J)
    style = rng.integers(3)
    if style == 0:
        # single coordinate
        keep = np.zeros(2 * J, dtype=bool)
        keep[rng.integers(2 * J)] = True
    elif style == 1:
        keep = rng.random(2 * J) < rng.uniform(0.1, 0.6)
        if not keep.any():
            keep[rng.integers(2 * J)] = True
    else:
        keep = np.ones(2 * J, dtype=bool)
    zp = np.where(keep[:J], zp, 0)
    zm = np.where(keep[J:], zm, 0)
    scale = np.arange(1, J + 1, dtype=float) ** (-rng.uniform(0, 3))
    return zp * scale, zm * scale


def tame_norm_lower(f: PolyHamiltonian, s: float, samples: int, seed: int) -> float:
    """Sampled lower bound: max of ||X~_{|f|}(phi)||_s / ||phi||_{s,1}."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    d = _require_homogeneous(f)
    if f.is_zero():
        return 0.0
    r = d - 1
    rng = np.random.default_rng(seed)
    J = f.J
    best = 0.0
    for _ in range(samples):
        phi = MultiVector(tuple(_random_pair(rng, J) for _ in range(r)))
        xp, xm = polarized_vector_field(f, phi)
        num = float(_pair_norm(xp, xm, s))
        den = float(multivector_norm(phi, s))
        if den > 0:
            best = max(best, num / den)
    return best


def weighted_norm(f: PolyHamiltonian, s: float, R: float) -> float:
    """sum_m |f_m|_s R^(m-1) over homogeneous components (upper tame norms)."""
    if not R > 0:
        raise ValueError("radius must be positive")
    return float(sum(tame_norm_upper(fm, s) * R ** (m - 1) for m, fm in f.components().items()))


# projections ------------------------------------------------------------------


def project_split(state, N: int) -> tuple[ModeState, ModeState]:
    psi = _as_psi(state)
    J = len(psi)
    if not 1 <= N <= J:
        raise ValueError(f"projection index N={N} outside 1..{J}")
    low = psi.copy()
    low[N:] = 0
    high = psi - low
    return ModeState(low), ModeState(high)


def high_mode_degree(f: PolyHamiltonian, N: int) -> np.ndarray:
    """Total exponent carried by modes > N in each monomial."""
    return f.jexp[:, N:].sum(axis=1) + f.lexp[:, N:].sum(axis=1)


def high_degree_filter(f: PolyHamiltonian, N: int, max_high_degree: int = 2):
    """Split f into terms of degree <= max_high_degree in (psi_h, psibar_h) and the rest."""
    hd = high_mode_degree(f, N)
    keep = hd <= max_high_degree
    return f.select(keep), f.select(~keep)


# nonlinearity -------------------------------------------------------------------


def _sine_product_integral(modes: np.ndarray) -> np.ndarray:
    """int_0^pi prod_i sin(m_i x) dx for each row of ``modes`` (exact).

    sin(mx) = (e^{imx} - e^{-imx})/(2i) turns the product into a signed sum of
    exponentials; int_0^pi e^{ikx} dx is pi for k = 0, -2/(ik) for odd k and
    zero for even k != 0.
    """
    n, p = modes.shape
    acc = np.zeros(n, dtype=complex)
    for eps in itertools.product((1, -1), repeat=p):
        e = np.array(eps)
        k = modes @ e
        val = np.where(k == 0, np.pi + 0j, 0j)
        odd = (k % 2) != 0
        val[odd] = -2.0 / (1j * k[odd])
        acc += float(np.prod(e)) * val
    return (acc / (2j) ** p).real


def taylor_nonlinearity(nl_spec: dict, pot, c: float, J: int | None = None, degree_cap: int | None = None) -> PolyHamiltonian:
    """Monomial coefficients of int_0^pi f(Lambda (psi + psibar)/sqrt 2) dx.

    ``nl_spec`` maps a power p >= 4 to a_p, with f(u) = sum a_p u^p.  Powers
    above ``degree_cap`` are not expanded; their coefficient mass (an upper
    bound from |int prod e_j| <= (2/pi)^(p/2) pi) lands in the spill tally.
    """
    from .spectral import eigenvalues, smoothing_multiplier

    spec = {int(p): float(a) for p, a in dict(nl_spec).items()}
    if not spec:
        raise ValueError("empty nonlinearity specification")
    if any(p < 4 for p in spec):
        raise ValueError("nonlinearity powers must be >= 4 (zero of order four at the origin)")
    if J is None:
        J = pot.J
    pot = pot.with_modes(J)
    lam = eigenvalues(pot)
    Lam = smoothing_multiplier(lam, c)
    rows, cs = [], []
    spill = {}
    for p, a in sorted(spec.items()):
        if a == 0:
            continue
        if degree_cap is not None and p > degree_cap:
            # |coef| sum <= |a| (sum_j Lam_j sqrt(2/pi) * 2/sqrt2)^p * pi  (crude, conservative)
            spill[p] = abs(a) * np.pi * (np.sqrt(2.0 / np.pi) * np.sqrt(2.0) * Lam.sum()) ** p
            continue
        combos = np.array(list(itertools.combinations_with_replacement(range(1, J + 1), p)), dtype=np.int64)
        integ = _sine_product_integral(combos)
        nz = np.abs(integ) > 1e-14
        combos, integ = combos[nz], integ[nz]
        pref = a * (2.0 / np.pi) ** (p / 2) / 2 ** (p / 2) * math.factorial(p)
        for row, I in zip(combos, integ):
            mult = np.bincount(row - 1, minlength=J)
            modes = np.nonzero(mult)[0]
            base = pref * I * np.prod(Lam[modes] ** mult[modes]) / np.prod([math.factorial(int(m)) for m in mult[modes]])
            # prod_m (psi_m + psibar_m)^mu_m expanded binomially
            for split in itertools.product(*[range(mult[m] + 1) for m in modes]):
                e = np.zeros(2 * J, dtype=np.int64)
                coef = base
                for m, aexp in zip(modes, split):
                    e[m] = aexp
                    e[J + m] = mult[m] - aexp
                    coef *= math.comb(int(mult[m]), int(aexp))
                rows.append(e)
                cs.append(coef)
    if not rows:
        return PolyHamiltonian(J, np.zeros((0, 2 * J), dtype=np.int64), np.zeros(0, dtype=complex), degree_cap, spill)
    return PolyHamiltonian(J, np.array(rows), np.array(cs, dtype=complex), degree_cap, spill)
