"""Time integration of the Galerkin-truncated Klein-Gordon flow and of polynomial Hamiltonians.

The full flow psi' = i dH/dpsibar with H = sum omega_j |psi_j|^2 + int F(u) dx,
u = Lambda (psi + psibar)/sqrt 2, is split into

* the linear part, an exact rotation psi_j -> exp(i omega_j t) psi_j, and
* the nonlinear part, whose flow is an exact kick: it only moves Im psi, so
  u is frozen and psi += i t Lambda/sqrt 2 * G(u) with G_j = int F'(u) e_j dx.

G and the nonlinear energy use the same Gauss-Legendre rule, so the scheme
is the exact splitting of one discrete Hamiltonian.  Strang (order 2) and
the Yoshida triple jump (order 4) compositions are provided.  Step error is
governed by dt c^2, since the nonlinearity mixes in terms oscillating like
exp(i k c^2 t); ``choose_dt`` encodes that rule.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .poly import PolyHamiltonian
from .spectral import (
    ModeState,
    PotentialSpec,
    _as_psi,
    eigenvalues,
    frequencies,
    smoothing_multiplier,
    sobolev_norm,
    sobolev_weights,
)

__all__ = [
    "NumericalFailure",
    "Trajectory",
    "ScalingFit",
    "EscapeTime",
    "NLKGSystem",
    "integrate_nlkg",
    "integrate_poly",
    "flow_map",
    "actions",
    "action_drift",
    "escape_time",
    "torus_distance",
    "fit_scaling",
    "choose_dt",
    "initial_state",
    "corollary_experiment",
    "drift_horizon",
    "action_drift_series",
    "SweepPoint",
    "sweep_point",
    "parallel_map",
    "escape_slope",
    "drift_constant",
]

METHODS = {"strang": 2, "yoshida4": 4}


class NumericalFailure(FloatingPointError):
    """Raised when a run produces non-finite values or a step controller fails."""


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 1:
            raise ValueError("times must be a nonempty 1-d array")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        st = np.asarray(self.states, dtype=complex)
        if st.shape[0] != len(t):
            raise ValueError("one state per recorded time")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "energy", np.asarray(self.energy, dtype=float))

    @property
    def J(self) -> int:
        return self.states.shape[1]

    def state(self, i: int) -> ModeState:
        return ModeState(self.states[i])

    @property
    def energy_drift(self) -> float:
        """max_t |H(t) - H(0)| / |H(0)|."""
        e0 = self.energy[0]
        if e0 == 0:
            return float(np.max(np.abs(self.energy - e0)))
        return float(np.max(np.abs(self.energy - e0)) / abs(e0))

    def norms(self, s: float) -> np.ndarray:
        w = sobolev_weights(self.J, s)
        return np.sqrt(np.sum((w * np.abs(self.states)) ** 2, axis=1))


@dataclass(frozen=True)
class ScalingFit:
    xs: np.ndarray
    ys: np.ndarray
    slope: float
    intercept: float
    residual: float

    def to_json(self) -> dict:
        return {"log_x": list(map(float, self.xs)), "log_y": list(map(float, self.ys)), "slope": self.slope,
                "intercept": self.intercept, "residual": self.residual}


@dataclass(frozen=True)
class EscapeTime:
    time: float
    survived: bool

    def to_json(self) -> dict:
        return {"time": self.time, "survived": self.survived}


# nonlinearity on a quadrature grid ----------------------------------------------


def _nl_arrays(nl_spec) -> tuple[np.ndarray, np.ndarray]:
    spec = {int(p): float(a) for p, a in dict(nl_spec or {}).items() if float(a) != 0.0}
    if any(p < 2 for p in spec):
        raise ValueError("nonlinearity powers must be >= 2")
    ps = np.array(sorted(spec), dtype=np.int64)
    return ps, np.array([spec[p] for p in ps], dtype=float)


class NLKGSystem:
    """Frequencies, smoothing multipliers and quadrature for one (pot, c, f, J)."""

    def __init__(self, pot: PotentialSpec, c: float, nl_spec, J: int | None = None, nodes: int | None = None):
        J = pot.J if J is None else int(J)
        self.pot = pot.with_modes(J)
        self.c = float(c)
        self.J = J
        lam = eigenvalues(self.pot)
        self.freqs = frequencies(lam, c)
        self.Lam = smoothing_multiplier(lam, c)
        self.powers, self.coefs = _nl_arrays(nl_spec)
        pmax = int(self.powers.max()) if len(self.powers) else 1
        # pmax J + 32 Gauss-Legendre nodes integrate the trig products to round-off
        n = pmax * J + 32 if nodes is None else int(nodes)
        x, w = np.polynomial.legendre.leggauss(n)
        self.x = (x + 1.0) * (np.pi / 2)
        self.w = w * (np.pi / 2)
        self.E = np.sqrt(2.0 / np.pi) * np.sin(np.outer(self.x, np.arange(1, J + 1)))
        self.Etw = self.E * self.w[:, None]
        # u = E q with q = sqrt 2 Lambda Re psi
        self.qfac = np.sqrt(2.0) * self.Lam

    def u(self, psi) -> np.ndarray:
        psi = np.asarray(psi)
        return (psi.real * self.qfac) @ self.E.T

    def nonlinear_energy(self, psi) -> np.ndarray | float:
        u = self.u(psi)
        F = np.zeros_like(u)
        for p, a in zip(self.powers, self.coefs):
            F += a * u**p
        return F @ self.w

    def hamiltonian(self, psi) -> np.ndarray | float:
        psi = np.asarray(psi)
        return np.sum(self.freqs.omega * np.abs(psi) ** 2, axis=-1) + self.nonlinear_energy(psi)

    def vector_field(self, psi) -> np.ndarray:
        """i dH/dpsibar at a single state."""
        psi = _as_psi(psi)
        u = self.u(psi)
        fp = np.zeros_like(u)
        for p, a in zip(self.powers, self.coefs):
            fp += p * a * u ** (p - 1)
        G = fp @ self.Etw
        return 1j * self.freqs.omega * psi + 1j * (self.qfac / 2.0) * G

    def rotation(self, tau: float) -> np.ndarray:
        """exp(i omega tau), with the c^2 tau phase reduced mod 2 pi first."""
        c2 = self.c * self.c
        return np.exp(1j * (math.fmod(c2 * tau, 2 * np.pi) + self.freqs.offset * tau))


def _composition(method: str) -> tuple[np.ndarray, np.ndarray]:
    """(rotation fractions before each kick, kick fractions); a final rotation closes the step."""
    if method == "strang":
        return np.array([0.5]), np.array([1.0])
    if method == "yoshida4":
        w1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
        w0 = -(2.0 ** (1.0 / 3.0)) * w1
        return np.array([w1 / 2, (w1 + w0) / 2, (w0 + w1) / 2]), np.array([w1, w0, w1])
    raise ValueError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")


@numba.njit(cache=True, nogil=True)
def _advance(psi, rots, fin, bs, E, Etw, qfac, pw, ap, dt, per, nrec, weights, stop2, out):
    """Run nrec blocks of ``per`` steps, storing the state after each block.

    Stops early when the squared weighted norm exceeds stop2; returns the
    number of blocks stored (negative if a non-finite value appeared).
    """
    J = psi.shape[0]
    n = E.shape[0]
    q = np.empty(J)
    G = np.empty(J)
    for rec in range(nrec):
        for step in range(per):
            for st in range(bs.shape[0]):
                for j in range(J):
                    psi[j] *= rots[st, j]
                for j in range(J):
                    q[j] = qfac[j] * psi[j].real
                    G[j] = 0.0
                for i in range(n):
                    u = 0.0
                    for j in range(J):
                        u += E[i, j] * q[j]
                    fp = 0.0
                    for k in range(pw.shape[0]):
                        fp += pw[k] * ap[k] * u ** (pw[k] - 1)
                    for j in range(J):
                        G[j] += Etw[i, j] * fp
                h = bs[st] * dt * 0.5
                for j in range(J):
                    psi[j] += 1j * h * qfac[j] * G[j]
            for j in range(J):
                psi[j] *= fin[j]
        nrm = 0.0
        ok = True
        for j in range(J):
            out[rec, j] = psi[j]
            a = abs(psi[j])
            if not np.isfinite(a):
                ok = False
            nrm += (weights[j] * a) ** 2
        if not ok:
            return -(rec + 1)
        if nrm > stop2:
            return rec + 1
    return nrec


def choose_dt(c: float, dt0: float = 0.01, kappa: float = 0.03) -> float:
    """Step size min(dt0, kappa / c^2): the splitting error is a function of dt c^2."""
    return min(float(dt0), float(kappa) / (c * c))


def integrate_nlkg(state0, pot: PotentialSpec, c: float, nl_spec, dt: float, T: float, J: int | None = None,
                   method: str = "strang", record_every: int = 10, stop_radius: float | None = None,
                   s: float = 4.0, system: NLKGSystem | None = None) -> Trajectory:
    """Split-step integration of the truncated NLKG flow up to time T.

    The number of steps is ceil(T/dt) and the step is shrunk to land on T.
    With ``stop_radius`` the run ends at the first record whose H^s norm
    exceeds it.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt:
        raise ValueError("need T >= dt")
    if not c >= 1:
        raise ValueError("c must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    psi0 = _as_psi(state0).copy()
    J = len(psi0) if J is None else int(J)
    if len(psi0) != J:
        raise ValueError(f"state has {len(psi0)} modes, expected J={J}")
    if not np.all(np.isfinite(psi0)):
        raise NumericalFailure("initial state is not finite")
    sysm = system if system is not None else NLKGSystem(pot, c, nl_spec, J)
    nsteps = max(1, math.ceil(T / dt - 1e-9))
    dt_eff = T / nsteps
    per = min(record_every, nsteps)
    nrec = nsteps // per
    rest = nsteps - nrec * per
    fr, kb = _composition(method)
    rots = np.array([sysm.rotation(a * dt_eff) for a in fr])
    # the closing rotation mirrors the opening one (both compositions are symmetric)
    fin = sysm.rotation(fr[0] * dt_eff)
    weights = sobolev_weights(J, s)
    stop2 = math.inf if stop_radius is None else float(stop_radius) ** 2
    out = np.empty((nrec + (1 if rest else 0), J), dtype=complex)
    psi = psi0.copy()
    args = (rots, fin, kb, sysm.E, sysm.Etw, sysm.qfac, sysm.powers, sysm.coefs, dt_eff)
    done = _advance(psi, *args, per, nrec, weights, stop2, out)
    times = [(k + 1) * per * dt_eff for k in range(abs(done))]
    if done == nrec and rest:
        done2 = _advance(psi, *args, rest, 1, weights, stop2, out[nrec:])
        if done2 < 0:
            done = -(nrec + 1)
        else:
            done = nrec + 1
        times.append(T)
    if done < 0:
        k = -done - 1
        raise NumericalFailure(f"non-finite state at t~{times[k]:.6g} (c={c}, dt={dt_eff:.3g}); reduce dt")
    states = np.vstack([psi0[None, :], out[:done]])
    times = np.concatenate([[0.0], times[:done]])
    times[-1] = min(times[-1], T)
    meta = {
        "c": float(c),
        "pot": sysm.pot.to_json(),
        "integrator": method,
        "order": METHODS[method],
        "dt": dt_eff,
        "J": J,
        "steps_per_record": per,
        "stopped_early": bool(done < nrec + (1 if rest else 0)),
    }
    return Trajectory(times, states, sysm.hamiltonian(states), meta)


# polynomial flows ------------------------------------------------------------------


def _poly_rhs(H: PolyHamiltonian):
    J = H.J

    def rhs(t, y):
        psi = y[:J] + 1j * y[J:]
        v = 1j * H.gradient(psi, wrt="psibar")
        return np.concatenate([v.real, v.imag])

    return rhs


def integrate_poly(H: PolyHamiltonian, state0, dt: float, T: float, rtol: float = 1e-12, atol: float = 1e-15,
                   method: str = "DOP853") -> Trajectory:
    """Adaptive explicit integration of psi' = X_H(psi), recorded every dt.

    T may be negative for backward integration; ``times`` then records |t|
    and meta["direction"] is -1.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not abs(T) >= dt:
        raise ValueError("need |T| >= dt")
    psi0 = _as_psi(state0)
    J = H.J
    if len(psi0) != J:
        raise ValueError(f"state has {len(psi0)} modes, polynomial {J}")
    n = max(1, math.ceil(abs(T) / dt - 1e-9))
    sgn = 1.0 if T > 0 else -1.0
    t_eval = sgn * np.linspace(0.0, abs(T), n + 1)
    y0 = np.concatenate([psi0.real, psi0.imag])
    sol = solve_ivp(_poly_rhs(H), (0.0, T), y0, method=method, t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalFailure(f"step control failed: {sol.message}")
    states = (sol.y[:J] + 1j * sol.y[J:]).T
    if not np.all(np.isfinite(states)):
        raise NumericalFailure("non-finite state in polynomial flow")
    energy = np.real(H.evaluate(states))
    meta = {"integrator": method, "rtol": rtol, "atol": atol, "dt": dt, "J": J, "direction": int(sgn),
            "nfev": int(sol.nfev)}
    return Trajectory(np.abs(t_eval), states, energy, meta)


def flow_map(H: PolyHamiltonian, state, t: float = 1.0, rtol: float = 1e-13, atol: float = 1e-16) -> np.ndarray:
    """Time-t flow of X_H applied to one state."""
    psi0 = _as_psi(state)
    if t == 0 or H.is_zero():
        return psi0.copy()
    J = H.J
    y0 = np.concatenate([psi0.real, psi0.imag])
    sol = solve_ivp(_poly_rhs(H), (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalFailure(f"step control failed: {sol.message}")
    y = sol.y[:, -1]
    return y[:J] + 1j * y[J:]


# observables -------------------------------------------------------------------------


def actions(state) -> np.ndarray:
    """I_j = |psi_j|^2 (for a single state or a batch)."""
    if isinstance(state, Trajectory):
        return np.abs(state.states) ** 2
    return np.abs(_as_psi(state)) ** 2


def action_drift(traj: Trajectory, s: float) -> float:
    """sup_t (sum_j j^(2s) |I_j(t) - I_j(0)|^2)^(1/2) over recorded times."""
    I = np.abs(traj.states) ** 2
    w = sobolev_weights(traj.J, s)
    return float(np.max(np.sqrt(np.sum((w * (I - I[0])) ** 2, axis=1))))


def action_drift_series(traj: Trajectory, s: float) -> np.ndarray:
    """Running sup of the weighted action drift."""
    I = np.abs(traj.states) ** 2
    w = sobolev_weights(traj.J, s)
    return np.maximum.accumulate(np.sqrt(np.sum((w * (I - I[0])) ** 2, axis=1)))


def escape_time(traj: Trajectory, radius: float, s: float) -> EscapeTime:
    """First recorded time with ||psi||_s > radius, or survival up to the last time."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    nrm = traj.norms(s)
    out = np.flatnonzero(nrm > radius)
    if len(out):
        return EscapeTime(float(traj.times[out[0]]), False)
    return EscapeTime(float(traj.times[-1]), True)


def torus_distance(state, I_ref, s1: float, s: float | None = None) -> float:
    """d_{s1}(psi, T_Iref) = (sum_j j^(2 s1) 2 |sqrt I_j - sqrt I_ref_j|^2)^(1/2)."""
    I_ref = np.asarray(I_ref, dtype=float)
    if np.any(I_ref < 0):
        raise ValueError("reference actions must be nonnegative")
    if s is not None and not s1 < s - 0.5:
        warnings.warn(f"s1={s1} is not below s - 1/2 = {s - 0.5}; the distance need not be controlled", stacklevel=2)
    I = actions(state)
    if I.shape[-1] != I_ref.shape[-1]:
        raise ValueError("state and reference torus differ in mode count")
    w = sobolev_weights(I.shape[-1], s1)
    return float(np.sqrt(np.sum(w**2 * 2.0 * (np.sqrt(I) - np.sqrt(I_ref)) ** 2)))


def fit_scaling(points) -> ScalingFit:
    """Least-squares line through (log x, log y)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("need at least 3 (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("scaling fit needs positive finite values")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = float(np.sqrt(np.mean((A @ np.array([slope, icpt]) - ly) ** 2)))
    return ScalingFit(lx, ly, float(slope), float(icpt), res)


# experiment helpers -------------------------------------------------------------------


def initial_state(J: int, s: float, R: float, rng: np.random.Generator, profile: str = "decay",
                  modes: int | None = None) -> ModeState:
    """Initial datum with ||psi||_s = R.

    profile "decay": psi_j = e^{i theta_j} j^{-(s+1)} on the first ``modes``
    modes (all if None), random phases; "sphere": Gaussian in j^s psi_j.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    m = J if modes is None else int(modes)
    if not 1 <= m <= J:
        raise ValueError("modes must lie in 1..J")
    j = np.arange(1, J + 1, dtype=float)
    if profile == "decay":
        theta = rng.uniform(0, 2 * np.pi, size=J)
        psi = np.exp(1j * theta) * j ** (-(s + 1.0))
    elif profile == "sphere":
        psi = (rng.standard_normal(J) + 1j * rng.standard_normal(J)) / j**s
    else:
        raise ValueError(f"unknown profile {profile!r}")
    psi[m:] = 0
    psi *= R / sobolev_norm(psi, s)
    return ModeState(psi)


def drift_horizon(R: float, r: int, Kp: float = 1.0, cap: float = 1e4) -> float:
    """min(cap, K' R^-(r+1/2))."""
    return float(min(cap, Kp * R ** (-(r + 0.5))))


def corollary_experiment(alpha: float, c_list, K: float, r: int, pot: PotentialSpec, nl_spec, horizon_cap: float,
                         s: float = 4.0, J: int = 16, seed: int = 0, method: str = "yoshida4", dt0: float = 0.01,
                         kappa: float = 0.03, record_every: int = 50, profile: str = "decay",
                         max_records: int = 20_000) -> list[dict]:
    """Runs with ||psi_0||_s = K / c^alpha checked against 2K/c^alpha up to min(cap, c^(alpha (r+1/2)))."""
    from .rng import seeded_rng

    if not alpha > 0:
        raise ValueError("alpha must be positive")
    rows = []
    for c in c_list:
        c = float(c)
        if not c >= 1:
            raise ValueError("all c must be >= 1")
        R = K / c**alpha
        T = float(min(horizon_cap, c ** (alpha * (r + 0.5))))
        psi0 = initial_state(J, s, R, seeded_rng(seed, "initial-state"), profile)
        dt = choose_dt(c, dt0, kappa)
        nsteps = math.ceil(T / dt)
        rec = max(record_every, math.ceil(nsteps / max_records))
        tr = integrate_nlkg(psi0, pot, c, nl_spec, dt, T, J, method=method, record_every=rec, s=s)
        nrm = tr.norms(s)
        bound = 2.0 * K / c**alpha
        viol = np.flatnonzero(nrm > bound)
        rows.append({
            "c": c,
            "R": R,
            "horizon": T,
            "max_norm": float(nrm.max()),
            "bound": bound,
            "margin": float(bound - nrm.max()),
            "passed": bool(len(viol) == 0),
            "violation_time": float(tr.times[viol[0]]) if len(viol) else None,
            "energy_drift": tr.energy_drift,
            "dt": tr.meta["dt"],
        })
    return rows


@dataclass(frozen=True)
class SweepPoint:
    c: float
    R: float
    horizon: float
    action_drift: float
    energy_drift: float
    escape_radius: float
    escape_time: float
    survived: bool
    escape_horizon: float
    dt: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _records(T: float, dt: float, record_every: int, max_records: int) -> int:
    n = math.ceil(T / dt - 1e-9)
    return max(record_every, math.ceil(n / max_records))


def sweep_point(pot: PotentialSpec, c: float, nl_spec, R: float, r: int, s: float = 4.0, J: int = 16,
                Kp: float = 1.0, K: float = 1.0, horizon_cap: float = 1e4, method: str = "yoshida4",
                dt0: float = 0.01, kappa: float = 0.03, seed: int = 0, profile: str = "decay",
                record_every: int = 10, max_records: int = 100_000, escape: bool = True) -> SweepPoint:
    """One (c, R) point: action drift up to min(cap, K' R^-(r+1/2)) and escape from 2KR up to the cap.

    Both runs start from ``initial_state`` with norm R drawn from the
    "initial-state" stream of ``seed``, so every point of a sweep uses the
    same profile.
    """
    from .rng import seeded_rng

    psi0 = initial_state(J, s, R, seeded_rng(seed, "initial-state"), profile)
    sysm = NLKGSystem(pot, c, nl_spec, J)
    dt = choose_dt(c, dt0, kappa)
    T = drift_horizon(R, r, Kp, horizon_cap)
    tr = integrate_nlkg(psi0, pot, c, nl_spec, dt, T, J, method=method,
                        record_every=_records(T, dt, record_every, max_records), s=s, system=sysm)
    radius = 2.0 * K * R
    if escape:
        tr2 = integrate_nlkg(psi0, pot, c, nl_spec, dt, horizon_cap, J, method=method,
                             record_every=_records(horizon_cap, dt, record_every, max_records), s=s,
                             stop_radius=radius, system=sysm)
        esc = escape_time(tr2, radius, s)
        edrift = max(tr.energy_drift, tr2.energy_drift)
    else:
        esc = escape_time(tr, radius, s)
        edrift = tr.energy_drift
    return SweepPoint(float(c), float(R), T, action_drift(tr, s), edrift, radius, esc.time, esc.survived,
                      float(horizon_cap if escape else T), tr.meta["dt"])


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map; threads > 1 uses a thread pool (the kernels release the GIL)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(min(threads, len(items))) as ex:
        return list(ex.map(fn, items))


def escape_slope(points) -> ScalingFit:
    """Fit log T_esc against log R with survived runs entered at their horizon.

    Censored points enter below their true value, which can only make the slope
    less negative when they sit at the small-R end of the sweep.
    """
    return fit_scaling([(p.R, p.escape_time) for p in points])


def drift_constant(points) -> float:
    """C from the largest-R point: drift(R_max) / R_max^3."""
    p = max(points, key=lambda q: q.R)
    return p.action_drift / p.R**3
