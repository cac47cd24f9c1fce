"""Scenario files: strict JSON configuration for every experiment.

Unknown keys are rejected at every level and all module preconditions are
checked here, before any computation starts.  Errors carry the dotted path
of the offending field.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .rng import seeded_rng
from .spectral import PotentialSpec

__all__ = ["ConfigError", "Scenario", "load_scenario", "scenario_hash", "thread_count"]


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


def _fail(path, msg):
    raise ConfigError(path, msg)


def _num(v, path, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, f"expected a number, got {type(v).__name__}")
    if integer and not (isinstance(v, int) or float(v).is_integer()):
        _fail(path, f"expected an integer, got {v}")
    v = int(v) if integer else float(v)
    if not math.isfinite(v):
        _fail(path, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        _fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        _fail(path, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return v


def _list(v, path, item, min_len=1):
    if not isinstance(v, list):
        _fail(path, f"expected a list, got {type(v).__name__}")
    if len(v) < min_len:
        _fail(path, f"needs at least {min_len} entries")
    return [item(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _choice(v, path, options):
    if v not in options:
        _fail(path, f"expected one of {list(options)}, got {v!r}")
    return v


def _section(cls, obj, path):
    """Build a dataclass from a dict, rejecting unknown keys; validation lives in __post_init__."""
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    names = {f.name for f in fields(cls)}
    extra = sorted(set(obj) - names)
    if extra:
        _fail(f"{path}.{extra[0]}" if path else extra[0], f"unknown key (allowed: {sorted(names)})")
    try:
        return cls(**obj, _path=path) if "_path" in names else cls(**obj)
    except TypeError as e:
        _fail(path, str(e))


@dataclass
class IntegratorCfg:
    method: str = "yoshida4"
    dt: float | None = None
    dt0: float = 0.01
    kappa: float = 0.03
    record_every: int = 10
    max_records: int = 100_000
    _path: str = field(default="integrator", repr=False)

    def __post_init__(self):
        p = self._path
        _choice(self.method, f"{p}.method", ("strang", "yoshida4"))
        if self.dt is not None:
            self.dt = _num(self.dt, f"{p}.dt", 0, lo_open=True)
        self.dt0 = _num(self.dt0, f"{p}.dt0", 0, lo_open=True)
        self.kappa = _num(self.kappa, f"{p}.kappa", 0, lo_open=True)
        self.record_every = _num(self.record_every, f"{p}.record_every", 1, integer=True)
        self.max_records = _num(self.max_records, f"{p}.max_records", 10, integer=True)


@dataclass
class CertifyCfg:
    r: int | None = None
    N: int | None = None
    l_max: int | None = None
    m_max: int | None = None
    _path: str = field(default="certify", repr=False)

    def __post_init__(self):
        p = self._path
        for k in ("r", "N", "l_max", "m_max"):
            v = getattr(self, k)
            if v is not None:
                setattr(self, k, _num(v, f"{p}.{k}", 1, integer=True))


@dataclass
class MeasureCfg:
    family: str = "all"
    r: int = 1
    N: int = 4
    samples: int = 10_000
    gammas: list = field(default_factory=lambda: [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    method: str = "conditional"
    _path: str = field(default="measure", repr=False)

    def __post_init__(self):
        p = self._path
        _choice(self.family, f"{p}.family", ("order0", "one_tail", "two_tail", "all"))
        self.r = _num(self.r, f"{p}.r", 1, integer=True)
        self.N = _num(self.N, f"{p}.N", 1, integer=True)
        self.samples = _num(self.samples, f"{p}.samples", 100, integer=True)
        self.gammas = _list(self.gammas, f"{p}.gammas", lambda v, q: _num(v, q, 0, lo_open=True))
        _choice(self.method, f"{p}.method", ("mc", "conditional"))


@dataclass
class NormalFormCfg:
    tail_extra: int = 0
    remainder_samples: int = 256
    _path: str = field(default="normalform", repr=False)

    def __post_init__(self):
        p = self._path
        self.tail_extra = _num(self.tail_extra, f"{p}.tail_extra", 0, 4, integer=True)
        self.remainder_samples = _num(self.remainder_samples, f"{p}.remainder_samples", 1, integer=True)


@dataclass
class SimulateCfg:
    T: float = 100.0
    profile: str = "decay"
    # torus distance d_{s1} reported with trade-off exponent r1 <= r; off if s1 is None
    s1: float | None = None
    r1: float = 0.0
    _path: str = field(default="simulate", repr=False)

    def __post_init__(self):
        p = self._path
        self.T = _num(self.T, f"{p}.T", 0, lo_open=True)
        _choice(self.profile, f"{p}.profile", ("decay", "sphere"))
        if self.s1 is not None:
            self.s1 = _num(self.s1, f"{p}.s1", 0)
        self.r1 = _num(self.r1, f"{p}.r1", 0)


@dataclass
class ScalingCfg:
    Kprime: float = 1.0
    K: float = 1.0
    horizon_cap: float = 1e4
    escape: bool = True
    _path: str = field(default="scaling", repr=False)

    def __post_init__(self):
        p = self._path
        self.Kprime = _num(self.Kprime, f"{p}.Kprime", 0, lo_open=True)
        self.K = _num(self.K, f"{p}.K", 0, lo_open=True)
        self.horizon_cap = _num(self.horizon_cap, f"{p}.horizon_cap", 0, lo_open=True)
        if not isinstance(self.escape, bool):
            _fail(f"{p}.escape", "expected true or false")


@dataclass
class CorollaryCfg:
    alpha: float = 1.0
    K: float = 0.1
    horizon_cap: float = 1e4
    _path: str = field(default="corollary", repr=False)

    def __post_init__(self):
        p = self._path
        self.alpha = _num(self.alpha, f"{p}.alpha", 0, lo_open=True)
        self.K = _num(self.K, f"{p}.K", 0, lo_open=True)
        self.horizon_cap = _num(self.horizon_cap, f"{p}.horizon_cap", 0, lo_open=True)


_SECTIONS = {
    "integrator": IntegratorCfg,
    "certify": CertifyCfg,
    "measure": MeasureCfg,
    "normalform": NormalFormCfg,
    "simulate": SimulateCfg,
    "scaling": ScalingCfg,
    "corollary": CorollaryCfg,
}

_TOP = {
    "seed", "J", "potential", "c", "c_list", "c_interval", "nonlinearity", "r", "gamma", "tau", "s", "R",
    "R_list", "N", "description", *_SECTIONS,
}


def _potential(obj, J: int, path="potential") -> PotentialSpec:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    allowed = {"s", "M", "vprime", "vprime_seed"}
    extra = sorted(set(obj) - allowed)
    if extra:
        _fail(f"{path}.{extra[0]}", f"unknown key (allowed: {sorted(allowed)})")
    s = _num(obj.get("s", 2.0), f"{path}.s", 0, lo_open=True)
    M = _num(obj.get("M", 0.5), f"{path}.M", 0, 1, hi_open=True)
    if ("vprime" in obj) == ("vprime_seed" in obj):
        _fail(path, "give exactly one of 'vprime' (list) or 'vprime_seed' (integer)")
    if "vprime" in obj:
        vp = _list(obj["vprime"], f"{path}.vprime", lambda v, q: _num(v, q, -0.5, 0.5))
        if len(vp) != J:
            _fail(f"{path}.vprime", f"has {len(vp)} entries, J = {J}")
    else:
        seed = _num(obj["vprime_seed"], f"{path}.vprime_seed", 0, integer=True)
        return PotentialSpec.random(J, seeded_rng(seed, "potential"), s=s, M=M)
    return PotentialSpec(s=s, M=M, vprime=tuple(vp))


def _nonlinearity(obj, path="nonlinearity") -> dict:
    if not isinstance(obj, dict) or not obj:
        _fail(path, "expected a nonempty object mapping powers to coefficients")
    out = {}
    for k, v in obj.items():
        try:
            p = int(k)
        except (TypeError, ValueError):
            _fail(f"{path}.{k}", "power must be an integer")
        if str(p) != str(k).strip():
            _fail(f"{path}.{k}", "power must be an integer")
        if p < 4:
            _fail(f"{path}.{k}", "powers must be >= 4 (zero of order four at the origin)")
        out[p] = _num(v, f"{path}.{k}")
    return dict(sorted(out.items()))


@dataclass
class Scenario:
    seed: int
    J: int
    potential: PotentialSpec
    c: float
    c_list: list
    c_interval: tuple
    nonlinearity: dict
    r: int
    gamma: float
    tau: float
    s: float
    R: float
    R_list: list
    N: int | None
    integrator: IntegratorCfg
    certify: CertifyCfg
    measure: MeasureCfg
    normalform: NormalFormCfg
    simulate: SimulateCfg
    scaling: ScalingCfg
    corollary: CorollaryCfg
    raw: dict = field(repr=False)

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)

    @classmethod
    def from_dict(cls, obj: dict) -> "Scenario":
        if not isinstance(obj, dict):
            _fail("", "scenario must be a JSON object")
        extra = sorted(set(obj) - _TOP)
        if extra:
            _fail(extra[0], f"unknown key (allowed: {sorted(_TOP)})")
        seed = _num(obj.get("seed", 0), "seed", 0, integer=True)
        J = _num(obj.get("J", 16), "J", 1, 4096, integer=True)
        if "potential" not in obj:
            _fail("potential", "required")
        pot = _potential(obj["potential"], J)
        c = _num(obj.get("c", 1.0), "c", 1)
        c_list = _list(obj.get("c_list", [c]), "c_list", lambda v, q: _num(v, q, 1))
        ci = _list(obj.get("c_interval", [1.0, 2.0]), "c_interval", lambda v, q: _num(v, q, 1), min_len=2)
        if len(ci) != 2 or not ci[1] > ci[0]:
            _fail("c_interval", "expected [lo, hi] with hi > lo")
        nl = _nonlinearity(obj.get("nonlinearity", {"4": 1.0}))
        r = _num(obj.get("r", 1), "r", 1, 6, integer=True)
        gamma = _num(obj.get("gamma", 1e-3), "gamma", 0)
        tau = _num(obj.get("tau", 4.0), "tau", 0, lo_open=True)
        s = _num(obj.get("s", 4.0), "s", 0)
        R = _num(obj.get("R", 0.1), "R", 0, 1, lo_open=True, hi_open=True)
        R_list = _list(obj.get("R_list", [R]), "R_list", lambda v, q: _num(v, q, 0, 1, lo_open=True, hi_open=True))
        N = obj.get("N")
        if N is not None:
            N = _num(N, "N", 1, J, integer=True)
        secs = {k: _section(v, obj.get(k), k) for k, v in _SECTIONS.items()}
        for k in ("N", "l_max", "m_max"):
            v = getattr(secs["certify"], k)
            if v is not None and v > J:
                _fail(f"certify.{k}", f"must be <= J = {J}")
        if "measure" not in obj:
            secs["measure"].N = min(secs["measure"].N, J)
        if secs["measure"].N > J:
            _fail("measure.N", f"must be <= J = {J}")
        if secs["simulate"].r1 > r:
            _fail("simulate.r1", f"must be <= r = {r}")
        return cls(seed, J, pot, c, c_list, tuple(ci), nl, r, gamma, tau, s, R, R_list, N, raw=obj, **secs)


def scenario_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("", f"cannot read scenario {path}: {e.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return Scenario.from_dict(obj)


def thread_count(env=None) -> int:
    """Parallelism cap from NLKG_THREADS (default 1)."""
    env = os.environ if env is None else env
    v = env.get("NLKG_THREADS", "1").strip()
    try:
        n = int(v)
    except ValueError:
        raise ConfigError("NLKG_THREADS", f"expected a positive integer, got {v!r}") from None
    if n < 1:
        raise ConfigError("NLKG_THREADS", f"expected a positive integer, got {n}")
    return n
