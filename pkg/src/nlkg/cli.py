"""Command line entry point: ``nlkg <subcommand> --scenario path [--out dir]``.

Exit codes: 0 on success (a failed certificate is data, reported as
"passed": false), 2 on configuration errors, 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, Scenario, load_scenario, thread_count
from .dynamics import (
    NumericalFailure,
    action_drift_series,
    choose_dt,
    corollary_experiment,
    drift_constant,
    escape_slope,
    fit_scaling,
    initial_state,
    integrate_nlkg,
    parallel_map,
    sweep_point,
    torus_distance,
)
from .nonresonance import certify_all, estimate_resonant_measure
from .normal_form import normalize, remainder_report, select_parameters, verify_action_dependence
from .poly import taylor_nonlinearity
from .rng import seeded_rng
from .spectral import eigenvalues, frequencies

__all__ = ["main", "run"]

SUBCOMMANDS = ("freq", "certify", "measure", "normalform", "simulate", "scaling", "corollary")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


class Emitter:
    """Writes artifacts under one directory; each carries the scenario hash and seed."""

    def __init__(self, out: Path, sc: Scenario, command: str):
        self.out = out
        self.sc = sc
        self.command = command
        self.files: list[str] = []

    def _header(self) -> dict:
        return {"command": self.command, "scenario_hash": self.sc.hash, "seed": self.sc.seed}

    def json(self, name: str, payload: dict) -> dict:
        doc = {**self._header(), **payload}
        text = json.dumps(_clean(doc), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
        self._write(name, text)
        return doc

    def csv(self, name: str, columns: list[str], rows: list[list]):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(["scenario_hash", "seed", *columns])
        for row in rows:
            w.writerow([self.sc.hash, self.sc.seed, *(_cell(v) for v in row)])
        self._write(name, buf.getvalue())

    def _write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(name)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _freqs(sc: Scenario, c: float | None = None):
    return frequencies(eigenvalues(sc.potential), sc.c if c is None else c)


def _N(sc: Scenario) -> int:
    if sc.N is not None:
        return sc.N
    return select_parameters(sc.R, sc.r, sc.tau, sc.J)[0]


def _dt(sc: Scenario, c: float) -> float:
    ig = sc.integrator
    return ig.dt if ig.dt is not None else choose_dt(c, ig.dt0, ig.kappa)


def cmd_freq(sc: Scenario, em: Emitter, threads: int) -> dict:
    rows, per_c = [], []
    for c in sc.c_list:
        fr = _freqs(sc, c)
        per_c.append({"c": c, "omega": fr.omega, "lambda": fr.lam, "omega_minus_c2": fr.offset})
        rows += [[c, j + 1, fr.lam[j], fr.omega[j], fr.offset[j]] for j in range(sc.J)]
    em.csv("freq.csv", ["c", "j", "lambda", "omega", "omega_minus_c2"], rows)
    fr = _freqs(sc)
    return em.json("freq.json", {"c": sc.c, "J": sc.J, "omega": fr.omega, "lambda": fr.lam,
                                 "omega_minus_c2": fr.offset, "potential": sc.potential.to_json(),
                                 "c_list": per_c})


def _certify(sc: Scenario, c: float) -> tuple[dict, dict]:
    cc = sc.certify
    N = cc.N if cc.N is not None else _N(sc)
    # divisors up to the normalized degree d_min + r - 1
    r = cc.r if cc.r is not None else min(sc.nonlinearity) + sc.r - 1
    certs = certify_all(_freqs(sc, c), r, N, sc.gamma, sc.tau, cc.l_max, cc.m_max, sc.s)
    return {"c": c, "r": r, "N": N, "passed": all(x.passed for x in certs.values()),
            "families": {k: v.to_json() for k, v in certs.items()}}, certs


def cmd_certify(sc: Scenario, em: Emitter, threads: int) -> dict:
    results = parallel_map(lambda c: _certify(sc, c)[0], sc.c_list, threads)
    rows = []
    for res in results:
        for fam, cert in res["families"].items():
            rows.append([res["c"], res["r"], res["N"], fam, cert["min_divisor"], cert["threshold"], cert["passed"]])
    em.csv("certify.csv", ["c", "r", "N", "family", "min_divisor", "threshold", "passed"], rows)
    return em.json("certify.json", {"gamma": sc.gamma, "tau": sc.tau, "passed": all(r["passed"] for r in results),
                                    "results": results})


def cmd_measure(sc: Scenario, em: Emitter, threads: int) -> dict:
    m = sc.measure
    rows = estimate_resonant_measure(m.family, sc.c_interval, sc.potential.with_modes(sc.J), m.r, m.N, m.gammas,
                                     sc.tau, m.samples, sc.seed, threads, method=m.method)
    em.csv("measure.csv", ["family", "method", "gamma", "fraction", "stderr"],
           [[m.family, m.method, x.gamma, x.fraction, x.stderr] for x in rows])
    pts = [(x.gamma, x.fraction) for x in rows if x.fraction > 0]
    fit = fit_scaling(pts).to_json() if len(pts) >= 3 else None
    return em.json("measure.json", {"family": m.family, "method": m.method, "r": m.r, "N": m.N, "tau": sc.tau,
                                    "samples": m.samples, "c_interval": list(sc.c_interval),
                                    "rows": [x.__dict__ for x in rows], "fit": fit})


def cmd_normalform(sc: Scenario, em: Emitter, threads: int) -> dict:
    fr = _freqs(sc)
    N = _N(sc)
    _, a, s_min = select_parameters(sc.R, sc.r, sc.tau, sc.J)
    N1 = taylor_nonlinearity(sc.nonlinearity, sc.potential, sc.c, sc.J)
    res = normalize(fr, N1, sc.r, sc.gamma, sc.tau, N, sc.R, sc.s, sc.normalform.tail_extra)
    viol = verify_action_dependence(res.Z, N)
    rep = remainder_report(res, sc.normalform.remainder_samples, sc.seed)
    cert, _ = _certify(sc, sc.c)
    return em.json("normalform.json", {
        "c": sc.c, "N": N, "a": a, "s_min": s_min, "s": sc.s, "s_condition_met": sc.s >= s_min,
        "result": res.to_json(), "action_dependence_violations": viol,
        "action_dependence_passed": not viol, "remainder": rep.to_json(), "certificate": cert,
    })


def cmd_simulate(sc: Scenario, em: Emitter, threads: int) -> dict:
    c = sc.c
    dt = _dt(sc, c)
    psi0 = initial_state(sc.J, sc.s, sc.R, seeded_rng(sc.seed, "initial-state"), sc.simulate.profile)
    ig = sc.integrator
    nsteps = math.ceil(sc.simulate.T / dt)
    rec = max(ig.record_every, math.ceil(nsteps / ig.max_records))
    tr = integrate_nlkg(psi0, sc.potential, c, sc.nonlinearity, dt, sc.simulate.T, sc.J, method=ig.method,
                        record_every=rec, s=sc.s)
    nrm = tr.norms(sc.s)
    ad = action_drift_series(tr, sc.s)
    H0 = tr.energy[0]
    rel = np.abs(tr.energy - H0) / abs(H0) if H0 != 0 else np.abs(tr.energy - H0)
    cols = ["t", "norm_s", "hamiltonian", "rel_energy_drift", "action_drift"]
    rows = [[tr.times[i], nrm[i], tr.energy[i], rel[i], ad[i]] for i in range(len(tr.times))]
    torus = None
    sm = sc.simulate
    if sm.s1 is not None:
        # distance to the initial torus vs K R^{r1/2+1} on |t| <= K' R^{-(r-r1+1/2)}
        I0 = np.abs(tr.states[0]) ** 2
        dist = np.array([torus_distance(tr.states[i], I0, sm.s1) for i in range(len(tr.times))])
        cols.append("torus_distance")
        for row, d in zip(rows, dist):
            row.append(d)
        horizon = sc.scaling.Kprime * sc.R ** (-(sc.r - sm.r1 + 0.5))
        inside = tr.times <= horizon
        dmax = float(dist[inside].max())
        torus = {"s1": sm.s1, "r1": sm.r1, "horizon": horizon, "max_distance": dmax,
                 "bound_exponent": sm.r1 / 2 + 1, "ratio": dmax / sc.R ** (sm.r1 / 2 + 1)}
    em.csv("trajectory.csv", cols, rows)
    return em.json("simulate.json", {"torus": torus,
        "c": c, "R": sc.R, "T": sc.simulate.T, "profile": sc.simulate.profile, "integrator": tr.meta,
        "energy_drift": tr.energy_drift, "max_norm": float(nrm.max()), "final_norm": float(nrm[-1]),
        "max_action_drift": float(ad.max()), "records": len(tr.times),
        "final_state": tr.state(len(tr.times) - 1).to_json(),
    })


def cmd_scaling(sc: Scenario, em: Emitter, threads: int) -> dict:
    g, ig = sc.scaling, sc.integrator
    jobs = [(c, R) for c in sc.c_list for R in sc.R_list]

    def one(job):
        c, R = job
        return sweep_point(sc.potential, c, sc.nonlinearity, R, sc.r, sc.s, sc.J, g.Kprime, g.K, g.horizon_cap,
                           ig.method, ig.dt0, ig.kappa, sc.seed, sc.simulate.profile, ig.record_every,
                           ig.max_records, g.escape)

    pts = parallel_map(one, jobs, threads)
    em.csv("scaling.csv", ["c", "R", "horizon", "action_drift", "drift_over_R3", "energy_drift", "escape_radius",
                           "escape_time", "survived", "dt"],
           [[p.c, p.R, p.horizon, p.action_drift, p.action_drift / p.R**3, p.energy_drift, p.escape_radius,
             p.escape_time, p.survived, p.dt] for p in pts])
    per_c = []
    for c in sc.c_list:
        cp = [p for p in pts if p.c == c]
        C = drift_constant(cp)
        ratios = [p.action_drift / (C * p.R**3) for p in cp]
        slope = escape_slope(cp).to_json() if len(cp) >= 3 else None
        per_c.append({"c": c, "C": C, "drift_ratio_max": max(ratios), "drift_within_3C": max(ratios) <= 3.0,
                      "escape_fit": slope, "censored": sum(p.survived for p in cp)})
    Cs = [x["C"] for x in per_c]
    uniform = max(Cs) / min(Cs) if min(Cs) > 0 else float("inf")
    return em.json("scaling.json", {"r": sc.r, "s": sc.s, "J": sc.J, "points": [p.to_json() for p in pts],
                                    "per_c": per_c, "C_spread": uniform, "C_uniform_within_10": uniform <= 10.0})


def cmd_corollary(sc: Scenario, em: Emitter, threads: int) -> dict:
    g, ig = sc.corollary, sc.integrator

    def one(c):
        return corollary_experiment(g.alpha, [c], g.K, sc.r, sc.potential, sc.nonlinearity, g.horizon_cap, sc.s,
                                    sc.J, sc.seed, ig.method, ig.dt0, ig.kappa, profile=sc.simulate.profile)[0]

    rows = parallel_map(one, sc.c_list, threads)
    cols = ["c", "R", "horizon", "max_norm", "bound", "margin", "passed", "violation_time", "energy_drift", "dt"]
    em.csv("corollary.csv", cols, [[r[k] for k in cols] for r in rows])
    return em.json("corollary.json", {"alpha": g.alpha, "K": g.K, "r": sc.r, "rows": rows,
                                      "passed": all(r["passed"] for r in rows)})


COMMANDS = {
    "freq": cmd_freq,
    "certify": cmd_certify,
    "measure": cmd_measure,
    "normalform": cmd_normalform,
    "simulate": cmd_simulate,
    "scaling": cmd_scaling,
    "corollary": cmd_corollary,
}


def run(command: str, scenario_path, out=None, env=None) -> tuple[int, dict | None]:
    """Run one subcommand; returns (exit code, emitted summary or None)."""
    try:
        threads = thread_count(env)
        sc = load_scenario(scenario_path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2, None
    out = Path(out) if out is not None else Path("out") / command
    em = Emitter(out, sc, command)
    try:
        doc = COMMANDS[command](sc, em, threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2, None
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3, None
    except ValueError as e:
        # precondition rejected by a module: a scenario problem, not a numerical one
        print(f"config error: {e}", file=sys.stderr)
        return 2, None
    return 0, doc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nlkg", description="Normal-form experiments for Klein-Gordon.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--scenario", required=True, help="scenario JSON file")
    ap.add_argument("--out", default=None, help="output directory (default out/<command>)")
    args = ap.parse_args(argv)
    code, doc = run(args.command, args.scenario, args.out)
    if doc is not None:
        summary = {k: doc[k] for k in ("command", "scenario_hash", "seed", "passed") if k in doc}
        print(json.dumps(_clean(summary), sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
