"""Scenario configuration, verification experiments and the command line.

Config files are flat ``key = value`` text with dotted section keys; ``#``
starts a comment. Lists are comma separated. Unknown keys are rejected.
See README.md for the full key table.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .energy import (difference_energy, global_ceiling, global_constants, quadratic_energy,
                     weak_form_residual)
from .history import PastHistory, Profile, PronyConvolution, UTrajectory, direct_convolution_oracle
from .model import DampingSpec, MemoryKernel, SourceSpec, ValidationReport, validate_assumptions
from .solver import Model, StepperConfig, estimate_local_time, init_state, run, step
from .spectral import Field, build_basis

__all__ = [
    "ConfigError", "AssumptionError", "Scenario", "parse_config", "load_scenario",
    "build_scenario", "reference_scenario", "run_scenario", "continuous_dependence_experiment",
    "global_vs_blowup_sweep", "convergence_study", "main", "EXIT_OK", "EXIT_CONFIG",
    "EXIT_INVALID", "EXIT_BLOWUP", "EXIT_CRITERION",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVALID = 3
EXIT_BLOWUP = 4
EXIT_CRITERION = 5


class ConfigError(ValueError):
    """Malformed configuration; carries the offending line number and key."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


class AssumptionError(ValueError):
    """The parsed specs fail the standing hypotheses (and no override was given)."""

    def __init__(self, report: ValidationReport):
        names = ", ".join(c.name for c in report.failed())
        super().__init__(f"assumption check failed: {names}")
        self.report = report


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _float(text):
    m = re.fullmatch(r"\s*2\s*\^\s*(-?\d+)\s*", text)
    if m:
        return 2.0 ** int(m.group(1))
    return float(text)


def _floats(text):
    return tuple(_float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _cells(text):
    out = []
    for item in text.split(","):
        if not item.strip():
            continue
        parts = item.split(":")
        if len(parts) != 4:
            raise ValueError(f"cell {item.strip()!r} is not m:p:amplitude:sign")
        out.append(tuple(_float(x) for x in parts))
    return tuple(out)


def _str(text):
    return text.strip()


def _opt_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else _float(text)


_KEYS = {
    "domain.lengths": (_floats, "1.0"),
    "basis.N": (int, "32"),
    "basis.degree": (_opt_float, "auto"),
    "kernel.family": (_str, "prony"),
    "kernel.amplitudes": (_floats, "1.0"),
    "kernel.rates": (_floats, "1.0"),
    "kernel.amplitude": (_float, "1.0"),
    "kernel.exponent": (_float, "3.0"),
    "kernel.tail_tol": (_float, "1e-10"),
    "damping.shape": (_str, "power"),
    "damping.m": (_float, "3.0"),
    "damping.a": (_float, "1.0"),
    "damping.b": (_float, "1.0"),
    "source.shape": (_str, "power"),
    "source.p": (_float, "3.0"),
    "source.C": (_opt_float, "auto"),
    "source.sign": (_float, "1.0"),
    "source.mode": (_str, "full"),
    "source.K": (_opt_float, "auto"),
    "source.n": (_opt_float, "none"),
    "past.kind": (_str, "trig"),
    "past.modes": (_ints, "1,2,3"),
    "past.amplitudes": (_floats, "0.5,0.2,0.1"),
    "past.scale": (_float, "1.0"),
    "past.omega": (_float, "1.0"),
    "past.phase": (_float, "0.3"),
    "past.rate": (_float, "1.0"),
    "past.poly": (_floats, "1.0"),
    "time.dt": (_float, "2^-7"),
    "time.horizon": (_float, "1.0"),
    "solver.tol": (_float, "1e-13"),
    "solver.max_iter": (int, "100"),
    "solver.backend": (_str, "auto"),
    "solver.blowup_threshold": (_float, "1e12"),
    "experiment.id": (_str, "run"),
    "output.path": (_str, "out"),
    "seed": (int, "0"),
    "checks.samples": (int, "2000"),
    "depend.deltas": (_floats, "0.1,0.05,0.025,0.0125,0.00625"),
    "depend.perturbation": (_str, "scale"),
    "sweep.m": (_floats, "1,3"),
    "sweep.p": (_floats, "3"),
    "sweep.amplitude": (_floats, "0.5,5"),
    "sweep.sign": (_floats, "1"),
    "sweep.cells": (_cells, ""),
    "sweep.workers": (int, "1"),
    "converge.levels": (int, "5"),
    "converge.dt0": (_float, "2^-6"),
}

_CHOICES = {
    "kernel.family": ("prony", "power", "none"),
    "damping.shape": ("power", "zero"),
    "source.shape": ("power", "zero"),
    "source.mode": ("full", "truncated", "cutoff"),
    "past.kind": ("trig", "poly", "exp", "zero", "const"),
    "solver.backend": ("auto", "compiled", "python"),
    "experiment.id": ("run", "depend", "sweep", "converge"),
    "depend.perturbation": ("scale", "shift"),
}


def parse_config(text: str) -> dict:
    """Parse config text into ``{key: value}`` with defaults filled in.

    Raises :class:`ConfigError` naming the line and key on any problem.
    """
    raw = {}
    lines = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", no)
        key, val = (x.strip() for x in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError("unknown key", no, key)
        if key in raw:
            raise ConfigError("duplicate key", no, key)
        raw[key] = val
        lines[key] = no
    out = {}
    for key, (conv, default) in _KEYS.items():
        text_val = raw.get(key, default)
        try:
            val = conv(text_val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cannot parse {text_val!r}: {exc}", lines.get(key), key) from None
        if key in _CHOICES and val not in _CHOICES[key]:
            raise ConfigError(f"must be one of {', '.join(_CHOICES[key])}", lines.get(key), key)
        if isinstance(val, float) and not math.isfinite(val):
            raise ConfigError("value must be finite", lines.get(key), key)
        out[key] = val
    out["_lines"] = lines
    for key in ("basis.N", "time.dt", "time.horizon", "converge.levels", "sweep.workers"):
        if not out[key] > 0:
            raise ConfigError("must be positive", lines.get(key), key)
    if len(out["past.modes"]) != len(out["past.amplitudes"]):
        raise ConfigError("past.modes and past.amplitudes differ in length",
                          lines.get("past.amplitudes"), "past.amplitudes")
    return out


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    cfg: dict
    model: Model
    past: PastHistory
    stepper: StepperConfig
    horizon: float
    report: ValidationReport

    @property
    def seed(self) -> int:
        return self.cfg["seed"]


def _profile(cfg) -> Profile:
    kind = cfg["past.kind"]
    if kind == "trig":
        return Profile("trig", omega=cfg["past.omega"], phase=cfg["past.phase"])
    if kind == "exp":
        return Profile("exp", rate=cfg["past.rate"])
    if kind == "poly":
        return Profile("poly", poly=tuple(cfg["past.poly"]))
    return Profile("const")


def _past(cfg, basis) -> PastHistory:
    if cfg["past.kind"] == "zero":
        return PastHistory.zero(basis.size)
    c = np.zeros(basis.size)
    for j, a in zip(cfg["past.modes"], cfg["past.amplitudes"]):
        if not 1 <= j <= basis.size:
            raise ConfigError(f"mode {j} outside 1..{basis.size}",
                              cfg["_lines"].get("past.modes"), "past.modes")
        c[j - 1] += a
    return PastHistory.single(c * cfg["past.scale"], _profile(cfg))


def _kernel(cfg) -> MemoryKernel:
    fam = cfg["kernel.family"]
    try:
        if fam == "prony":
            return MemoryKernel.prony(cfg["kernel.amplitudes"], cfg["kernel.rates"],
                                      tail_tol=cfg["kernel.tail_tol"])
        if fam == "power":
            return MemoryKernel.power(cfg["kernel.amplitude"], cfg["kernel.exponent"],
                                      tail_tol=cfg["kernel.tail_tol"])
        return MemoryKernel.none()
    except ValueError as exc:
        raise ConfigError(str(exc), cfg["_lines"].get("kernel.family"), "kernel.family") from None


def build_scenario(cfg: dict, allow_invalid: bool = False) -> Scenario:
    """Turn a parsed config into specs; gate on the standing hypotheses."""
    kernel = _kernel(cfg)
    try:
        damping = DampingSpec(m=cfg["damping.m"], a=cfg["damping.a"], b=cfg["damping.b"],
                              shape=cfg["damping.shape"])
        source = SourceSpec(p=cfg["source.p"], C=cfg["source.C"], sign=cfg["source.sign"],
                            shape=cfg["source.shape"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = validate_assumptions(kernel, damping, source)
    if not report.passed and not allow_invalid:
        raise AssumptionError(report)
    lengths = cfg["domain.lengths"]
    if len(lengths) not in (1, 2) or min(lengths) <= 0:
        raise ConfigError("need one or two positive lengths", cfg["_lines"].get("domain.lengths"),
                          "domain.lengths")
    degree = cfg["basis.degree"] or max(source.p, damping.m, 1.0)
    basis = build_basis(lengths if len(lengths) == 2 else lengths[0], cfg["basis.N"], degree)
    model = Model(basis, kernel, damping, source)
    past = _past(cfg, basis)
    mode = cfg["source.mode"]
    try:
        stepper = StepperConfig(cfg["time.dt"], tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                                source_mode=mode, K=cfg["source.K"] if mode == "truncated" else None,
                                n=cfg["source.n"], backend=cfg["solver.backend"],
                                blowup_threshold=cfg["solver.blowup_threshold"])
    except ValueError as exc:
        if mode == "truncated" and cfg["source.K"] is None:
            stepper = None          # K = auto, filled in below
        else:
            raise ConfigError(str(exc), cfg["_lines"].get("source.mode"), "source.mode") from None
    sc = Scenario(cfg, model, past, stepper, cfg["time.horizon"], report)
    if stepper is None:
        cert = _certificate(sc)
        sc.stepper = StepperConfig(cfg["time.dt"], tol=cfg["solver.tol"],
                                   max_iter=cfg["solver.max_iter"], source_mode="truncated",
                                   K=cert.K, backend=cfg["solver.backend"],
                                   blowup_threshold=cfg["solver.blowup_threshold"])
    return sc


def reference_scenario(overrides=None, allow_invalid=False) -> Scenario:
    """The default config: interval (0,1), N=32, mu = exp(-s), m = p = 3, trig past.

    ``overrides`` maps dotted keys to parsed values, e.g. ``{"past.scale": 5.0}``.
    """
    cfg = parse_config("")
    for key, val in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError("unknown key", key=key)
        cfg[key] = val
    return build_scenario(cfg, allow_invalid)


def load_scenario(path, allow_invalid=False, overrides=None) -> Scenario:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = parse_config(text)
    if overrides:
        cfg.update(overrides)
    return build_scenario(cfg, allow_invalid)


def _certificate(sc: Scenario):
    state = init_state(sc.past, sc.model, sc.cfg["time.dt"])
    E0 = quadratic_energy(state)
    return estimate_local_time(E0, sc.model, sc.cfg["checks.samples"],
                               np.random.default_rng(sc.cfg["seed"]))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _write_summary(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k}: {_fmt(v)}\n")


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def run_scenario(config_path, out_dir=None, seed=None, allow_invalid=False):
    """Run one scenario; write ``ledger.csv`` and ``summary.txt``. Returns an exit status."""
    try:
        over = {"seed": seed} if seed is not None else None
        sc = load_scenario(config_path, allow_invalid, over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"{exc}\n{exc.report}", file=sys.stderr)
        return EXIT_INVALID
    out = out_dir or sc.cfg["output.path"]
    os.makedirs(out, exist_ok=True)
    res, items = simulate(sc)
    res.ledger.to_csv(os.path.join(out, "ledger.csv"))
    _write_summary(os.path.join(out, "summary.txt"), items)
    return EXIT_BLOWUP if res.blew_up else EXIT_OK


def simulate(sc: Scenario):
    """Execute the scenario and return ``(RunResult, summary items)``."""
    cert = _certificate(sc)
    state = init_state(sc.past, sc.model, sc.stepper.dt)
    res = run(state, sc.stepper, sc.model, sc.horizon)
    led = res.ledger
    items = [
        ("experiment", "run"),
        ("assumptions", "ok" if sc.report.passed else
         "violated: " + ", ".join(c.name for c in sc.report.failed())),
        ("backend", _backend_name(sc.stepper.backend)),
        ("dt", sc.stepper.dt),
        ("steps", res.state.n_steps),
        ("t_final", res.state.t),
        ("E_initial", led.rows[0][1]),
        ("E_final", led.rows[-1][1]),
        ("modE_final", led.rows[-1][2]),
        ("max_abs_residual", led.max_abs_residual),
        ("energy_inequality_excess", led.energy_inequality_violation()),
        ("max_resolvent_residual", res.state.max_resolvent_residual),
        ("blowup_indicator", "yes" if res.blew_up else "no"),
        ("blowup_time", res.blowup.t if res.blew_up else "none"),
        ("K", cert.K),
        ("T", cert.T),
        ("L_K", cert.L_K),
        ("C0", cert.C0),
        ("C_LK", cert.C_LK),
    ]
    return res, items


def _backend_name(req):
    from . import kernels
    return kernels.BACKEND if req == "auto" else req


# ---------------------------------------------------------------------------
# continuous dependence
# ---------------------------------------------------------------------------

def _shift_profile(pr: Profile, d: float) -> Profile:
    if pr.kind == "trig":
        return replace(pr, phase=pr.phase + pr.omega * d)
    if pr.kind == "poly":
        shifted = np.polynomial.Polynomial(pr.poly)(np.polynomial.Polynomial([d, 1.0]))
        return replace(pr, poly=tuple(shifted.coef))
    return pr


def perturb_past(past: PastHistory, delta: float, how: str = "scale") -> PastHistory:
    """``(1 + delta) u0`` or ``u0(t + delta)`` (exp profiles: scaled by ``e^(rate delta)``)."""
    if how == "scale":
        return past.scaled(1.0 + delta)
    terms = []
    for c, pr in past.terms:
        if pr.kind == "exp":
            terms.append((c * math.exp(pr.rate * delta), pr))
        else:
            terms.append((c, _shift_profile(pr, delta)))
    return PastHistory(tuple(terms), past.size)


@dataclass
class DependenceRow:
    delta: float
    E0: float
    sup: float
    ratio: float


class ExperimentAbort(RuntimeError):
    pass


def continuous_dependence_experiment(sc: Scenario, deltas=None, how=None):
    """Lockstep base/perturbed runs; returns rows ``(delta, Et(0), sup Et, ratio)``."""
    deltas = list(sc.cfg["depend.deltas"] if deltas is None else deltas)
    how = how or sc.cfg["depend.perturbation"]
    cfg = sc.stepper
    base = init_state(sc.past, sc.model, cfg.dt)
    pert = [init_state(perturb_past(sc.past, d, how), sc.model, cfg.dt) for d in deltas]
    e0 = np.array([difference_energy(p, base) for p in pert])
    sup = e0.copy()
    n = int(round(sc.horizon / cfg.dt))
    with np.errstate(over="raise", invalid="raise"):
        try:
            for _ in range(n):
                step(base, cfg, sc.model)
                for k, p in enumerate(pert):
                    step(p, cfg, sc.model)
                    sup[k] = max(sup[k], difference_energy(p, base))
        except Exception as exc:
            raise ExperimentAbort(f"run failed at t={base.t:.6g}: {exc}") from exc
    if not np.all(np.isfinite(sup)):
        raise ExperimentAbort("nonfinite difference energy")
    rows = []
    for d, a, b in zip(deltas, e0, sup):
        rows.append(DependenceRow(d, float(a), float(b), float(b / a) if a > 0 else 0.0))
    return rows


def dependence_drift(rows, last=4) -> float:
    """max/min ratio over the last ``last`` nonzero perturbations."""
    r = [x.ratio for x in rows if x.E0 > 0][-last:]
    return max(r) / min(r) if r else 1.0


# ---------------------------------------------------------------------------
# global existence vs blow-up indicator
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    index: int
    m: float
    p: float
    amplitude: float
    sign: float
    status: str
    max_modE: float
    end_time: float
    ceiling_ok: str
    failed_checks: str


def _sweep_cell(args):
    index, cfg, m, p, amp, sign, allow = args
    cfg = dict(cfg)
    cfg.update({"damping.m": m, "source.p": p, "source.C": None, "past.scale": amp,
                "source.sign": sign, "basis.degree": None})
    try:
        sc = build_scenario(cfg, allow)
    except AssumptionError as exc:
        names = ";".join(c.name for c in exc.report.failed())
        return SweepRow(index, m, p, amp, sign, "rejected", math.nan, 0.0, "n/a", names)
    state = init_state(sc.past, sc.model, sc.stepper.dt)
    res = run(state, sc.stepper, sc.model, sc.horizon)
    modE = res.ledger.column("modE")
    t = res.ledger.column("t")
    if res.blew_up:
        max_mod = max(float(np.nanmax(modE)), res.blowup.modified_energy)
    else:
        max_mod = float(np.max(modE))
    ceiling = "n/a"
    if m >= p and sign > 0 and not res.blew_up:
        consts = global_constants(sc.model)
        bound = global_ceiling(modE[0], consts, t, sc.horizon)
        ceiling = "yes" if bool(np.all(modE <= bound)) else "no"
    failed = ";".join(c.name for c in sc.report.failed())
    status = "blow-up-indicator" if res.blew_up else "bounded"
    end = res.blowup.t if res.blew_up else res.state.t
    return SweepRow(index, m, p, amp, sign, status, max_mod, end, ceiling, failed)


def global_vs_blowup_sweep(sc: Scenario, cells=None, workers=None, allow_invalid=True):
    """One row per (m, p, amplitude, sign) cell, merged by cell index."""
    cfg = {k: v for k, v in sc.cfg.items()}
    if cells is None and cfg["sweep.cells"]:
        cells = cfg["sweep.cells"]
    if cells is None:
        cells = [(m, p, a, s) for m in cfg["sweep.m"] for p in cfg["sweep.p"]
                 for a in cfg["sweep.amplitude"] for s in cfg["sweep.sign"]]
    jobs = [(i, cfg, float(m), float(p), float(a), float(s), allow_invalid)
            for i, (m, p, a, s) in enumerate(cells)]
    workers = workers or cfg["sweep.workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_cell, jobs))
    else:
        rows = [_sweep_cell(j) for j in jobs]
    return sorted(rows, key=lambda r: r.index)


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    dt: float
    residual: float
    weak: float
    oracle: float
    prony: float


def _fit(dts, vals, floor):
    vals = np.asarray(vals, dtype=float)
    if np.all(vals <= floor):
        return "round-off floor"
    ok = vals > floor
    if ok.sum() < 2:
        return "round-off floor"
    slope = np.polyfit(np.log2(np.asarray(dts)[ok]), np.log2(vals[ok]), 1)[0]
    return float(slope)


def convergence_study(sc: Scenario, levels=None, dt0=None, seed=None):
    """Joint (dt, ds) halving; returns ``(rows, slopes)``.

    Columns: max identity residual, weak-form residual against a seeded
    band-limited test function, and the memory-integral discrepancy against
    the direct-convolution and (prony only) recursive-convolution oracles at
    the final time.
    """
    levels = levels or sc.cfg["converge.levels"]
    dt0 = dt0 or sc.cfg["converge.dt0"]
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    basis = sc.model.basis
    nphi = min(8, basis.size)
    c = np.zeros(basis.size)
    c[:nphi] = rng.standard_normal(nphi) / np.arange(1, nphi + 1) ** 2
    phi = Field(basis, c)
    prof = Profile("trig", omega=2.0, phase=0.1)
    lam = basis.eigenvalues
    rows = []
    E0 = None
    for lev in range(levels):
        dt = dt0 / 2 ** lev
        cfg = replace(sc.stepper, dt=dt)
        state = init_state(sc.past, sc.model, dt)
        res = run(state, cfg, sc.model, sc.horizon, record=True)
        if res.blew_up:
            raise ExperimentAbort(f"blow-up indicator at dt={dt}")
        E0 = res.ledger.rows[0][1]
        rec = res.records
        weak = abs(weak_form_residual(rec, phi, prof))
        traj = UTrajectory(dt, sc.past)
        for u in rec["u"]:
            traj.append(u)
        t_end = rec["t"][-1]
        memsum = rec["memsum"][-1]
        direct, _ = direct_convolution_oracle(traj, sc.model.kernel, t_end, lam)
        d = memsum - direct
        oracle = math.sqrt(float(np.dot(lam * d, d)))
        pr = math.nan
        if sc.model.kernel.family == "prony":
            rc = PronyConvolution(sc.model.kernel, sc.past)
            for k in range(1, len(rec["u"])):
                rc.advance(rec["u"][k - 1], rec["u"][k], dt)
            d = memsum - rc.memory_integral(rec["u"][-1])
            pr = math.sqrt(float(np.dot(lam * d, d)))
        rows.append(ConvergenceRow(dt, res.ledger.max_abs_residual, weak, oracle, pr))
    floor = 1e-11 * (1.0 + (E0 or 0.0))
    dts = [r.dt for r in rows]
    slopes = {
        "residual": _fit(dts, [r.residual for r in rows], floor),
        "weak": _fit(dts, [r.weak for r in rows], floor),
        "oracle": _fit(dts, [r.oracle for r in rows], floor),
    }
    if sc.model.kernel.family == "prony":
        slopes["prony"] = _fit(dts, [r.prony for r in rows], floor)
    return rows, slopes


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _cmd_depend(sc, out):
    rows = continuous_dependence_experiment(sc)
    _write_table(os.path.join(out, "dependence.csv"), ("delta", "E0", "sup_E", "ratio"),
                 [(r.delta, r.E0, r.sup, r.ratio) for r in rows])
    drift = dependence_drift(rows)
    ok = drift <= 2.0
    _write_summary(os.path.join(out, "summary.txt"),
                   [("experiment", "depend"), ("ratio_drift", drift),
                    ("criterion", "pass" if ok else "fail")])
    return EXIT_OK if ok else EXIT_CRITERION


def _cmd_sweep(sc, out, allow):
    rows = global_vs_blowup_sweep(sc, allow_invalid=allow)
    _write_table(os.path.join(out, "sweep.csv"),
                 ("index", "m", "p", "amplitude", "sign", "status", "max_modE", "end_time",
                  "below_ceiling", "failed_checks"),
                 [(r.index, r.m, r.p, r.amplitude, r.sign, r.status, r.max_modE, r.end_time,
                   r.ceiling_ok, r.failed_checks) for r in rows])
    dom = [r for r in rows if r.m >= r.p and r.sign > 0]
    dom_ok = all(r.status == "bounded" and r.ceiling_ok == "yes" for r in dom)
    diss_ok = all(r.status == "bounded" for r in rows if r.sign < 0)
    flagged = any(r.status == "blow-up-indicator" for r in rows if r.m < r.p and r.sign > 0)
    _write_summary(os.path.join(out, "summary.txt"),
                   [("experiment", "sweep"), ("cells", len(rows)),
                    ("dominant_damping_bounded", "yes" if dom_ok else "no"),
                    ("dissipative_source_bounded", "yes" if diss_ok else "no"),
                    ("blowup_indicator_seen", "yes" if flagged else "no")])
    return EXIT_OK if dom_ok and diss_ok else EXIT_CRITERION


def _decays(vals):
    """True when the column decreases level by level (round-off ties allowed)."""
    v = np.asarray(vals, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] * (1.0 + 1e-12) + 1e-14))


def _cmd_converge(sc, out):
    rows, slopes = convergence_study(sc)
    _write_table(os.path.join(out, "convergence.csv"),
                 ("dt", "max_identity_residual", "weak_form_residual", "direct_oracle_discrepancy",
                  "prony_oracle_discrepancy"),
                 [(r.dt, r.residual, r.weak, r.oracle, r.prony) for r in rows])
    items = [("experiment", "converge")] + [(f"slope_{k}", v) for k, v in slopes.items()]
    for k in slopes:
        items.append((f"monotone_{k}", "yes" if _decays([getattr(r, k) for r in rows]) else "no"))
    ok = all(v == "round-off floor" or v >= 1.8 for k, v in slopes.items()
             if k in ("residual", "weak", "oracle"))
    items.append(("criterion", "pass" if ok else "fail"))
    _write_summary(os.path.join(out, "summary.txt"), items)
    return EXIT_OK if ok else EXIT_CRITERION


def build_parser():
    ap = argparse.ArgumentParser(prog="memwave", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("run", "single scenario with energy ledger"),
                      ("depend", "continuous-dependence experiment"),
                      ("sweep", "global existence vs blow-up indicator sweep"),
                      ("converge", "time-step refinement study")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True, help="scenario file (key = value lines)")
        p.add_argument("--out", default=None, help="output directory (default: output.path)")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
        p.add_argument("--allow-invalid", action="store_true",
                       help="run even if the standing hypotheses fail")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return run_scenario(args.config, args.out, args.seed, args.allow_invalid)
    try:
        over = {"seed": args.seed} if args.seed is not None else None
        sc = load_scenario(args.config, args.allow_invalid, over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"{exc}\n{exc.report}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out or sc.cfg["output.path"]
    os.makedirs(out, exist_ok=True)
    try:
        if args.command == "depend":
            return _cmd_depend(sc, out)
        if args.command == "sweep":
            return _cmd_sweep(sc, out, args.allow_invalid)
        return _cmd_converge(sc, out)
    except ExperimentAbort as exc:
        print(f"experiment aborted: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
