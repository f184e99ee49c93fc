"""Experiment drivers: monotonicity runs, soliton tracking and stability,
blowdown limits and curvature oracle sweeps.

Every driver returns an :class:`ExperimentReport` whose verdicts name the
acceptance criterion they check.  Reports are deterministic given their
inputs; floats are written in round-trip precision.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .curvature import curvature_package
from .flow import StepControl, Trajectory, blowdown_rescale, integrate, rhs_reduced
from .functionals import (
    dissipation,
    fd_derivative,
    functional_value,
    jensen_bound,
    solve_f_backward,
)
from .grid import BaseDomain
from .oracle import total_space_oracle
from .solitons import (
    SolitonSpec,
    band_limited_field,
    harmonic_einstein_residual,
    make_soliton,
    perturb,
    soliton_distance,
)
from .state import BundleState, DensityField

__all__ = [
    "Verdict",
    "ExperimentReport",
    "run_monotonicity",
    "run_soliton_tracking",
    "run_stability",
    "run_blowdown",
    "run_oracle_sweep",
    "random_smooth_state",
    "integrate_through",
]

_CONVENTION = {"F": "plain", "W": "shrinker", "W+": "expander"}


@dataclass
class Verdict:
    criterion: int | None
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = f"[{self.criterion}] " if self.criterion is not None else ""
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {tag}{self.name}: measured {self.measured:.3e} (tol {self.tolerance:.1e})" + (
            f" {self.detail}" if self.detail else "")


@dataclass
class ExperimentReport:
    name: str
    parameters: dict
    records: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def add(self, criterion, name, passed, measured, tolerance, detail=""):
        self.verdicts.append(Verdict(criterion, name, bool(passed), float(measured),
                                     float(tolerance), detail))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "parameters": self.parameters,
            "passed": self.passed,
            "verdicts": [vars(v) for v in self.verdicts],
            "records": self.records,
        }

    def write(self, out_dir) -> tuple[str, str]:
        """``<name>.json`` (full report) and ``<name>.csv`` (records)."""
        os.makedirs(out_dir, exist_ok=True)
        jpath = os.path.join(out_dir, f"{self.name}.json")
        cpath = os.path.join(out_dir, f"{self.name}.csv")
        with open(jpath, "w") as fh:
            json.dump(_plain(self.to_dict()), fh, indent=1, sort_keys=True)
            fh.write("\n")
        cols = list(self.records[0]) if self.records else []
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                w.writerow([_fmt(r[c]) for c in cols])
        return jpath, cpath


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def integrate_through(state0: BundleState, marks, control=None, checkpoint_every=64,
                      rhs=rhs_reduced) -> Trajectory:
    """Integrate through each time in ``marks`` (increasing), landing on every one.

    The pieces are concatenated into one trajectory; each piece keeps its own
    geometric checkpoint grid starting at the previous mark.
    """
    traj = None
    state = state0
    for mark in marks:
        if mark <= state.t:
            continue
        piece = integrate(state, rhs, mark, control=control, checkpoint_every=checkpoint_every)
        if traj is None:
            traj = piece
        else:
            for st, r in zip(piece.states[1:], piece.rates[1:]):
                traj.append(st, r)
            traj.steps += piece.steps
            traj.anchor = piece.anchor
        state = piece.states[-1]
    if traj is None:
        traj = Trajectory(origin=state0.t, per_unit_log_t=checkpoint_every)
        traj.append(state0, rhs(state0))
    return traj


def run_monotonicity(initial: BundleState, horizon: float, which: str = "W+", *,
                     control: StepControl | None = None, checkpoint_every: int = 128,
                     tau_end: float = 1.0, assert_monotone: bool | None = None,
                     identity_tol: float = 0.01, mono_tol: float = 1e-6,
                     mass_tol: float = 1e-6, jensen_tol: float = 1e-8,
                     abs_floor: float = 1e-12, criterion: int | None = None,
                     name: str | None = None) -> ExperimentReport:
    """Forward flow, backward conjugate heat solve, then functional samples.

    The density at the horizon is spatially constant with unit mass.  For
    ``W`` the scale parameter is ``tau = tau_end + horizon - t``.  Monotonicity
    is asserted for F and W+ always and for W only when requested (it needs
    vanishing connection curvature).
    """
    if which not in _CONVENTION:
        raise ValueError(f"unknown functional {which!r}")
    conv = _CONVENTION[which]
    if assert_monotone is None:
        assert_monotone = which != "W"
    if which == "W" and assert_monotone and np.any(curvature_package(initial, want_total=False).F):
        raise ValueError("W monotonicity is only asserted for vanishing connection curvature")
    clock = time.perf_counter()
    traj = integrate(initial, rhs_reduced, horizon, control=control,
                     checkpoint_every=checkpoint_every)
    final = traj.states[-1]

    def param(t):
        if conv == "expander":
            return t
        if conv == "shrinker":
            return tau_end + (final.t - t)
        return None

    u_end = DensityField.uniform(final, conv, param(final.t))
    dens = solve_f_backward(traj, u_end, conv, tau_end=tau_end, control=control)
    values, diss, masses, margins = [], [], [], []
    for st, d in zip(traj.states, dens):
        p = param(st.t)
        pkg = curvature_package(st)
        f = d.f
        values.append(functional_value(which, st, f, p, pkg, check_mass=False))
        diss.append(dissipation(st, f, p, which, pkg))
        masses.append(d.mass(st, p))
        if which == "W+":
            margins.append(jensen_bound(st, f, st.t)[2])
    fd = fd_derivative(traj.times, values)
    report = ExperimentReport(
        name=name or f"monotonicity_{which.replace('+', 'plus')}",
        parameters={"which": which, "horizon": horizon, "t_start": initial.t,
                    "checkpoint_every": checkpoint_every, "tau_end": tau_end,
                    "domain": initial.domain.descriptor(), "N": initial.N},
    )
    for k, t in enumerate(traj.times):
        rec = {"t": t, "value": values[k], "dissipation": diss[k], "fd_derivative": float(fd[k]),
               "mass": masses[k]}
        if margins:
            rec["jensen_margin"] = margins[k]
        report.records.append(rec)
    scale = 1.0 + max(abs(v) for v in values)
    ident = [abs(fd[k] - diss[k]) / max(abs(diss[k]), abs_floor * scale)
             for k in range(len(values))]
    worst = int(np.argmax(ident))
    report.add(criterion, "derivative identity", max(ident) <= identity_tol, max(ident),
               identity_tol, f"worst at t={traj.times[worst]:.6g}")
    if assert_monotone:
        drops = [max(values[k] - values[k + 1], 0.0) / (1 + abs(values[k]))
                 for k in range(len(values) - 1)]
        report.add(criterion, "nondecreasing", max(drops, default=0.0) <= mono_tol,
                   max(drops, default=0.0), mono_tol)
    mdev = max(abs(m - 1.0) for m in masses)
    report.add(8 if which in ("F", "W+") else None, "mass conservation", mdev <= mass_tol,
               mdev, mass_tol, conv)
    if margins:
        report.add(criterion, "jensen bound", min(margins) >= -jensen_tol, min(margins),
                   jensen_tol)
    report.extras.update(trajectory=traj, densities=dens, seconds=time.perf_counter() - clock)
    return report


def run_soliton_tracking(spec: SolitonSpec, t0: float = 1.0, t1: float = 4.0, *,
                         control: StepControl | None = None, checkpoint_every: int = 16,
                         tol: float = 1e-4, criterion: int | None = 2,
                         initial: BundleState | None = None, origin: float | None = None,
                         prior_records=None) -> ExperimentReport:
    """Flow the closed-form soliton and compare with the closed form at every checkpoint.

    ``initial``/``origin``/``prior_records`` continue an earlier run from one
    of its grid checkpoints.
    """
    clock = time.perf_counter()
    start = make_soliton(spec, t0) if initial is None else initial
    traj = integrate(start, rhs_reduced, t1, control=control, origin=origin,
                     checkpoint_every=checkpoint_every, store_rates=False)
    report = ExperimentReport(
        name=f"tracking_{spec.kind}",
        parameters={"soliton": spec.describe(), "t0": t0, "t1": t1,
                    "checkpoint_every": checkpoint_every},
    )
    report.records.extend(prior_records or [])
    states = traj.states[1:] if prior_records else traj.states
    for st in states:
        ref = make_soliton(spec, st.t)
        errs = {}
        for key in ("G", "a", "g"):
            x, y = getattr(st, key), getattr(ref, key)
            s = float(np.max(np.abs(y))) if y.size else 0.0
            d = float(np.max(np.abs(x - y))) if x.size else 0.0
            errs[key] = d / s if s > 0 else d
        report.records.append({"t": st.t, "err_G": errs["G"], "err_a": errs["a"],
                               "err_g": errs["g"]})
    worst = max(max(r["err_G"], r["err_a"], r["err_g"]) for r in report.records)
    report.add(criterion, "tracks closed form", worst <= tol, worst, tol)
    report.extras.update(trajectory=traj, seconds=time.perf_counter() - clock)
    return report


def run_stability(spec: SolitonSpec, eps: float = 1e-2, horizon: float = 16.0, *,
                  seed: int = 0, t0: float = 1.0, modes: int = 4,
                  control: StepControl | None = None, checkpoint_every: int = 16,
                  ratio_tol: float = 0.2, stay_tol: float = 1e-6, criterion: int | None = 10,
                  initial: BundleState | None = None, origin: float | None = None,
                  prior_records=None) -> ExperimentReport:
    """Perturb a soliton at ``t0`` and follow its distance to the family.

    Without a perturbation the closed form still drifts at the stencil
    truncation level; ``stay_tol`` bounds that drift.

    A given ``initial`` state replaces the perturbed soliton; with
    ``prior_records`` the run continues an earlier one (the first record of
    the earlier run stays the reference distance).
    """
    clock = time.perf_counter()
    if initial is None:
        initial = perturb(make_soliton(spec, t0), eps, seed=seed, modes=modes)
    records = list(prior_records or [])

    def sample(st):
        records.append({"t": st.t, "distance": float(soliton_distance(st, spec))})

    if not records:
        sample(initial)
    traj = integrate(initial, rhs_reduced, horizon, control=control, origin=origin,
                     checkpoint_every=checkpoint_every, store_rates=False, callback=sample)
    report = ExperimentReport(
        name=f"stability_{spec.kind}",
        parameters={"soliton": spec.describe(), "eps": eps, "horizon": horizon,
                    "seed": seed, "t0": t0, "modes": modes,
                    "checkpoint_every": checkpoint_every},
        records=records,
    )
    d0, d1 = records[0]["distance"], records[-1]["distance"]
    if d0 < 1e-10:
        report.add(criterion, "stays at soliton", d1 <= stay_tol, d1, stay_tol)
    else:
        report.add(criterion, "distance decreases", d1 < d0, d1 / d0, 1.0)
        report.add(criterion, "distance ratio", d1 / d0 < ratio_tol, d1 / d0, ratio_tol)
    report.extras.update(trajectory=traj, seconds=time.perf_counter() - clock)
    return report


def run_blowdown(initial: BundleState, scales=(1, 4, 16, 64), *,
                 reference: SolitonSpec | None = None, control: StepControl | None = None,
                 checkpoint_every: int = 16, floor_factor: float = 10.0,
                 criterion: int | None = 9) -> ExperimentReport:
    """Expander residual of the blowdown at rescaled time 1 for each scale.

    The flow starts at ``initial.t`` (which must be 1) and lands exactly on
    every scale.  With a ``reference`` soliton the floor is the residual of
    the closed form on the same grid, i.e. the truncation error of the
    stencils, and the largest scale must come within ``floor_factor`` of it.
    """
    scales = sorted(float(s) for s in scales)
    if abs(initial.t - 1.0) > 1e-12:
        raise ValueError("blowdown runs start at t = 1")
    clock = time.perf_counter()
    traj = integrate_through(initial, scales, control=control, checkpoint_every=checkpoint_every)
    report = ExperimentReport(
        name="blowdown",
        parameters={"scales": scales, "checkpoint_every": checkpoint_every,
                    "domain": initial.domain.descriptor(), "N": initial.N,
                    "reference": reference.describe() if reference else None},
    )
    totals = []
    for s in scales:
        piece = blowdown_rescale(traj, s, window=(1.0, 1.0))
        res = harmonic_einstein_residual(piece.states[0], "expander", 1.0)
        totals.append(res.total)
        report.records.append({"s": s, **res.as_dict(), "total": res.total})
    steps = [totals[k + 1] - totals[k] for k in range(len(totals) - 1)]
    report.add(criterion, "residual decreasing", all(d < 0 for d in steps) or max(totals) == 0,
               max(steps, default=0.0), 0.0)
    if reference is not None:
        floor = harmonic_einstein_residual(make_soliton(reference, 1.0), "expander", 1.0).total
        report.extras["floor"] = floor
        report.add(criterion, "reaches stencil floor", totals[-1] <= floor_factor * floor,
                   totals[-1] / floor if floor > 0 else math.inf, floor_factor,
                   f"floor {floor:.3e}")
    report.extras.update(trajectory=traj, seconds=time.perf_counter() - clock)
    return report


def _trig_field(domain, rng, modes, amplitude):
    return amplitude * band_limited_field(domain, rng, modes)


def random_smooth_state(kind: str, seed: int, sizes=None, order: int = 8,
                        amplitude: float = 0.3, modes: int = 3, t: float = 1.0) -> BundleState:
    """Seeded trigonometric-polynomial state.

    ``circle``: twisted circle (period 1, Sol holonomy), N = 2, non-constant
    ``g`` and ``det G``.  ``torus``: unit torus, N = 1 with a background
    Euler density and a periodic connection perturbation.
    """
    rng = np.random.default_rng(seed)
    if kind == "circle":
        dom = BaseDomain(dim=1, sizes=tuple(sizes or (256,)), periods=(1.0,), order=order)
        spec = SolitonSpec("sol", domain=dom)
        st = perturb(make_soliton(spec, t), amplitude, seed=seed, modes=modes)
        # a conformal factor on G breaks det G = 1
        G = st.G * np.exp(_trig_field(st.domain, rng, modes, amplitude))[:, None, None]
        g = st.g * np.exp(_trig_field(st.domain, rng, modes, amplitude))[:, None, None]
        return st.with_fields(G=G, g=g)
    if kind == "torus":
        dom = BaseDomain(dim=2, sizes=tuple(sizes or (96, 96)), periods=(1.0, 1.0), order=order)
        G = np.exp(_trig_field(dom, rng, modes, amplitude))[..., None, None]
        h = np.stack([_trig_field(dom, rng, modes, amplitude) for _ in range(3)], axis=-1)
        H = np.stack([np.stack([h[..., 0], h[..., 1]], -1), np.stack([h[..., 1], h[..., 2]], -1)],
                     -2)
        w, V = np.linalg.eigh(H)
        g = np.einsum("...ik,...k,...jk->...ij", V, np.exp(w), V)
        a = np.stack([_trig_field(dom, rng, modes, amplitude) for _ in range(2)], -1)[..., None, :]
        c = 1.0 + rng.uniform(-0.5, 0.5)
        F_bg = np.array([[[0.0, c], [-c, 0.0]]])
        return BundleState(G=G, a=a, g=g, t=t, domain=dom, F_bg=F_bg)
    raise ValueError(f"unknown random state kind {kind!r}")


def _node_error(pkg, orc, node, N):
    fib, mix, base = orc.blocks(N)
    ours = [pkg.ricci_fiber[node], pkg.ricci_mixed[node], pkg.ricci_basecomp[node]]
    theirs = [fib, mix, base]
    scale = max(float(np.max(np.abs(orc.ricci))), abs(orc.scalar))
    diff = max(float(np.max(np.abs(x - y))) for x, y in zip(ours, theirs))
    diff = max(diff, abs(float(pkg.scalar_total[node]) - orc.scalar))
    return diff / scale


def run_oracle_sweep(n_states: int = 20, seed: int = 0, nodes_per_state: int = 4, *,
                     sizes_1d=(256,), sizes_2d=(96, 96), order: int = 8, tol: float = 1e-6,
                     criterion: int | None = 1) -> ExperimentReport:
    """Compare the reduced curvature formulas with the total-space oracle.

    Half the states are twisted circles with N = 2, half tori with N = 1 and
    a background connection curvature.  The error at a node is the largest
    Ricci/scalar component difference divided by the largest oracle
    component there.
    """
    clock = time.perf_counter()
    rng = np.random.default_rng(seed)
    report = ExperimentReport(
        name="oracle_sweep",
        parameters={"n_states": n_states, "seed": seed, "nodes_per_state": nodes_per_state,
                    "sizes_1d": list(sizes_1d), "sizes_2d": list(sizes_2d), "order": order},
    )
    worst = 0.0
    for k in range(n_states):
        kind = "circle" if k % 2 == 0 else "torus"
        st = random_smooth_state(kind, seed * 1000 + k,
                                 sizes=sizes_1d if kind == "circle" else sizes_2d, order=order)
        pkg = curvature_package(st)
        for _ in range(nodes_per_state):
            node = tuple(int(rng.integers(0, n)) for n in st.domain.sizes)
            err = _node_error(pkg, total_space_oracle(st, node), node, st.N)
            worst = max(worst, err)
            report.records.append({"state": k, "kind": kind, "node": str(node), "rel_error": err})
    report.add(criterion, "oracle equivalence", worst <= tol, worst, tol)
    report.extras["seconds"] = time.perf_counter() - clock
    return report
