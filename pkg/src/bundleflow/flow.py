"""Time integration of the reduced flow and its density-coupled variant.

The evolution for ``(G, a, g)`` is the gauge-modified system: heat-type for
``G``, Yang-Mills gradient type for the connection and Ricci type for ``g``.
Explicit RK4 with a parabolic step limit; trajectories keep checkpoints on a
geometric time grid together with the time derivatives there, so that the
backward density solve can interpolate with cubic Hermite polynomials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .curvature import (
    CurvaturePackage,
    connection_curvature,
    curvature_package,
    gradient,
    hessian,
)
from ._tensor import contract, inv
from .grid import DomainError
from .state import BundleState, DensityField

__all__ = [
    "Tangent",
    "rhs_reduced",
    "rhs_coupled",
    "lie_correction",
    "covariant_hessian_scalar",
    "StepControl",
    "StepCollapse",
    "stable_dt",
    "step_rk4",
    "Trajectory",
    "checkpoint_times",
    "integrate",
    "blowdown_rescale",
]

_es = contract


@dataclass(frozen=True)
class Tangent:
    """Time derivative of a state; ``f`` is only set by the coupled system."""

    G: np.ndarray
    a: np.ndarray
    g: np.ndarray
    f: np.ndarray | None = None

    def combine(self, other: "Tangent", w_self=1.0, w_other=1.0) -> "Tangent":
        f = None
        if self.f is not None and other.f is not None:
            f = w_self * self.f + w_other * other.f
        return Tangent(
            w_self * self.G + w_other * other.G,
            w_self * self.a + w_other * other.a,
            w_self * self.g + w_other * other.g,
            f,
        )

    def sup(self) -> float:
        parts = [self.G, self.a, self.g] + ([self.f] if self.f is not None else [])
        return max(float(np.max(np.abs(p))) if p.size else 0.0 for p in parts)


def _flow_terms(state: BundleState, pkg: CurvaturePackage):
    gi, dG, F = pkg.g_inv, pkg.dG, pkg.F
    Gdot = _es("...ab,...abij->...ij", gi, pkg.hessian_G) - _es(
        "...ab,...aik,...bkj->...ij", gi, dG, pkg.M
    )
    gdot = -2.0 * pkg.ricci_base + 0.5 * pkg.Q
    if not np.any(F):
        return Gdot, np.zeros(state.a.shape), gdot
    GF = _es("...ik,...kab->...iab", state.G, F)
    Gdot = Gdot - 0.5 * _es("...ac,...bd,...iab,...jcd->...ij", gi, gi, GF, GF)
    adot = -_es("...cd,...iacd->...ia", gi, pkg.F_cov_deriv) - _es(
        "...cd,...cij,...jad->...ia", gi, pkg.M, F
    )
    gdot = gdot + _es("...cd,...iac,...ibd->...ab", gi, GF, F)
    return Gdot, adot, gdot


def rhs_reduced(state: BundleState, pkg: CurvaturePackage | None = None) -> Tangent:
    """Right-hand side of the gauge-modified reduced flow for ``(G, a, g)``."""
    if pkg is None:
        pkg = curvature_package(state, want_total=False)
    Gdot, adot, gdot = _flow_terms(state, pkg)
    return Tangent(Gdot, adot, gdot)


def covariant_hessian_scalar(f, christoffel, domain):
    """f_{;ab} = f_{,ab} - Gamma^s_ab f_{,s}."""
    return hessian(f, domain) - _es("...sab,...s->...ab", christoffel, gradient(f, domain))


def _density_f(state, density):
    if isinstance(density, DensityField):
        return density.f
    f = np.asarray(density, dtype=float)
    if f.shape != state.domain.shape:
        raise DomainError("density does not match the domain grid")
    return f


def rhs_coupled(state: BundleState, density, pkg: CurvaturePackage | None = None) -> Tangent:
    """Right-hand side of the density-coupled system for ``(G, a, g, f)``.

    ``density`` is a :class:`DensityField` or an array holding ``f``.
    """
    if pkg is None:
        pkg = curvature_package(state, want_total=False)
    f = _density_f(state, density)
    dom = state.domain
    Gdot, adot, gdot = _flow_terms(state, pkg)
    gi = pkg.g_inv
    df = gradient(f, dom)
    hf = covariant_hessian_scalar(f, pkg.christoffel, dom)
    Gdot = Gdot - _es("...ab,...aij,...b->...ij", gi, pkg.dG, df)
    adot = adot + _es("...cd,...c,...iad->...ia", gi, df, pkg.F)
    gdot = gdot - 2.0 * hf
    fdot = (
        -pkg.scalar_base
        + 0.25 * _es("...ab,...ab->...", gi, pkg.Q)
        + 0.5 * pkg.F_sq
        - _es("...ab,...ab->...", gi, hf)
    )
    return Tangent(Gdot, adot, gdot, fdot)


def lie_correction(state: BundleState, density) -> Tangent:
    """Lie derivative of ``(G, A, g)`` along ``V = -grad f`` (``A`` modulo exact forms).

    Coded directly from the Lie-derivative formulas, not from the coupled
    right-hand side, so the two can be compared.
    """
    f = _density_f(state, density)
    dom = state.domain
    g = state.g
    gi = inv(g)
    V = -_es("...ab,...b->...a", gi, gradient(f, dom))
    dV = gradient(V, dom, "b")  # [a, c] = d_a V^c
    LG = _es("...c,...cij->...ij", V, gradient(state.G, dom, "ll"))
    dg = gradient(g, dom, "bb")
    Lg = (
        _es("...c,...cab->...ab", V, dg)
        + _es("...cb,...ac->...ab", g, dV)
        + _es("...ac,...bc->...ab", g, dV)
    )
    La = _es("...c,...ica->...ia", V, connection_curvature(state))
    return Tangent(LG, La, Lg)


class StepCollapse(RuntimeError):
    """Step size fell below ``dt_min``: stiffness, blowup or SPD loss."""


@dataclass
class StepControl:
    """Step-size policy.  ``dt_max`` caps the parabolic limit when given."""

    safety: float = 0.2
    dt_min: float = 1e-12
    max_rejects: int = 30
    dt_max: float | None = None

    def __post_init__(self):
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if not self.dt_min > 0:
            raise ValueError("dt_min must be positive")


def stable_dt(state: BundleState, control: StepControl) -> float:
    """Parabolic step limit ``safety * h^2 * min eigenvalue of g``."""
    dom = state.domain
    if dom.is_grid:
        lam = float(np.min(np.linalg.eigvalsh(state.g)))
        dt = control.safety * min(dom.spacing) ** 2 * lam
    else:
        # spatially constant fields: ODE in t with rates ~ 1/t
        dt = control.safety * max(state.t, 1e-3) / 8.0
    if control.dt_max is not None:
        dt = min(dt, control.dt_max)
    return dt


def _rk4_raw(state, rhs, dt):
    k1 = rhs(state)
    k2 = rhs(state.advance(k1, 0.5 * dt))
    k3 = rhs(state.advance(k2, 0.5 * dt))
    k4 = rhs(state.advance(k3, dt))
    comb = k1.combine(k2, 1.0, 2.0).combine(k3, 1.0, 2.0).combine(k4)
    return replace(state.advance(comb, dt / 6.0), t=state.t + dt), k1


def step_rk4(state: BundleState, rhs, control: StepControl, dt: float | None = None):
    """One classical RK4 step; returns ``(new_state, dt_taken)``.

    The step is halved and retried when the result loses positive
    definiteness or produces non-finite values.
    """
    if dt is None:
        dt = stable_dt(state, control)
    for _ in range(control.max_rejects + 1):
        if dt < control.dt_min:
            break
        try:
            with np.errstate(all="ignore"):
                new, _ = _rk4_raw(state, rhs, dt)
        except (np.linalg.LinAlgError, FloatingPointError):
            new = None
        if new is not None and new.is_admissible():
            return new, dt
        dt *= 0.5
    raise StepCollapse(f"step size collapsed below {control.dt_min:g} at t={state.t:.6g}")


def checkpoint_times(origin: float, t_start: float, t_end: float, per_unit_log_t: int):
    """Checkpoint times ``origin * exp(k / per)`` strictly inside (t_start, t_end), then t_end."""
    if origin <= 0:
        raise ValueError("geometric checkpoint grids need a positive origin time")
    out = []
    k = math.floor(per_unit_log_t * math.log(t_start / origin)) - 1
    while True:
        t = origin * math.exp(k / per_unit_log_t)
        k += 1
        if t <= t_start * (1 + 1e-14):
            continue
        if t >= t_end * (1 - 1e-14):
            break
        out.append(t)
    out.append(float(t_end))
    return out


@dataclass
class Trajectory:
    """Time-ordered checkpoints with optional time derivatives for Hermite interpolation."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    origin: float | None = None
    per_unit_log_t: int = 64
    steps: int = 0
    # last checkpoint lying on the geometric grid (used to resume exactly)
    anchor: BundleState | None = None

    def append(self, state: BundleState, rate: Tangent | None = None):
        if self.times and not state.t > self.times[-1]:
            raise ValueError("checkpoint times must increase strictly")
        if self.states and state.domain != self.states[0].domain:
            raise DomainError("all checkpoints must share one domain")
        self.times.append(state.t)
        self.states.append(state)
        self.rates.append(rate)

    def __len__(self):
        return len(self.times)

    @property
    def t_start(self):
        return self.times[0]

    @property
    def t_end(self):
        return self.times[-1]

    def _locate(self, t):
        if not self.times[0] - 1e-12 * abs(self.times[0]) <= t <= self.times[-1] * (1 + 1e-12):
            raise ValueError(f"t={t} outside trajectory [{self.times[0]}, {self.times[-1]}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), len(self.times) - 2)

    def at(self, t: float, interpolation: str = "hermite") -> BundleState:
        """State at time ``t``: cubic Hermite when rates are stored, else linear."""
        if len(self.times) == 1:
            return self.states[0]
        k = self._locate(t)
        t0, t1 = self.times[k], self.times[k + 1]
        if t == t0:
            return self.states[k]
        if t == t1:
            return self.states[k + 1]
        s0, s1 = self.states[k], self.states[k + 1]
        H = t1 - t0
        x = (t - t0) / H
        r0, r1 = self.rates[k], self.rates[k + 1]
        if interpolation == "linear" or r0 is None or r1 is None:
            def mix(p, q, *_):
                return (1 - x) * p + x * q
        else:
            h00 = 2 * x**3 - 3 * x**2 + 1
            h10 = x**3 - 2 * x**2 + x
            h01 = -2 * x**3 + 3 * x**2
            h11 = x**3 - x**2

            def mix(p, q, dp, dq):
                return h00 * p + h01 * q + H * (h10 * dp + h11 * dq)

        if r0 is None or r1 is None:
            r0 = r1 = Tangent(s0.G, s0.a, s0.g)  # unused by linear mix
        return replace(
            s0,
            G=mix(s0.G, s1.G, r0.G, r1.G),
            a=mix(s0.a, s1.a, r0.a, r1.a),
            g=mix(s0.g, s1.g, r0.g, r1.g),
            t=t,
        )

    def rate_at(self, t: float) -> Tangent:
        """Time derivative of the Hermite interpolant."""
        k = self._locate(t)
        t0, t1 = self.times[k], self.times[k + 1]
        s0, s1 = self.states[k], self.states[k + 1]
        r0, r1 = self.rates[k], self.rates[k + 1]
        H = t1 - t0
        x = (t - t0) / H
        d00 = (6 * x**2 - 6 * x) / H
        d10 = 3 * x**2 - 4 * x + 1
        d01 = (-6 * x**2 + 6 * x) / H
        d11 = 3 * x**2 - 2 * x

        def mix(p, q, dp, dq):
            return d00 * p + d01 * q + d10 * dp + d11 * dq

        return Tangent(
            mix(s0.G, s1.G, r0.G, r1.G),
            mix(s0.a, s1.a, r0.a, r1.a),
            mix(s0.g, s1.g, r0.g, r1.g),
        )

    def window(self, a: float, b: float) -> "Trajectory":
        keep = [i for i, t in enumerate(self.times) if a * (1 - 1e-12) <= t <= b * (1 + 1e-12)]
        out = Trajectory(origin=self.origin, per_unit_log_t=self.per_unit_log_t)
        for i in keep:
            out.append(self.states[i], self.rates[i])
        return out


def integrate(state0: BundleState, rhs, t_end: float, control: StepControl | None = None,
              checkpoint_every: int = 64, origin: float | None = None,
              store_rates: bool = True, callback=None) -> Trajectory:
    """Integrate ``rhs`` from ``state0`` to ``t_end`` with RK4.

    Checkpoints sit at ``origin * exp(k / checkpoint_every)`` (``origin``
    defaults to ``state0.t``) plus ``t_end``; steps are shortened to land on
    them exactly.  The step size depends only on the current state and the
    next checkpoint, so restarting from any grid checkpoint reproduces the
    uninterrupted run bit for bit.
    """
    control = control or StepControl()
    if not t_end > state0.t:
        raise ValueError("t_end must exceed the initial time")
    origin = state0.t if origin is None else float(origin)
    marks = checkpoint_times(origin, state0.t, t_end, checkpoint_every)
    traj = Trajectory(origin=origin, per_unit_log_t=checkpoint_every)
    traj.append(state0, rhs(state0) if store_rates else None)
    traj.anchor = state0
    state = state0
    for j, mark in enumerate(marks):
        while state.t < mark:
            dt = stable_dt(state, control)
            landing = state.t + 1.01 * dt >= mark
            if landing:
                dt = mark - state.t
            new, taken = step_rk4(state, rhs, control, dt)
            if landing and taken == dt:
                new = replace(new, t=mark)
            state = new
            traj.steps += 1
        traj.append(state, rhs(state) if store_rates else None)
        if j < len(marks) - 1:
            traj.anchor = state
        if callback is not None:
            callback(state)
    return traj


def blowdown_rescale(traj: Trajectory, s: float, window: tuple | None = None) -> Trajectory:
    """Parabolic rescaling ``t -> s t`` of a trajectory.

    Maps ``(G, a, g)(s t)`` to ``(G, s^{-1/2} a, s^{-1} g)`` at time ``t``
    (the connection picks up ``s^{-1/2}`` so that the rescaled fields solve the
    same equations when the connection curvature is nonzero).
    """
    if not s > 0:
        raise ValueError("scale must be positive")
    if window is None:
        window = (traj.t_start / s, traj.t_end / s)
    a, b = window
    if a * s < traj.t_start * (1 - 1e-12) or b * s > traj.t_end * (1 + 1e-12):
        raise ValueError("trajectory does not cover the requested window")
    root = math.sqrt(s)
    out = Trajectory(origin=None if traj.origin is None else traj.origin / s,
                     per_unit_log_t=traj.per_unit_log_t)
    for T, st, rate in zip(traj.times, traj.states, traj.rates):
        if not a * s * (1 - 1e-12) <= T <= b * s * (1 + 1e-12):
            continue
        new = replace(st, a=st.a / root, F_bg=st.F_bg / root, g=st.g / s, t=T / s)
        new_rate = None
        if rate is not None:
            new_rate = Tangent(s * rate.G, root * rate.a, rate.g)
        out.append(new, new_rate)
    return out
