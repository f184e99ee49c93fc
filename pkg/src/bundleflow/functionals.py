"""Entropy functionals F, W, W+, their dissipation identities and the
backward conjugate-heat solve that supplies the density.

Weights: ``plain`` integrates against ``e^-f dvol``; ``shrinker`` against
``(4 pi tau)^(-n/2) e^-f dvol``; ``expander`` against ``(4 pi t)^(-n/2) e^-f dvol``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._tensor import contract, det, inv
from .curvature import CurvaturePackage, curvature_package, gradient
from .flow import StepCollapse, StepControl, Trajectory, covariant_hessian_scalar
from .grid import derive, integrate_base, volume_element
from .state import BundleState, DensityField

__all__ = [
    "f_functional",
    "w_functional",
    "wplus_functional",
    "functional_value",
    "potential",
    "laplacian",
    "conjugate_heat_rhs",
    "solve_f_backward",
    "dissipation",
    "fbar_functional",
    "fbar_identity_check",
    "jensen_bound",
    "FunctionalSample",
    "fd_derivative",
    "write_samples_csv",
    "MassError",
    "MASS_TOL",
]

_es = contract
MASS_TOL = 1e-6
_CONVENTION = {"F": "plain", "W": "shrinker", "W+": "expander"}


class MassError(ValueError):
    """The density does not carry unit mass under the functional's convention."""


def _f_of(density):
    if isinstance(density, DensityField):
        return density.f
    return np.asarray(density, dtype=float)


def _pkg(state, pkg):
    return curvature_package(state, want_total=False) if pkg is None else pkg


def _weight(convention, n, param):
    return DensityField.weight(convention, n, param)


def _check_mass(state, f, convention, param):
    vol = volume_element(state.g)
    mass = _weight(convention, state.n, param) * integrate_base(np.exp(-f), vol, state.domain)
    if abs(mass - 1.0) > MASS_TOL:
        raise MassError(f"density mass {mass:.12g} differs from 1 under {convention} weighting")
    return mass


def _grad_sq(f, state, pkg):
    df = gradient(f, state.domain)
    return _es("...ab,...a,...b->...", pkg.g_inv, df, df)


def _lagrangian(state, f, pkg):
    """|grad f|^2 + R - 1/4 g:Q - 1/4 |F|^2 per node."""
    return (
        _grad_sq(f, state, pkg)
        + pkg.scalar_base
        - 0.25 * _es("...ab,...ab->...", pkg.g_inv, pkg.Q)
        - 0.25 * pkg.F_sq
    )


def f_functional(state: BundleState, f, pkg: CurvaturePackage | None = None) -> float:
    """Modified F: the base Perelman integrand minus Dirichlet and Yang-Mills energies."""
    pkg = _pkg(state, pkg)
    f = _f_of(f)
    return integrate_base(_lagrangian(state, f, pkg) * np.exp(-f), volume_element(state.g),
                          state.domain)


def w_functional(state: BundleState, f, tau: float, pkg: CurvaturePackage | None = None,
                 check_mass: bool = True) -> float:
    """Modified W (shrinker weighting, scale parameter ``tau``)."""
    pkg = _pkg(state, pkg)
    f = _f_of(f)
    if check_mass:
        _check_mass(state, f, "shrinker", tau)
    n = state.n
    integrand = (tau * _lagrangian(state, f, pkg) + f - n) * np.exp(-f)
    return _weight("shrinker", n, tau) * integrate_base(integrand, volume_element(state.g),
                                                        state.domain)


def wplus_functional(state: BundleState, f, t: float, pkg: CurvaturePackage | None = None,
                     check_mass: bool = True) -> float:
    """Modified W+ (expander weighting, time ``t``); note ``-f + n`` in place of ``f - n``."""
    pkg = _pkg(state, pkg)
    f = _f_of(f)
    if check_mass:
        _check_mass(state, f, "expander", t)
    n = state.n
    integrand = (t * _lagrangian(state, f, pkg) - f + n) * np.exp(-f)
    return _weight("expander", n, t) * integrate_base(integrand, volume_element(state.g),
                                                      state.domain)


def functional_value(which: str, state, f, param=None, pkg=None, check_mass=True):
    if which == "F":
        return f_functional(state, f, pkg)
    if which == "W":
        return w_functional(state, f, param, pkg, check_mass)
    if which == "W+":
        return wplus_functional(state, f, param, pkg, check_mass)
    raise ValueError(f"unknown functional {which!r}")


def potential(state: BundleState, pkg: CurvaturePackage | None = None):
    """R - 1/4 g:Q - 1/2 |F|^2, the reaction coefficient of the conjugate heat equation.

    It equals minus half the trace of the base-metric velocity, which is what
    makes the plain mass conserved.
    """
    pkg = _pkg(state, pkg)
    return pkg.scalar_base - 0.25 * _es("...ab,...ab->...", pkg.g_inv, pkg.Q) - 0.5 * pkg.F_sq


def laplacian(u, state: BundleState, g_inv=None):
    """Divergence-form Laplace-Beltrami operator; its volume integral vanishes exactly."""
    dom = state.domain
    if not dom.is_grid:
        return np.zeros(np.shape(u))
    gi = np.linalg.inv(state.g) if g_inv is None else g_inv
    vol = volume_element(state.g)
    du = gradient(u, dom)
    flux = vol[..., None] * _es("...ab,...b->...a", gi, du)
    div = sum(derive(flux[..., a], a, "first", dom) for a in range(dom.dim))
    return div / vol


def _shift(convention, n, param):
    if convention == "plain":
        return 0.0
    if param is None or not param > 0:
        raise ValueError(f"{convention} convention needs a positive time parameter")
    return n / (2 * param) if convention == "expander" else -n / (2 * param)


def conjugate_heat_rhs(state: BundleState, u, convention: str = "plain", param=None,
                       pkg: CurvaturePackage | None = None):
    """du/dt = -Lap u + (R - 1/4 g:Q - 1/2 |F|^2 + shift) u.

    ``shift`` is 0 (plain), ``+n/(2t)`` (expander, ``param = t``) or
    ``-n/(2 tau)`` (shrinker, ``param = tau``).
    """
    u = u.u if isinstance(u, DensityField) else np.asarray(u, dtype=float)
    pkg = _pkg(state, pkg)
    P = potential(state, pkg) + _shift(convention, state.n, param)
    return -laplacian(u, state, pkg.g_inv) + P * u


def _param(convention, t, tau_end, t_end):
    if convention == "expander":
        return t
    if convention == "shrinker":
        return tau_end + (t_end - t)
    return None


def solve_f_backward(traj: Trajectory, final_u, convention: str = "plain",
                     tau_end: float | None = None, control: StepControl | None = None,
                     potential_from: str = "auto"):
    """Integrate the conjugate heat equation from ``traj.t_end`` back to ``traj.t_start``.

    Returns one :class:`DensityField` per checkpoint (same order as
    ``traj.times``).  Fields between checkpoints come from the trajectory's
    Hermite interpolant.  No renormalization is applied; the mass is
    conserved by the scheme.  For the shrinker convention ``tau_end`` is the
    scale parameter at the final time (``tau`` grows backward in time).

    ``potential_from="rates"`` takes the reaction coefficient as
    ``-1/2 tr(g^-1 dg/dt)`` of the interpolated trajectory.  Along the flow this
    equals the curvature expression (exactly so at checkpoints), and it makes
    the interpolated problem conserve mass exactly in continuous time, so the
    only mass drift left is the RK4 truncation error.  ``"curvature"`` always
    evaluates the curvature expression.  ``"auto"`` uses the rates when the
    trajectory stores them.
    """
    if potential_from == "auto":
        potential_from = "rates" if all(r is not None for r in traj.rates) else "curvature"
    if potential_from not in ("rates", "curvature"):
        raise ValueError(f"unknown potential source {potential_from!r}")
    control = control or StepControl()
    if isinstance(final_u, DensityField):
        u = np.array(final_u.u)
    else:
        u = np.array(final_u, dtype=float)
    if convention == "shrinker" and (tau_end is None or not tau_end > 0):
        raise ValueError("shrinker convention needs tau_end > 0")
    if np.any(~(u > 0)):
        raise ValueError("final density must be positive")
    times = traj.times
    t_end = times[-1]
    out = [None] * len(times)
    out[-1] = DensityField(u, convention)
    cache = {}

    def rate(t, v):
        if t not in cache:
            if len(cache) > 8:
                cache.clear()
            st = traj.at(t)
            if potential_from == "rates":
                gi = inv(st.g)
                P = -0.5 * _es("...ab,...ba->...", gi, traj.rate_at(t).g)
            else:
                pk = curvature_package(st, want_total=False)
                gi, P = pk.g_inv, potential(st, pk)
            P = P + _shift(convention, st.n, _param(convention, t, tau_end, t_end))
            cache[t] = (st, gi, P)
        st, gi, P = cache[t]
        return -laplacian(v, st, gi) + P * v

    def step(t, v, dt):
        # backward in t: v(t - dt) from v(t)
        k1 = rate(t, v)
        k2 = rate(t - dt / 2, v - dt / 2 * k1)
        k3 = rate(t - dt / 2, v - dt / 2 * k2)
        k4 = rate(t - dt, v - dt * k3)
        return v - dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    t = t_end
    for j in range(len(times) - 2, -1, -1):
        mark = times[j]
        while t > mark:
            st = traj.at(t)
            dt = control.safety * min(st.domain.spacing) ** 2 * float(
                np.min(np.linalg.eigvalsh(st.g)))
            if control.dt_max is not None:
                dt = min(dt, control.dt_max)
            landing = t - 1.01 * dt <= mark
            if landing:
                dt = t - mark
            while True:
                if dt < control.dt_min:
                    raise StepCollapse(f"conjugate heat solve lost positivity near t={t:.6g}")
                with np.errstate(all="ignore"):
                    new = step(t, u, dt)
                if np.all(np.isfinite(new)) and np.all(new > 0):
                    break
                dt *= 0.5
                landing = False
            u = new
            t = mark if landing else t - dt
        out[j] = DensityField(u, convention)
    return out


def _flow_pieces(state, f, pkg):
    """Velocity-type tensors entering every dissipation identity."""
    dom = state.domain
    gi, Gi, dG, F = pkg.g_inv, pkg.G_inv, pkg.dG, pkg.F
    df = gradient(f, dom)
    GF = _es("...ik,...kab->...iab", state.G, F)
    T = (
        _es("...ab,...abij->...ij", gi, pkg.hessian_G)
        - _es("...ab,...aik,...bkj->...ij", gi, dG, pkg.M)
        - 0.5 * _es("...ac,...bd,...iab,...jcd->...ij", gi, gi, GF, GF)
        - _es("...ab,...aij,...b->...ij", gi, dG, df)
    )
    V = (
        _es("...cd,...iacd->...ia", gi, pkg.F_cov_deriv)
        + _es("...cd,...cij,...jad->...ia", gi, pkg.M, F)
        - _es("...cd,...c,...iad->...ia", gi, df, F)
    )
    S = (
        pkg.ricci_base
        - 0.25 * pkg.Q
        - 0.5 * _es("...cd,...iac,...ibd->...ab", gi, GF, F)
        + covariant_hessian_scalar(f, pkg.christoffel, dom)
    )
    T_sq = _es("...ij,...jk,...kl,...li->...", Gi, T, Gi, T) if state.N else np.zeros(dom.shape)
    V_sq = _es("...ab,...ij,...ia,...jb->...", gi, state.G, V, V)
    return T_sq, V_sq, S


def _S_sq(S, gi):
    return _es("...ac,...bd,...ab,...cd->...", gi, gi, S, S)


def dissipation(state: BundleState, f, param=None, which: str = "F",
                pkg: CurvaturePackage | None = None) -> float:
    """Right-hand side of the time-derivative identity for F, W or W+.

    For ``W`` the final Yang-Mills term enters with a minus sign, for ``W+``
    with a plus sign.  ``param`` is ``tau`` for W and ``t`` for W+.
    """
    pkg = _pkg(state, pkg)
    f = _f_of(f)
    gi = pkg.g_inv
    T_sq, V_sq, S = _flow_pieces(state, f, pkg)
    vol = volume_element(state.g)
    w = np.exp(-f)
    if which == "F":
        dens = 0.5 * T_sq + V_sq + 2 * _S_sq(S, gi)
        return integrate_base(dens * w, vol, state.domain)
    if which not in ("W", "W+"):
        raise ValueError(f"unknown functional {which!r}")
    if param is None or not param > 0:
        raise ValueError(f"{which} needs a positive scale parameter")
    sign = -1.0 if which == "W" else 1.0
    S = S + sign * state.g / (2 * param)
    dens = param * (0.5 * T_sq + V_sq + 2 * _S_sq(S, gi)) + sign * 0.25 * pkg.F_sq
    conv = _CONVENTION[which]
    return _weight(conv, state.n, param) * integrate_base(dens * w, vol, state.domain)


def fbar_functional(state: BundleState, fbar, pkg: CurvaturePackage | None = None) -> float:
    """Total-space form: integral of (|grad fbar|^2 + total scalar curvature) with the
    fiber volume sqrt(det G) folded into the weight."""
    pkg = curvature_package(state) if pkg is None or pkg.scalar_total is None else pkg
    fbar = np.asarray(fbar, dtype=float)
    dens = (_grad_sq(fbar, state, pkg) + pkg.scalar_total) * np.exp(-fbar)
    dens = dens * np.sqrt(det(state.G))
    return integrate_base(dens, volume_element(state.g), state.domain)


def fbar_identity_check(state: BundleState, fbar):
    """(total-space value, reduced F value with f = fbar - ln sqrt det G, difference)."""
    pkg = curvature_package(state)
    fbar = np.asarray(fbar, dtype=float)
    lhs = fbar_functional(state, fbar, pkg)
    f = fbar - 0.5 * np.log(det(state.G))
    rhs = f_functional(state, f, pkg)
    return lhs, rhs, lhs - rhs


def jensen_bound(state: BundleState, f, t: float):
    """(W+ value, lower bound from Jensen's inequality, value - bound).

    Requires unit expander mass.  The bound uses the nodal minimum of the
    total scalar curvature.
    """
    pkg = curvature_package(state)
    f = _f_of(f)
    value = wplus_functional(state, f, t, pkg)
    n = state.n
    rmin = float(np.min(pkg.scalar_total))
    bound = t * rmin + n + 0.5 * n * math.log(4 * math.pi) - math.log(
        t ** (-n / 2) * state.volume())
    return value, bound, value - bound


@dataclass
class FunctionalSample:
    t: float
    value: float
    dissipation: float
    fd_derivative: float
    mass: float


def fd_derivative(times, values):
    """Five-point (fourth-order) derivative on arbitrary nodes; one-sided near the ends."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    m = len(times)
    out = np.full(m, np.nan)
    if m < 5:
        return out
    for k in range(m):
        lo = min(max(k - 2, 0), m - 5)
        x = times[lo:lo + 5]
        y = values[lo:lo + 5]
        x0 = times[k]
        # derivative of the Lagrange interpolant at x0
        d = 0.0
        for j in range(5):
            others = [x[i] for i in range(5) if i != j]
            denom = np.prod([x[j] - xi for xi in others])
            num = 0.0
            for skip in range(4):
                num += np.prod([x0 - others[i] for i in range(4) if i != skip])
            d += y[j] * num / denom
        out[k] = d
    return out


def write_samples_csv(path, samples) -> None:
    """CSV with columns t, value, dissipation, fd_derivative, mass (round-trip precision)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value", "dissipation", "fd_derivative", "mass"])
        for s in samples:
            w.writerow([repr(float(s.t)), repr(float(s.value)), repr(float(s.dissipation)),
                        repr(float(s.fd_derivative)), repr(float(s.mass))])

