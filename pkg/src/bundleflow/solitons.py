"""Closed-form expanding solitons, seeded perturbations, residuals and distances.

Families (all exact solutions of the reduced flow):

``flat``
    constant fields.
``sol`` / ``generalized_sol``
    circle base, ``G(b) = exp(b X)`` with ``X`` diagonal and traceless,
    ``g = (t/2) tr(X^2) db^2``, holonomy ``exp(L X / 2)``.
``nil``
    torus base, one fiber, background curvature ``c dy^dz``,
    ``G = 1 / (3 c^2 t^(1/3))`` and ``g = t^(1/3) (dy^2 + dz^2)``.
    The ``c``-dependence: the homogeneous ODE conserves ``G * q`` (``g = q I``)
    and has ``G = Q^2 t^(-1/3) / (3 c^2)``, ``q = Q t^(1/3)``; we fix ``Q = 1``.
``h2xr``
    homogeneous hyperbolic plane times a line, ``g = -2 k t g_unit``, ``G = 1``.
``h3``
    homogeneous hyperbolic space, ``g = -4 k t g_unit``, no fiber.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ._tensor import contract
from .curvature import curvature_package, gradient
from .flow import covariant_hessian_scalar
from .grid import BaseDomain, DomainError
from .state import BundleState

__all__ = [
    "KINDS",
    "SolitonSpec",
    "make_soliton",
    "perturb",
    "band_limited_field",
    "ResidualReport",
    "harmonic_einstein_residual",
    "soliton_distance",
]

KINDS = ("flat", "nil", "sol", "h2xr", "h3", "generalized_sol")

_es = contract


@dataclass(frozen=True, eq=False)
class SolitonSpec:
    """One member of a closed-form family plus the base it lives on.

    ``X`` is the diagonal of the traceless generator (sol kinds), ``c`` the
    Euler density (nil), ``kappa`` the unit-metric base curvature (h2xr, h3).
    For ``flat`` the fiber dimension is ``n_fiber``.
    """

    kind: str
    domain: BaseDomain | None = None
    X: tuple | None = None
    c: float | None = None
    kappa: float | None = None
    n_fiber: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown soliton kind {self.kind!r}")
        if self.kind in ("sol", "generalized_sol"):
            X = tuple(float(x) for x in (self.X if self.X is not None else (-2.0, 2.0)))
            if abs(sum(X)) > 1e-12 * max(1.0, max(abs(x) for x in X)):
                raise ValueError("X must be traceless")
            if self.kind == "sol" and len(X) != 2:
                raise ValueError("sol has a two-dimensional fiber; use generalized_sol")
            if all(x == 0 for x in X):
                raise ValueError("X must be nonzero")
            object.__setattr__(self, "X", X)
        if self.kind == "nil":
            c = 1.0 if self.c is None else float(self.c)
            if c == 0:
                raise ValueError("nil needs nonzero Euler density c")
            object.__setattr__(self, "c", c)
        if self.kind in ("h2xr", "h3"):
            k = -1.0 if self.kappa is None else float(self.kappa)
            if not k < 0:
                raise ValueError("hyperbolic kinds need negative curvature")
            object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "domain", self._resolve_domain(self.domain))

    def _resolve_domain(self, dom):
        k = self.kind
        if k in ("sol", "generalized_sol"):
            sizes, periods, order = (256,), (1.0,), 4
            if dom is not None:
                if dom.dim != 1 or not dom.is_grid:
                    raise DomainError("sol kinds live on a circle base in grid mode")
                sizes, periods, order = dom.sizes, dom.periods, dom.order
            hol = np.diag(np.exp(periods[0] * np.array(self.X) / 2))
            return BaseDomain(dim=1, sizes=sizes, periods=periods, holonomy=hol, order=order)
        if k == "nil":
            if dom is None:
                return BaseDomain(dim=2, sizes=(64, 64), periods=(1.0, 1.0))
            if dom.dim != 2 or not dom.is_grid:
                raise DomainError("nil lives on a torus base in grid mode")
            return dom
        if k in ("h2xr", "h3"):
            n = 2 if k == "h2xr" else 3
            return BaseDomain(dim=n, mode="homogeneous", curvature=self.kappa)
        if dom is None:
            return BaseDomain(dim=1, sizes=(64,), periods=(1.0,))
        if dom.twisted:
            raise DomainError("the flat family has trivial holonomy")
        return dom

    @property
    def N(self) -> int:
        return {"sol": 2, "generalized_sol": len(self.X or ()), "nil": 1, "h2xr": 1,
                "h3": 0}.get(self.kind, self.n_fiber)

    def describe(self) -> dict:
        return {"kind": self.kind, "X": None if self.X is None else list(self.X),
                "c": self.c, "kappa": self.kappa, "n_fiber": self.n_fiber,
                "domain": self.domain.descriptor()}


def make_soliton(spec: SolitonSpec, t: float) -> BundleState:
    """Closed-form member of ``spec``'s family at time ``t``."""
    if not t > 0:
        raise ValueError("soliton time must be positive")
    dom = spec.domain
    grid = dom.shape
    n = dom.dim
    N = spec.N
    if spec.kind in ("sol", "generalized_sol"):
        (b,) = dom.coordinates()
        X = np.array(spec.X)
        G = np.zeros(grid + (N, N))
        G[..., np.arange(N), np.arange(N)] = np.exp(b[..., None] * X)
        g = np.full(grid + (1, 1), 0.5 * t * float(np.sum(X**2)))
        return BundleState(G=G, a=None, g=g, t=t, domain=dom)
    if spec.kind == "nil":
        c = spec.c
        G = np.full(grid + (1, 1), 1.0 / (3 * c * c * t ** (1 / 3)))
        g = np.broadcast_to(t ** (1 / 3) * np.eye(2), grid + (2, 2))
        F_bg = np.array([[[0.0, c], [-c, 0.0]]])
        return BundleState(G=G, a=None, g=g, t=t, domain=dom, F_bg=F_bg)
    if spec.kind in ("h2xr", "h3"):
        mu = -2 * (n - 1) * spec.kappa * t
        return BundleState(G=np.eye(N), a=None, g=mu * np.eye(n), t=t, domain=dom)
    G = np.broadcast_to(np.eye(N), grid + (N, N))
    g = np.broadcast_to(np.eye(n), grid + (n, n))
    return BundleState(G=G, a=None, g=g, t=t, domain=dom)


def band_limited_field(domain: BaseDomain, rng: np.random.Generator, modes: int = 4):
    """Zero-mean trigonometric field from the lowest ``modes`` wave numbers, sup-norm 1."""
    if not domain.is_grid:
        return np.zeros(())
    coords = domain.coordinates()
    if domain.dim == 1:
        waves = [(k,) for k in range(1, modes + 1)]
    else:
        waves = [(kx, ky) for kx in range(-modes, modes + 1) for ky in range(0, modes + 1)
                 if (ky > 0 or kx > 0) and kx * kx + ky * ky <= modes]
    out = np.zeros(domain.shape)
    for k in waves:
        phase = sum(2 * np.pi * kk * x / L for kk, x, L in zip(k, coords, domain.periods))
        out += rng.normal() * np.cos(phase) + rng.normal() * np.sin(phase)
    return out / np.max(np.abs(out))


def _sym_field(domain, N, rng, modes):
    H = np.zeros(domain.shape + (N, N))
    for i in range(N):
        for j in range(i, N):
            H[..., i, j] = band_limited_field(domain, rng, modes)
            H[..., j, i] = H[..., i, j]
    return H


def _expm_sym(H):
    w, V = np.linalg.eigh(H)
    return _es("...ik,...k,...jk->...ij", V, np.exp(w), V)


def perturb(state: BundleState, eps: float, seed: int = 0, modes: int = 4,
            fields: str = "auto") -> BundleState:
    """Seeded smooth perturbation of size ``eps`` that keeps both metrics SPD.

    On a twisted circle only ``G`` is perturbed, by conjugating with the
    square root of the unperturbed field so the seam rule is preserved.
    Elsewhere ``G`` and ``g`` get multiplicative (exponential) perturbations
    and the periodic connection an additive one.  All perturbations have
    zero mean.  ``fields`` may restrict the perturbed fields (e.g. ``"G"``).
    """
    rng = np.random.default_rng(seed)
    dom = state.domain
    if eps == 0:
        return state
    if not dom.is_grid:
        N, n = state.N, state.n
        h = rng.normal(size=(N, N))
        h = (h + h.T) / 2
        return state.with_fields(G=state.G @ _expm_sym(eps * h) if N else state.G,
                                 g=state.g * (1 + eps * rng.normal()))
    which = set("Gag") if fields == "auto" else set(fields)
    N = state.N
    G, a, g = state.G, state.a, state.g
    if dom.twisted:
        which &= {"G"}
    if "G" in which and N:
        H = _sym_field(dom, N, rng, modes)
        w, V = np.linalg.eigh(G)
        root = _es("...ik,...k,...jk->...ij", V, np.sqrt(w), V)
        G = root @ _expm_sym(eps * H) @ root
    if "g" in which:
        p = band_limited_field(dom, rng, modes)
        g = g * np.exp(eps * p)[(...,) + (None, None)]
    if "a" in which and N:
        a = a.copy()
        for i in range(N):
            for al in range(dom.dim):
                a[..., i, al] = a[..., i, al] + eps * band_limited_field(dom, rng, modes)
    return state.with_fields(G=G, a=a, g=g)


@dataclass
class ResidualReport:
    """Sup norms of the harmonic-Einstein left-hand sides and diagnostics.

    ``res_G`` uses the fiber-invariant norm ``sqrt(tr(G^-1 T G^-1 T))``,
    ``res_g`` the base norm ``sqrt(g^ac g^bd S_ab S_cd)``.
    """

    res_G: float
    res_g: float
    res_F: float
    res_detG: float

    @property
    def total(self) -> float:
        return max(self.res_G, self.res_g)

    def as_dict(self):
        return {"res_G": self.res_G, "res_g": self.res_g, "res_F": self.res_F,
                "res_detG": self.res_detG}


def _norm_fiber(T, Gi):
    if T.shape[-1] == 0:
        return np.zeros(T.shape[:-2])
    X = Gi @ T
    return np.sqrt(np.abs(_es("...ij,...ji->...", X, X)))


def _norm_base(S, gi):
    return np.sqrt(np.abs(_es("...ac,...bd,...ab,...cd->...", gi, gi, S, S)))


def harmonic_einstein_residual(state: BundleState, regime: str = "expander",
                               param: float | None = None, f=None) -> ResidualReport:
    """Residuals of the steady, shrinker or expander harmonic-Einstein system.

    ``param`` is ``tau`` for the shrinker and the flow time for the expander
    (defaults to ``state.t``).  ``f`` enters only the shrinker equations and
    defaults to a constant.
    """
    pkg = curvature_package(state)
    gi, Gi, dG = pkg.g_inv, pkg.G_inv, pkg.dG
    T = _es("...ab,...abij->...ij", gi, pkg.hessian_G) - _es(
        "...ab,...aik,...kl,...blj->...ij", gi, dG, Gi, dG
    )
    S = pkg.ricci_base - 0.25 * pkg.Q
    if regime == "steady":
        pass
    elif regime == "shrinker":
        if param is None or not param > 0:
            raise ValueError("shrinker residual needs tau > 0")
        if f is not None:
            df = gradient(np.asarray(f, dtype=float), state.domain)
            T = T - _es("...ab,...aij,...b->...ij", gi, dG, df)
            S = S + covariant_hessian_scalar(f, pkg.christoffel, state.domain)
        S = S - state.g / (2 * param)
    elif regime == "expander":
        t = state.t if param is None else param
        if not t > 0:
            raise ValueError("expander residual needs t > 0")
        S = S + state.g / (2 * t)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    logdet = np.log(np.linalg.det(state.G)) if state.N else np.zeros(state.domain.shape)
    return ResidualReport(
        res_G=float(np.max(_norm_fiber(T, Gi))) if state.N else 0.0,
        res_g=float(np.max(_norm_base(S, gi))),
        res_F=float(np.sqrt(max(float(np.max(pkg.F_sq)), 0.0))) if pkg.F_sq.size else 0.0,
        res_detG=float(np.ptp(logdet)) if np.ndim(logdet) else 0.0,
    )


def _arclength_fraction(g, domain):
    """sigma(b) in [0, 1): normalized arclength from node 0, spectrally integrated."""
    w = np.sqrt(g[:, 0, 0])
    n = len(w)
    L = domain.periods[0]
    total = float(np.mean(w)) * L
    coef = np.fft.rfft(w - np.mean(w)) / n
    b = np.arange(n) * L / n
    integral = np.zeros(n)
    for kk in range(1, len(coef)):
        weight = 1.0 if (n % 2 == 1 or kk < n // 2) else 0.5
        omega = 2 * np.pi * kk / L
        c = coef[kk] * 2 * weight
        # antiderivative of Re(c e^{i omega b}) that vanishes at b = 0
        integral += np.real(c * (np.exp(1j * omega * b) - 1) / (1j * omega))
    s = np.mean(w) * b + integral
    return s / total, total


def soliton_distance(state: BundleState, spec: SolitonSpec) -> float:
    """Normalized sup distance from ``state`` to the family member at ``state.t``.

    Circle-base (sol) families: distance is measured after reparametrizing by
    normalized arclength, which is the only coordinate the flow does not fix,
    and minimized over base translations; the base length enters through its
    relative deviation from the soliton value.  Other families: relative sup
    deviations of ``G``, ``g`` and the connection curvature, all of which are
    constant on the reference so translations act trivially.
    """
    ref = make_soliton(spec, state.t)
    if state.domain.shape != ref.domain.shape or state.N != ref.N:
        raise DomainError("state is not compatible with the soliton family")
    if spec.kind in ("sol", "generalized_sol"):
        X = np.array(spec.X)
        L = state.domain.periods[0]
        sigma, length = _arclength_fraction(state.g, state.domain)
        half = np.exp(-0.5 * sigma[:, None] * L * X)  # diagonal conjugator
        P = state.G * half[:, :, None] * half[:, None, :]

        def dist(c):
            target = np.diag(np.exp(c * X))
            scale = float(np.max(target))
            return float(np.max(np.abs(P - target))) / scale

        grid_c = np.linspace(-L, L, 81)
        vals = [dist(c) for c in grid_c]
        c0 = grid_c[int(np.argmin(vals))]
        step = grid_c[1] - grid_c[0]
        res = minimize_scalar(dist, bounds=(c0 - step, c0 + step), method="bounded",
                              options={"xatol": 1e-13})
        # least-squares fit of log diag P against X; exact for pure translates
        diag = np.log(np.abs(np.diagonal(P, axis1=1, axis2=2)))
        c_fit = float(np.mean(diag @ X) / np.sum(X**2))
        d_shape = min(res.fun, min(vals), dist(c_fit))
        ref_len = L * np.sqrt(0.5 * state.t * float(np.sum(X**2)))
        return max(d_shape, abs(length - ref_len) / ref_len)
    pkg_s = curvature_package(state)
    pkg_r = curvature_package(ref)

    def rel(x, y):
        scale = float(np.max(np.abs(y))) if y.size else 0.0
        if scale == 0.0:
            return float(np.max(np.abs(x))) if x.size else 0.0
        return float(np.max(np.abs(x - y))) / scale

    return max(rel(state.G, ref.G), rel(state.g, ref.g), rel(pkg_s.F, pkg_r.F))
