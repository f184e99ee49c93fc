"""Reduced curvature of an invariant metric on a twisted abelian bundle.

Given the fiber metric ``G``, connection curvature ``F`` and base metric ``g``
this module evaluates the base Christoffel symbols, the covariant Hessian of
``G`` (fiber indices are *not* Christoffel corrected), the base curvature and
the total-space Ricci and scalar curvature in the horizontal/vertical frame.

Index letters in the einsum strings: ``i j k l m`` fiber, ``a b c d s`` base.
All A-dependence enters through ``F = F_bg + da`` and its covariant
derivative, so the results are gauge independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._tensor import contract, inv
from .grid import BaseDomain, derive
from .state import BundleState

__all__ = [
    "CurvaturePackage",
    "gradient",
    "hessian",
    "christoffel",
    "covariant_hessian_G",
    "connection_curvature",
    "base_curvature",
    "curvature_package",
    "total_riemann",
]

_es = contract


def gradient(field, domain: BaseDomain, signature: str = ""):
    """Stack of first derivatives, derivative index right after the grid axes."""
    field = np.asarray(field, dtype=float)
    k = len(domain.shape)
    if not domain.is_grid:
        return np.zeros(field.shape[:k] + (domain.dim,) + field.shape[k:])
    parts = [derive(field, ax, "first", domain, signature) for ax in range(domain.dim)]
    return np.stack(parts, axis=k)


def hessian(field, domain: BaseDomain, signature: str = ""):
    """Coordinate second derivatives ``d_a d_b field`` (pure + mixed)."""
    field = np.asarray(field, dtype=float)
    k = len(domain.shape)
    n = domain.dim
    out = np.zeros(field.shape[:k] + (n, n) + field.shape[k:])
    if not domain.is_grid:
        return out
    first = [derive(field, ax, "first", domain, signature) for ax in range(n)] if n > 1 else []
    for a in range(n):
        out[(slice(None),) * k + (a, a)] = derive(
            field, a, "second", domain, signature
        )
        for b in range(a + 1, n):
            mixed = derive(first[a], b, "first", domain, signature)
            out[(slice(None),) * k + (a, b)] = mixed
            out[(slice(None),) * k + (b, a)] = mixed
    return out


def christoffel(g, domain: BaseDomain):
    """Gamma^s_ab = 1/2 g^{sl} (d_a g_lb + d_b g_la - d_l g_ab), shape grid + (s, a, b)."""
    g = np.asarray(g, dtype=float)
    gi = inv(g)
    dg = gradient(g, domain, "bb")  # [c, a, b] = d_c g_ab
    # lower[l, a, b] = d_a g_lb + d_b g_la - d_l g_ab
    lower = _es("...alb->...lab", dg) + _es("...bla->...lab", dg) - dg
    return 0.5 * _es("...sl,...lab->...sab", gi, lower)


def covariant_hessian_G(G, Gamma, domain: BaseDomain, dG=None):
    """G_{ij;ab} = G_{ij,ab} - Gamma^s_ab G_{ij,s}; shape grid + (a, b, i, j)."""
    if dG is None:
        dG = gradient(G, domain, "ll")
    ddG = hessian(G, domain, "ll")
    return ddG - _es("...sab,...sij->...abij", Gamma, dG)


def connection_curvature(state: BundleState):
    """F^i_ab = F_bg^i_ab + d_a a^i_b - d_b a^i_a; shape grid + (i, a, b)."""
    grid = state.domain.shape
    F = np.broadcast_to(state.F_bg, grid + state.F_bg.shape).copy()
    if state.domain.is_grid and state.a.size and state.n > 1:
        da = gradient(state.a, state.domain, "ub")  # [a, i, b] = d_a a^i_b
        curl = _es("...aib->...iab", da)
        F += curl - np.swapaxes(curl, -1, -2)
    return F


def base_curvature(g, domain: BaseDomain, Gamma=None, want_riemann=False):
    """Base Ricci tensor, scalar curvature and optionally R_{abcd}.

    Sign convention: R_abab is the sectional curvature times |e_a ^ e_b|^2;
    Ricci R_bd = g^{ac} R_abcd.
    """
    g = np.asarray(g, dtype=float)
    gi = inv(g)
    n = domain.dim
    if not domain.is_grid:
        mu = np.trace(g, axis1=-2, axis2=-1) / n
        K = domain.curvature / mu
        ric = (n - 1) * K[..., None, None] * g
        riem = None
        if want_riemann:
            riem = K[..., None, None, None, None] * (
                _es("...ac,...bd->...abcd", g, g) - _es("...ad,...bc->...abcd", g, g)
            )
        scal = _es("...ab,...ab->...", gi, ric)
        return ric, scal, riem
    if n == 1:
        # a curve carries no intrinsic curvature
        zero = np.zeros(g.shape)
        riem = np.zeros(g.shape[:-2] + (1, 1, 1, 1)) if want_riemann else None
        return zero, zero[..., 0, 0], riem
    if Gamma is None:
        Gamma = christoffel(g, domain)
    dGam = gradient(Gamma, domain, "bbb")  # [m, r, a, b] = d_m Gamma^r_ab
    # R^r_{s m v} = d_m Gam^r_{v s} - d_v Gam^r_{m s} + Gam^r_{m l} Gam^l_{v s} - Gam^r_{v l} Gam^l_{m s}
    ric = (
        _es("...rrvs->...sv", dGam)
        - _es("...vrrs->...sv", dGam)
        + _es("...rrl,...lvs->...sv", Gamma, Gamma)
        - _es("...rvl,...lrs->...sv", Gamma, Gamma)
    )
    ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    riem = None
    if want_riemann:
        up = (
            _es("...mrvs->...rsmv", dGam)
            - _es("...vrms->...rsmv", dGam)
            + _es("...rml,...lvs->...rsmv", Gamma, Gamma)
            - _es("...rvl,...lms->...rsmv", Gamma, Gamma)
        )
        riem = _es("...kr,...rsmv->...ksmv", g, up)
    scal = _es("...ab,...ab->...", gi, ric)
    return ric, scal, riem


@dataclass
class CurvaturePackage:
    """Per-node reduced curvature quantities plus reusable intermediates.

    Layouts (after the grid axes): ``christoffel[s,a,b]``,
    ``hessian_G[a,b,i,j]``, ``F[i,a,b]``, ``F_cov_deriv[i,a,b,c]`` (= F^i_{ab;c}),
    ``ricci_mixed[i,a]``.
    """

    christoffel: np.ndarray
    hessian_G: np.ndarray
    F: np.ndarray
    F_cov_deriv: np.ndarray
    riemann_base: np.ndarray | None
    ricci_base: np.ndarray
    scalar_base: np.ndarray
    ricci_fiber: np.ndarray
    ricci_mixed: np.ndarray
    ricci_basecomp: np.ndarray
    scalar_total: np.ndarray
    # intermediates
    g_inv: np.ndarray
    G_inv: np.ndarray
    dG: np.ndarray
    M: np.ndarray  # M[a] = G^{-1} d_a G
    trM: np.ndarray  # tr(G^{-1} d_a G) = d_a ln det G
    Q: np.ndarray  # Q_ab = tr(M_a M_b)
    F_sq: np.ndarray  # g^{ac} g^{bd} G_ij F^i_ab F^j_cd


def curvature_package(state: BundleState, want_riemann: bool = False,
                      want_total: bool = True) -> CurvaturePackage:
    """Evaluate every reduced curvature quantity on ``state``.

    ``want_total=False`` skips the total-space Ricci blocks and scalar
    curvature (left as ``None``); the flow right-hand sides do not need them.
    """
    dom = state.domain
    G, g = state.G, state.g
    gi = inv(g)
    Gi = inv(G) if state.N else np.zeros_like(G)
    if dom.is_grid:
        Gam = christoffel(g, dom)
    else:
        Gam = np.zeros(dom.shape + (dom.dim,) * 3)
    dG = gradient(G, dom, "ll")
    hess = covariant_hessian_G(G, Gam, dom, dG=dG)
    F = connection_curvature(state)
    flat_connection = not np.any(F)
    if dom.is_grid and F.size and not flat_connection:
        dF = gradient(F, dom, "ubb")  # [c, i, a, b]
        Fcov = (
            _es("...ciab->...iabc", dF)
            - _es("...sca,...isb->...iabc", Gam, F)
            - _es("...scb,...ias->...iabc", Gam, F)
        )
    else:
        Fcov = np.zeros(F.shape + (dom.dim,))
    ric, scal, riem = base_curvature(g, dom, Gamma=Gam if dom.is_grid else None,
                                     want_riemann=want_riemann)

    M = _es("...ij,...ajk->...aik", Gi, dG)
    trM = _es("...aii->...a", M)
    Q = _es("...aij,...bji->...ab", M, M)
    GF = _es("...ik,...kab->...iab", G, F)
    if flat_connection:
        F_sq = np.zeros(dom.shape)
    else:
        F_sq = _es("...ac,...bd,...iab,...icd->...", gi, gi, GF, F)

    r_fib = r_mix = r_base = scal_tot = None
    if want_total:
        r_fib, r_mix, r_base, scal_tot = _total_blocks(
            G, gi, Gi, dG, hess, F, Fcov, GF, trM, Q, F_sq, ric, scal)
    return CurvaturePackage(
        christoffel=Gam,
        hessian_G=hess,
        F=F,
        F_cov_deriv=Fcov,
        riemann_base=riem,
        ricci_base=ric,
        scalar_base=scal,
        ricci_fiber=r_fib,
        ricci_mixed=r_mix,
        ricci_basecomp=r_base,
        scalar_total=scal_tot,
        g_inv=gi,
        G_inv=Gi,
        dG=dG,
        M=M,
        trM=trM,
        Q=Q,
        F_sq=F_sq,
    )


def _total_blocks(G, gi, Gi, dG, hess, F, Fcov, GF, trM, Q, F_sq, ric, scal):
    # total-space Ricci, fiber block
    r_fib = (
        -0.5 * _es("...ab,...abij->...ij", gi, hess)
        - 0.25 * _es("...ab,...a,...bij->...ij", gi, trM, dG)
        + 0.5 * _es("...ab,...aik,...kl,...blj->...ij", gi, dG, Gi, dG)
        + 0.25 * _es("...ac,...bd,...iab,...jcd->...ij", gi, gi, GF, GF)
    )
    # mixed block R_{i a}
    r_mix = (
        0.5 * _es("...cd,...ik,...kacd->...ia", gi, G, Fcov)
        + 0.5 * _es("...cd,...cik,...kad->...ia", gi, dG, F)
        + 0.25 * _es("...cd,...c,...iad->...ia", gi, trM, GF)
    )
    # base block
    r_base = (
        ric
        - 0.5 * _es("...ij,...abji->...ab", Gi, hess)
        + 0.25 * Q
        - 0.5 * _es("...cd,...iac,...ibd->...ab", gi, GF, F)
    )
    trace_hess = _es("...ab,...ij,...abji->...", gi, Gi, hess)
    scal_tot = (
        scal
        - trace_hess
        + 0.75 * _es("...ab,...ab->...", gi, Q)
        - 0.25 * _es("...ab,...a,...b->...", gi, trM, trM)
        - 0.25 * F_sq
    )
    return r_fib, r_mix, r_base, scal_tot


def total_riemann(state: BundleState, pkg: CurvaturePackage | None = None):
    """Full total-space curvature tensor in the (fiber, base) frame.

    Returns an array of shape grid + (D, D, D, D), ``D = N + n``, with fiber
    indices first.  Blocks are filled from the reduced expressions and
    completed by the algebraic symmetries of a curvature tensor.
    """
    if pkg is None or pkg.riemann_base is None:
        pkg = curvature_package(state, want_riemann=True)
    N, n = state.N, state.n
    G, gi, Gi, dG, F = state.G, pkg.g_inv, pkg.G_inv, pkg.dG, pkg.F
    hess, Fcov = pkg.hessian_G, pkg.F_cov_deriv
    GF = _es("...ik,...kab->...iab", G, F)
    grid = state.domain.shape
    D = N + n
    R = np.zeros(grid + (D,) * 4)
    fi, ba = slice(0, N), slice(N, D)

    r_ijkl = -0.25 * _es("...ab,...aik,...bjl->...ijkl", gi, dG, dG) + 0.25 * _es(
        "...ab,...ail,...bjk->...ijkl", gi, dG, dG
    )
    r_ijka = 0.25 * _es("...bc,...jm,...bik,...mac->...ijka", gi, G, dG, F) - 0.25 * _es(
        "...bc,...im,...bjk,...mac->...ijka", gi, G, dG, F
    )
    r_ijab = (
        -0.25 * _es("...mk,...aim,...bkj->...ijab", Gi, dG, dG)
        + 0.25 * _es("...mk,...bim,...akj->...ijab", Gi, dG, dG)
        - 0.25 * _es("...cd,...iac,...jbd->...ijab", gi, GF, GF)
        + 0.25 * _es("...cd,...ibc,...jad->...ijab", gi, GF, GF)
    )
    r_iajb = (
        -0.5 * _es("...abij->...iajb", hess)
        + 0.25 * _es("...kl,...bik,...ajl->...iajb", Gi, dG, dG)
        + 0.25 * _es("...cd,...iac,...jbd->...iajb", gi, GF, GF)
    )
    r_iabc = (
        0.5 * _es("...ij,...jbca->...iabc", G, Fcov)
        + 0.5 * _es("...aij,...jbc->...iabc", dG, F)
        + 0.25 * _es("...bij,...jac->...iabc", dG, F)
        - 0.25 * _es("...cij,...jab->...iabc", dG, F)
    )
    r_abcd = (
        pkg.riemann_base
        - 0.5 * _es("...iab,...icd->...abcd", GF, F)
        - 0.25 * _es("...iac,...ibd->...abcd", GF, F)
        + 0.25 * _es("...iad,...ibc->...abcd", GF, F)
    )

    def put(block, idx, perm_sign):
        for perm, sign in perm_sign:
            target = tuple(idx[p] for p in perm)
            axes = tuple(len(grid) + p for p in perm)
            R[(...,) + target] = sign * np.transpose(
                block, tuple(range(len(grid))) + axes
            )

    def sym(block, idx):
        # R_{pqrs} = -R_{qprs} = -R_{pqsr} = R_{rspq}
        perms = [((0, 1, 2, 3), 1), ((1, 0, 2, 3), -1), ((0, 1, 3, 2), -1),
                 ((1, 0, 3, 2), 1), ((2, 3, 0, 1), 1), ((3, 2, 0, 1), -1),
                 ((2, 3, 1, 0), -1), ((3, 2, 1, 0), 1)]
        put(block, idx, perms)

    sym(r_ijkl, (fi, fi, fi, fi))
    sym(r_ijka, (fi, fi, fi, ba))
    sym(r_ijab, (fi, fi, ba, ba))
    sym(r_iajb, (fi, ba, fi, ba))
    sym(r_iabc, (fi, ba, ba, ba))
    sym(r_abcd, (ba, ba, ba, ba))
    return R


from .oracle import OracleResult, total_space_oracle  # noqa: E402  (re-export)

__all__ += ["OracleResult", "total_space_oracle"]
