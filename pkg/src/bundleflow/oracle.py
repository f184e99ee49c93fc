"""Independent total-space curvature check.

Builds the full ``(N + n)``-dimensional metric

    G_ij (dx^i + A^i)(dx^j + A^j) + g_ab dx^a dx^b

literally on a small coordinate patch around one node, using high-degree
Lagrange interpolation of the stored fields, and differentiates it with
nested sixth-order finite differences.  Nothing here shares code with the
reduced formulas in :mod:`bundleflow.curvature`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DomainError, transport
from .state import BundleState

__all__ = ["OracleResult", "total_space_oracle"]

_HALF = 6  # interpolation uses 2*_HALF + 1 nodes per axis
_D1 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])


@dataclass
class OracleResult:
    """Curvature at one node, fiber coordinates first then base coordinates."""

    riemann: np.ndarray
    ricci: np.ndarray
    scalar: float
    metric: np.ndarray

    def blocks(self, N: int):
        r = self.ricci
        return r[:N, :N], r[:N, N:], r[N:, N:]


def _lagrange_weights(nodes, x):
    w = np.ones(len(nodes))
    for j, xj in enumerate(nodes):
        for m, xm in enumerate(nodes):
            if m != j:
                w[j] *= (x - xm) / (xj - xm)
    return w


def _sample(field, idx0, state, signature):
    """Field values on the (2*_HALF+1)^n patch around ``idx0`` (seam-aware)."""
    dom = state.domain
    offsets = np.arange(-_HALF, _HALF + 1)
    if dom.dim == 1:
        out = []
        n0 = dom.sizes[0]
        rho = dom.rho(state.N) if dom.twisted else None
        for o in offsets:
            j = idx0[0] + o
            wraps, base = divmod(j, n0)
            v = field[base]
            if rho is not None and signature:
                for _ in range(abs(wraps)):
                    v = transport(v, signature, rho, 1 if wraps > 0 else -1)
            out.append(v)
        return np.array(out)
    ii = (idx0[0] + offsets) % dom.sizes[0]
    jj = (idx0[1] + offsets) % dom.sizes[1]
    return field[np.ix_(ii, jj)]


class _Patch:
    def __init__(self, state: BundleState, node):
        dom = state.domain
        self.n, self.N = dom.dim, state.N
        self.h = np.array(dom.spacing)
        self.G = _sample(state.G, node, state, "ll")
        self.g = _sample(state.g, node, state, "bb")
        a = _sample(state.a, node, state, "ub")
        centre = (_HALF,) * self.n
        self.a = a - a[centre]  # gauge: connection vanishes at the node
        self.F_bg = np.asarray(state.F_bg)
        self.nodes = [np.arange(-_HALF, _HALF + 1) * h for h in self.h]

    def _interp(self, values, x):
        w = _lagrange_weights(self.nodes[0], x[0])
        out = np.tensordot(w, values, axes=(0, 0))
        if self.n == 2:
            w2 = _lagrange_weights(self.nodes[1], x[1])
            out = np.tensordot(w2, out, axes=(0, 0))
        return out

    def metric(self, x):
        """Total metric at local offset ``x`` from the node."""
        G = self._interp(self.G, x)
        g = self._interp(self.g, x)
        A = self._interp(self.a, x)  # (N, n)
        if self.n == 2 and self.N:
            c = self.F_bg[:, 0, 1]
            A = A + 0.5 * np.outer(c, [-x[1], x[0]])
        N, n = self.N, self.n
        out = np.zeros((N + n, N + n))
        out[:N, :N] = G
        GA = G @ A
        out[:N, N:] = GA
        out[N:, :N] = GA.T
        out[N:, N:] = g + A.T @ GA
        return out


def _fd(fn, x, axis, delta):
    acc = 0.0
    for k, c in enumerate(_D1):
        if c == 0.0:
            continue
        y = np.array(x, dtype=float)
        y[axis] += (k - 3) * delta
        acc = acc + c * fn(y)
    return acc / delta


def total_space_oracle(state: BundleState, node, probe_radius: float | None = None):
    """Full Riemann, Ricci and scalar curvature of the total space at ``node``.

    ``probe_radius`` is the farthest distance (in base coordinates) at which
    the metric is sampled; it must not exceed one grid spacing, which keeps all
    probes inside the central cell of the interpolation patch.
    """
    dom = state.domain
    if not dom.is_grid:
        raise DomainError("the oracle needs a grid-mode domain")
    node = tuple(int(i) for i in np.atleast_1d(node))
    if len(node) != dom.dim:
        raise DomainError("node index must have one entry per base axis")
    hmin = min(dom.spacing)
    if probe_radius is None:
        probe_radius = 0.6 * hmin
    if not 0 < probe_radius <= hmin:
        raise DomainError("probe stencil exits the smooth-interpolation region")
    delta = probe_radius / 6.0  # nested 3-point legs reach 6 * delta
    patch = _Patch(state, node)
    N, n = patch.N, patch.n
    D = N + n
    x0 = np.zeros(n)

    def dmetric(x):
        # d[c] = derivative of the total metric along coordinate c (fiber ones vanish)
        d = np.zeros((D, D, D))
        for a in range(n):
            d[N + a] = _fd(patch.metric, x, a, delta)
        return d

    def gamma(x):
        gb = patch.metric(x)
        gi = np.linalg.inv(gb)
        d = dmetric(x)  # d[c, p, q]
        lower = np.einsum("plq->lpq", d) + np.einsum("qlp->lpq", d) - d
        return 0.5 * np.einsum("sl,lpq->spq", gi, lower)

    gb0 = patch.metric(x0)
    Gam = gamma(x0)
    dGam = np.zeros((D, D, D, D))  # [m, r, p, q]
    for a in range(n):
        dGam[N + a] = _fd(gamma, x0, a, delta)
    up = (
        np.einsum("mrvs->rsmv", dGam)
        - np.einsum("vrms->rsmv", dGam)
        + np.einsum("rml,lvs->rsmv", Gam, Gam)
        - np.einsum("rvl,lms->rsmv", Gam, Gam)
    )
    riem = np.einsum("kr,rsmv->ksmv", gb0, up)
    ric = np.einsum("rsrv->sv", up)
    scal = float(np.einsum("sv,sv->", np.linalg.inv(gb0), ric))
    return OracleResult(riemann=riem, ricci=ric, scalar=scal, metric=gb0)
