"""Periodic structured grids over the base, derivative stencils and quadrature.

Fields live at the nodes of a node-centred periodic grid.  Trailing array
axes beyond the grid axes carry tensor indices; a *signature* string tells
:func:`derive` how each trailing axis behaves when a stencil leg crosses the
axis-0 seam of a twisted circle:

``'l'``
    lower fiber index, transported by ``rho.T``
``'u'``
    upper fiber index, transported by ``inv(rho)``
``'b'``
    base index (or any axis the holonomy does not act on)

The convention is ``G(b + L) = rho.T @ G(b) @ rho``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "BaseDomain",
    "Stencil",
    "derive",
    "transport",
    "integrate_base",
    "volume_element",
    "DomainError",
]


class DomainError(ValueError):
    """Raised for malformed domains or fields that do not fit a domain."""


# central coefficients for offsets -m..m
_FIRST = {
    2: [-1 / 2, 0.0, 1 / 2],
    4: [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12],
    6: [-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60],
    8: [1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280],
}
_SECOND = {
    2: [1.0, -2.0, 1.0],
    4: [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12],
    6: [1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90],
    8: [-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560],
}


@dataclass(frozen=True)
class Stencil:
    """Central finite-difference stencil of a given accuracy order."""

    order: int = 4
    axis: int = 0
    kind: str = "first"

    def __post_init__(self):
        if self.order not in _FIRST:
            raise DomainError(f"unsupported stencil order {self.order}")
        if self.kind not in ("first", "second"):
            raise DomainError(f"unknown stencil kind {self.kind!r}")

    @property
    def coefficients(self) -> np.ndarray:
        table = _FIRST if self.kind == "first" else _SECOND
        return np.array(table[self.order])

    @property
    def half_width(self) -> int:
        return self.order // 2


@dataclass(frozen=True, eq=False)
class BaseDomain:
    """Periodic base grid of dimension 1 or 2, or a homogeneous (gridless) base.

    In ``homogeneous`` mode the base is a constant-curvature space whose unit
    metric has sectional curvature ``curvature``; fields are single values and
    all spatial derivatives vanish.
    """

    dim: int
    sizes: tuple = ()
    periods: tuple = ()
    holonomy: np.ndarray | None = None
    mode: str = "grid"
    curvature: float = 0.0
    order: int = 4

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        periods = tuple(float(p) for p in self.periods)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "periods", periods)
        if self.mode not in ("grid", "homogeneous"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "grid":
            if self.dim not in (1, 2):
                raise DomainError("grid mode supports base dimension 1 or 2")
            if len(sizes) != self.dim or len(periods) != self.dim:
                raise DomainError("sizes and periods must have one entry per axis")
            if any(s < 8 for s in sizes):
                raise DomainError("grid mode needs at least 8 points per axis")
            if any(p <= 0 for p in periods):
                raise DomainError("periods must be positive")
            if self.order not in _FIRST:
                raise DomainError(f"unsupported stencil order {self.order}")
            if any(s <= self.order for s in sizes):
                raise DomainError("grid too small for the stencil order")
        else:
            if self.dim < 1:
                raise DomainError("homogeneous base needs dim >= 1")
            if sizes or periods:
                raise DomainError("homogeneous mode carries no grid")
        if self.holonomy is not None:
            rho = np.array(self.holonomy, dtype=float)
            if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
                raise DomainError("holonomy must be a square matrix")
            if abs(abs(np.linalg.det(rho)) - 1.0) > 1e-12:
                raise DomainError("holonomy must have |det| = 1")
            if not np.allclose(rho, np.eye(len(rho)), rtol=0, atol=0) and (
                self.dim != 1 or self.mode != "grid"
            ):
                raise DomainError("twisting is only supported over a circle base")
            rho.setflags(write=False)
            object.__setattr__(self, "holonomy", rho)

    def __eq__(self, other):
        if not isinstance(other, BaseDomain):
            return NotImplemented
        return self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(repr(self.descriptor()))

    @property
    def is_grid(self) -> bool:
        return self.mode == "grid"

    @property
    def twisted(self) -> bool:
        return self.holonomy is not None and not np.array_equal(
            self.holonomy, np.eye(len(self.holonomy))
        )

    @property
    def shape(self) -> tuple:
        return self.sizes if self.is_grid else ()

    @property
    def spacing(self) -> tuple:
        return tuple(p / s for p, s in zip(self.periods, self.sizes))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing)) if self.is_grid else 1.0

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates, one meshgrid array per axis (``ij`` indexing)."""
        axes = [np.arange(s) * h for s, h in zip(self.sizes, self.spacing)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def rho(self, n_fiber: int) -> np.ndarray:
        if self.holonomy is None:
            return np.eye(n_fiber)
        if len(self.holonomy) != n_fiber:
            raise DomainError("holonomy size does not match the fiber dimension")
        return np.asarray(self.holonomy)

    def stencil(self, axis: int, kind: str) -> Stencil:
        return self._stencils[(axis, kind)]

    @cached_property
    def _stencils(self):
        return {(ax, kind): Stencil(order=self.order, axis=ax, kind=kind)
                for ax in range(self.dim) for kind in ("first", "second")}

    @cached_property
    def seam_maps(self):
        """(rho.T, inv(rho), inv(rho).T, rho) for lower/upper indices, + then - crossing."""
        if self.holonomy is None:
            return None
        rho = np.asarray(self.holonomy)
        inv = np.linalg.inv(rho)
        return rho.T, inv, inv.T, rho

    def descriptor(self) -> dict:
        return {
            "dim": self.dim,
            "sizes": list(self.sizes),
            "periods": list(self.periods),
            "holonomy": None if self.holonomy is None else self.holonomy.tolist(),
            "mode": self.mode,
            "curvature": float(self.curvature),
            "order": self.order,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "BaseDomain":
        hol = d.get("holonomy")
        return cls(
            dim=int(d["dim"]),
            sizes=tuple(d.get("sizes", ())),
            periods=tuple(d.get("periods", ())),
            holonomy=None if hol is None else np.array(hol, dtype=float),
            mode=d.get("mode", "grid"),
            curvature=float(d.get("curvature", 0.0)),
            order=int(d.get("order", 4)),
        )


def _apply_on_axis(values, matrix, axis):
    # new[..., i, ...] = sum_j matrix[i, j] old[..., j, ...]
    moved = np.moveaxis(values, axis, -1)
    return np.moveaxis(moved @ matrix.T, -1, axis)


def transport(values, signature: str, rho: np.ndarray, direction: int = +1, maps=None):
    """Carry fiber-indexed values across the seam by one period.

    ``direction=+1`` maps values stored at ``b`` to their image at ``b + L``.
    ``maps`` optionally supplies precomputed ``BaseDomain.seam_maps``.
    """
    values = np.asarray(values, dtype=float)
    if not signature:
        return values
    if maps is None:
        inv = np.linalg.inv(rho)
        maps = (rho.T, inv, inv.T, rho)
    if direction > 0:
        lower, upper = maps[0], maps[1]
    else:
        lower, upper = maps[2], maps[3]
    offset = values.ndim - len(signature)
    out = values
    for k, kind in enumerate(signature):
        if kind == "l":
            out = _apply_on_axis(out, lower, offset + k)
        elif kind == "u":
            out = _apply_on_axis(out, upper, offset + k)
        elif kind != "b":
            raise DomainError(f"bad signature character {kind!r}")
    return out


def _fiber_size(values, signature):
    offset = values.ndim - len(signature)
    for k, kind in enumerate(signature):
        if kind in "lu":
            return values.shape[offset + k]
    return None


def derive(field, axis: int, kind: str, domain: BaseDomain, signature: str = ""):
    """Central finite-difference derivative of a grid field along ``axis``.

    ``kind`` is ``'first'`` or ``'second'``.  Twisted seam transport is applied
    to stencil legs that cross the axis-0 seam.
    """
    field = np.asarray(field, dtype=float)
    if not domain.is_grid:
        return np.zeros_like(field)
    grid_ndim = domain.dim
    if field.shape[:grid_ndim] != domain.shape:
        raise DomainError(
            f"field shape {field.shape} does not match grid {domain.shape}"
        )
    if field.ndim - grid_ndim != len(signature):
        raise DomainError("signature length must equal the number of tensor axes")
    if not 0 <= axis < grid_ndim:
        raise DomainError(f"axis {axis} out of range")
    st = domain.stencil(axis, kind)
    m = st.half_width
    n = domain.sizes[axis]
    lo = np.take(field, range(n - m, n), axis=axis)
    hi = np.take(field, range(m), axis=axis)
    if domain.twisted and any(c in "lu" for c in signature):
        if axis != 0:
            raise DomainError("twisted transport is only defined along axis 0")
        rho = domain.rho(_fiber_size(field, signature))
        lo = transport(lo, signature, rho, -1, domain.seam_maps)
        hi = transport(hi, signature, rho, +1, domain.seam_maps)
    padded = np.concatenate([lo, field, hi], axis=axis)
    out = np.zeros_like(field)
    for k, c in enumerate(st.coefficients):
        if c == 0.0:
            continue
        idx = [slice(None)] * field.ndim
        idx[axis] = slice(k, k + n)
        out += c * padded[tuple(idx)]
    h = domain.spacing[axis]
    return out / (h if kind == "first" else h * h)


def volume_element(g) -> np.ndarray:
    """sqrt(det g) per node."""
    return np.sqrt(np.linalg.det(np.asarray(g)))


def integrate_base(density, volume_element, domain: BaseDomain) -> float:
    """Periodic trapezoidal quadrature of ``density * volume_element``."""
    if not domain.is_grid:
        raise DomainError("quadrature needs a grid-mode domain")
    density = np.asarray(density, dtype=float)
    vol = np.asarray(volume_element, dtype=float)
    if np.any(~(vol > 0)):
        raise DomainError("volume element must be positive at every node")
    return float(np.sum(density * vol) * domain.cell_measure)
