"""Bundle state of the reduced flow, density fields and checkpoint I/O."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import BaseDomain, DomainError, integrate_base, volume_element

__all__ = [
    "BundleState",
    "DensityField",
    "ValidationReport",
    "validate",
    "det_G_field",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CONVENTIONS",
]

CONVENTIONS = ("plain", "shrinker", "expander")


class CheckpointError(ValueError):
    pass


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BundleState:
    """Fiber metric ``G``, connection ``a`` + ``F_bg``, base metric ``g`` at time ``t``.

    Array layouts (``grid`` is ``domain.shape``, empty in homogeneous mode)::

        G     grid + (N, N)   G_ij
        a     grid + (N, n)   periodic part a^i_alpha of the connection
        g     grid + (n, n)   g_alpha beta
        F_bg  (N, n, n)       constant background curvature F^i_alpha beta

    The connection curvature is ``F = F_bg + da``.
    """

    G: np.ndarray
    a: np.ndarray
    g: np.ndarray
    t: float
    domain: BaseDomain
    F_bg: np.ndarray | None = None

    def __post_init__(self):
        grid = self.domain.shape
        n = self.domain.dim
        G = _frozen(self.G)
        g = _frozen(self.g)
        if G.shape[: len(grid)] != grid or g.shape[: len(grid)] != grid:
            raise DomainError("field layout does not match the domain grid")
        N = G.shape[-1] if G.ndim == len(grid) + 2 else None
        if N is None or G.shape[len(grid):] != (N, N):
            raise DomainError("G must carry an N x N block per node")
        if g.shape[len(grid):] != (n, n):
            raise DomainError("g must carry an n x n block per node")
        a = np.zeros(grid + (N, n)) if self.a is None else self.a
        a = _frozen(a)
        if a.shape != grid + (N, n):
            raise DomainError("a must carry an N x n block per node")
        F_bg = np.zeros((N, n, n)) if self.F_bg is None else self.F_bg
        F_bg = _frozen(F_bg)
        if F_bg.shape != (N, n, n):
            raise DomainError("F_bg must have shape (N, n, n)")
        if not np.allclose(F_bg, -np.swapaxes(F_bg, 1, 2), atol=0):
            raise DomainError("F_bg must be antisymmetric in its base indices")
        if not self.domain.is_grid and (np.any(a != 0) or np.any(F_bg != 0)):
            raise DomainError("homogeneous mode carries no connection")
        if self.domain.twisted and len(self.domain.holonomy) != N:
            raise DomainError("holonomy size does not match N")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "F_bg", F_bg)
        object.__setattr__(self, "t", float(self.t))

    @property
    def N(self) -> int:
        return self.G.shape[-1]

    @property
    def n(self) -> int:
        return self.domain.dim

    def with_fields(self, **changes) -> "BundleState":
        return replace(self, **changes)

    def advance(self, tangent, dt: float) -> "BundleState":
        """Explicit update ``state + dt * tangent`` (time advanced by ``dt``)."""
        return replace(
            self,
            G=self.G + dt * tangent.G,
            a=self.a + dt * tangent.a,
            g=self.g + dt * tangent.g,
            t=self.t + dt,
        )

    def is_admissible(self) -> bool:
        """Finite fields with G and g positive definite at every node."""
        for arr in (self.G, self.a, self.g):
            if not np.all(np.isfinite(arr)):
                return False
        return _min_eig(self.G) > 0 and _min_eig(self.g) > 0

    def volume(self) -> float:
        return integrate_base(np.ones(self.domain.shape), volume_element(self.g), self.domain)

    def arrays(self) -> dict:
        return {"G": self.G, "a": self.a, "g": self.g, "F_bg": self.F_bg}


def _min_eig(blocks) -> float:
    if blocks.shape[-1] == 0:
        return np.inf
    return float(np.min(np.linalg.eigvalsh(blocks)))


def det_G_field(state: BundleState) -> np.ndarray:
    """Per-node det G (a global function since |det rho| = 1)."""
    return np.linalg.det(state.G)


@dataclass
class ValidationReport:
    min_eig_G: float
    min_eig_g: float
    argmin_G: tuple
    argmin_g: tuple
    max_F: float
    seam_defect: float
    has_nan: bool
    spd_violations_G: list = field(default_factory=list)
    spd_violations_g: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            not self.has_nan
            and not self.spd_violations_G
            and not self.spd_violations_g
            and self.min_eig_G > 0
            and self.min_eig_g > 0
        )


def _eig_scan(blocks, grid):
    if blocks.shape[-1] == 0:
        return np.inf, (), []
    lam = np.linalg.eigvalsh(blocks)[..., 0]
    flat = int(np.argmin(lam))
    where = np.unravel_index(flat, grid) if grid else ()
    bad = [tuple(int(i) for i in idx) for idx in np.argwhere(lam <= 0)]
    return float(lam.min()), tuple(int(i) for i in where), bad


def _seam_defect(state: BundleState) -> float:
    """Mismatch between G extrapolated past the seam and transported G(0).

    Degree-6 polynomial extrapolation from the last seven nodes along axis 0;
    vanishes for fields consistent with the holonomy, up to extrapolation error.
    """
    from .grid import transport

    if not state.domain.is_grid or state.N == 0:
        return 0.0
    G = state.G
    k = 7
    n0 = state.domain.sizes[0]
    # Lagrange weights for nodes n0-k .. n0-1 evaluated at n0
    nodes = np.arange(n0 - k, n0, dtype=float)
    w = np.array(
        [np.prod([(n0 - nodes[m]) / (nodes[j] - nodes[m]) for m in range(k) if m != j])
         for j in range(k)]
    )
    tail = G[n0 - k:]
    extrap = np.tensordot(w, tail, axes=(0, 0))
    rho = state.domain.rho(state.N)
    image = transport(G[0], "ll", rho, +1) if state.domain.twisted else G[0]
    scale = max(float(np.max(np.abs(image))), 1e-300)
    return float(np.max(np.abs(extrap - image)) / scale)


def validate(state: BundleState) -> ValidationReport:
    """Pure diagnostic report: SPD margins, |F|, seam continuity, NaN scan."""
    from .curvature import connection_curvature

    grid = state.domain.shape
    has_nan = any(not np.all(np.isfinite(x)) for x in (state.G, state.a, state.g))
    mG, argG, badG = _eig_scan(np.nan_to_num(state.G), grid)
    mg, argg, badg = _eig_scan(np.nan_to_num(state.g), grid)
    if has_nan:
        max_F = float("nan")
        seam = float("nan")
    else:
        F = connection_curvature(state)
        max_F = float(np.max(np.abs(F))) if F.size else 0.0
        seam = _seam_defect(state)
    return ValidationReport(
        min_eig_G=mG,
        min_eig_g=mg,
        argmin_G=argG,
        argmin_g=argg,
        max_F=max_F,
        seam_defect=seam,
        has_nan=has_nan,
        spd_violations_G=badG,
        spd_violations_g=badg,
    )


@dataclass(frozen=True, eq=False)
class DensityField:
    """Positive weight ``u = exp(-f)`` on the base with a mass convention.

    ``plain``: int u dvol = 1; ``shrinker``: (4 pi tau)^(-n/2) int u dvol = 1;
    ``expander``: (4 pi t)^(-n/2) int u dvol = 1.
    """

    u: np.ndarray
    convention: str = "plain"

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        u = _frozen(self.u)
        if np.any(~(u > 0)):
            raise ValueError("density must be positive everywhere")
        object.__setattr__(self, "u", u)

    @property
    def f(self) -> np.ndarray:
        return -np.log(self.u)

    @staticmethod
    def weight(convention: str, n: int, param: float | None) -> float:
        if convention == "plain":
            return 1.0
        if param is None or param <= 0:
            raise ValueError(f"{convention} convention needs a positive time parameter")
        return (4 * np.pi * param) ** (-n / 2)

    def mass(self, state: BundleState, param: float | None = None) -> float:
        raw = integrate_base(self.u, volume_element(state.g), state.domain)
        return self.weight(self.convention, state.n, param) * raw

    @classmethod
    def from_f(cls, f, convention="plain"):
        return cls(np.exp(-np.asarray(f, dtype=float)), convention)

    @classmethod
    def uniform(cls, state: BundleState, convention="plain", param=None) -> "DensityField":
        """Spatially constant density normalized to unit mass."""
        w = cls.weight(convention, state.n, param)
        return cls(np.full(state.domain.shape, 1.0 / (w * state.volume())), convention)

    def normalized(self, state: BundleState, param=None) -> "DensityField":
        return DensityField(self.u / self.mass(state, param), self.convention)


# checkpoint container: a zip of raw .npy arrays plus a JSON header

_FORMAT = "bundleflow-checkpoint/1"


def _state_meta(state: BundleState) -> dict:
    return {"domain": state.domain.descriptor(), "N": state.N, "t": state.t.hex()}


def save_checkpoint(path, state: BundleState, extra_states: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write ``state`` (and optional named companion states) to ``path``.

    Arrays are stored as raw little-endian float64 in row-major node order;
    times are stored as hex floats so the round trip is bit-exact.
    """
    states = {"state": state}
    states.update(extra_states or {})
    header = {"format": _FORMAT, "states": {}, "meta": meta or {}}
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, st in states.items():
            header["states"][name] = _state_meta(st)
            for key, arr in st.arrays().items():
                arr_buf = io.BytesIO()
                np.save(arr_buf, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
                zf.writestr(f"{name}/{key}.npy", arr_buf.getvalue())
        zf.writestr("header.json", json.dumps(header, indent=2, sort_keys=True))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, name: str = "state", with_meta: bool = False):
    """Read a state written by :func:`save_checkpoint`.

    Raises :class:`CheckpointError` on truncated or malformed files.
    """
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != _FORMAT:
                raise CheckpointError("not a bundleflow checkpoint")
            info = header["states"][name]
            arrays = {}
            for key in ("G", "a", "g", "F_bg"):
                arrays[key] = np.load(io.BytesIO(zf.read(f"{name}/{key}.npy")),
                                      allow_pickle=False)
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, OSError, ValueError, EOFError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    domain = BaseDomain.from_descriptor(info["domain"])
    state = BundleState(
        G=arrays["G"], a=arrays["a"], g=arrays["g"], F_bg=arrays["F_bg"],
        t=float.fromhex(info["t"]), domain=domain,
    )
    if state.N != info["N"]:
        raise CheckpointError("fiber dimension mismatch in checkpoint")
    if with_meta:
        return state, header
    return state
