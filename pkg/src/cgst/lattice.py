"""Regular 1D/2D lattices, particle fields and boundary handling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid lattice, field or boundary description."""


SIDES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}

# side -> (axis, is_upper)
_SIDE_AXIS = {"left": (0, False), "right": (0, True), "bottom": (1, False), "top": (1, True)}

NOFLUX = "noflux"
REFLECT = "reflect"
FREE = "free"
DIRICHLET = "dirichlet"
ABSORB = "absorb"  # leaving particles removed, no mirror copy
_KINDS = (NOFLUX, REFLECT, FREE, DIRICHLET, ABSORB)


@dataclass(frozen=True)
class LatticeSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    dx: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        dx = tuple(float(v) for v in np.atleast_1d(self.dx))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "dx", dx)
        if not (len(lower) == len(upper) == len(dx)) or len(dx) not in (1, 2):
            raise ConfigurationError("lattice must be 1D or 2D with matching bounds")
        for lo, hi, h in zip(lower, upper, dx):
            if h <= 0:
                raise ConfigurationError(f"dx must be positive, got {h}")
            ratio = (hi - lo) / h
            if hi <= lo or abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio):
                raise ConfigurationError(
                    f"(upper-lower)/dx = {ratio} is not an integer for dx={h}"
                )

    @property
    def dims(self) -> int:
        return len(self.dx)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(round((hi - lo) / h)) + 1 for lo, hi, h in zip(self.lower, self.upper, self.dx))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self, axis: int = 0) -> np.ndarray:
        n = self.shape[axis]
        return self.lower[axis] + np.arange(n) * self.dx[axis]

    def coordinate(self, index: int, axis: int = 0) -> float:
        return self.lower[axis] + index * self.dx[axis]

    def index_of(self, x: float, axis: int = 0) -> int:
        """Nearest site index of coordinate ``x`` (clipped to the lattice)."""
        i = int(round((x - self.lower[axis]) / self.dx[axis]))
        return min(max(i, 0), self.shape[axis] - 1)

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*[self.coords(a) for a in range(self.dims)], indexing="ij")


def lattice_1d(length: float, dx: float, lower: float = 0.0) -> LatticeSpec:
    return LatticeSpec((lower,), (lower + length,), (dx,))


@dataclass
class ParticleField:
    """Per-species particle counts, shape ``(species, *lattice.shape)``."""

    lattice: LatticeSpec
    counts: np.ndarray
    total_initial: np.ndarray

    @property
    def species(self) -> int:
        return self.counts.shape[0]

    def copy(self) -> "ParticleField":
        return ParticleField(self.lattice, self.counts.copy(), self.total_initial.copy())

    def normalized(self) -> np.ndarray:
        return self.counts / self.total_initial.reshape((-1,) + (1,) * self.lattice.dims)


def init_uniform(
    lattice: LatticeSpec,
    species: int,
    total_per_species: float | Sequence[float],
    support_sites: np.ndarray | Sequence[np.ndarray] | None = None,
) -> ParticleField:
    """Spread each species' total evenly over its support (boolean mask or index array).

    ``support_sites`` may be one support shared by all species or one per species;
    ``None`` means the full lattice.
    """
    totals = np.broadcast_to(np.asarray(total_per_species, dtype=float), (species,)).copy()
    if np.any(totals <= 0):
        raise ConfigurationError("total_per_species must be positive")
    if support_sites is None or (
        isinstance(support_sites, np.ndarray) and support_sites.shape == lattice.shape and support_sites.dtype == bool
    ):
        supports = [support_sites] * species
    elif isinstance(support_sites, (list, tuple)) and len(support_sites) == species:
        supports = list(support_sites)
    else:
        supports = [support_sites] * species
    counts = np.zeros((species,) + lattice.shape)
    for s, sup in enumerate(supports):
        mask = _as_mask(lattice, sup)
        nsup = int(mask.sum())
        if nsup == 0:
            raise ConfigurationError(f"empty support for species {s}")
        counts[s][mask] = totals[s] / nsup
    return ParticleField(lattice, counts, totals)


def _as_mask(lattice: LatticeSpec, sup) -> np.ndarray:
    if sup is None:
        return np.ones(lattice.shape, dtype=bool)
    sup = np.asarray(sup)
    if sup.dtype == bool:
        if sup.shape != lattice.shape:
            raise ConfigurationError("support mask shape does not match lattice")
        return sup
    mask = np.zeros(lattice.shape, dtype=bool)
    if sup.size:
        mask[tuple(np.atleast_2d(sup.T)) if lattice.dims > 1 else sup] = True
    return mask


def total_mass(field: ParticleField, species: int | None = None) -> float | np.ndarray:
    """Sum of counts over sites; all species when ``species`` is None."""
    axes = tuple(range(1, field.counts.ndim))
    if species is None:
        return field.counts.sum(axis=axes)
    return float(field.counts[species].sum())


@dataclass
class SideCondition:
    kind: str = NOFLUX
    width: int = 0  # layers overwritten for DIRICHLET sides

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}")
        if self.kind == DIRICHLET and self.width < 1:
            raise ConfigurationError("dirichlet side needs width >= 1")


@dataclass
class ResetRegion:
    """Sites overwritten with a stored profile after every step."""

    mask: np.ndarray
    values: np.ndarray  # (species, *shape); only entries under mask are used


@dataclass
class BoundarySpec:
    sides: dict[str, SideCondition]
    resets: list[ResetRegion] = field(default_factory=list)

    @classmethod
    def uniform(cls, dims: int, kind: str = NOFLUX) -> "BoundarySpec":
        return cls({s: SideCondition(kind) for s in SIDES[dims]})

    def kind(self, axis: int, upper: bool) -> str:
        for name, (ax, up) in _SIDE_AXIS.items():
            if ax == axis and up == upper:
                return self.sides[name].kind
        raise KeyError(axis)

    def validate(self, lattice: LatticeSpec) -> None:
        expected = set(SIDES[lattice.dims])
        if set(self.sides) != expected:
            raise ConfigurationError(f"boundary sides {sorted(self.sides)} != {sorted(expected)}")
        for reg in self.resets:
            if reg.mask.shape != lattice.shape or not reg.mask.any():
                raise ConfigurationError("reset region must be a non-empty lattice mask")
            if not _touches_boundary(reg.mask):
                raise ConfigurationError("reset region must touch the lattice boundary")
            if lattice.dims == 1:
                idx = np.flatnonzero(reg.mask)
                if idx[-1] - idx[0] + 1 != idx.size:
                    raise ConfigurationError("1D reset block must be contiguous")


def _touches_boundary(mask: np.ndarray) -> bool:
    for ax in range(mask.ndim):
        if np.take(mask, 0, axis=ax).any() or np.take(mask, -1, axis=ax).any():
            return True
    return False


def dirichlet_resets(lattice: LatticeSpec, bspec: BoundarySpec, counts: np.ndarray) -> BoundarySpec:
    """Store the current profile as reset values for every DIRICHLET side."""
    for name, cond in bspec.sides.items():
        if cond.kind != DIRICHLET:
            continue
        axis, upper = _SIDE_AXIS[name]
        mask = np.zeros(lattice.shape, dtype=bool)
        sl = [slice(None)] * lattice.dims
        sl[axis] = slice(-cond.width, None) if upper else slice(0, cond.width)
        mask[tuple(sl)] = True
        bspec.resets.append(ResetRegion(mask, counts.copy()))
    return bspec


def apply_boundaries(counts: np.ndarray, bspec: BoundarySpec, resets: bool = True) -> np.ndarray:
    """Apply mirror copies and resets in place on a ``(species, *shape)`` array.

    Bottom/top mirrors are applied before left/right so corners follow the
    vertical sides. Resets come last.
    """
    dims = counts.ndim - 1
    order = ["bottom", "top", "left", "right"] if dims == 2 else ["left", "right"]
    for name in order:
        if bspec.sides[name].kind != NOFLUX:
            continue
        axis, upper = _SIDE_AXIS[name]
        ax = axis + 1
        src = [slice(None)] * counts.ndim
        dst = [slice(None)] * counts.ndim
        if upper:
            dst[ax], src[ax] = -1, -2
        else:
            dst[ax], src[ax] = 0, 1
        counts[tuple(dst)] = counts[tuple(src)]
    if resets:
        for reg in bspec.resets:
            counts[:, reg.mask] = reg.values[:, reg.mask]
    return counts
