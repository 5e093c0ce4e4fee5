"""Global random walk transport of grouped particles on a regular lattice.

Two schemes move the particle counts of every site in one operation:

* GRW: shift by the truncated advective displacement ``floor(u dt/dx)`` then
  split ``(1-r, r/2, r/2)`` onto ``(l, l-d, l+d)`` relative to the shifted site;
* BGRW: split ``(1-r, (r-c)/2, (r+c)/2)`` onto ``(l, l-1, l+1)`` where
  ``c = u dt/dx`` is the local Courant number at the source site.

Splitting is deterministic (expected values) by default or multinomial.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import (
    FREE,
    REFLECT,
    BoundarySpec,
    LatticeSpec,
    ParticleField,
    apply_boundaries,
)

log = logging.getLogger(__name__)

DETERMINISTIC = "det"
STOCHASTIC = "stoch"


class StepSizeError(ValueError):
    """Time step violates r <= 1 or the BGRW Courant/Peclet restriction."""


class BoundaryError(ValueError):
    """Particles left the lattice through a free side."""


def compute_r(D: float, dt: float, dx: float, d: int = 1, axis: int = 0) -> float:
    """Dimensionless diffusion coefficient ``2 D dt / (d dx)^2``."""
    if D < 0 or dt <= 0 or dx <= 0 or d < 1:
        raise ValueError("need D >= 0, dt > 0, dx > 0, d >= 1")
    r = 2.0 * D * dt / (d * dx) ** 2
    if r > 1.0 + 1e-12:
        raise StepSizeError(f"r = {r:.6g} > 1 on axis {axis}")
    return r


def max_dt(
    D: float | Sequence[float],
    dx: float | Sequence[float],
    d: int = 1,
    u_max: float | Sequence[float] = 0.0,
    mode: str = "grw",
    r_max: float = 1.0,
) -> float:
    """Largest dt with ``sum_axes r <= r_max``.

    In BGRW mode the restriction ``|u| dt/dx <= r`` does not involve dt (it is
    the local Peclet bound ``|u| dx / D <= 2``), so it is checked and raises
    when no dt can satisfy it.
    """
    D = np.atleast_1d(np.asarray(D, dtype=float))
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    u = np.abs(np.broadcast_to(np.atleast_1d(np.asarray(u_max, dtype=float)), dx.shape))
    D = np.broadcast_to(D, dx.shape)
    if mode == "bgrw":
        for ax in range(dx.size):
            if u[ax] > 0 and (D[ax] == 0 or u[ax] * dx[ax] / D[ax] > 2.0 + 1e-12):
                raise StepSizeError(
                    f"no admissible dt on axis {ax}: Peclet {u[ax] * dx[ax] / max(D[ax], 1e-300):.4g} > 2"
                )
    rate = np.sum(2.0 * D / (d * dx) ** 2)
    if rate == 0:
        raise StepSizeError("pure advection has no diffusive step bound")
    return float(r_max / rate)


def split_group(
    n: np.ndarray | float,
    probabilities: Sequence[np.ndarray | float],
    mode: str = DETERMINISTIC,
    rng: np.random.Generator | None = None,
) -> list[np.ndarray]:
    """Split counts ``n`` into parts with the given (per-site) probabilities.

    Deterministic mode returns ``n * p_i``; stochastic mode draws a multinomial
    sample as a chain of binomials, so parts are integers summing to ``n``.
    """
    n = np.asarray(n, dtype=float)
    probs = [np.broadcast_to(np.asarray(p, dtype=float), n.shape) for p in probabilities]
    if any(np.any(p < 0) for p in probs):
        raise ValueError("negative jump probability")
    total = sum(probs)
    if np.any(np.abs(total - 1.0) > 1e-12):
        raise ValueError("probabilities do not sum to one")
    if mode == DETERMINISTIC:
        parts = [n * p for p in probs[1:]]
        rest = n - sum(parts) if parts else n.copy()
        return [rest] + parts
    if rng is None:
        raise ValueError("stochastic splitting needs an rng")
    return _multinomial(n, probs, rng)


def _multinomial(n: np.ndarray, probs: list[np.ndarray], rng: np.random.Generator) -> list[np.ndarray]:
    if np.any(n > 2**62) or np.any(n != np.floor(n)):
        raise ValueError("stochastic mode needs integer counts below 2**62")
    left = n.astype(np.int64)
    remaining_p = np.ones(n.shape)
    parts = []
    for p in probs[:-1]:
        q = np.clip(np.divide(p, remaining_p, out=np.zeros(n.shape), where=remaining_p > 0), 0.0, 1.0)
        draw = np.asarray(rng.binomial(left, q))
        parts.append(draw.astype(float))
        left = left - draw
        remaining_p = remaining_p - p
    parts.append(np.asarray(left, dtype=float))
    return parts


@dataclass
class TransportParams:
    """Physical and numerical transport parameters.

    ``u`` and ``D`` are per axis; each entry is a scalar or a per-site array.
    """

    dt: float
    D: Sequence[float | np.ndarray]
    u: Sequence[float | np.ndarray]
    d: int = 1
    peclet: str = "raise"  # raise | upwind | ignore

    def __post_init__(self):
        self.D = list(np.atleast_1d(self.D)) if np.isscalar(self.D) else list(self.D)
        self.u = list(np.atleast_1d(self.u)) if np.isscalar(self.u) else list(self.u)
        if self.peclet not in ("raise", "upwind", "ignore"):
            raise ValueError(f"unknown peclet policy {self.peclet!r}")

    def r(self, lattice: LatticeSpec) -> list:
        return [
            2.0 * np.asarray(self.D[a], dtype=float) * self.dt / (self.d * lattice.dx[a]) ** 2
            for a in range(lattice.dims)
        ]

    def courant(self, lattice: LatticeSpec) -> list:
        return [np.asarray(self.u[a], dtype=float) * self.dt / lattice.dx[a] for a in range(lattice.dims)]


@dataclass
class BgrwCoefficients:
    """Per-axis ``r`` and Courant numbers used for the + and - jumps of each site."""

    r: list
    c_plus: list
    c_minus: list

    @classmethod
    def from_params(cls, params: TransportParams, lattice: LatticeSpec) -> "BgrwCoefficients":
        c = params.courant(lattice)
        return cls(params.r(lattice), c, c)


@dataclass
class JumpRecord:
    """Group splits of one time step, consumed by the CGST accumulators."""

    step: int
    scheme: str
    dt: float
    source: np.ndarray
    stay: np.ndarray
    minus: list
    plus: list
    unbiased_minus: list
    unbiased_plus: list
    post: np.ndarray
    shift: list = field(default_factory=list)
    d: int = 1
    reaction: np.ndarray | None = None


def _checked_coefficients(coef: BgrwCoefficients, policy: str, shape) -> BgrwCoefficients:
    dims = len(coef.r)
    r = [np.broadcast_to(np.asarray(coef.r[a], dtype=float), shape).copy() for a in range(dims)]
    cp = [np.broadcast_to(np.asarray(coef.c_plus[a], dtype=float), shape) for a in range(dims)]
    cm = [np.broadcast_to(np.asarray(coef.c_minus[a], dtype=float), shape) for a in range(dims)]
    for a in range(dims):
        bad = (np.abs(cp[a]) > r[a] * (1 + 1e-12)) | (np.abs(cm[a]) > r[a] * (1 + 1e-12))
        if bad.any():
            if policy == "raise":
                raise StepSizeError(
                    f"BGRW Courant violation on axis {a}: max |c|/r = "
                    f"{float(np.max(np.maximum(np.abs(cp[a]), np.abs(cm[a])) / np.maximum(r[a], 1e-300))):.4g}"
                )
            if policy == "upwind":
                r[a] = np.where(bad, np.maximum(np.abs(cp[a]), np.abs(cm[a])), r[a])
                log.debug("upwind r raised at %d sites on axis %d", int(bad.sum()), a)
    # with face-based Courant numbers the stay probability also carries (c_plus - c_minus)/2
    moving = sum(r[a] + (cp[a] - cm[a]) / 2.0 for a in range(dims))
    if np.any(moving > 1.0 + 1e-12):
        raise StepSizeError(f"total jump probability {float(np.max(moving)):.6g} > 1")
    return BgrwCoefficients(r, cp, cm)


def _axis_targets(n: int, idx: np.ndarray, lo: str, hi: str) -> np.ndarray:
    """Map raw destination indices along one axis; -1 marks removed particles."""
    out = idx.copy()
    if lo == REFLECT or hi == REFLECT:
        for _ in range(4):
            if lo == REFLECT:
                out = np.where(out < 0, -1 - out, out)
            if hi == REFLECT:
                out = np.where(out > n - 1, 2 * n - 1 - out, out)
    return np.where((out < 0) | (out > n - 1), -1, out)


def _scatter(dest: np.ndarray, part: np.ndarray, offsets: list, bspec: BoundarySpec) -> None:
    """Add ``part`` (lattice-shaped) to ``dest`` displaced by per-axis offsets."""
    shape = part.shape
    dims = len(shape)
    if not np.any(part):
        return
    scalar = all(np.ndim(o) == 0 for o in offsets)
    if scalar:
        maps = [
            _axis_targets(shape[a], np.arange(shape[a]) + int(offsets[a]), bspec.kind(a, False), bspec.kind(a, True))
            for a in range(dims)
        ]
        lost = _lost_mask(maps, shape)
        _check_free(part, lost, offsets, bspec, scalar=True, maps=maps)
        straight = [
            np.flatnonzero((maps[a] == np.arange(shape[a]) + int(offsets[a])) & (maps[a] >= 0)) for a in range(dims)
        ]
        if all(s.size == shape[a] or s.size and s[-1] - s[0] + 1 == s.size for a, s in enumerate(straight)):
            src = tuple(slice(s[0], s[-1] + 1) if s.size else slice(0, 0) for s in straight)
            dst = tuple(
                slice(s[0] + int(offsets[a]), s[-1] + 1 + int(offsets[a])) if s.size else slice(0, 0)
                for a, s in enumerate(straight)
            )
            dest[dst] += part[src]
            covered = np.zeros(shape, dtype=bool)
            covered[src] = True
            rest = ~covered & ~lost
            if rest.any():
                grids = np.meshgrid(*maps, indexing="ij")
                target = tuple(g[rest] for g in grids)
                np.add.at(dest, target, part[rest])
            return
        grids = np.meshgrid(*maps, indexing="ij")
        keep = ~lost
        np.add.at(dest, tuple(g[keep] for g in grids), part[keep])
        return
    idx = np.indices(shape)
    targets = [
        _axis_targets(shape[a], idx[a] + np.asarray(offsets[a]), bspec.kind(a, False), bspec.kind(a, True))
        for a in range(dims)
    ]
    lost = np.zeros(shape, dtype=bool)
    for t in targets:
        lost |= t < 0
    _check_free(part, lost, offsets, bspec, scalar=False, maps=targets)
    keep = ~lost
    flat = np.ravel_multi_index(tuple(t[keep] for t in targets), shape)
    dest += np.bincount(flat, weights=part[keep], minlength=part.size).reshape(shape)


def _lost_mask(maps, shape) -> np.ndarray:
    lost = np.zeros(shape, dtype=bool)
    for a, m in enumerate(maps):
        sl = [None] * len(shape)
        sl[a] = slice(None)
        lost |= (m < 0)[tuple(sl)]
    return lost


def _check_free(part, lost, offsets, bspec, scalar, maps) -> None:
    if not lost.any() or not np.any(part[lost]):
        return
    dims = part.ndim
    idx = np.indices(part.shape)
    for a in range(dims):
        raw = idx[a] + (int(offsets[a]) if scalar else np.asarray(offsets[a]))
        for upper, out in ((False, raw < 0), (True, raw > part.shape[a] - 1)):
            if bspec.kind(a, upper) == FREE and np.any(part[out & lost]):
                raise BoundaryError(f"particles leave the lattice through a free side on axis {a}")


def bgrw_step(
    field: ParticleField,
    params: TransportParams | BgrwCoefficients,
    boundaries: BoundarySpec,
    mode: str = DETERMINISTIC,
    rng: np.random.Generator | None = None,
    step: int = 0,
    apply_resets: bool = True,
) -> tuple[ParticleField, JumpRecord]:
    """One biased GRW step for every species of ``field``."""
    lat = field.lattice
    dims = lat.dims
    coef = params if isinstance(params, BgrwCoefficients) else BgrwCoefficients.from_params(params, lat)
    policy = "raise" if isinstance(params, BgrwCoefficients) else params.peclet
    if mode == STOCHASTIC and policy == "ignore":
        raise StepSizeError("stochastic splitting needs admissible jump probabilities")
    coef = _checked_coefficients(coef, policy, lat.shape)
    dt = params.dt if isinstance(params, TransportParams) else float("nan")
    src = field.counts
    S = src.shape[0]
    stay = np.empty_like(src)
    minus = [np.empty_like(src) for _ in range(dims)]
    plus = [np.empty_like(src) for _ in range(dims)]
    um = [np.empty_like(src) for _ in range(dims)]
    up = [np.empty_like(src) for _ in range(dims)]
    new = np.zeros_like(src)
    for s in range(S):
        jumps = []
        for a in range(dims):
            jumps += [(coef.r[a] - coef.c_minus[a]) / 2.0, (coef.r[a] + coef.c_plus[a]) / 2.0]
        probs = [1.0 - sum(jumps)] + jumps
        if policy == "ignore" and mode == DETERMINISTIC:
            parts = [src[s] * np.asarray(p) for p in probs[1:]]
            parts = [src[s] - sum(parts)] + parts
        else:
            parts = split_group(src[s], probs, mode, rng)
        stay[s] = parts[0]
        _scatter(new[s], parts[0], [0] * dims, boundaries)
        for a in range(dims):
            minus[a][s], plus[a][s] = parts[1 + 2 * a], parts[2 + 2 * a]
            off_m = [0] * dims
            off_p = [0] * dims
            off_m[a], off_p[a] = -1, 1
            _scatter(new[s], minus[a][s], off_m, boundaries)
            _scatter(new[s], plus[a][s], off_p, boundaries)
        # unbiased shadow split (r/2, r/2) of the same sources
        uprobs = [1.0 - sum(coef.r)]
        for a in range(dims):
            uprobs += [coef.r[a] / 2.0, coef.r[a] / 2.0]
        uparts = split_group(src[s], uprobs, mode, rng)
        for a in range(dims):
            um[a][s], up[a][s] = uparts[1 + 2 * a], uparts[2 + 2 * a]
    apply_boundaries(new, boundaries, resets=apply_resets)
    rec = JumpRecord(step, "bgrw", dt, src.copy(), stay, minus, plus, um, up, new.copy(), [0] * dims, 1)
    return ParticleField(lat, new, field.total_initial.copy()), rec


def grw_step(
    field: ParticleField,
    params: TransportParams,
    boundaries: BoundarySpec,
    mode: str = DETERMINISTIC,
    rng: np.random.Generator | None = None,
    step: int = 0,
    apply_resets: bool = True,
) -> tuple[ParticleField, JumpRecord]:
    """One unbiased GRW step: integer advective shift then symmetric d-jumps."""
    lat = field.lattice
    dims = lat.dims
    d = params.d
    r = [np.broadcast_to(np.asarray(x, dtype=float), lat.shape) for x in params.r(lat)]
    for a in range(dims):
        if np.any(r[a] > 1.0 + 1e-12):
            raise StepSizeError(f"r > 1 on axis {a}")
    if np.any(sum(r) > 1.0 + 1e-12):
        raise StepSizeError("sum of r over axes > 1")
    shift = []
    for a in range(dims):
        s = np.floor(np.asarray(params.u[a], dtype=float) * params.dt / lat.dx[a] + 1e-12)
        shift.append(int(s) if np.ndim(s) == 0 else s.astype(np.int64))
    src = field.counts
    S = src.shape[0]
    stay = np.empty_like(src)
    minus = [np.empty_like(src) for _ in range(dims)]
    plus = [np.empty_like(src) for _ in range(dims)]
    new = np.zeros_like(src)
    for s in range(S):
        probs = [1.0 - sum(r)]
        for a in range(dims):
            probs += [r[a] / 2.0, r[a] / 2.0]
        parts = split_group(src[s], probs, mode, rng)
        stay[s] = parts[0]
        _scatter(new[s], parts[0], list(shift), boundaries)
        for a in range(dims):
            minus[a][s], plus[a][s] = parts[1 + 2 * a], parts[2 + 2 * a]
            off_m = list(shift)
            off_p = list(shift)
            off_m[a] = off_m[a] - d
            off_p[a] = off_p[a] + d
            _scatter(new[s], minus[a][s], off_m, boundaries)
            _scatter(new[s], plus[a][s], off_p, boundaries)
    apply_boundaries(new, boundaries, resets=apply_resets)
    rec = JumpRecord(step, "grw", params.dt, src.copy(), stay, minus, plus, minus, plus, new.copy(), shift, d)
    return ParticleField(lat, new, field.total_initial.copy()), rec
