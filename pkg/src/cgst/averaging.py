"""Coarse-grained space-time (CGST) averages accumulated from jump records.

A window is an open cube of half-side ``a`` around a lattice site and a time
interval ``[t - tau, t + tau]``. Step ``k`` moves the field from time ``k dt``
to ``(k + 1) dt``; a window sums the ``2m`` steps that tile its interval, with
``m = floor(tau/dt)``. Normalization ``dt / (2 tau (2a)^d)`` is applied once.

Sums kept per species:

* ``one``: post-step counts (the reported concentration);
* ``one_src``: pre-step counts, used as the denominator of the velocity,
  diffusion coefficient and mean position so they are exact per site;
* ``x``, ``xi``, ``xxi``: position, velocity and position-velocity sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grw import JumpRecord
from .lattice import LatticeSpec


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class AveragingWindow:
    center: tuple
    a: float
    t: float
    tau: float

    def resolve(self, lattice: LatticeSpec, dt: float, T: float | None = None) -> "ResolvedWindow":
        """Snap the centre to a site and ``a``, ``tau`` down to whole dx, dt multiples."""
        center = tuple(np.atleast_1d(np.asarray(self.center, dtype=float)))
        if len(center) != lattice.dims:
            raise WindowError("window centre dimension does not match lattice")
        idx, a_sites, region = [], [], []
        for ax in range(lattice.dims):
            i = lattice.index_of(center[ax], ax)
            h = lattice.dx[ax]
            m = int(np.floor(self.a / h + 1e-9))
            if m < 1:
                raise WindowError(f"a = {self.a} smaller than dx = {h}")
            lo = max(i - m + 1, 0)
            hi = min(i + m - 1, lattice.shape[ax] - 1)
            idx.append(i)
            a_sites.append(m)
            region.append(slice(lo, hi + 1))
        a_eff = tuple(m * h for m, h in zip(a_sites, lattice.dx))
        t_idx = int(round(self.t / dt))
        m_t = int(np.floor(self.tau / dt + 1e-9))
        if m_t < 1:
            if self.tau > 0:
                raise WindowError(f"tau = {self.tau} smaller than dt = {dt}")
        if t_idx - m_t < 0 or (T is not None and (t_idx + m_t) * dt > T * (1 + 1e-12)):
            raise WindowError(f"time window around t={self.t} leaves [0, T]")
        return ResolvedWindow(self, tuple(idx), a_eff, tuple(region), t_idx, m_t, dt, lattice)


@dataclass(frozen=True)
class ResolvedWindow:
    window: AveragingWindow
    index: tuple
    a_eff: tuple
    region: tuple  # slices per axis, sites strictly inside the open cube
    t_index: int
    m: int  # half-width in steps
    dt: float
    lattice: LatticeSpec

    @property
    def tau_eff(self) -> float:
        return self.m * self.dt

    @property
    def first_step(self) -> int:
        return self.t_index - self.m

    @property
    def last_step(self) -> int:
        return self.t_index + self.m - 1

    @property
    def n_sites(self) -> int:
        return int(np.prod([s.stop - s.start for s in self.region]))

    @property
    def measure(self) -> float:
        """(2a)^d with the snapped half-widths."""
        return float(np.prod([2 * a for a in self.a_eff]))

    @property
    def norm(self) -> float:
        return self.dt / (2 * self.tau_eff * self.measure)

    def covers(self, step: int) -> bool:
        return self.first_step <= step <= self.last_step

    def coords(self) -> list[np.ndarray]:
        """Site coordinates of the region, broadcastable over the region shape."""
        out = []
        for ax, sl in enumerate(self.region):
            c = self.lattice.coords(ax)[sl]
            shape = [1] * self.lattice.dims
            shape[ax] = c.size
            out.append(c.reshape(shape))
        return out


@dataclass
class UpscaledSample:
    window: ResolvedWindow
    one: np.ndarray  # CGST <1> per species, count units
    concentration: np.ndarray  # <1>/N
    position: np.ndarray  # (S, d)
    velocity: np.ndarray  # (S, d)
    diffusion: np.ndarray  # (S, d, d)
    moving: np.ndarray  # time-averaged site mean per species, normalized
    delta1: np.ndarray  # reaction source per species, count units


@dataclass
class CgstAccumulator:
    window: ResolvedWindow
    species: int
    one: np.ndarray = field(init=False)
    one_src: np.ndarray = field(init=False)
    x: np.ndarray = field(init=False)
    xi: np.ndarray = field(init=False)
    xxi: np.ndarray = field(init=False)
    moving: np.ndarray = field(init=False)
    delta: np.ndarray = field(init=False)
    steps: int = 0

    def __post_init__(self):
        S, d = self.species, self.window.lattice.dims
        self.one = np.zeros(S)
        self.one_src = np.zeros(S)
        self.x = np.zeros((S, d))
        self.xi = np.zeros((S, d))
        self.xxi = np.zeros((S, d, d))
        self.moving = np.zeros(S)
        self.delta = np.zeros(S)

    def add(self, rec: JumpRecord) -> "CgstAccumulator":
        w = self.window
        if not w.covers(rec.step):
            raise WindowError(f"step {rec.step} outside window steps [{w.first_step}, {w.last_step}]")
        reg = (slice(None),) + w.region
        axes = tuple(range(1, w.lattice.dims + 1))
        dims = w.lattice.dims
        dt = w.dt
        dx = w.lattice.dx
        X = w.coords()
        src = rec.source[reg]
        post = rec.post[reg]
        self.one += post.sum(axis=axes)
        self.one_src += src.sum(axis=axes)
        self.moving += 0.5 * (src.sum(axis=axes) + post.sum(axis=axes)) / w.n_sites
        if rec.reaction is not None:
            self.delta += rec.reaction[reg].sum(axis=axes)
        if rec.scheme == "bgrw":
            for b in range(dims):
                pm = rec.plus[b][reg] - rec.minus[b][reg]
                self.x[:, b] += (X[b] * src).sum(axis=axes) + dx[b] * pm.sum(axis=axes)
                self.xi[:, b] += dx[b] / dt * pm.sum(axis=axes)
                um, up = rec.unbiased_minus[b][reg], rec.unbiased_plus[b][reg]
                for a in range(dims):
                    if a == b:
                        val = (X[b] - dx[b] / 2) * (-dx[b] / dt) * um + (X[b] + dx[b] / 2) * (dx[b] / dt) * up
                    else:
                        val = X[a] * (dx[b] / dt) * (up - um)
                    self.xxi[:, a, b] += val.sum(axis=axes)
        else:
            d = rec.d
            shift = [_region(s, w.region) for s in rec.shift]
            for b in range(dims):
                pm = rec.plus[b][reg] - rec.minus[b][reg]
                xs = X[b] + shift[b] * dx[b]
                self.x[:, b] += (xs * src).sum(axis=axes) + d * dx[b] * pm.sum(axis=axes)
                self.xi[:, b] += (shift[b] * dx[b] / dt * src).sum(axis=axes) + d * dx[b] / dt * pm.sum(axis=axes)
                mi, pl = rec.minus[b][reg], rec.plus[b][reg]
                for a in range(dims):
                    if a == b:
                        val = (xs - d * dx[b] / 2) * (-d * dx[b] / dt) * mi + (xs + d * dx[b] / 2) * (d * dx[b] / dt) * pl
                    else:
                        val = (X[a] + shift[a] * dx[a]) * (d * dx[b] / dt) * (pl - mi)
                    self.xxi[:, a, b] += val.sum(axis=axes)
        self.steps += 1
        return self

    def merge(self, other: "CgstAccumulator") -> "CgstAccumulator":
        if other.window != self.window:
            raise WindowError("cannot merge accumulators of different windows")
        for name in ("one", "one_src", "x", "xi", "xxi", "moving", "delta"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.steps += other.steps
        return self

    @property
    def complete(self) -> bool:
        return self.steps == 2 * self.window.m

    def finalize(self, total: Sequence[float] | float = 1.0) -> UpscaledSample:
        w = self.window
        total = np.broadcast_to(np.asarray(total, dtype=float), (self.species,))
        k = w.norm
        one = self.one * k
        src = self.one_src[:, None]
        safe = np.where(src > 0, src, 1.0)
        pos = np.where(src > 0, self.x / safe, 0.0)
        vel = np.where(src > 0, self.xi / safe, 0.0)
        dif = np.where(src[:, :, None] > 0, self.xxi / safe[:, :, None], 0.0)
        moving = self.moving / (2 * w.m) / total if w.m else self.moving / total
        return UpscaledSample(w, one, one / total, pos, vel, dif, moving, self.delta * k / w.dt)


def _region(value, region):
    if np.ndim(value) == 0:
        return value
    return np.asarray(value)[region]


def intrinsic_diffusion(sample: UpscaledSample) -> np.ndarray:
    """Diffusion tensor per species, ``<x xi>/<1>`` (zero where <1> = 0)."""
    return sample.diffusion


def macro_velocity(sample: UpscaledSample) -> np.ndarray:
    return sample.velocity


class CgstCollector:
    """Routes jump records to every accumulator whose time window covers them."""

    def __init__(self, accumulators: Iterable[CgstAccumulator]):
        self.accumulators = list(accumulators)

    def observe(self, rec: JumpRecord) -> None:
        for acc in self.accumulators:
            if acc.window.covers(rec.step):
                acc.add(rec)

    @property
    def last_step(self) -> int:
        return max(acc.window.last_step for acc in self.accumulators)


def volume_average(counts: np.ndarray, window: ResolvedWindow, total=None) -> np.ndarray:
    """``(1/(2a)^d) * sum`` of counts over the window's interior sites."""
    reg = (slice(None),) + window.region
    axes = tuple(range(1, counts.ndim))
    val = counts[reg].sum(axis=axes) / window.measure
    if total is not None:
        val = val / np.asarray(total, dtype=float)
    return val


def moving_average(history: np.ndarray, window: ResolvedWindow, total=None, start_step: int = 0) -> np.ndarray:
    """Site mean over the window, averaged in time by the trapezoid rule.

    ``history[j]`` is the snapshot at step ``start_step + j``, shape
    ``(S, *lattice.shape)``.
    """
    k0 = window.t_index - window.m - start_step
    k1 = window.t_index + window.m - start_step
    if k0 < 0 or k1 >= len(history):
        raise WindowError("history does not cover the time window")
    reg = (slice(None), slice(k0, k1 + 1)) + window.region
    h = np.moveaxis(np.asarray(history), 0, 1)[reg]
    means = h.reshape(h.shape[0], h.shape[1], -1).mean(axis=2)
    if window.m == 0:
        val = means[:, 0]
    else:
        val = (means[:, 1:-1].sum(axis=1) + 0.5 * (means[:, 0] + means[:, -1])) / (2 * window.m)
    if total is not None:
        val = val / np.asarray(total, dtype=float)
    return val


def discrepancy(cbar: Sequence[float], cgst: Sequence[float]) -> tuple[float, float]:
    """l2 relative discrepancy ``e`` and max-deviation ratio ``eps``."""
    cbar = np.asarray(cbar, dtype=float)
    cgst = np.asarray(cgst, dtype=float)
    if cbar.shape != cgst.shape:
        raise ValueError("sample vectors differ in length")
    norm = np.linalg.norm(cgst)
    if norm == 0:
        raise ValueError("CGST average is identically zero")
    diff = np.abs(cbar - cgst)
    e = float(np.linalg.norm(cbar - cgst) / norm)
    j = int(np.argmax(diff))
    if diff[j] == 0:
        return e, 0.0
    eps = float(diff[j] / cgst[j]) if cgst[j] != 0 else float("inf")
    return e, eps


def balance_residual(
    one: np.ndarray,
    flux: np.ndarray,
    ht: float,
    hx: Sequence[float] | float,
    delta1: np.ndarray | None = None,
) -> float:
    """Max-norm of ``d<1>/dt + div <xi> - delta1`` by central differences.

    ``one`` has shape ``(Nt, Nx[, Ny])``, ``flux`` the same plus a trailing
    axis with one component per space axis.
    """
    one = np.asarray(one, dtype=float)
    flux = np.asarray(flux, dtype=float)
    hx = np.atleast_1d(np.asarray(hx, dtype=float))
    if any(n < 3 for n in one.shape):
        raise ValueError("need at least 3 window centres per axis")
    inner = tuple(slice(1, -1) for _ in range(one.ndim))
    res = (one[2:] - one[:-2])[(slice(None),) + inner[1:]] / (2 * ht)
    for ax in range(one.ndim - 1):
        f = flux[..., ax]
        sl_p = [slice(1, -1)] * one.ndim
        sl_m = [slice(1, -1)] * one.ndim
        sl_p[ax + 1] = slice(2, None)
        sl_m[ax + 1] = slice(None, -2)
        res = res + (f[tuple(sl_p)] - f[tuple(sl_m)]) / (2 * hx[ax])
    if delta1 is not None:
        res = res - np.asarray(delta1, dtype=float)[inner]
    return float(np.max(np.abs(res)))


def tiling_centres(lower: float, upper: float, a: float) -> np.ndarray:
    """Centres ``lower + (2j+1) a`` of disjoint intervals of length ``2a``."""
    n = int(np.floor((upper - lower) / (2 * a) + 1e-9))
    return lower + (2 * np.arange(n) + 1) * a
