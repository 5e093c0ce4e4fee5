"""Variably saturated flow: van Genuchten-Mualem laws and an L-scheme solver.

The Richards equation ``d theta(psi)/dt - div(K grad(psi + z)) = 0`` is
discretized with implicit Euler in time and a node-centred finite-volume
stencil in space; ``z`` is the last lattice axis. Face conductivities are
arithmetic means of the adjacent node values. Each time step solves the
nonlinear system by the L-scheme

    L (psi' - psi) + theta(psi) - theta_old + dt div q(psi'; K(psi)) = 0,

a linear solve per iteration with the conductivity frozen at ``psi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import LatticeSpec

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


@dataclass
class SoilModel:
    theta_r: float
    theta_s: float
    alpha: float
    n: float
    K_sat: float | np.ndarray

    def __post_init__(self):
        if not (0 <= self.theta_r < self.theta_s <= 1) or self.n <= 1 or self.alpha <= 0:
            raise ValueError("invalid van Genuchten parameters")
        if np.any(np.asarray(self.K_sat) <= 0):
            raise ValueError("K_sat must be positive")

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n

    def default_L(self) -> float:
        return (self.theta_s - self.theta_r) * self.alpha * self.n / 4.0


SILT_LOAM = dict(theta_r=0.131, theta_s=0.396, alpha=0.423, n=2.06, K_sat=4.96e-2)


def effective_saturation(psi, model: SoilModel) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    neg = np.minimum(psi, 0.0)
    S = (1.0 + (-model.alpha * neg) ** model.n) ** (-model.m)
    return np.where(psi >= 0, 1.0, S)


def theta_of_psi(psi, model: SoilModel) -> np.ndarray:
    return model.theta_r + (model.theta_s - model.theta_r) * effective_saturation(psi, model)


def k_of_saturation(S, model: SoilModel) -> np.ndarray:
    S = np.clip(np.asarray(S, dtype=float), 0.0, 1.0)
    m = model.m
    return model.K_sat * np.sqrt(S) * (1.0 - (1.0 - S ** (1.0 / m)) ** m) ** 2


def k_of_psi(psi, model: SoilModel) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    K = k_of_saturation(effective_saturation(psi, model), model)
    return np.where(psi >= 0, np.broadcast_to(model.K_sat, K.shape), K)


@dataclass
class FlowState:
    psi: np.ndarray
    theta: np.ndarray
    q: list  # face fluxes per axis; axis a has shape with one less entry along a
    t: float = 0.0


@dataclass
class LSchemeControl:
    L: float | None = None
    tol_rel: float = 1e-6
    tol_abs: float = 1e-12
    max_iter: int = 1000

    def __post_init__(self):
        if (self.L is not None and self.L <= 0) or self.tol_rel <= 0 or self.max_iter < 1:
            raise ValueError("invalid L-scheme control")


@dataclass
class FlowBoundary:
    """Dirichlet head per side (value or function of time); other sides are no-flow."""

    head: dict[str, float | Callable[[float], float]] = field(default_factory=dict)

    def mask_and_values(self, lattice: LatticeSpec, t: float) -> tuple[np.ndarray, np.ndarray]:
        from .lattice import _SIDE_AXIS

        mask = np.zeros(lattice.shape, dtype=bool)
        vals = np.zeros(lattice.shape)
        for side, h in self.head.items():
            axis, upper = _SIDE_AXIS[side]
            sl = [slice(None)] * lattice.dims
            sl[axis] = -1 if upper else 0
            mask[tuple(sl)] = True
            vals[tuple(sl)] = h(t) if callable(h) else h
        return mask, vals


def face_mean(K: np.ndarray, axis: int) -> np.ndarray:
    lo = np.take(K, np.arange(K.shape[axis] - 1), axis=axis)
    hi = np.take(K, np.arange(1, K.shape[axis]), axis=axis)
    return 0.5 * (lo + hi)


def darcy_flux(psi: np.ndarray, model: SoilModel, lattice: LatticeSpec, K: np.ndarray | None = None) -> list:
    """Face fluxes ``-K_f (d psi/dx_a + [a is vertical])`` per axis."""
    if K is None:
        K = k_of_psi(psi, model)
    out = []
    for a in range(lattice.dims):
        grad = np.diff(psi, axis=a) / lattice.dx[a]
        g = 1.0 if a == lattice.dims - 1 else 0.0
        out.append(-face_mean(K, a) * (grad + g))
    return out


def node_flux(q: list, lattice: LatticeSpec) -> list:
    """Average face fluxes to nodes; boundary nodes take their single face."""
    out = []
    for a, qa in enumerate(q):
        n = lattice.shape[a]
        pad_lo = np.take(qa, [0], axis=a)
        pad_hi = np.take(qa, [qa.shape[a] - 1], axis=a)
        ext = np.concatenate([pad_lo, qa, pad_hi], axis=a)
        out.append(0.5 * (np.take(ext, np.arange(n), axis=a) + np.take(ext, np.arange(1, n + 1), axis=a)))
    return out


def flux_divergence(q: list, lattice: LatticeSpec) -> np.ndarray:
    """Net outward flux per node volume; boundary nodes use half cells."""
    div = np.zeros(lattice.shape)
    for a, qa in enumerate(q):
        zero = np.zeros_like(np.take(qa, [0], axis=a))
        ext = np.concatenate([zero, qa, zero], axis=a)
        n = lattice.shape[a]
        div += (np.take(ext, np.arange(1, n + 1), axis=a) - np.take(ext, np.arange(n), axis=a)) / lattice.dx[a]
    return div


def _operator(K: np.ndarray, lattice: LatticeSpec) -> tuple[sp.csr_matrix, np.ndarray]:
    """Matrix ``A`` and vector ``b`` with ``div q = A psi + b`` for frozen ``K``."""
    shape = lattice.shape
    N = lattice.size
    idx = np.arange(N).reshape(shape)
    rows, cols, vals = [], [], []
    b = np.zeros(shape)
    for a in range(lattice.dims):
        h = lattice.dx[a]
        Kf = face_mean(K, a) / h**2
        lo = np.take(idx, np.arange(shape[a] - 1), axis=a).ravel()
        hi = np.take(idx, np.arange(1, shape[a]), axis=a).ravel()
        w = Kf.ravel()
        # outward flux from lo through its upper face: -Kf (psi_hi - psi_lo) h - g K h
        rows += [lo, lo, hi, hi]
        cols += [lo, hi, hi, lo]
        vals += [w, -w, w, -w]
        if a == lattice.dims - 1:
            gflux = (face_mean(K, a) / h).ravel()
            bf = b.ravel()
            np.add.at(bf, lo, -gflux)
            np.add.at(bf, hi, gflux)
            b = bf.reshape(shape)
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return A, b.ravel()


def _cell_weights(lattice: LatticeSpec) -> np.ndarray:
    """Node volume fraction: 1/2 per boundary axis (half cells)."""
    w = np.ones(lattice.shape)
    for a in range(lattice.dims):
        sl = [slice(None)] * lattice.dims
        sl[a] = 0
        w[tuple(sl)] *= 0.5
        sl[a] = -1
        w[tuple(sl)] *= 0.5
    return w


def initial_state(psi0: np.ndarray, model: SoilModel, lattice: LatticeSpec, t: float = 0.0) -> FlowState:
    psi0 = np.asarray(psi0, dtype=float)
    return FlowState(psi0.copy(), theta_of_psi(psi0, model), darcy_flux(psi0, model, lattice), t)


def l_scheme_flow_step(
    state: FlowState,
    model: SoilModel,
    control: LSchemeControl,
    boundary: FlowBoundary,
    dt: float,
    lattice: LatticeSpec,
    residuals: list | None = None,
) -> tuple[FlowState, int]:
    """Advance by ``dt``; returns the new state and the number of L iterations.

    Successive-iterate differences are appended to ``residuals`` when given.
    """
    L = control.L if control.L is not None else model.default_L()
    t_new = state.t + dt
    dmask, dvals = boundary.mask_and_values(lattice, t_new)
    w = _cell_weights(lattice).ravel()
    free = ~dmask.ravel()
    psi = np.where(dmask, dvals, state.psi).ravel()
    theta_old = state.theta.ravel()
    N = lattice.size
    I = sp.identity(N, format="csr")
    fixed = sp.diags(np.where(free, 0.0, 1.0))
    keep = sp.diags(np.where(free, 1.0, 0.0))
    res = np.inf
    for it in range(1, control.max_iter + 1):
        K = k_of_psi(psi.reshape(lattice.shape), model)
        A, b = _operator(K, lattice)
        # w L (psi' - psi) + w (theta(psi) - theta_old) + dt (A psi' + b) = 0 on free nodes
        M = keep @ (sp.diags(w * L) + dt * A) + fixed
        rhs = np.where(
            free,
            w * L * psi - w * (theta_of_psi(psi, model) - theta_old) - dt * b,
            dvals.ravel(),
        )
        new = spla.spsolve(M.tocsc(), rhs)
        res = float(np.max(np.abs(new - psi)))
        if residuals is not None:
            residuals.append(res)
        psi = new
        if res <= control.tol_abs + control.tol_rel * float(np.max(np.abs(psi))):
            psi = psi.reshape(lattice.shape)
            return (
                FlowState(psi, theta_of_psi(psi, model), darcy_flux(psi, model, lattice), t_new),
                it,
            )
    raise NonConvergenceError(f"L-scheme did not converge in {control.max_iter} iterations", res)


def flow_residual(psi_new: np.ndarray, state: FlowState, model: SoilModel, boundary: FlowBoundary, dt: float, lattice: LatticeSpec) -> np.ndarray:
    """Residual of the implicit discrete equations (zero at Dirichlet nodes)."""
    dmask, dvals = boundary.mask_and_values(lattice, state.t + dt)
    w = _cell_weights(lattice)
    q = darcy_flux(psi_new, model, lattice)
    r = w * (theta_of_psi(psi_new, model) - state.theta) + dt * flux_divergence(q, lattice)
    return np.where(dmask, psi_new - dvals, r)
