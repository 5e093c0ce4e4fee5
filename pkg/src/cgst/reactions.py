"""Two-species reaction systems and their coupling with BGRW transport."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grw import DETERMINISTIC, STOCHASTIC, BgrwCoefficients, JumpRecord, TransportParams, bgrw_step, _checked_coefficients
from .lattice import ABSORB, NOFLUX, BoundarySpec, ParticleField, SideCondition, apply_boundaries

log = logging.getLogger(__name__)

AVOGADRO = 6.02214076e23


class ReactionConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReactionSystem:
    """``bimolecular``: R1 = -K_r c1 c2^2 = -R2. ``monod``: R_nu = -theta alpha_nu mu."""

    kind: str
    K_r: float = 0.0
    alpha1: float = 0.0
    alpha2: float = 0.0
    M1: float = 1.0
    M2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bimolecular", "monod"):
            raise ValueError(f"unknown reaction system {self.kind!r}")
        if min(self.K_r, self.alpha1, self.alpha2) < 0 or min(self.M1, self.M2) <= 0:
            raise ValueError("reaction parameters must be non-negative (M > 0)")

    @classmethod
    def bimolecular(cls, K_r: float) -> "ReactionSystem":
        return cls("bimolecular", K_r=K_r)

    @classmethod
    def monod(cls, alpha1: float, alpha2: float, M1: float, M2: float) -> "ReactionSystem":
        return cls("monod", alpha1=alpha1, alpha2=alpha2, M1=M1, M2=M2)


def monod_rate(c1, c2, M1: float, M2: float) -> np.ndarray:
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if np.any(c1 < 0) or np.any(c2 < 0):
        raise ValueError("negative concentration")
    return c1 / (M1 + c1) * c2 / (M2 + c2)


def rates(c: np.ndarray, theta, system: ReactionSystem) -> np.ndarray:
    """Rates of change of ``theta c`` per species."""
    c1, c2 = np.maximum(c[0], 0.0), np.maximum(c[1], 0.0)
    if system.kind == "bimolecular":
        r = system.K_r * c1 * c2**2
        return np.stack([-r, r])
    mu = monod_rate(c1, c2, system.M1, system.M2)
    theta = np.asarray(theta, dtype=float)
    return np.stack([-theta * system.alpha1 * mu, -theta * system.alpha2 * mu])


@dataclass
class ReactionResult:
    c: np.ndarray
    delta: np.ndarray  # change of theta*c per species and site
    deficit: float  # total mass clipped to keep c >= 0
    iterations: int = 1


def react_step(
    c: np.ndarray,
    theta,
    system: ReactionSystem,
    dt: float,
    integrator: str = "euler",
    tol: float = 1e-12,
    max_iter: int = 1000,
) -> ReactionResult:
    """One reaction step on concentrations ``c`` of shape ``(2, *shape)``.

    ``euler`` is explicit with clipping at zero (the clipped amount is
    reported). ``implicit`` solves the backward Euler step by the L-scheme
    ``c <- c - (c - c_old + dt alpha mu(c)) / L`` with ``L = 1 + dt alpha / M``.
    """
    c = np.asarray(c, dtype=float)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), c.shape[1:])
    if integrator == "euler":
        R = rates(c, theta, system)
        if system.kind == "bimolecular":
            x = np.minimum(dt * R[1], c[0])  # consumption of species 1 cannot exceed what is there
            deficit = float(np.sum(dt * R[1] - x))
            new = np.stack([c[0] - x, c[1] + x])
        else:
            raw = c + dt * R / theta
            new = np.maximum(raw, 0.0)
            deficit = float(np.sum((new - raw) * theta))
        if deficit > 0:
            log.info("reaction clipping deficit %.3e", deficit)
        return ReactionResult(new, (new - c) * theta, deficit)
    if integrator != "implicit":
        raise ValueError(f"unknown integrator {integrator!r}")
    if system.kind == "bimolecular":
        raise ValueError("implicit integrator implemented for Monod kinetics only")
    alpha = np.array([system.alpha1, system.alpha2]).reshape((2,) + (1,) * (c.ndim - 1))
    M = np.array([system.M1, system.M2]).reshape(alpha.shape)
    L = 1.0 + dt * alpha / M
    cur = c.copy()
    for it in range(1, max_iter + 1):
        mu = monod_rate(np.maximum(cur[0], 0), np.maximum(cur[1], 0), system.M1, system.M2)
        nxt = np.maximum(cur - (cur - c + dt * alpha * mu) / L, 0.0)
        change = float(np.max(np.abs(nxt - cur)))
        cur = nxt
        if change <= tol * max(1.0, float(np.max(np.abs(cur)))):
            return ReactionResult(cur, (cur - c) * theta, 0.0, it)
    raise ReactionConvergenceError(f"reaction L-scheme did not converge in {max_iter} iterations")


def saturated_reactive_step(
    field: ParticleField,
    params: TransportParams,
    system: ReactionSystem | None,
    boundaries: BoundarySpec,
    dt_reaction: float | None = None,
    mode: str = DETERMINISTIC,
    rng: np.random.Generator | None = None,
    step: int = 0,
    particles_per_mole: float = AVOGADRO,
    integrator: str = "euler",
) -> tuple[ParticleField, JumpRecord, ReactionResult | None]:
    """BGRW transport of every species, then one reaction step, then resets."""
    moved, rec = bgrw_step(field, params, boundaries, mode, rng, step, apply_resets=False)
    res = None
    counts = moved.counts
    if system is not None:
        c = counts / particles_per_mole
        res = react_step(c, 1.0, system, dt_reaction or params.dt, integrator=integrator)
        new = res.c * particles_per_mole
        if mode == STOCHASTIC:
            new = np.round(new)  # keep whole particles for the next multinomial split
        rec.reaction = new - counts
        counts = new
    apply_boundaries(counts, boundaries, resets=True)
    rec.post = counts.copy()
    return ParticleField(field.lattice, counts, field.total_initial.copy()), rec, res


def _absorbing(boundaries: BoundarySpec) -> BoundarySpec:
    sides = {
        name: SideCondition(ABSORB) if cond.kind == NOFLUX else cond for name, cond in boundaries.sides.items()
    }
    return BoundarySpec(sides, [])


def unsaturated_coefficients(theta_old: np.ndarray, q: list, D: float, dt: float, dx) -> BgrwCoefficients:
    """BGRW probabilities for ``theta c`` with face fluxes ``q`` (zero beyond the domain)."""
    r, cp, cm = [], [], []
    for a, qa in enumerate(q):
        zero = np.zeros_like(np.take(qa, [0], axis=a))
        n = theta_old.shape[a]
        upper = np.concatenate([qa, zero], axis=a)  # flux through the face above each site
        lower = np.concatenate([zero, qa], axis=a)
        r.append(2.0 * D * dt / (theta_old * dx[a] ** 2))
        cp.append(upper * dt / (theta_old * dx[a]))
        cm.append(lower * dt / (theta_old * dx[a]))
        assert upper.shape[a] == n
    return BgrwCoefficients(r, cp, cm)


@dataclass
class UnsaturatedResult:
    c: np.ndarray
    record: JumpRecord
    iterations: int
    reaction: ReactionResult | None


def unsaturated_reactive_step(
    c: np.ndarray,
    theta_old: np.ndarray,
    theta_new: np.ndarray,
    q: list,
    D: float,
    system: ReactionSystem | None,
    dt: float,
    boundaries: BoundarySpec,
    lattice,
    step: int = 0,
    peclet: str = "upwind",
    particles_per_mole: float = AVOGADRO,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> UnsaturatedResult:
    """Transport of ``theta c`` by BGRW, reaction by the L-scheme, then boundaries.

    Mirror copies and resets act on concentrations. The jump record is in
    molecule units, ``theta c N``.
    """
    coef = _checked_coefficients(unsaturated_coefficients(theta_old, q, D, dt, lattice.dx), peclet, lattice.shape)
    molecules = c * theta_old * particles_per_mole
    field = ParticleField(lattice, molecules, molecules.sum(axis=tuple(range(1, c.ndim))))
    moved, rec = bgrw_step(field, coef, _absorbing(boundaries), step=step)
    rec.dt = dt
    cstar = moved.counts / (theta_new * particles_per_mole)
    res = None
    iterations = 0
    if system is not None:
        res = react_step(cstar, theta_new, system, dt, integrator="implicit", tol=tol, max_iter=max_iter)
        iterations = res.iterations
        cnew = res.c
        rec.reaction = (cnew - cstar) * theta_new * particles_per_mole
    else:
        cnew = cstar
    apply_boundaries(cnew, boundaries, resets=True)
    rec.post = cnew * theta_new * particles_per_mole
    return UnsaturatedResult(cnew, rec, iterations, res)
