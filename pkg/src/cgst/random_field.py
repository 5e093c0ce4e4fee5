"""Randomized spectral (Kraichnan) Gaussian fields.

For the isotropic Gaussian covariance ``exp(-|r|^2 / lam^2)`` the spectral
density is Gaussian, so wavenumber components are drawn from
``Normal(0, 2/lam^2)``. A unit-variance field is then

    f(x) = sqrt(2/N) * sum_j cos(k_j . x + phi_j),   phi_j ~ U[0, 2 pi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LatticeSpec


@dataclass(frozen=True)
class KraichnanSpec:
    mean: float
    variance: float
    corr_length: float
    modes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0 or self.corr_length <= 0 or self.modes < 1:
            raise ValueError("need variance >= 0, corr_length > 0, modes >= 1")


@dataclass
class FieldRealization:
    values: np.ndarray  # (components, *shape) or (*shape,) for scalars
    seed: int
    spec: KraichnanSpec


def rng_for(seed: int) -> np.random.Generator:
    """Counter-based generator so ``seed`` and ``seed + 1`` streams are independent."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _modes(spec: KraichnanSpec, dims: int):
    rng = rng_for(spec.seed)
    k = rng.normal(0.0, np.sqrt(2.0) / spec.corr_length, size=(spec.modes, dims))
    phi = rng.uniform(0.0, 2 * np.pi, size=spec.modes)
    return k, phi


def _phases(k: np.ndarray, phi: np.ndarray, lattice: LatticeSpec) -> np.ndarray:
    X = lattice.mesh()
    arg = np.tensordot(k[:, 0], X[0], axes=0)
    for ax in range(1, lattice.dims):
        arg = arg + np.tensordot(k[:, ax], X[ax], axes=0)
    return arg + phi.reshape((-1,) + (1,) * lattice.dims)


def unit_field(spec: KraichnanSpec, lattice: LatticeSpec) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian-correlated field on the lattice sites."""
    k, phi = _modes(spec, lattice.dims)
    return np.sqrt(2.0 / spec.modes) * np.cos(_phases(k, phi, lattice)).sum(axis=0)


def sample_velocity_1d(spec: KraichnanSpec, lattice: LatticeSpec) -> FieldRealization:
    """``u = U (1 + sigma f)``."""
    sigma = np.sqrt(spec.variance)
    u = spec.mean * (1.0 + sigma * unit_field(spec, lattice)) if sigma > 0 else np.full(lattice.shape, spec.mean)
    return FieldRealization(u[None], spec.seed, spec)


def sample_velocity_2d(spec: KraichnanSpec, lattice: LatticeSpec) -> FieldRealization:
    """Divergence-free field with mean ``(U, 0)``.

    Each mode's amplitude vector ``e1`` is projected perpendicular to its
    wavenumber, so every continuous mode is solenoidal.
    """
    if lattice.dims != 2:
        raise ValueError("2D lattice required")
    shape = lattice.shape
    vel = np.zeros((2,) + shape)
    vel[0] = spec.mean
    if spec.variance == 0:
        return FieldRealization(vel, spec.seed, spec)
    k, phi = _modes(spec, 2)
    k2 = np.maximum((k**2).sum(axis=1), 1e-300)
    amp = np.stack([1.0 - k[:, 0] ** 2 / k2, -k[:, 0] * k[:, 1] / k2], axis=1)
    c = np.cos(_phases(k, phi, lattice))
    scale = spec.mean * np.sqrt(spec.variance) * np.sqrt(2.0 / spec.modes)
    for comp in range(2):
        vel[comp] += scale * np.tensordot(amp[:, comp], c, axes=1)
    return FieldRealization(vel, spec.seed, spec)


def sample_lnK(spec: KraichnanSpec, lattice: LatticeSpec) -> FieldRealization:
    """``K = K_sat exp(sigma f - sigma^2/2)`` so that ``E[K] = K_sat``."""
    if spec.variance == 0:
        return FieldRealization(np.full(lattice.shape, spec.mean), spec.seed, spec)
    sigma = np.sqrt(spec.variance)
    K = spec.mean * np.exp(sigma * unit_field(spec, lattice) - spec.variance / 2.0)
    return FieldRealization(K, spec.seed, spec)
