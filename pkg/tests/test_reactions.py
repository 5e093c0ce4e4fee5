import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from cgst.averaging import AveragingWindow, CgstAccumulator
from cgst.grw import TransportParams, bgrw_step
from cgst.lattice import REFLECT, BoundarySpec, ParticleField, lattice_1d
from cgst.reactions import (
    ReactionConvergenceError,
    ReactionSystem,
    monod_rate,
    rates,
    react_step,
    saturated_reactive_step,
    unsaturated_reactive_step,
)

MONOD = ReactionSystem.monod(5.0, 0.5, 0.1, 0.1)


def test_monod_rate():
    assert monod_rate(0.0, 0.0, 0.1, 0.1) == 0.0
    assert monod_rate(0.1, 0.1, 0.1, 0.1) == pytest.approx(0.25)
    assert monod_rate(1e6, 1e6, 0.1, 0.1) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        monod_rate(-1.0, 0.1, 0.1, 0.1)


def test_invalid_system():
    with pytest.raises(ValueError):
        ReactionSystem.bimolecular(-1.0)
    with pytest.raises(ValueError):
        ReactionSystem("other")


def test_zero_rates_leave_fields_unchanged():
    c = np.array([[0.3, 0.1], [0.2, 0.4]])
    assert np.array_equal(react_step(c, 1.0, ReactionSystem.bimolecular(0.0), 0.1).c, c)
    assert np.array_equal(react_step(c, 0.5, ReactionSystem.monod(0.0, 0.0, 0.1, 0.1), 0.1).c, c)


def test_monod_euler_example():
    res = react_step(np.array([[0.1], [0.1]]), 1.0, MONOD, 0.01)
    assert res.c[0, 0] == pytest.approx(0.0875, rel=1e-14)
    assert res.c[1, 0] == pytest.approx(0.09875, rel=1e-14)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=20), st.floats(0, 5), st.floats(1e-4, 0.5))
def test_bimolecular_sum_conserved_per_site(pairs, K, dt):
    c = np.array(pairs, dtype=float).T
    res = react_step(c, 1.0, ReactionSystem.bimolecular(K), dt)
    np.testing.assert_allclose(res.c.sum(axis=0), c.sum(axis=0), rtol=1e-15, atol=0)
    assert np.all(res.c >= 0)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(0.01, 5), st.floats(0.01, 5)), min_size=1, max_size=20),
       st.floats(0.1, 1.0), st.floats(1e-5, 1e-3))
def test_monod_sign_and_stoichiometry(pairs, theta, dt):
    c = np.array(pairs, dtype=float).T
    R = rates(c, theta, MONOD)
    assert np.all(R <= 0)
    res = react_step(c, theta, MONOD, dt)
    d1, d2 = c - res.c
    assert res.deficit == 0
    np.testing.assert_allclose(d1, 10 * d2, rtol=1e-9)


def test_implicit_monod_solves_backward_euler():
    c = np.array([[0.5, 0.01], [0.02, 0.3]])
    res = react_step(c, 1.0, MONOD, 0.05, integrator="implicit", tol=1e-14)
    mu = monod_rate(res.c[0], res.c[1], 0.1, 0.1)
    np.testing.assert_allclose(res.c[0], c[0] - 0.05 * 5.0 * mu, atol=1e-13)
    np.testing.assert_allclose(res.c[1], c[1] - 0.05 * 0.5 * mu, atol=1e-13)
    with pytest.raises(ReactionConvergenceError):
        react_step(c, 1.0, MONOD, 0.05, integrator="implicit", max_iter=1)


def pulse_field(lat, species=2):
    x = lat.coords()
    c = np.stack([np.exp(-((x - 0.4) ** 2) / 0.01), 0.5 * np.exp(-((x - 0.6) ** 2) / 0.01)])[:species]
    return ParticleField(lat, c, c.sum(axis=1))


def test_no_reactions_reduces_to_passive_transport():
    lat = lattice_1d(1.0, 0.02)
    f = pulse_field(lat)
    p = TransportParams(0.01, [0.01], [0.5])
    a, _, _ = saturated_reactive_step(f, p, None, BoundarySpec.uniform(1), particles_per_mole=1.0)
    b, _ = bgrw_step(f, p, BoundarySpec.uniform(1))
    assert np.array_equal(a.counts, b.counts)


def test_bimolecular_sum_is_passive():
    lat = lattice_1d(1.0, 0.02)
    f = pulse_field(lat)
    s = ParticleField(lat, f.counts.sum(axis=0, keepdims=True), np.array([f.counts.sum()]))
    p = TransportParams(0.01, [0.01], [0.5])
    system = ReactionSystem.bimolecular(2.0)
    for k in range(100):
        f, _, _ = saturated_reactive_step(f, p, system, BoundarySpec.uniform(1), step=k, particles_per_mole=1.0)
        s, _ = bgrw_step(s, p, BoundarySpec.uniform(1), step=k)
    np.testing.assert_allclose(f.counts.sum(axis=0), s.counts[0], rtol=1e-12, atol=1e-12 * s.counts.max())


def test_reaction_record_matches_window_source():
    lat = lattice_1d(1.0, 0.02)
    f = pulse_field(lat)
    dt = 0.01
    p = TransportParams(dt, [0.01], [0.5])
    w = AveragingWindow((0.5,), 0.1, 0.1, 0.1).resolve(lat, dt)
    acc = CgstAccumulator(w, 2)
    manual = np.zeros(2)
    for k in range(20):
        f, rec, _ = saturated_reactive_step(f, p, ReactionSystem.bimolecular(2.0), BoundarySpec.uniform(1), step=k,
                                            particles_per_mole=1.0)
        acc.add(rec)
        manual += rec.reaction[(slice(None),) + w.region].sum(axis=1)
    assert np.array_equal(acc.delta, manual)
    s = acc.finalize()
    np.testing.assert_allclose(s.delta1, manual * w.norm / dt, rtol=1e-15)


def test_unsaturated_reduces_to_saturated():
    n = 17
    lat = lattice_1d(1.6, 0.1)
    theta, u, D, dt = 0.3, 0.2, 0.004, 0.1
    x = lat.coords()
    c = np.stack([np.exp(-((x - 0.8) ** 2) / 0.02), 0.05 * np.ones(n)])
    c[:, :5] = c[:, -5:] = 0.0  # the pulse stays away from the ends for the four steps
    th = np.full(n, theta)
    q = [np.full(n - 1, u * theta)]
    bspec = BoundarySpec.uniform(1)
    sat = ParticleField(lat, c.copy(), c.sum(axis=1))
    cu = c.copy()
    p = TransportParams(dt, [D / theta], [u])
    for k in range(4):
        res = unsaturated_reactive_step(cu, th, th, q, D, MONOD, dt, bspec, lat, step=k, particles_per_mole=1.0, tol=1e-14)
        cu = res.c
        sat, _, _ = saturated_reactive_step(sat, p, MONOD, bspec, step=k, particles_per_mole=1.0, integrator="implicit")
    assert np.max(np.abs(cu - sat.counts)) <= 1e-10


def test_unsaturated_pure_diffusion():
    lat = lattice_1d(1.6, 0.1)
    x = lat.coords()
    c = np.exp(-((x - 0.8) ** 2) / 0.05)[None]
    th = np.full(17, 0.4)
    res = unsaturated_reactive_step(c, th, th, [np.zeros(16)], 0.01, None, 0.1, BoundarySpec.uniform(1), lat,
                                    particles_per_mole=1.0)
    ref, _ = bgrw_step(ParticleField(lat, c.copy(), c.sum(axis=1)), TransportParams(0.1, [0.01 / 0.4], [0.0]),
                       BoundarySpec.uniform(1))
    np.testing.assert_allclose(res.c, ref.counts, rtol=1e-13)
    assert res.iterations == 0


def generator(n, h, D, u):
    lo, hi = D / h**2 - u / (2 * h), D / h**2 + u / (2 * h)
    G = np.zeros((n, n))
    for l in range(n):
        if l > 0:
            G[l - 1, l] += lo
            G[l, l] -= lo
        if l < n - 1:
            G[l + 1, l] += hi
            G[l, l] -= hi
    return G


def test_splitting_first_order():
    n, h, D, u, K, T = 21, 0.05, 0.01, 0.2, 5.0, 0.4
    lat = lattice_1d(1.0, h)
    f0 = pulse_field(lat)
    G = generator(n, h, D, u)

    def rhs(_, y):
        c = y.reshape(2, n)
        r = K * c[0] * c[1] ** 2
        return np.concatenate([G @ c[0] - r, G @ c[1] + r])

    ref = solve_ivp(rhs, (0, T), f0.counts.ravel(), method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1].reshape(2, n)
    errs = []
    dts = [0.02, 0.01, 0.005, 0.0025]
    for dt in dts:
        f = f0
        for k in range(int(round(T / dt))):
            f, _, _ = saturated_reactive_step(f, TransportParams(dt, [D], [u]), ReactionSystem.bimolecular(K),
                                              BoundarySpec.uniform(1, REFLECT), step=k, particles_per_mole=1.0)
        errs.append(np.abs(f.counts - ref).max())
    slopes = np.diff(np.log(errs)) / np.diff(np.log(dts))
    assert np.all(np.abs(slopes - 1.0) <= 0.2), slopes
