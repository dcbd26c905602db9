import math

import numpy as np
import pytest
from scipy.integrate import quad

from regpp.core import EventSequence, HawkesParams, PoissonBumpModel, warped_neg_log_likelihood
from regpp.errors import ImpossibleEventError
from regpp.mle import (MleConfig, em_responsibilities, em_update, exp_compensator_integral, fit_hawkes_mle,
                       fit_model, fit_poisson_mle, kernel_sums, poisson_design)
from regpp.simulate import simulate_many
from regpp.warp import PiecewiseLinearWarp, generate_cosine_warp, landmark_grid


def identities(seqs):
    return [PiecewiseLinearWarp.identity(s.horizon) for s in seqs]


def random_unwarp(rng, T, L=8):
    d = rng.uniform(0.3, 1.0, L - 1)
    return PiecewiseLinearWarp.from_increments(landmark_grid(T, L), d / d.sum() * T)


def seq(times, types=None, T=100.0):
    times = np.asarray(times, dtype=float)
    return EventSequence(times, np.zeros(times.size, dtype=int) if types is None else types, T)


# -- responsibilities ---------------------------------------------------------------


def test_background_only_responsibilities():
    r = em_responsibilities(HawkesParams([0.2], [[0.0]]), seq([1.0, 2.0, 5.0]))
    np.testing.assert_array_equal(r.background, 1.0)
    np.testing.assert_array_equal(r.by_source, 0.0)
    np.testing.assert_array_equal(r.pairwise(), 0.0)


def test_zero_background_responsibilities():
    p = HawkesParams([0.0], [[0.5]])
    with pytest.raises(ImpossibleEventError) as info:
        em_responsibilities(p, seq([1.0, 2.0, 5.0]))
    assert info.value.index == 0
    # Dropping the first event's contribution leaves purely triggered events.
    r = em_responsibilities(HawkesParams([1e-300], [[0.5]]), seq([1.0, 2.0, 5.0]))
    np.testing.assert_allclose(r.background[1:], 0.0, atol=1e-290)


def test_responsibilities_normalize():
    rng = np.random.default_rng(0)
    p = HawkesParams(rng.uniform(0.1, 0.5, 3), rng.uniform(0, 0.3, (3, 3)), 1.3)
    s = simulate_many(p, 60.0, 1, 1)[0]
    r = em_responsibilities(p, s)
    np.testing.assert_allclose(r.background + r.by_source.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    pair = r.pairwise()
    np.testing.assert_allclose(r.background + pair.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    for c in range(3):
        np.testing.assert_allclose(pair[:, s.types == c].sum(axis=1), r.by_source[:, c], atol=1e-12)
    assert np.all(pair >= 0) and np.all(pair <= 1)


def test_kernel_sums_match_direct():
    rng = np.random.default_rng(1)
    u = np.sort(rng.uniform(0, 10, 30))
    types = rng.integers(0, 2, 30)
    R = kernel_sums(u, types, 2, 0.7)
    for i in range(30):
        for c in range(2):
            expect = sum(math.exp(-0.7 * (u[i] - u[j])) for j in range(i) if types[j] == c)
            assert R[i, c] == pytest.approx(expect, rel=1e-12, abs=1e-300)


# -- closed-form integrals -------------------------------------------------------------


def test_exp_integral_identity():
    U = PiecewiseLinearWarp.identity(100.0)
    assert exp_compensator_integral(U, 0.8, 0.0, 100.0) == pytest.approx(-math.expm1(-80.0) / 0.8, rel=1e-15)


def test_exp_integral_zero_decay():
    U = random_unwarp(np.random.default_rng(2), 10.0)
    assert exp_compensator_integral(U, 0.0, 1.5, 7.25) == pytest.approx(5.75, rel=1e-15)


def test_exp_integral_matches_quadrature():
    rng = np.random.default_rng(3)
    for _ in range(20):
        U = random_unwarp(rng, 20.0)
        w = rng.uniform(0.05, 3.0)
        lo, hi = np.sort(rng.uniform(0, 20.0, 2))
        pts = np.concatenate([[lo], U.landmarks[(U.landmarks > lo) & (U.landmarks < hi)], [hi]])
        ref = sum(quad(lambda s: math.exp(-w * U(s)), a, b, epsabs=0, epsrel=1e-13)[0]
                  for a, b in zip(pts[:-1], pts[1:]))
        assert exp_compensator_integral(U, w, lo, hi) == pytest.approx(ref, rel=1e-10)


# -- M-step ---------------------------------------------------------------------------------


def test_em_update_background_only():
    s = seq(np.linspace(5, 95, 10))
    r = em_responsibilities(HawkesParams([0.3], [[0.0]]), s)
    p = em_update([r], [s], identities([s]))
    np.testing.assert_allclose(p.mu, [0.1], rtol=1e-15)
    np.testing.assert_array_equal(p.phi, 0.0)


def test_em_update_scale_invariant():
    p0 = HawkesParams([0.4, 0.2], [[0.2, 0.1], [0.3, 0.1]])
    seqs = simulate_many(p0, 50.0, 4, 5)
    resps = [em_responsibilities(p0, s) for s in seqs]
    a = em_update(resps, seqs, identities(seqs))
    b = em_update(resps * 2, seqs * 2, identities(seqs) * 2)
    np.testing.assert_allclose(b.mu, a.mu, rtol=1e-14)
    np.testing.assert_allclose(b.phi, a.phi, rtol=1e-14)


def test_absent_trigger_type_gets_zero_column():
    s = EventSequence([1.0, 3.0, 7.0], [0, 0, 0], 10.0)
    r = em_responsibilities(HawkesParams([0.3, 0.1], [[0.2, 0.2], [0.2, 0.2]]), s)
    p = em_update([r], [s], identities([s]))
    np.testing.assert_array_equal(p.phi[:, 1], 0.0)


# -- EM fits ----------------------------------------------------------------------------------


def test_em_recovers_hawkes_parameters():
    truth = HawkesParams([0.5], [[0.4]], 1.0)
    seqs = simulate_many(truth, 100.0, 200, 6)
    p, _ = fit_hawkes_mle(seqs, identities(seqs), MleConfig(max_iters=200, tol=1e-10), num_types=1)
    np.testing.assert_allclose(p.mu, truth.mu, rtol=0.1)
    np.testing.assert_allclose(p.phi, truth.phi, rtol=0.1)


def test_em_null_model_recovery():
    truth = HawkesParams([0.3, 0.4], [[0.0, 0.0], [0.0, 0.0]])
    seqs = simulate_many(truth, 100.0, 200, 7)
    p, _ = fit_hawkes_mle(seqs, identities(seqs), MleConfig(max_iters=100), num_types=2)
    assert np.all(p.phi < 0.05)


@pytest.mark.parametrize("warped", [False, True])
def test_em_is_monotone(warped):
    rng = np.random.default_rng(8)
    for k in range(5):
        truth = HawkesParams(rng.uniform(0.1, 0.4, 2), rng.uniform(0, 0.35, (2, 2)), rng.uniform(0.5, 2))
        seqs = simulate_many(truth, 80.0, 10, 100 + k)
        unwarps = [random_unwarp(rng, 80.0) for _ in seqs] if warped else identities(seqs)
        _, trace = fit_hawkes_mle(seqs, unwarps, MleConfig(max_iters=15, tol=1e-300), num_types=2,
                                  decay=truth.decay)
        assert trace.size == 16
        assert np.all(np.diff(trace) <= 1e-9)


def test_em_trace_matches_warped_nll():
    rng = np.random.default_rng(9)
    seqs = simulate_many(HawkesParams([0.3], [[0.5]], 1.0), 50.0, 3, 10)
    unwarps = [random_unwarp(rng, 50.0) for _ in seqs]
    p, trace = fit_hawkes_mle(seqs, unwarps, MleConfig(max_iters=4, tol=1e-300), num_types=1)
    direct = sum(warped_neg_log_likelihood(p, u, s) for u, s in zip(unwarps, seqs))
    assert trace[-1] == pytest.approx(direct, rel=1e-11)


def test_em_restart_at_fixed_point_is_stationary():
    seqs = simulate_many(HawkesParams([0.5], [[0.4]], 1.0), 100.0, 50, 11)
    cfg = MleConfig(max_iters=500, tol=1e-12)
    p, _ = fit_hawkes_mle(seqs, identities(seqs), cfg, num_types=1)
    _, trace = fit_hawkes_mle(seqs, identities(seqs), MleConfig(), init=p)
    assert abs(trace[1] - trace[0]) / abs(trace[0]) < MleConfig().tol


def test_approximate_denominator_matches_exact_for_identity():
    seqs = simulate_many(HawkesParams([0.5], [[0.4]], 1.0), 100.0, 10, 12)
    a, _ = fit_hawkes_mle(seqs, identities(seqs), MleConfig(exact_compensator=True), num_types=1)
    b, _ = fit_hawkes_mle(seqs, identities(seqs), MleConfig(exact_compensator=False), num_types=1)
    np.testing.assert_allclose(a.phi, b.phi, rtol=1e-9)
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-9)


# -- Poisson amplitudes -------------------------------------------------------------------------------


def homogeneous():
    return PoissonBumpModel([0.0], [0.0], [1.0])


def test_poisson_homogeneous_mle_is_rate():
    seqs = simulate_many(PoissonBumpModel([0.0], [0.0], [0.7]), 100.0, 3, 13)
    I = sum(len(s) for s in seqs)
    m = fit_poisson_mle(seqs, identities(seqs), homogeneous())
    assert m.amplitudes[0] == pytest.approx(I / 300.0, rel=1e-12)


def test_poisson_homogeneous_mle_is_warp_invariant():
    rng = np.random.default_rng(14)
    seqs = simulate_many(PoissonBumpModel([0.0], [0.0], [0.7]), 100.0, 3, 15)
    I = sum(len(s) for s in seqs)
    for _ in range(5):
        unwarps = [generate_cosine_warp(10, 100.0, rng)[0] for _ in seqs]
        m = fit_poisson_mle(seqs, unwarps, homogeneous())
        assert m.amplitudes[0] == pytest.approx(I / 300.0, rel=1e-12)


def test_poisson_two_bump_matches_grid_search():
    structure = PoissonBumpModel([0.0, 20.0], [0.1, 0.5], [1.0, 1.0])
    seqs = simulate_many(PoissonBumpModel([0.0, 20.0], [0.1, 0.5], [0.8, 2.0]), 50.0, 5, 16)
    rng = np.random.default_rng(17)
    unwarps = [random_unwarp(rng, 50.0) for _ in seqs]
    m = fit_poisson_mle(seqs, unwarps, structure)
    parts = [poisson_design(structure, s, u) for s, u in zip(seqs, unwarps)]
    basis = np.vstack([p[0] for p in parts])
    weights = sum(p[1] for p in parts)

    def nll(a):
        return weights @ a - np.sum(np.log(basis @ a))

    def argmin_on(xs, ys):
        vals = np.array([[nll(np.array([x, y])) for y in ys] for x in xs])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        return np.array([xs[i], ys[j]])

    coarse = argmin_on(np.linspace(1e-6, 4.0, 401), np.linspace(1e-6, 6.0, 401))
    best = argmin_on(*(np.linspace(max(c - 0.02, 1e-6), c + 0.02, 401) for c in coarse))
    np.testing.assert_allclose(m.amplitudes, best, atol=1e-3)
    assert nll(m.amplitudes) <= nll(best) + 1e-12


def test_poisson_objective_is_convex():
    structure = PoissonBumpModel([0.0, 10.0, 30.0], [0.0, 0.3, 1.0], [1.0, 1.0, 1.0])
    s = simulate_many(PoissonBumpModel([0.0, 10.0, 30.0], [0.0, 0.3, 1.0], [0.2, 1.0, 2.0]), 50.0, 1, 18)[0]
    basis, weights = poisson_design(structure, s, PiecewiseLinearWarp.identity(50.0))
    f = lambda a: weights @ a - np.sum(np.log(basis @ a))
    rng = np.random.default_rng(19)
    for _ in range(50):
        a, b = rng.uniform(0.01, 3, 3), rng.uniform(0.01, 3, 3)
        assert f((a + b) / 2) <= (f(a) + f(b)) / 2 + 1e-12


def test_poisson_event_before_every_onset_errors():
    structure = PoissonBumpModel([10.0], [1.0], [1.0])
    with pytest.raises(ImpossibleEventError):
        fit_poisson_mle([seq([5.0, 12.0], T=20.0)], [PiecewiseLinearWarp.identity(20.0)], structure)


def test_poisson_zero_amplitude_on_empty_bump():
    # No events after the second onset: its amplitude hits the bound.
    structure = PoissonBumpModel([0.0, 80.0], [0.0, 1.0], [1.0, 1.0])
    m = fit_poisson_mle([seq([1.0, 10.0, 30.0])], [PiecewiseLinearWarp.identity(100.0)], structure)
    assert m.amplitudes[1] == 0.0
    assert m.amplitudes[0] == pytest.approx(0.03, rel=1e-10)


def test_fit_model_dispatch():
    seqs = simulate_many(PoissonBumpModel([0.0], [0.0], [0.7]), 100.0, 2, 20)
    assert isinstance(fit_model(homogeneous(), seqs, identities(seqs)), PoissonBumpModel)
    hseqs = simulate_many(HawkesParams([0.3], [[0.2]]), 100.0, 2, 21)
    assert isinstance(fit_model(HawkesParams([1.0], [[0.0]]), hseqs, identities(hseqs)), HawkesParams)
