import math

import numpy as np
import pytest

from regpp.core import EventSequence, HawkesParams, PoissonBumpModel
from regpp.errors import DomainError
from regpp.evaluate import (BootstrapConfig, blend_with_identity, bootstrap_variance, distortion_error_experiment,
                            holdout_loglik, infectivity_matrix, kendall_tau, risk_over, risk_under)
from regpp.mle import fit_model
from regpp.register import relative_estimation_error, warped_mle
from regpp.simulate import simulate_many
from regpp.warp import PiecewiseLinearWarp, distortion, generate_cosine_warp

HOMOGENEOUS = PoissonBumpModel([0.0], [0.0], [1.0])


def rate(mu):
    return PoissonBumpModel([0.0], [0.0], [mu])


def poisson_fit(seqs):
    return fit_model(HOMOGENEOUS, seqs, [PiecewiseLinearWarp.identity(s.horizon) for s in seqs])


# -- held-out likelihood ---------------------------------------------------------------------


def test_holdout_homogeneous_poisson():
    s = EventSequence([1.0, 4.0, 9.0], [0, 0, 0], 10.0)
    assert holdout_loglik(rate(0.4), [s]) == pytest.approx(3 * math.log(0.4) - 4.0, rel=1e-14)
    assert holdout_loglik(rate(0.4), [EventSequence([], [], 10.0)]) == pytest.approx(-4.0, rel=1e-15)


def test_holdout_is_mean_over_sequences():
    a = EventSequence([1.0], [0], 10.0)
    b = EventSequence([], [], 10.0)
    assert holdout_loglik(rate(0.5), [a, b]) == pytest.approx((math.log(0.5) - 5.0 - 5.0) / 2, rel=1e-14)


def test_truth_scores_higher_than_doubled_rate():
    truth = PoissonBumpModel([0.0, 30.0], [0.0, 0.2], [0.3, 1.0])
    doubled = PoissonBumpModel([0.0, 30.0], [0.0, 0.2], [0.6, 2.0])
    gaps = [holdout_loglik(truth, t) - holdout_loglik(doubled, t)
            for t in (simulate_many(truth, 100.0, 5, k) for k in range(100))]
    assert np.mean(gaps) > 0


def test_holdout_needs_data():
    with pytest.raises(DomainError):
        holdout_loglik(rate(1.0), [])


# -- over-registration risk ------------------------------------------------------------------------


def test_risk_over_identity_is_zero():
    assert risk_over([PiecewiseLinearWarp.identity(10.0, 4)] * 3) == 0.0


def test_risk_over_identical_biased_warps_is_infinite():
    w = PiecewiseLinearWarp([0.0, 5.0, 10.0], [0.0, 7.0, 10.0])
    assert risk_over([w, w, w]) == math.inf


def test_risk_over_mirror_pair_is_zero():
    a = PiecewiseLinearWarp([0.0, 5.0, 10.0], [0.0, 7.0, 10.0])
    b = PiecewiseLinearWarp([0.0, 5.0, 10.0], [0.0, 3.0, 10.0])
    assert risk_over([a, b]) == 0.0


def test_risk_over_hand_computed():
    # Tents of heights 1 and 3 at t = 5: the mean has height 2, each spread height 1.
    a = PiecewiseLinearWarp([0.0, 5.0, 10.0], [0.0, 6.0, 10.0])
    b = PiecewiseLinearWarp([0.0, 5.0, 10.0], [0.0, 8.0, 10.0])
    assert risk_over([a, b]) == pytest.approx(4.0, rel=1e-14)


def test_risk_over_permutation_invariant():
    rng = np.random.default_rng(0)
    ws = [generate_cosine_warp(8, 50.0, rng, 40)[0] for _ in range(5)]
    assert risk_over(ws) == pytest.approx(risk_over(ws[::-1]), rel=1e-13)


def test_risk_over_validation():
    with pytest.raises(DomainError):
        risk_over([PiecewiseLinearWarp.identity(10.0)])
    with pytest.raises(DomainError):
        risk_over([PiecewiseLinearWarp.identity(10.0), PiecewiseLinearWarp.identity(20.0)])


# -- under-registration risk ------------------------------------------------------------------------


def test_frozen_seed_bootstrap_has_zero_variance():
    cfg = BootstrapConfig(replicates=5, frozen_seed=True)
    assert risk_under(rate(1.0), poisson_fit, [100.0], cfg) == 0.0


def test_bootstrap_variance_of_poisson_rate():
    res = bootstrap_variance(rate(1.0), poisson_fit, [100.0], BootstrapConfig(replicates=200, seed=1))
    assert res.estimates.shape == (200, 1)
    assert 0.005 <= res.risk <= 0.015


def test_bootstrap_variance_halves_with_twice_the_data():
    cfg = BootstrapConfig(replicates=200, seed=2)
    one = risk_under(rate(1.0), poisson_fit, [100.0], cfg)
    two = risk_under(rate(1.0), poisson_fit, [100.0, 100.0], cfg)
    assert 1 / 1.5 <= (one / 2) / two <= 1.5


def test_bootstrap_is_reproducible_and_nonnegative():
    cfg = BootstrapConfig(replicates=4, seed=3)
    a = bootstrap_variance(rate(0.5), poisson_fit, [50.0, 60.0], cfg)
    b = bootstrap_variance(rate(0.5), poisson_fit, [50.0, 60.0], cfg, n_jobs=3)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    assert a.risk >= 0


def test_bootstrap_config_validation():
    with pytest.raises(DomainError):
        BootstrapConfig(replicates=1)


# -- rank correlation -------------------------------------------------------------------------------


def test_kendall_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert kendall_tau([1, 2, 3], [2, 1, 3]) == pytest.approx(1 / 3)


def test_kendall_tau_b_with_ties():
    # Pairs: x ties one pair; concordant 4, discordant 1, n0 = 6, n1 = 1, n2 = 0.
    x, y = [1, 1, 2, 3], [1, 2, 3, 0]
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    s = sum(np.sign(x[i] - x[j]) * np.sign(y[i] - y[j]) for i, j in pairs)
    tx = sum(x[i] == x[j] for i, j in pairs)
    ty = sum(y[i] == y[j] for i, j in pairs)
    expect = s / math.sqrt((6 - tx) * (6 - ty))
    assert kendall_tau(x, y) == pytest.approx(expect, rel=1e-14)


def test_kendall_properties():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert kendall_tau(x, y) == pytest.approx(kendall_tau(y, x), rel=1e-14)
    assert kendall_tau(np.exp(x), y**3) == pytest.approx(kendall_tau(x, y), rel=1e-14)


@pytest.mark.parametrize("x, y", [([1, 2], [1, 2, 3]), ([1], [1]), ([2, 2, 2], [1, 2, 3]), ([1, 2, 3], [0, 0, 0])])
def test_kendall_invalid(x, y):
    with pytest.raises(DomainError):
        kendall_tau(x, y)


# -- infectivity -------------------------------------------------------------------------------------


def test_infectivity_examples():
    np.testing.assert_array_equal(infectivity_matrix(HawkesParams([0.1], [[0.0]]), 10.0), [[0.0]])
    psi = infectivity_matrix(HawkesParams([0.1], [[0.5]], 1.0), 100.0)
    assert psi[0, 0] == pytest.approx(0.5 * -math.expm1(-100.0), rel=1e-15)
    small = infectivity_matrix(HawkesParams([0.1], [[0.5]], 1e-15), 10.0)
    assert small[0, 0] == pytest.approx(5.0, rel=1e-12)


def test_infectivity_monotone_in_horizon():
    p = HawkesParams([0.1, 0.2], [[0.3, 0.0], [0.2, 0.1]], 0.7)
    values = [infectivity_matrix(p, T) for T in (1.0, 5.0, 20.0, 100.0)]
    assert all(np.all(b >= a) for a, b in zip(values[:-1], values[1:]))


# -- distortion experiment -------------------------------------------------------------------------------


def test_blend_with_identity():
    w = PiecewiseLinearWarp([0.0, 5.0, 10.0], [0.0, 8.0, 10.0])
    assert blend_with_identity(w, 0.0).is_identity()
    assert blend_with_identity(w, 1.0) == w
    assert distortion(blend_with_identity(w, 0.5)) == pytest.approx(0.5 * distortion(w), rel=1e-14)
    with pytest.raises(DomainError):
        blend_with_identity(w, 1.5)


def test_distortion_experiment_is_deterministic():
    truth = HawkesParams([0.5], [[0.4]])
    a = distortion_error_experiment(truth, trials=4, sequences=5, horizon=50.0, seed=1)
    b = distortion_error_experiment(truth, trials=4, sequences=5, horizon=50.0, seed=1, n_jobs=2)
    np.testing.assert_array_equal(a.errors, b.errors)
    np.testing.assert_array_equal(a.distortions, b.distortions)
    np.testing.assert_array_equal(a.strengths, [0.0, 0.25, 0.5, 0.75])


def test_zero_strength_trials_match_unwarped_mle():
    truth = HawkesParams([0.5], [[0.4]])
    table = distortion_error_experiment(truth, trials=2, sequences=5, horizon=50.0, strengths=(0.0,), seed=2)
    assert np.all(table.distortions == 0.0)
    seeds = np.random.SeedSequence(2).spawn(2)
    for k in range(2):
        seqs = simulate_many(truth, 50.0, 5, seeds[k].spawn(2)[0], prefix=f"t{k}s")
        assert table.errors[k] == relative_estimation_error(warped_mle(seqs, truth), truth)
