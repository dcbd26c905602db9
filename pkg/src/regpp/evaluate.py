"""Evaluation metrics and the distortion-versus-error experiment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._parallel import parallel_map
from .core import HawkesParams, ModelSpec, neg_log_likelihood
from .errors import DomainError
from .mle import MleConfig
from .register import relative_estimation_error, warped_mle
from .simulate import sequence_streams, simulate_many, simulate_thinning
from .warp import (PiecewiseLinearWarp, distortion, generate_cosine_warp, merged_grid,
                   squared_integral, transform_sequence)


def holdout_loglik(model: ModelSpec, test) -> float:
    """Mean per-sequence log-likelihood of (unwarped) test sequences."""
    test = list(test)
    if not test:
        raise DomainError("the test set is empty")
    return float(-np.mean([neg_log_likelihood(model, s) for s in test]))


def risk_over(warps) -> float:
    """Squared bias of the mean warp over the mean squared spread of the warps.

    Both integrals are exact on the merged landmark grid.  Returns 0 when the
    bias vanishes (relative to ``T**3``) and ``inf`` when the warps coincide
    but are biased.
    """
    warps = list(warps)
    if len(warps) < 2:
        raise DomainError("risk_over needs at least two warps")
    grid = merged_grid(warps)
    T = grid[-1]
    values = np.array([np.interp(grid, w.landmarks, w.knots) for w in warps])
    mean = values.mean(axis=0)
    numerator = squared_integral(grid, mean - grid)
    denominator = float(np.mean([squared_integral(grid, v - mean) for v in values]))
    if numerator < 1e-12 * T**3:
        return 0.0
    if denominator < 1e-12 * T**3:
        return float("inf")
    return numerator / denominator


@dataclass(frozen=True)
class BootstrapConfig:
    """Parametric bootstrap settings.

    ``frozen_seed`` reuses one random stream for every replicate, which makes
    all replicates identical (a debugging mode with zero variance).
    """

    replicates: int = 50
    seed: int = 0
    frozen_seed: bool = False

    def __post_init__(self):
        if self.replicates < 2:
            raise DomainError("at least two bootstrap replicates are required")


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Per-parameter variances across replicates and their mean."""

    risk: float
    variances: np.ndarray
    estimates: np.ndarray


def bootstrap_variance(model: ModelSpec, fit, horizons, config: BootstrapConfig = BootstrapConfig(),
                       n_jobs: int = 1) -> BootstrapResult:
    """Parametric bootstrap of a fitting procedure.

    Parameters
    ----------
    model : ModelSpec
        Fitted model to simulate from (no warping).
    fit : callable
        Maps a list of sequences to a fitted model of the same family.
    horizons : sequence of float
        Window of every simulated sequence; its length is ``M``.
    """
    horizons = [float(h) for h in horizons]
    if not horizons:
        raise DomainError("horizons must be nonempty")
    seeds = np.random.SeedSequence(config.seed).spawn(config.replicates)

    def replicate(b):
        seed = seeds[0] if config.frozen_seed else seeds[b]
        rngs = sequence_streams(seed, len(horizons))
        seqs = [simulate_thinning(model, T, rng, f"b{b}s{m}") for m, (T, rng) in enumerate(zip(horizons, rngs))]
        try:
            return fit(seqs).flat()
        except Exception as err:
            raise type(err)(f"bootstrap replicate {b}: {err}") from err

    estimates = np.array(parallel_map(replicate, range(config.replicates), n_jobs))
    variances = estimates.var(axis=0, ddof=1)
    return BootstrapResult(float(variances.mean()), variances, estimates)


def risk_under(model: ModelSpec, fit, horizons, config: BootstrapConfig = BootstrapConfig(),
               n_jobs: int = 1) -> float:
    """Mean bootstrap variance of the flattened parameter vector."""
    return bootstrap_variance(model, fit, horizons, config, n_jobs).risk


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall rank correlation (tau-b)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("x and y must be 1-D vectors of equal length")
    if x.size < 2:
        raise DomainError("at least two observations are required")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DomainError("Kendall's tau is undefined when every value of an input is tied")
    return float(stats.kendalltau(x, y, variant="b").statistic)


def infectivity_matrix(params: HawkesParams, T: float) -> np.ndarray:
    """``psi[c, c'] = int_0^T phi[c, c'] exp(-w s) ds``."""
    w = params.decay
    x = w * T
    scale = T if x < 1e-12 else -np.expm1(-x) / w
    return params.phi * scale


def blend_with_identity(warp: PiecewiseLinearWarp, strength: float) -> PiecewiseLinearWarp:
    """``(1 - s) * id + s * W`` on the warp's own landmarks."""
    if not 0.0 <= strength <= 1.0:
        raise DomainError("blend strength must lie in [0, 1]")
    if strength == 0.0:
        return PiecewiseLinearWarp(warp.landmarks, warp.landmarks)
    v = (1.0 - strength) * warp.landmarks + strength * warp.knots
    v[0], v[-1] = 0.0, warp.horizon
    return PiecewiseLinearWarp(warp.landmarks, v)


@dataclass(frozen=True, eq=False)
class DistortionErrorTable:
    """Per-trial distortion and relative error of the warped-data MLE."""

    strengths: np.ndarray
    distortions: np.ndarray
    errors: np.ndarray
    pearson: float
    kendall: float


def distortion_error_experiment(truth: HawkesParams, trials: int = 50, sequences: int = 40,
                                horizon: float = 100.0, strengths=(0.0, 0.25, 0.5, 0.75, 1.0),
                                warp_basis: int = 10, seed: int = 0, mle: MleConfig = MleConfig(),
                                n_jobs: int = 1) -> DistortionErrorTable:
    """How much a shared warp biases the plain MLE.

    Trial ``k`` simulates ``sequences`` sequences, warps all of them with one
    random cosine warp blended with the identity at strength
    ``strengths[k % len(strengths)]``, fits the MLE on the warped data and
    records the warp's distortion next to the relative estimation error.
    """
    strengths = np.asarray(strengths, dtype=float)
    if trials < 2:
        raise DomainError("at least two trials are required")
    seeds = np.random.SeedSequence(seed).spawn(trials)

    def trial(k):
        sim_seed, warp_seed = seeds[k].spawn(2)
        seqs = simulate_many(truth, horizon, sequences, sim_seed, prefix=f"t{k}s")
        base, _ = generate_cosine_warp(warp_basis, horizon, np.random.default_rng(warp_seed))
        s = float(strengths[k % strengths.size])
        warp = blend_with_identity(base, s)
        observed = [transform_sequence(warp, x) for x in seqs]
        est = warped_mle(observed, truth, mle)
        return s, distortion(warp), relative_estimation_error(est, truth)

    rows = np.array(parallel_map(trial, range(trials), n_jobs))
    dist, err = rows[:, 1], rows[:, 2]
    pearson = float(stats.pearsonr(dist, err).statistic) if np.ptp(dist) > 0 and np.ptp(err) > 0 else float("nan")
    kendall = kendall_tau(dist, err) if np.ptp(dist) > 0 and np.ptp(err) > 0 else float("nan")
    return DistortionErrorTable(rows[:, 0], dist, err, pearson, kendall)
