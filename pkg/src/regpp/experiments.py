"""Synthetic experiment protocols built on the library.

* :func:`synthetic_experiment` -- warped-data MLE versus registration, with
  and without random stitching, over training-set sizes and seeds;
* :func:`parameter_sweep` -- registration error as a function of the
  regularizer weight or the landmark count;
* :func:`distortion_error_experiment` (re-exported) -- how warping biases
  the plain MLE.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import HawkesParams, ModelSpec, PoissonBumpModel
from .errors import DomainError
from .evaluate import distortion_error_experiment, holdout_loglik
from .io import DataSettings, ModelSettings, RegistrationSettings
from .mle import MleConfig
from .register import RegistrationConfig, register, relative_estimation_error, warped_mle
from .simulate import (SyntheticDatasetSpec, default_hawkes_truth, default_poisson_truth,
                       make_synthetic_dataset, periodic_model, stitch_randomly)
from .warpsolver import WarpSolverConfig

__all__ = ["ExperimentRow", "build_truth", "registration_config", "synthetic_experiment",
           "parameter_sweep", "distortion_error_experiment", "summarize"]


def build_truth(settings: ModelSettings, horizon: float, seed: int = 0) -> ModelSpec:
    """Ground-truth model from configuration.

    Explicit parameters win; otherwise Hawkes truth is a random sparse
    matrix with the configured spectral radius and Poisson truth places
    unit bumps at onsets drawn from ``seed``.
    """
    if settings.family == "hawkes":
        if settings.mu is not None and settings.phi is not None:
            return HawkesParams(settings.mu, settings.phi, settings.decay)
        return default_hawkes_truth(settings.num_types, settings.truth_seed,
                                    settings.spectral_radius, decay=settings.decay)
    if settings.onsets is not None:
        J = len(settings.onsets)
        decays = settings.bump_decays if settings.bump_decays is not None else [1.0] * J
        amps = settings.amplitudes if settings.amplitudes is not None else [1.0] * J
        return PoissonBumpModel(settings.onsets, decays, amps)
    rng = np.random.default_rng(np.random.SeedSequence([settings.truth_seed, seed]))
    return default_poisson_truth(horizon, rng, settings.num_bumps, settings.background)


def registration_config(settings: RegistrationSettings, seed: int = 0, n_jobs: int = 1,
                        **overrides) -> RegistrationConfig:
    cfg = RegistrationConfig(
        num_landmarks=settings.num_landmarks, gamma=settings.gamma, outer_iters=settings.outer_iters,
        mle=MleConfig(settings.mle_max_iters, settings.mle_tol, settings.exact_compensator),
        solver=WarpSolverConfig(inner_rounds=settings.inner_rounds, pg_iters=settings.pg_iters,
                                surrogate=settings.surrogate, regularizer=settings.regularizer),
        update_mode=settings.update_mode, seed=seed, n_jobs=n_jobs)
    return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class ExperimentRow:
    seed: int
    train_size: int
    method: str
    parameter: float
    error: float
    holdout: float


def _stitched_landmarks(num_landmarks: int, K: int) -> int:
    # Keep the landmark spacing of an unstitched sequence.
    return (K + 1) * (num_landmarks - 1) + 1


def _registered(model: ModelSpec, truth: ModelSpec) -> ModelSpec:
    if isinstance(model, PoissonBumpModel):
        return PoissonBumpModel(truth.onsets, truth.decays, model.amplitudes)
    return model


def synthetic_experiment(model_settings: ModelSettings, data: DataSettings,
                         reg_settings: RegistrationSettings, seeds=range(5), train_sizes=(40,),
                         stitch=(1,), n_jobs: int = 1, methods=("warped", "rpp", "stitch")) -> list:
    """Compare warped-data MLE, registration and registration after stitching.

    For every seed one dataset is simulated with ``max(train_sizes)`` training
    sequences (plus as many test sequences); prefixes of its training part
    give the smaller training sets.
    """
    rows = []
    largest = max(train_sizes)
    for seed in seeds:
        truth = build_truth(model_settings, data.horizon, seed)
        spec = SyntheticDatasetSpec(truth, 2 * largest, data.horizon, data.warp_basis, seed, 0.5,
                                    data.warp_resolution, data.identity_warps)
        ds = make_synthetic_dataset(spec, n_jobs=n_jobs)
        cfg = registration_config(reg_settings, seed, n_jobs)
        for n in train_sizes:
            train = ds.train[:n]

            def record(method, model, parameter=float("nan")):
                est = _registered(model, truth)
                rows.append(ExperimentRow(seed, n, method, parameter,
                                          relative_estimation_error(est, truth),
                                          holdout_loglik(est, ds.test)))

            if "warped" in methods:
                record("warped", warped_mle(train, truth, cfg.mle, n_jobs))
            if "rpp" in methods:
                record("rpp", register(train, truth, cfg).model)
            if "stitch" in methods:
                for K in stitch:
                    if K >= n:
                        raise DomainError(f"cannot stitch {K} partners with {n} training sequences")
                    rng = np.random.default_rng(np.random.SeedSequence([seed, K]))
                    stitched = stitch_randomly(train, K, rng)
                    kcfg = replace(cfg, num_landmarks=_stitched_landmarks(cfg.num_landmarks, K))
                    result = register(stitched, periodic_model(truth, data.horizon), kcfg)
                    record(f"stitch{K}", result.model, float(K))
    return rows


def parameter_sweep(parameter: str, values, model_settings: ModelSettings, data: DataSettings,
                    reg_settings: RegistrationSettings, seeds=range(3), train_size: int = 40,
                    n_jobs: int = 1) -> list:
    """Registration error for each value of ``gamma`` or ``num_landmarks``."""
    if parameter not in ("gamma", "num_landmarks"):
        raise DomainError(f"cannot sweep {parameter!r}")
    rows = []
    for seed in seeds:
        truth = build_truth(model_settings, data.horizon, seed)
        spec = SyntheticDatasetSpec(truth, 2 * train_size, data.horizon, data.warp_basis, seed, 0.5,
                                    data.warp_resolution, data.identity_warps)
        ds = make_synthetic_dataset(spec, n_jobs=n_jobs)
        for value in values:
            value = int(value) if parameter == "num_landmarks" else float(value)
            cfg = registration_config(reg_settings, seed, n_jobs, **{parameter: value})
            est = _registered(register(ds.train, truth, cfg).model, truth)
            rows.append(ExperimentRow(seed, train_size, "rpp", float(value),
                                      relative_estimation_error(est, truth), holdout_loglik(est, ds.test)))
    return rows


def summarize(rows, key=("method", "train_size")) -> dict:
    """Median error and holdout log-likelihood per group."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, k) for k in key), []).append(r)
    return {k: (float(np.median([r.error for r in v])), float(np.median([r.holdout for r in v])))
            for k, v in groups.items()}
