"""Alternating registration: model MLE on unwarped data, then warp updates.

The objective is

    sum_m NLL(theta; U_m(S_m)) + gamma * int_0^T |mean_m U_m(s) - s|^2 ds,

minimized over the model parameters ``theta`` and the per-sequence unwarps
``U_m``.  Each outer iteration refits the model on the current unwarped
data (warm-started), then updates every unwarp by the warp subproblem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .core import ModelSpec, warped_neg_log_likelihood
from .errors import DomainError, ImpossibleEventError
from .mle import MleConfig, fit_model
from .warp import PiecewiseLinearWarp, squared_integral, warp_inverse
from .warpsolver import WarpSolverConfig, regularizer_terms, solve_warp_subproblem


@dataclass(frozen=True)
class RegistrationConfig:
    """Settings of the alternating optimization.

    Parameters
    ----------
    num_landmarks : int
        Landmarks per unwarp, equispaced on each sequence's window.
    gamma : float
        Weight of the mean-unwarp regularizer.
    outer_iters : int
        Maximum number of (MLE, warp update) iterations.
    update_mode : {"parallel", "sequential"}
        ``"parallel"`` updates every warp against the previous iteration's
        warps; ``"sequential"`` sweeps the sequences in order, each update
        seeing the latest warps of the others.
    early_stop : float
        Stop when the relative change of the loss falls below this value.
    n_jobs : int
        Worker threads for the parallel warp updates.
    """

    num_landmarks: int = 20
    gamma: float = 0.01
    outer_iters: int = 7
    mle: MleConfig = field(default_factory=MleConfig)
    solver: WarpSolverConfig = field(default_factory=WarpSolverConfig)
    update_mode: str = "parallel"
    early_stop: float = 1e-6
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.num_landmarks < 2:
            raise DomainError("num_landmarks must be >= 2")
        if self.gamma < 0:
            raise DomainError("gamma must be nonnegative")
        if self.outer_iters < 1:
            raise DomainError("outer_iters must be >= 1")
        if self.update_mode not in ("parallel", "sequential"):
            raise DomainError(f"unknown update_mode {self.update_mode!r}")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Fitted model, per-sequence unwarps and warps, and the loss trace.

    ``trace[0]`` is the loss of the first model fit with identity unwarps
    (the plain MLE on observed data); ``trace[k]`` follows the warp update of
    iteration ``k``.  ``timings`` holds wall-clock seconds per iteration and
    is excluded from equality.
    """

    model: ModelSpec
    unwarps: tuple
    trace: np.ndarray
    timings: tuple = ()
    seq_ids: tuple = ()

    @property
    def warps(self) -> tuple:
        return tuple(warp_inverse(u) for u in self.unwarps)

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1

    def __eq__(self, other):
        if not isinstance(other, RegistrationResult):
            return NotImplemented
        return (self.model == other.model and len(self.unwarps) == len(other.unwarps)
                and all(a == b for a, b in zip(self.unwarps, other.unwarps))
                and np.array_equal(self.trace, other.trace) and self.seq_ids == other.seq_ids)

    __hash__ = None


def mean_unwarp_deviation(unwarps) -> float:
    """``int |mean_m U_m(s) - s|^2 ds``, exact.

    Unwarps on different horizons are compared on the unit interval and the
    result is scaled back by the cube of the mean horizon.
    """
    unwarps = list(unwarps)
    horizons = np.array([u.horizon for u in unwarps])
    if np.all(horizons == horizons[0]):
        grid = np.unique(np.concatenate([u.landmarks for u in unwarps]))
        mean = np.mean([np.interp(grid, u.landmarks, u.knots) for u in unwarps], axis=0)
        return squared_integral(grid, mean - grid)
    grid = np.unique(np.concatenate([u.landmarks / u.horizon for u in unwarps]))
    mean = np.mean([np.interp(grid, u.landmarks / u.horizon, u.knots / u.horizon) for u in unwarps], axis=0)
    return float(np.mean(horizons) ** 3 * squared_integral(grid, mean - grid))


def total_loss(model: ModelSpec, unwarps, seqs, gamma: float) -> float:
    """Sum of warped NLLs plus ``gamma`` times the mean-unwarp deviation."""
    unwarps, seqs = list(unwarps), list(seqs)
    if len(unwarps) != len(seqs):
        raise DomainError("one unwarp per sequence is required")
    nll = sum(warped_neg_log_likelihood(model, u, s) for u, s in zip(unwarps, seqs))
    if gamma == 0:
        return float(nll)
    return float(nll + gamma * mean_unwarp_deviation(unwarps))


def relative_estimation_error(estimate: ModelSpec, truth: ModelSpec) -> float:
    """``||theta_hat - theta|| / ||theta||`` over the learnable parameters."""
    if type(estimate) is not type(truth):
        raise DomainError("estimate and truth belong to different model families")
    a, b = estimate.flat(), truth.flat()
    if a.shape != b.shape:
        raise DomainError(f"parameter shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _with_context(err: Exception, context: str) -> Exception:
    if isinstance(err, ImpossibleEventError):
        return ImpossibleEventError(err.index, err.seq_id, f"{context}: {err}")
    try:
        return type(err)(f"{context}: {err}")
    except Exception:  # pragma: no cover - exotic exception signatures
        return err


def _data_nll(model, unwarps, seqs):
    return sum(warped_neg_log_likelihood(model, u, s) for u, s in zip(unwarps, seqs))


def register(seqs, template: ModelSpec, config: RegistrationConfig = RegistrationConfig(),
             initial_unwarps=None) -> RegistrationResult:
    """Jointly fit a shared model and one unwarp per sequence.

    Parameters
    ----------
    seqs : list of EventSequence
        Observed sequences.
    template : HawkesParams or PoissonBumpModel
        Fixes the model family and its structure (type count and decay, or
        bump onsets and decays).  Its parameter values are not used.
    config : RegistrationConfig
    initial_unwarps : list of PiecewiseLinearWarp, optional
        Starting unwarps; identity on an equispaced grid by default.
    """
    seqs = list(seqs)
    if not seqs:
        raise DomainError("registration needs at least one sequence")
    L = config.num_landmarks
    if initial_unwarps is None:
        unwarps = [PiecewiseLinearWarp.identity(s.horizon, L) for s in seqs]
    else:
        unwarps = list(initial_unwarps)
        if len(unwarps) != len(seqs) or any(u.num_landmarks != unwarps[0].num_landmarks for u in unwarps):
            raise DomainError("initial unwarps must match the sequences and share a landmark count")
    gamma = config.gamma
    kind = config.solver.regularizer
    model = None
    trace = []
    timings = []
    for k in range(1, config.outer_iters + 1):
        start = time.perf_counter()
        try:
            fitted = fit_model(template, seqs, unwarps, config.mle, init=model, n_jobs=config.n_jobs)
        except Exception as err:
            raise _with_context(err, f"model fit of iteration {k}") from err
        if model is not None and _data_nll(fitted, unwarps, seqs) > _data_nll(model, unwarps, seqs):
            fitted = model
        model = fitted
        if k == 1:
            trace.append(total_loss(model, unwarps, seqs, gamma))

        def update(m, current):
            reg = regularizer_terms(current, m, gamma, kind)
            try:
                return solve_warp_subproblem(model, current[m], reg, seqs[m], config.solver)
            except Exception as err:
                raise _with_context(err, f"warp update of sequence {seqs[m].seq_id!r} "
                                         f"in iteration {k}") from err

        if config.update_mode == "parallel":
            frozen = list(unwarps)
            unwarps = parallel_map(lambda m: update(m, frozen), range(len(seqs)), config.n_jobs)
        else:
            for m in range(len(seqs)):
                unwarps[m] = update(m, unwarps)
        trace.append(total_loss(model, unwarps, seqs, gamma))
        timings.append(time.perf_counter() - start)
        prev = trace[-2]
        if abs(prev - trace[-1]) <= config.early_stop * max(abs(prev), 1e-300):
            break
    return RegistrationResult(model, tuple(unwarps), np.array(trace), tuple(timings),
                              tuple(s.seq_id for s in seqs))


def warped_mle(seqs, template: ModelSpec, config: MleConfig = MleConfig(), n_jobs: int = 1) -> ModelSpec:
    """Plain MLE on the observed (still warped) sequences."""
    seqs = list(seqs)
    return fit_model(template, seqs, [PiecewiseLinearWarp.identity(s.horizon) for s in seqs], config,
                     n_jobs=n_jobs)
