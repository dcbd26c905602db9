"""Ogata thinning, synthetic registration datasets and sequence stitching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .core import EventSequence, HawkesParams, ModelSpec, PoissonBumpModel, _bump_pieces
from .errors import DomainError, StationarityError
from .warp import (PiecewiseLinearWarp, generate_cosine_warp, stitch_warps,
                   transform_sequence, warp_inverse)


def check_stationary(params: HawkesParams) -> None:
    rho = params.spectral_radius()
    if rho >= 1.0:
        raise StationarityError(
            f"spectral radius of phi / decay is {rho:.4g} >= 1; the process explodes "
            "and cannot be simulated on long windows")


def _thin_hawkes(params: HawkesParams, T: float, rng: np.random.Generator):
    mu, phi, w = params.mu, params.phi, params.decay
    excite = np.zeros(params.num_types)
    t = 0.0
    times, types = [], []
    while True:
        # Intensity only decays until the next event, so the current total
        # rate dominates the intensity on the whole waiting interval.
        bound = float(mu.sum() + excite.sum())
        if bound <= 0.0:
            break
        dt = rng.exponential(1.0 / bound)
        t += dt
        if t > T:
            break
        excite *= np.exp(-w * dt)
        rates = mu + excite
        total = float(rates.sum())
        if rng.uniform() * bound <= total:
            c = int(np.searchsorted(np.cumsum(rates), rng.uniform() * total, side="right"))
            c = min(c, params.num_types - 1)
            times.append(t)
            types.append(c)
            excite += phi[:, c]
    return times, types


def _poisson_pieces(model: PoissonBumpModel, T: float):
    on, end, beta, idx = _bump_pieces(model, T)
    return on, end, beta, model.amplitudes[idx]


def _thin_poisson(model: PoissonBumpModel, T: float, rng: np.random.Generator):
    on, end, beta, amp = _poisson_pieces(model, T)
    breaks = np.unique(np.concatenate([on, end[np.isfinite(end)], [T]]))

    def right_rate(s):
        live = (on <= s) & (s < end)
        return float(np.sum(amp[live] * np.exp(-beta[live] * (s - on[live]))))

    t = 0.0
    times = []
    while t < T:
        nxt = float(breaks[np.searchsorted(breaks, t, side="right")]) if t < breaks[-1] else T
        bound = right_rate(t)
        if bound <= 0.0:
            t = nxt
            continue
        cand = t + rng.exponential(1.0 / bound)
        if cand >= nxt:
            # A new bump may switch on at nxt; restart with a fresh bound.
            t = nxt
            continue
        if rng.uniform() * bound <= right_rate(cand):
            times.append(cand)
        t = cand
    return times, [0] * len(times)


def simulate_thinning(model: ModelSpec, T: float, rng: np.random.Generator,
                      seq_id: str = "") -> EventSequence:
    """Draw one sequence on ``[0, T]`` by Ogata thinning.

    Raises
    ------
    StationarityError
        For Hawkes parameters with spectral radius of ``phi / decay`` >= 1.
    """
    if not T > 0:
        raise DomainError("T must be positive")
    if isinstance(model, HawkesParams):
        check_stationary(model)
        times, types = _thin_hawkes(model, float(T), rng)
    else:
        times, types = _thin_poisson(model, float(T), rng)
    return EventSequence(np.array(times, dtype=float), np.array(types, dtype=np.int64), T, seq_id)


# ---------------------------------------------------------------------------
# ground-truth defaults


def default_hawkes_truth(num_types: int = 4, seed: int = 0, radius: float = 0.8,
                         density: float = 0.5, decay: float = 1.0) -> HawkesParams:
    """Random sparse Hawkes model with a prescribed branching spectral radius.

    A documented stand-in for unavailable published ground truth: background
    rates uniform on ``[0.1, 0.3]``, each off-diagonal excitation kept with
    probability ``density``, diagonal always present.
    """
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.1, 0.3, size=num_types)
    raw = rng.uniform(0.2, 1.0, size=(num_types, num_types))
    raw *= (rng.uniform(size=raw.shape) < density) | np.eye(num_types, dtype=bool)
    rho = np.max(np.abs(np.linalg.eigvals(raw / decay)))
    return HawkesParams(mu, raw * (radius / rho), decay)


def default_poisson_truth(horizon: float, rng: np.random.Generator, num_bumps: int = 5,
                          background: float = 0.05) -> PoissonBumpModel:
    """Unit bumps ``exp(-(t - t_j))`` at uniform onsets plus a small constant rate.

    The background keeps every point of the window reachable: without it,
    warped events that land before the first onset have zero likelihood.
    """
    onsets = np.sort(rng.uniform(0.0, horizon, size=num_bumps))
    return PoissonBumpModel(np.concatenate([[0.0], onsets]),
                            np.concatenate([[0.0], np.ones(num_bumps)]),
                            np.concatenate([[background], np.ones(num_bumps)]))


# ---------------------------------------------------------------------------
# synthetic datasets


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Recipe for a warped training set and an unwarped test set.

    ``identity_warps`` replaces every generated warp by the identity, a
    debugging control in which training data are raw simulations.
    """

    model: ModelSpec
    num_sequences: int = 200
    horizon: float = 100.0
    warp_basis: int = 10
    seed: int = 0
    train_fraction: float = 0.5
    warp_resolution: int = 200
    identity_warps: bool = False

    def __post_init__(self):
        if self.num_sequences < 1:
            raise DomainError("num_sequences must be >= 1")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise DomainError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Observed (warped) training sequences with their true warps, plus test data.

    ``train_warps[m]`` maps the standard timeline to sequence ``m``'s
    observed one; ``true_unwarps`` are their inverses.  ``train_raw`` keeps
    the simulations before warping.
    """

    train: list
    train_warps: list
    train_raw: list
    test: list
    model: ModelSpec
    spec: SyntheticDatasetSpec | None = None

    @property
    def true_unwarps(self) -> list:
        return [warp_inverse(w) for w in self.train_warps]


def sequence_streams(seed, count: int) -> list:
    """Independent generators, one per sequence, from a single seed.

    A :class:`numpy.random.SeedSequence` argument is copied first, because
    spawning mutates it; the same seed always yields the same streams.
    """
    if isinstance(seed, np.random.SeedSequence):
        root = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    else:
        root = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(count)]


def simulate_many(model: ModelSpec, horizon: float, count: int, seed, prefix: str = "s",
                  n_jobs: int = 1) -> list:
    rngs = sequence_streams(seed, count)
    return parallel_map(lambda k: simulate_thinning(model, horizon, rngs[k], f"{prefix}{k}"),
                        range(count), n_jobs)


def make_synthetic_dataset(spec: SyntheticDatasetSpec, n_jobs: int = 1) -> SyntheticDataset:
    """Simulate, split, and warp the training part of a synthetic dataset."""
    sim_seed, warp_seed = np.random.SeedSequence(spec.seed).spawn(2)
    seqs = simulate_many(spec.model, spec.horizon, spec.num_sequences, sim_seed, n_jobs=n_jobs)
    n_train = int(round(spec.num_sequences * spec.train_fraction))
    n_train = min(max(n_train, 1), spec.num_sequences)
    raw, test = seqs[:n_train], seqs[n_train:]
    warps = []
    for rng in sequence_streams(warp_seed, n_train):
        if spec.identity_warps:
            warps.append(PiecewiseLinearWarp.identity(spec.horizon))
        else:
            warps.append(generate_cosine_warp(spec.warp_basis, spec.horizon, rng,
                                              spec.warp_resolution)[0])
    train = [transform_sequence(w, s) for w, s in zip(warps, raw)]
    return SyntheticDataset(train, warps, raw, test, spec.model, spec)


# ---------------------------------------------------------------------------
# stitching


def stitch(seqs) -> EventSequence:
    """Concatenate equal-horizon sequences, shifting block ``k`` by ``kT``."""
    seqs = list(seqs)
    if not seqs:
        raise DomainError("nothing to stitch")
    T = seqs[0].horizon
    if any(s.horizon != T for s in seqs):
        raise DomainError("only sequences with identical horizons can be stitched")
    times = np.concatenate([s.times + k * T for k, s in enumerate(seqs)])
    types = np.concatenate([s.types for s in seqs])
    return EventSequence(times, types, len(seqs) * T, "+".join(s.seq_id for s in seqs),
                         seqs[0].covariate)


def stitch_randomly(seqs, K: int, rng: np.random.Generator, warps=None):
    """Follow every sequence by ``K`` distinct random partners.

    Partners are drawn uniformly without replacement among the other
    sequences.  Returns the stitched sequences, and the matching
    block-diagonal warps when ``warps`` is given.
    """
    seqs = list(seqs)
    M = len(seqs)
    if K < 0:
        raise DomainError("K must be nonnegative")
    if K >= M and K > 0:
        raise DomainError(f"cannot pick {K} distinct partners among {M} sequences")
    if K == 0:
        return (seqs, list(warps)) if warps is not None else seqs
    out_seqs, out_warps = [], []
    for m in range(M):
        others = np.delete(np.arange(M), m)
        members = [m] + [int(j) for j in rng.choice(others, size=K, replace=False)]
        out_seqs.append(stitch([seqs[j] for j in members]))
        if warps is not None:
            out_warps.append(stitch_warps([warps[j] for j in members]))
    return (out_seqs, out_warps) if warps is not None else out_seqs


def periodic_model(model: ModelSpec, period: float) -> ModelSpec:
    """The model repeated per stitched block (Poisson); Hawkes is unchanged."""
    if isinstance(model, PoissonBumpModel):
        return PoissonBumpModel(model.onsets, model.decays, model.amplitudes, period)
    return model
