"""Event sequences, exponential-like intensity models and their likelihoods.

Two model families are supported, both sums of truncated exponentials in
time:

* :class:`HawkesParams` -- multivariate Hawkes process with exponential
  kernel ``phi[c, c'] * exp(-w * dt)`` and fixed decay ``w``;
* :class:`PoissonBumpModel` -- inhomogeneous Poisson process whose intensity
  is ``sum_j alpha_j * exp(-beta_j * (t - t_j))`` for ``t >= t_j``.

Likelihoods can be evaluated on an observed sequence directly or through a
piecewise-linear unwarping function ``U`` (anything exposing ``landmarks``
and ``knots`` arrays).  For the unwarped likelihood the compensator is
``sum_c int_0^T lambda_c(U(s)) ds``; on each landmark segment ``U`` is affine,
so every integral below has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError, ImpossibleEventError


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def phi1(x):
    """``(1 - exp(-x)) / x`` with the ``x -> 0`` limit filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


def phi2(x):
    """``(1 - (1 + x) exp(-x)) / x**2``, i.e. ``int_0^1 r exp(-x r) dr``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.05
    safe = np.where(small, 1.0, x)
    direct = (-np.expm1(-safe) - safe * np.exp(-safe)) / (safe * safe)
    series = (1 / 2 - x / 3 + x**2 / 8 - x**3 / 30 + x**4 / 144
              - x**5 / 840 + x**6 / 5760)
    return np.where(small, series, direct)


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Marked events ``(t_i, c_i)`` observed on ``[0, horizon]``.

    Type indices are 0-based.  Times must be strictly increasing; events
    sharing a timestamp are rejected.
    """

    times: np.ndarray
    types: np.ndarray
    horizon: float
    seq_id: str = ""
    covariate: float | None = None

    def __post_init__(self):
        times = _frozen(self.times)
        types = _frozen(self.types, dtype=np.int64) if len(self.types) else _frozen([], np.int64)
        horizon = float(self.horizon)
        if times.ndim != 1 or types.shape != times.shape:
            raise DomainError(f"sequence {self.seq_id!r}: times and types must be 1-D of equal length")
        if not np.isfinite(horizon) or horizon <= 0:
            raise DomainError(f"sequence {self.seq_id!r}: horizon must be positive, got {horizon}")
        if times.size:
            if not np.all(np.isfinite(times)):
                raise DomainError(f"sequence {self.seq_id!r}: non-finite event time")
            if times[0] < 0 or times[-1] > horizon:
                raise DomainError(f"sequence {self.seq_id!r}: event times outside [0, {horizon}]")
            if np.any(np.diff(times) <= 0):
                raise DomainError(f"sequence {self.seq_id!r}: event times must be strictly increasing")
            if types.min() < 0:
                raise DomainError(f"sequence {self.seq_id!r}: negative type index")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "seq_id", str(self.seq_id))

    def __len__(self):
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (self.horizon == other.horizon and self.seq_id == other.seq_id
                and self.covariate == other.covariate
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.types, other.types))

    __hash__ = None

    def with_times(self, times, horizon=None) -> "EventSequence":
        return EventSequence(times, self.types, self.horizon if horizon is None else horizon,
                             self.seq_id, self.covariate)

    def prefix_before(self, t: float) -> "EventSequence":
        """Events strictly before ``t`` (the left-continuous history)."""
        k = int(np.searchsorted(self.times, t, side="left"))
        return EventSequence(self.times[:k], self.types[:k], self.horizon, self.seq_id, self.covariate)


def check_types(seq: EventSequence, num_types: int) -> None:
    if len(seq) and seq.types.max() >= num_types:
        raise DomainError(f"sequence {seq.seq_id!r}: type index {int(seq.types.max())} "
                          f"outside 0..{num_types - 1}")


@dataclass(frozen=True, eq=False)
class HawkesParams:
    """Multivariate Hawkes parameters.

    ``phi[c, c']`` is the jump added to the type-``c`` intensity by a
    type-``c'`` event; ``decay`` is the shared kernel rate ``w``.
    """

    mu: np.ndarray
    phi: np.ndarray
    decay: float = 1.0

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mu))
        phi = _frozen(np.atleast_2d(self.phi))
        if mu.ndim != 1 or phi.shape != (mu.size, mu.size):
            raise DomainError(f"mu has length {mu.size} but phi has shape {phi.shape}")
        if np.any(mu < 0) or np.any(phi < 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(phi))):
            raise DomainError("mu and phi must be finite and nonnegative")
        if not self.decay > 0:
            raise DomainError(f"decay must be positive, got {self.decay}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "decay", float(self.decay))

    @property
    def num_types(self) -> int:
        return int(self.mu.size)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mu, self.phi.ravel()])

    def from_flat(self, theta) -> "HawkesParams":
        c = self.num_types
        theta = np.asarray(theta, dtype=float)
        return HawkesParams(theta[:c], theta[c:].reshape(c, c), self.decay)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.phi / self.decay))))

    def __eq__(self, other):
        if not isinstance(other, HawkesParams):
            return NotImplemented
        return (self.decay == other.decay and np.array_equal(self.mu, other.mu)
                and np.array_equal(self.phi, other.phi))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PoissonBumpModel:
    """Inhomogeneous Poisson intensity built from truncated exponential bumps.

    Bump ``j`` contributes ``amplitudes[j] * exp(-decays[j] * (t - onsets[j]))``
    for ``t >= onsets[j]``.  A bump with onset 0 and decay 0 is a constant
    background rate.

    If ``period`` is set the intensity is that of the base model evaluated at
    ``t mod period``: sequences made of ``K`` back-to-back blocks of length
    ``period`` then see the same model in every block.
    """

    onsets: np.ndarray
    decays: np.ndarray
    amplitudes: np.ndarray
    period: float | None = None

    def __post_init__(self):
        on = _frozen(np.atleast_1d(self.onsets))
        be = _frozen(np.atleast_1d(self.decays))
        al = _frozen(np.atleast_1d(self.amplitudes))
        if not (on.shape == be.shape == al.shape) or on.ndim != 1 or on.size == 0:
            raise DomainError("onsets, decays and amplitudes must be equal-length 1-D arrays")
        if np.any(be < 0) or np.any(al < 0):
            raise DomainError("bump decays and amplitudes must be nonnegative")
        if np.any(on < 0):
            raise DomainError("bump onsets must be nonnegative")
        if self.period is not None:
            if not self.period > 0 or np.any(on >= self.period):
                raise DomainError("period must be positive and exceed every onset")
            object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "onsets", on)
        object.__setattr__(self, "decays", be)
        object.__setattr__(self, "amplitudes", al)

    num_types = 1

    def flat(self) -> np.ndarray:
        return self.amplitudes.copy()

    def from_flat(self, theta) -> "PoissonBumpModel":
        return PoissonBumpModel(self.onsets, self.decays, theta, self.period)

    def __eq__(self, other):
        if not isinstance(other, PoissonBumpModel):
            return NotImplemented
        return (self.period == other.period and np.array_equal(self.onsets, other.onsets)
                and np.array_equal(self.decays, other.decays)
                and np.array_equal(self.amplitudes, other.amplitudes))

    __hash__ = None


ModelSpec = Union[HawkesParams, PoissonBumpModel]


# ---------------------------------------------------------------------------
# intensities


def hawkes_intensity(params: HawkesParams, history: EventSequence, c: int, t: float) -> float:
    """``mu_c + sum_{t_i < t} phi[c, c_i] exp(-w (t - t_i))``."""
    if not 0 <= c < params.num_types:
        raise DomainError(f"type index {c} outside 0..{params.num_types - 1}")
    if t < 0:
        raise DomainError("t must be nonnegative")
    mask = history.times < t
    dt = t - history.times[mask]
    return float(params.mu[c] + np.sum(params.phi[c, history.types[mask]] * np.exp(-params.decay * dt)))


def _bump_pieces(model: PoissonBumpModel, horizon: float):
    """Expand (possibly periodic) bumps into ``(onset, end, decay, index)`` arrays."""
    j = np.arange(model.onsets.size)
    if model.period is None:
        return (model.onsets, np.full(j.size, np.inf), model.decays, j)
    n_blocks = max(1, int(np.ceil(horizon / model.period - 1e-12)))
    shift = model.period * np.arange(n_blocks)
    on = (model.onsets[None, :] + shift[:, None]).ravel()
    end = np.repeat(shift + model.period, j.size)
    keep = on < horizon
    return on[keep], end[keep], np.tile(model.decays, n_blocks)[keep], np.tile(j, n_blocks)[keep]


def bump_basis(model: PoissonBumpModel, u, horizon: float) -> np.ndarray:
    """Unit-amplitude bump values at times ``u``; ``lambda(u) = basis @ amplitudes``."""
    u = np.asarray(u, dtype=float)
    on, end, beta, idx = _bump_pieces(model, horizon)
    active = (u[:, None] >= on[None, :]) & (u[:, None] < end[None, :])
    vals = np.where(active, np.exp(-beta[None, :] * np.where(active, u[:, None] - on[None, :], 0.0)), 0.0)
    out = np.zeros((u.size, model.onsets.size))
    np.add.at(out.T, idx, vals.T)
    return out


def bump_basis_integrals(model: PoissonBumpModel, lo, hi, horizon: float) -> np.ndarray:
    """``int_lo^hi`` of every unit-amplitude bump, shape ``(len(lo), J)``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    on, end, beta, idx = _bump_pieces(model, horizon)
    a = np.maximum(lo[:, None], on[None, :])
    b = np.minimum(hi[:, None], end[None, :])
    length = np.maximum(b - a, 0.0)
    start = np.where(length > 0, a - on[None, :], 0.0)
    vals = np.exp(-beta[None, :] * start) * length * phi1(beta[None, :] * length)
    out = np.zeros((lo.size, model.onsets.size))
    np.add.at(out.T, idx, vals.T)
    return out


def poisson_intensity(model: PoissonBumpModel, t: float) -> float:
    """Sum of the bumps active at ``t``."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    horizon = max(float(t) * 1.0000001, float(t) + 1.0)
    return float(bump_basis(model, [t], horizon)[0] @ model.amplitudes)


# ---------------------------------------------------------------------------
# shared closed forms


def exp_integrals(landmarks, knots, decay: float, lower, upper, shift) -> np.ndarray:
    """``int_lower^upper exp(-w (U(s) - shift)) ds`` for arrays of bounds.

    ``U`` is the piecewise-linear map through ``(landmarks, knots)``.  Each
    segment contributes ``exp(-w (U(a) - shift)) * len * phi1(w * slope * len)``.
    """
    tl = np.asarray(landmarks, dtype=float)
    vl = np.asarray(knots, dtype=float)
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    shift = np.broadcast_to(np.asarray(shift, dtype=float), lower.shape)
    slope = np.diff(vl) / np.diff(tl)
    a = np.maximum(tl[None, :-1], lower[:, None])
    b = np.minimum(tl[None, 1:], upper[:, None])
    length = np.maximum(b - a, 0.0)
    live = length > 0
    ua = vl[None, :-1] + slope[None, :] * (a - tl[None, :-1])
    offset = np.where(live, ua - shift[:, None], 0.0)
    piece = np.where(live, np.exp(-decay * offset) * length * phi1(decay * slope[None, :] * length), 0.0)
    return piece.sum(axis=1)


def pairwise_decay(u, decay: float) -> np.ndarray:
    """Strictly lower-triangular matrix ``K[i, j] = exp(-w (u_i - u_j))`` for ``j < i``."""
    u = np.asarray(u, dtype=float)
    diff = u[:, None] - u[None, :]
    lower = np.tril(np.ones((u.size, u.size), dtype=bool), k=-1)
    return np.where(lower, np.exp(-decay * np.where(lower, diff, 0.0)), 0.0)


def hawkes_event_intensities(params: HawkesParams, u, types) -> np.ndarray:
    """Intensity of each event's own type just before it, at (unwarped) times ``u``."""
    types = np.asarray(types, dtype=np.int64)
    if u.size == 0:
        return np.zeros(0)
    kernel = pairwise_decay(u, params.decay)
    return params.mu[types] + np.sum(params.phi[types][:, types] * kernel, axis=1)


def _check_positive(lam, seq):
    bad = np.flatnonzero(~(lam > 0))
    if bad.size:
        raise ImpossibleEventError(int(bad[0]), seq.seq_id)


def _is_identity(unwarp) -> bool:
    return bool(np.array_equal(unwarp.landmarks, unwarp.knots))


# ---------------------------------------------------------------------------
# likelihoods


def compensator(model: ModelSpec, seq: EventSequence) -> float:
    """``sum_c int_0^T lambda_c(s) ds`` on the sequence's own timeline."""
    T = seq.horizon
    if isinstance(model, HawkesParams):
        check_types(seq, model.num_types)
        rest = T - seq.times
        mass = model.phi.sum(axis=0)[seq.types]
        return float(model.mu.sum() * T + np.sum(mass * rest * phi1(model.decay * rest)))
    _check_poisson(seq)
    return float(bump_basis_integrals(model, [0.0], [T], T)[0] @ model.amplitudes)


def _check_poisson(seq):
    if len(seq) and np.any(seq.types != 0):
        raise DomainError(f"sequence {seq.seq_id!r}: Poisson bump models have a single event type")


def neg_log_likelihood(model: ModelSpec, seq: EventSequence) -> float:
    """``sum_c int_0^T lambda_c ds - sum_i log lambda_{c_i}(t_i)``."""
    if isinstance(model, HawkesParams):
        check_types(seq, model.num_types)
        lam = hawkes_event_intensities(model, seq.times, seq.types)
    else:
        _check_poisson(seq)
        lam = bump_basis(model, seq.times, seq.horizon) @ model.amplitudes
    _check_positive(lam, seq)
    return compensator(model, seq) - float(np.sum(np.log(lam)))


def warped_compensator(model: ModelSpec, unwarp, seq: EventSequence) -> float:
    """``sum_c int_0^T lambda_c(U(s)) ds`` with the history unwarped by ``U``."""
    T = seq.horizon
    tl, vl = unwarp.landmarks, unwarp.knots
    if isinstance(model, HawkesParams):
        check_types(seq, model.num_types)
        u = np.interp(seq.times, tl, vl)
        mass = model.phi.sum(axis=0)[seq.types]
        kernel_mass = exp_integrals(tl, vl, model.decay, seq.times, np.full(len(seq), T), u) if len(seq) else np.zeros(0)
        return float(model.mu.sum() * T + np.sum(mass * kernel_mass))
    _check_poisson(seq)
    d = np.diff(vl)
    seg = bump_basis_integrals(model, vl[:-1], vl[1:], T) @ model.amplitudes
    return float(np.sum(np.diff(tl) / d * seg))


def warped_neg_log_likelihood(model: ModelSpec, unwarp, seq: EventSequence) -> float:
    """Negative log-likelihood of ``U(S)``: events at ``U(t_i)``, compensator
    ``sum_c int_0^T lambda_c(U(s)) ds``.  An identity ``U`` defers to
    :func:`neg_log_likelihood`."""
    if unwarp.landmarks[-1] != seq.horizon:
        raise DomainError(f"unwarp horizon {unwarp.landmarks[-1]} != sequence horizon {seq.horizon}")
    if _is_identity(unwarp):
        return neg_log_likelihood(model, seq)
    u = np.interp(seq.times, unwarp.landmarks, unwarp.knots)
    if isinstance(model, HawkesParams):
        check_types(seq, model.num_types)
        lam = hawkes_event_intensities(model, u, seq.types)
    else:
        _check_poisson(seq)
        lam = bump_basis(model, u, seq.horizon) @ model.amplitudes
    _check_positive(lam, seq)
    return warped_compensator(model, unwarp, seq) - float(np.sum(np.log(lam)))


def segment_masses(model: ModelSpec, unwarp, seq: EventSequence) -> np.ndarray:
    """``p_l = sum_c int_{U(t_l)}^{U(t_{l+1})} lambda_c(u) du`` per landmark segment.

    Integration is over the unwarped timeline with the unwarped history, so
    ``sum_l p_l / a_l`` equals :func:`warped_compensator`.
    """
    T = seq.horizon
    vl = np.asarray(unwarp.knots, dtype=float)
    lo, hi = vl[:-1], vl[1:]
    if isinstance(model, HawkesParams):
        check_types(seq, model.num_types)
        u = np.interp(seq.times, unwarp.landmarks, vl)
        mass = model.phi.sum(axis=0)[seq.types]
        a = np.maximum(lo[None, :], u[:, None])
        length = np.maximum(hi[None, :] - a, 0.0)
        start = np.where(length > 0, a - u[:, None], 0.0)
        w = model.decay
        contrib = np.exp(-w * start) * length * phi1(w * length)
        return model.mu.sum() * (hi - lo) + mass @ contrib
    return bump_basis_integrals(model, lo, hi, T) @ model.amplitudes
