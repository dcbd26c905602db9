"""Monotone piecewise-linear warps, cosine-basis warp generation and distortion.

A :class:`PiecewiseLinearWarp` maps ``[0, T]`` onto itself.  It is stored as
knot values ``v_l`` at landmarks ``t_l``; on segment ``l`` the map is
``a_l * t + b_l`` with ``a_l = (v_{l+1} - v_l) / (t_{l+1} - t_l)`` and
``b_l = v_l - a_l * t_l``.  The same type serves for warps ``W`` and for
unwarps ``U = W^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EventSequence
from .errors import DomainError


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PiecewiseLinearWarp:
    """Monotone piecewise-linear bijection of ``[0, T]``.

    Parameters
    ----------
    landmarks : array_like
        Strictly increasing, ``landmarks[0] == 0``, ``landmarks[-1] == T``.
    knots : array_like
        Map values at the landmarks; strictly increasing with the same
        endpoints.
    """

    landmarks: np.ndarray
    knots: np.ndarray

    def __post_init__(self):
        t = _readonly(self.landmarks)
        v = _readonly(self.knots)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise DomainError("landmarks and knots must be 1-D arrays of equal length >= 2")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise DomainError("landmarks and knots must be finite")
        if t[0] != 0.0 or v[0] != 0.0:
            raise DomainError("a warp must start at 0")
        if v[-1] != t[-1]:
            raise DomainError(f"a warp must end at its horizon {t[-1]}, got knot {v[-1]}")
        if np.any(np.diff(t) <= 0):
            raise DomainError("landmarks must be strictly increasing")
        if np.any(np.diff(v) <= 0):
            raise DomainError("knot values must be strictly increasing")
        object.__setattr__(self, "landmarks", t)
        object.__setattr__(self, "knots", v)

    @classmethod
    def identity(cls, horizon: float, num_landmarks: int = 2) -> "PiecewiseLinearWarp":
        grid = landmark_grid(horizon, num_landmarks)
        return cls(grid, grid)

    @classmethod
    def from_increments(cls, landmarks, increments) -> "PiecewiseLinearWarp":
        """Build from segment increments ``d_l = v_{l+1} - v_l`` summing to ``T``."""
        landmarks = np.asarray(landmarks, dtype=float)
        v = np.concatenate([[0.0], np.cumsum(increments)])
        v[-1] = landmarks[-1]
        return cls(landmarks, v)

    @property
    def horizon(self) -> float:
        return float(self.landmarks[-1])

    @property
    def num_landmarks(self) -> int:
        return int(self.landmarks.size)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.knots) / np.diff(self.landmarks)

    @property
    def intercepts(self) -> np.ndarray:
        return self.knots[:-1] - self.slopes * self.landmarks[:-1]

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.landmarks, self.knots))

    def __call__(self, t):
        return warp_eval(self, t)

    def __eq__(self, other):
        if not isinstance(other, PiecewiseLinearWarp):
            return NotImplemented
        return np.array_equal(self.landmarks, other.landmarks) and np.array_equal(self.knots, other.knots)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"landmarks": self.landmarks.tolist(), "knots": self.knots.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewiseLinearWarp":
        return cls(data["landmarks"], data["knots"])


def landmark_grid(horizon: float, num_landmarks: int) -> np.ndarray:
    """``num_landmarks`` equispaced points on ``[0, horizon]`` with exact endpoints."""
    if num_landmarks < 2:
        raise DomainError("at least two landmarks are required")
    grid = np.linspace(0.0, float(horizon), int(num_landmarks))
    grid[-1] = float(horizon)
    return grid


def warp_eval(warp: PiecewiseLinearWarp, t):
    """Evaluate the warp at ``t`` (scalar or array) by linear interpolation."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr > warp.horizon) or not np.all(np.isfinite(arr)):
        raise DomainError(f"t outside [0, {warp.horizon}]")
    out = np.interp(arr, warp.landmarks, warp.knots)
    return float(out) if out.ndim == 0 else out


def warp_inverse(warp: PiecewiseLinearWarp) -> PiecewiseLinearWarp:
    """Exact inverse map: landmarks and knot values swap roles."""
    return PiecewiseLinearWarp(warp.knots, warp.landmarks)


def transform_sequence(warp: PiecewiseLinearWarp, seq: EventSequence) -> EventSequence:
    """Map event times through ``warp``; types, id and covariate are kept."""
    if seq.horizon != warp.horizon:
        raise DomainError(f"sequence {seq.seq_id!r} has horizon {seq.horizon}, warp has {warp.horizon}")
    times = np.asarray(warp_eval(warp, seq.times), dtype=float)
    return EventSequence(times, seq.types, seq.horizon, seq.seq_id, seq.covariate)


@dataclass(frozen=True)
class CosineWarpSpec:
    """Coefficients of a warp ``W(t) = sum_n w_n cos^2(pi (t - t_n) / (2 delta))``.

    Each basis function is supported on ``|t - t_n| <= delta`` around the
    landmark ``t_n = n * delta``, ``delta = T / (N - 1)``.
    """

    coefficients: tuple
    horizon: float

    @property
    def num_basis(self) -> int:
        return len(self.coefficients)

    @property
    def spacing(self) -> float:
        return self.horizon / (self.num_basis - 1)

    def __call__(self, t):
        return cosine_warp_eval(self, t)


def cosine_warp_eval(spec: CosineWarpSpec, t):
    """Evaluate the continuous cosine-basis warp.

    Between adjacent landmarks only two basis functions are nonzero and they
    sum to one, so the map is a convex combination of neighbouring
    coefficients.
    """
    w = np.asarray(spec.coefficients, dtype=float)
    arr = np.asarray(t, dtype=float)
    delta = spec.spacing
    pos = np.clip(arr / delta, 0.0, spec.num_basis - 1)
    n = np.minimum(np.floor(pos).astype(int), spec.num_basis - 2)
    frac = pos - n
    mix = np.sin(0.5 * np.pi * frac) ** 2
    out = (1.0 - mix) * w[n] + mix * w[n + 1]
    return float(out) if out.ndim == 0 else out


def generate_cosine_warp(num_basis: int, horizon: float, rng: np.random.Generator,
                         resolution: int = 200):
    """Draw a random monotone cosine-basis warp and discretize it.

    ``num_basis - 1`` coefficients are drawn uniformly on ``[0, horizon]`` and
    sorted; the smallest is replaced by 0 and ``horizon`` is appended, so the
    map fixes both endpoints.

    Returns
    -------
    warp : PiecewiseLinearWarp
        The map sampled at ``resolution + 1`` equispaced points.
    spec : CosineWarpSpec
        The raw coefficients, for exact replay.
    """
    if num_basis < 3:
        raise DomainError("the cosine warp needs at least 3 basis functions")
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    draws = np.sort(rng.uniform(0.0, horizon, size=num_basis - 1))
    draws[0] = 0.0
    coef = np.concatenate([draws, [horizon]])
    spec = CosineWarpSpec(tuple(float(c) for c in coef), float(horizon))
    return discretize_cosine_warp(spec, resolution), spec


def discretize_cosine_warp(spec: CosineWarpSpec, resolution: int = 200) -> PiecewiseLinearWarp:
    grid = landmark_grid(spec.horizon, resolution + 1)
    values = np.asarray(cosine_warp_eval(spec, grid))
    values[0], values[-1] = 0.0, spec.horizon
    # Tied coefficients give flat stretches; keep the map strictly monotone.
    floor = 1e-9 * spec.horizon / resolution
    values = np.maximum.accumulate(values + floor * np.arange(values.size)) if np.any(np.diff(values) <= 0) else values
    if values[-1] != spec.horizon:
        values = values * (spec.horizon / values[-1])
        values[-1] = spec.horizon
    return PiecewiseLinearWarp(grid, values)


def distortion(warp: PiecewiseLinearWarp) -> float:
    """``max_t |W(t) - t| / T``; the maximum is attained at a knot."""
    return float(np.max(np.abs(warp.knots - warp.landmarks)) / warp.horizon)


def merged_grid(warps) -> np.ndarray:
    """Union of the landmarks of warps sharing one horizon."""
    horizons = {w.horizon for w in warps}
    if len(horizons) != 1:
        raise DomainError(f"warps have different horizons: {sorted(horizons)}")
    return np.unique(np.concatenate([w.landmarks for w in warps]))


def squared_integral(grid, values) -> float:
    """``int f(s)^2 ds`` for ``f`` piecewise linear through ``(grid, values)``."""
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(values, dtype=float)
    h = np.diff(grid)
    f0, f1 = f[:-1], f[1:]
    return float(np.sum(h * (f0 * f0 + f0 * f1 + f1 * f1)) / 3.0)


def identity_deviation(warp: PiecewiseLinearWarp) -> float:
    """L2 distance ``(int_0^T |W(s) - s|^2 ds)^(1/2)``, computed exactly."""
    return float(np.sqrt(squared_integral(warp.landmarks, warp.knots - warp.landmarks)))


def stitch_warps(warps) -> PiecewiseLinearWarp:
    """Block-diagonal concatenation of equal-horizon warps.

    Block ``k`` acts on ``[kT, (k + 1)T]`` as the ``k``-th warp shifted by
    ``kT``; the stitched distortion is ``max_k D_k / K``.
    """
    warps = list(warps)
    if not warps:
        raise DomainError("nothing to stitch")
    T = warps[0].horizon
    if any(w.horizon != T for w in warps):
        raise DomainError("stitched warps must share one horizon")
    t_parts = [warps[0].landmarks]
    v_parts = [warps[0].knots]
    for k, w in enumerate(warps[1:], start=1):
        t_parts.append(w.landmarks[1:] + k * T)
        v_parts.append(w.knots[1:] + k * T)
    t = np.concatenate(t_parts)
    v = np.concatenate(v_parts)
    v[-1] = t[-1]
    return PiecewiseLinearWarp(t, v)
