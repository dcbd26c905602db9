"""Per-sequence warp subproblem.

Given a fitted model, the unwarp ``U`` of one sequence is updated by
majorize-minimize.  ``U`` is parameterized by its knot increments
``d_l = v_{l+1} - v_l`` on a fixed landmark grid, so ``U(t_i) = sum_l E_il d_l``
with ``E_il = clip((t_i - t_l) / (t_{l+1} - t_l), 0, 1)``.  The feasible set is
``{d >= eps, sum(d) = T}``.

The log term ``-log lambda(U(t_i))`` is bounded with Jensen's inequality
using weights ``q_ij`` of the intensity terms at the current iterate.  Two
surrogates are available:

``"exact"`` (default)
    The compensator is kept exact and trigger times move with ``d`` inside
    the Jensen bound.  For Hawkes the log bound becomes linear in ``d`` and
    the compensator is convex, so the surrogate is a convex majorizer of the
    warped NLL, tight at the expansion point.
``"frozen"``
    The compensator is replaced by ``sum_l p_l / a_l`` with the segment
    masses ``p_l`` frozen, and each Hawkes trigger is frozen at its current
    unwarped time.  Tight at the expansion point; not a global bound.

Both are minimized by projected gradient with Barzilai-Borwein steps and
Armijo backtracking; a safeguard on the true objective guarantees that each
coefficient refresh never increases it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (EventSequence, HawkesParams, ModelSpec, PoissonBumpModel, _bump_pieces,
                   bump_basis, bump_basis_integrals, check_types, phi1, phi2,
                   segment_masses, warped_neg_log_likelihood)
from .errors import DescentFailure, DomainError, ImpossibleEventError
from .warp import PiecewiseLinearWarp


# ---------------------------------------------------------------------------
# regularizer


@dataclass(frozen=True, eq=False)
class RegularizerTerms:
    """Fixed contribution of the other sequences to one sequence's regularizer.

    With ``M`` sequences, the own unwarp enters through ``a / M + abar`` and
    ``b / M + bbar`` (``kind="coefficient"``: squared norms of slope and
    intercept deviations of the mean unwarp from the identity), or through the
    mean unwarp's knot values ``v / M + vbar`` (``kind="integral"``: the exact
    integral ``int |mean U(s) - s|^2 ds``).

    Sequences with different horizons are compared on a common rescaled
    timeline of length ``reference_horizon``; ``scale`` maps this sequence's
    own times onto it.
    """

    abar: np.ndarray
    bbar: np.ndarray
    vbar: np.ndarray
    weight: float = 0.0
    num_sequences: int = 1
    kind: str = "coefficient"
    scale: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise DomainError("regularizer weight must be nonnegative")
        if self.kind not in ("coefficient", "integral"):
            raise DomainError(f"unknown regularizer kind {self.kind!r}")
        for name in ("abar", "bbar", "vbar"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def single(cls, landmarks, weight: float = 0.0, kind: str = "coefficient") -> "RegularizerTerms":
        """Terms for ``M = 1``: the regularizer pulls the unwarp to the identity."""
        landmarks = np.asarray(landmarks, dtype=float)
        L = landmarks.size
        return cls(np.full(L - 1, -1.0), np.zeros(L - 1), -landmarks, weight, 1, kind, 1.0)


def regularizer_terms(unwarps, m: int, weight: float, kind: str = "coefficient") -> RegularizerTerms:
    """Regularizer terms of sequence ``m`` given every sequence's unwarp."""
    unwarps = list(unwarps)
    M = len(unwarps)
    sizes = {u.num_landmarks for u in unwarps}
    if len(sizes) != 1:
        raise DomainError("all unwarps must share the landmark count")
    horizons = np.array([u.horizon for u in unwarps])
    ref = float(np.mean(horizons))
    r = ref / horizons
    own = unwarps[m]
    abar = -np.ones(own.num_landmarks - 1)
    bbar = np.zeros(own.num_landmarks - 1)
    vbar = -own.landmarks * r[m]
    for k, u in enumerate(unwarps):
        if k == m:
            continue
        abar = abar + u.slopes / M
        bbar = bbar + r[k] * u.intercepts / M
        vbar = vbar + r[k] * u.knots / M
    return RegularizerTerms(abar, bbar, vbar, float(weight), M, kind, float(r[m]))


def _reg_value_grad(reg: RegularizerTerms, landmarks, d):
    """Regularizer value and gradient with respect to the increments ``d``."""
    if reg.weight == 0.0:
        return 0.0, np.zeros_like(d)
    M, r, g = reg.num_sequences, reg.scale, reg.weight
    t = landmarks
    delta = np.diff(t)
    v = np.concatenate([[0.0], np.cumsum(d)])
    if reg.kind == "coefficient":
        a = d / delta
        b = v[:-1] - a * t[:-1]
        ea = a / M + reg.abar
        eb = r * b / M + reg.bbar
        value = g * (ea @ ea + eb @ eb)
        ra = 2 * g * ea / M
        rb = 2 * g * r * eb / M
        # b_l = sum_{k<l} d_k - d_l t_l / delta_l
        tail = np.concatenate([np.cumsum(rb[::-1])[::-1][1:], [0.0]])
        grad = ra / delta + tail - rb * t[:-1] / delta
        return float(value), grad
    f = r * v / M + reg.vbar
    h = r * delta
    value = g * float(np.sum(h * (f[:-1] ** 2 + f[:-1] * f[1:] + f[1:] ** 2)) / 3.0)
    df = np.zeros_like(f)
    df[:-1] += h * (2 * f[:-1] + f[1:]) / 3.0
    df[1:] += h * (f[:-1] + 2 * f[1:]) / 3.0
    dv = g * df * r / M
    # v_l = sum_{k<l} d_k
    grad = np.cumsum(dv[::-1])[::-1][1:]
    return value, grad


def regularizer_value(reg: RegularizerTerms, unwarp: PiecewiseLinearWarp) -> float:
    return _reg_value_grad(reg, unwarp.landmarks, unwarp.increments)[0]


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class WarpSolverConfig:
    """Majorize-minimize settings for one warp subproblem.

    Parameters
    ----------
    inner_rounds : int
        Number of coefficient refreshes.
    pg_iters : int
        Maximum projected-gradient steps per round.
    floor_fraction : float
        Minimum increment as a fraction of the mean segment length ``T / L``.
    armijo : float
        Sufficient-decrease constant.
    tol : float
        Relative objective change that ends a round.
    surrogate : {"exact", "frozen"}
        Majorizer; see the module docstring.
    regularizer : {"coefficient", "integral"}
        Form of the regularizer used when building :class:`RegularizerTerms`.
    """

    inner_rounds: int = 5
    pg_iters: int = 200
    floor_fraction: float = 1e-6
    armijo: float = 1e-4
    tol: float = 1e-8
    surrogate: str = "exact"
    regularizer: str = "coefficient"

    def __post_init__(self):
        if self.inner_rounds < 1 or self.pg_iters < 1:
            raise DomainError("inner_rounds and pg_iters must be positive")
        if not (0 < self.floor_fraction < 1) or not (0 < self.armijo < 1) or not self.tol > 0:
            raise DomainError("floor_fraction, armijo and tol must be positive (and < 1)")
        if self.surrogate not in ("exact", "frozen"):
            raise DomainError(f"unknown surrogate {self.surrogate!r}")
        if self.regularizer not in ("coefficient", "integral"):
            raise DomainError(f"unknown regularizer {self.regularizer!r}")

    def floor(self, horizon: float, num_landmarks: int) -> float:
        return self.floor_fraction * horizon / num_landmarks


@dataclass(frozen=True, eq=False)
class SurrogateCoefficients:
    """One instance of the convex warp subproblem.

    Attributes
    ----------
    masses : ndarray, shape (L-1,)
        ``p_l``: model mass of each unwarped segment at the expansion point.
    weights : ndarray, shape (n, J)
        ``q_ij``: Jensen weight of intensity term ``j`` at event ``i``
        (Hawkes: column 0 is the background, the others the earlier events).
    term_slopes : ndarray, shape (J,)
        Exponential rate ``beta_j`` of every term.
    slope_weight : ndarray, shape (n,)
        Coefficient of ``U(t_i)`` in the linearized log bound.
    times : ndarray
        Observed event times ``t_i``.
    """

    kind: str
    model: ModelSpec
    landmarks: np.ndarray
    expansion: np.ndarray
    masses: np.ndarray
    weights: np.ndarray
    term_slopes: np.ndarray
    term_log_scale: np.ndarray
    slope_weight: np.ndarray
    times: np.ndarray
    types: np.ndarray
    window: tuple
    _cache: dict = field(repr=False, default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.landmarks[-1])


def _design(landmarks, times):
    t = landmarks
    delta = np.diff(t)
    return np.clip((times[:, None] - t[None, :-1]) / delta[None, :], 0.0, 1.0)


def surrogate_coefficients(params: ModelSpec, unwarp: PiecewiseLinearWarp, seq: EventSequence,
                           kind: str = "exact") -> SurrogateCoefficients:
    """Jensen weights and segment masses at the expansion point ``unwarp``."""
    if kind not in ("exact", "frozen"):
        raise DomainError(f"unknown surrogate {kind!r}")
    if unwarp.horizon != seq.horizon:
        raise DomainError(f"sequence {seq.seq_id!r}: unwarp horizon does not match")
    tl, vl = unwarp.landmarks, unwarp.knots
    u = np.interp(seq.times, tl, vl)
    n = len(seq)
    masses = segment_masses(params, unwarp, seq)
    if isinstance(params, HawkesParams):
        check_types(seq, params.num_types)
        w = params.decay
        c = seq.types
        lower = np.tril(np.ones((n, n), dtype=bool), k=-1)
        gap = np.where(lower, u[:, None] - u[None, :], 0.0)
        trig = np.where(lower, params.phi[c][:, c] * np.exp(-w * gap), 0.0)
        back = params.mu[c]
        lam = back + trig.sum(axis=1)
        bad = np.flatnonzero(~(lam > 0))
        if bad.size:
            raise ImpossibleEventError(int(bad[0]), seq.seq_id)
        weights = np.hstack([(back / lam)[:, None], trig / lam[:, None]])
        slopes = np.concatenate([[0.0], np.full(n, w)])
        # log of the term amplitude at unwarped time 0: mu, phi * exp(w u_j)
        log_scale = np.concatenate([[0.0], w * u])
        if kind == "exact":
            received = weights[:, 1:].sum(axis=0)
            slope_weight = w * ((1.0 - weights[:, 0]) - received)
        else:
            slope_weight = w * (1.0 - weights[:, 0])
        window = (np.full(n, -np.inf), np.full(n, np.inf))
    else:
        if n and np.any(seq.types != 0):
            raise DomainError(f"sequence {seq.seq_id!r}: Poisson bump models have a single event type")
        on, end, beta, idx = _bump_pieces(params, seq.horizon)
        amp = params.amplitudes[idx]
        active = (u[:, None] >= on[None, :]) & (u[:, None] < end[None, :])
        terms = np.where(active, amp[None, :] * np.exp(-beta[None, :] * np.where(active, u[:, None] - on[None, :], 0.0)), 0.0)
        lam = terms.sum(axis=1)
        bad = np.flatnonzero(~(lam > 0))
        if bad.size:
            raise ImpossibleEventError(int(bad[0]), seq.seq_id)
        weights = terms / lam[:, None]
        slopes = beta.astype(float)
        log_scale = beta * on
        slope_weight = weights @ slopes
        used = weights > 0
        lo = np.max(np.where(used, on[None, :], -np.inf), axis=1) if n else np.zeros(0)
        hi = np.min(np.where(used, end[None, :], np.inf), axis=1) if n else np.zeros(0)
        window = (lo, hi)
    return SurrogateCoefficients(kind, params, tl.copy(), unwarp.increments.copy(), masses, weights,
                                 slopes, log_scale, slope_weight, seq.times.copy(), seq.types.copy(),
                                 window)


def surrogate_constant(coeffs: SurrogateCoefficients) -> float:
    """The additive constant dropped from the surrogate.

    Adding it to :func:`surrogate_objective` at the expansion point (with
    zero regularizer weight) recovers the warped NLL.
    """
    q = coeffs.weights
    model = coeffs.model
    if isinstance(model, HawkesParams):
        c = coeffs.types
        amp = np.hstack([model.mu[c][:, None], model.phi[c][:, c]])
        log_amp = np.log(np.where(q > 0, amp, 1.0))
        if coeffs.kind == "frozen":
            log_amp = log_amp + np.where(q > 0, coeffs.term_log_scale[None, :], 0.0)
    else:
        on, end, beta, idx = _bump_pieces(model, coeffs.horizon)
        amp = model.amplitudes[idx]
        log_amp = np.log(np.where(q > 0, np.broadcast_to(amp, q.shape), 1.0)) + coeffs.term_log_scale[None, :]
    logq = np.log(np.where(q > 0, q, 1.0))
    return float(-np.sum(q * (log_amp - logq)))


def _compensator_value_grad(coeffs: SurrogateCoefficients, d: np.ndarray, need_grad: bool):
    """Exact warped compensator ``A(d)`` and its gradient."""
    model = coeffs.model
    t = coeffs.landmarks
    delta = np.diff(t)
    v = np.concatenate([[0.0], np.cumsum(d)])
    a = d / delta
    if isinstance(model, HawkesParams):
        w = model.decay
        T = coeffs.horizon
        value = model.mu.sum() * T
        if coeffs.times.size == 0:
            return float(value), np.zeros_like(d)
        cache = coeffs._cache
        if "length" not in cache:
            ti = coeffs.times
            E = _design(t, ti)
            start = np.maximum(t[None, :-1], ti[:, None])
            length = np.maximum(t[None, 1:] - start, 0.0)
            cache["E"] = E
            cache["offset_frac"] = np.where(length > 0, (start - t[None, :-1]) / delta[None, :], 0.0)
            cache["length"] = length
            cache["live"] = length > 0
            cache["mass"] = model.phi.sum(axis=0)[coeffs.types]
        E, frac, length, live, mass = (cache["E"], cache["offset_frac"], cache["length"],
                                       cache["live"], cache["mass"])
        u = E @ d
        u_start = v[None, :-1] + frac * d[None, :]
        offset = np.where(live, u_start - u[:, None], 0.0)
        decay_part = np.where(live, np.exp(-w * offset), 0.0)
        x = w * a[None, :] * length
        piece = decay_part * length * phi1(x)
        G = piece.sum(axis=1)
        value = value + float(mass @ G)
        if not need_grad:
            return value, None
        tail = np.cumsum(piece[:, ::-1], axis=1)[:, ::-1] - piece
        inner = decay_part * length * length * phi2(x) / delta[None, :]
        dG = -w * ((1.0 - E) * tail + inner)
        return value, mass @ dG
    T = coeffs.horizon
    seg = bump_basis_integrals(model, v[:-1], v[1:], T) @ model.amplitudes
    value = float(np.sum(delta * seg / d))
    if not need_grad:
        return value, None
    lam_knots = bump_basis(model, v, T) @ model.amplitudes
    lam_left = _left_intensity(model, v[1:], T)
    dl = delta / d
    diffs = dl * (lam_left - lam_knots[:-1])
    tail = np.concatenate([np.cumsum(diffs[::-1])[::-1][1:], [0.0]])
    grad = tail + dl * lam_left - delta * seg / d**2
    return value, grad


def _left_intensity(model: PoissonBumpModel, x, horizon):
    """Left limits of the bump intensity (the derivative of an upper integration bound)."""
    on, end, beta, idx = _bump_pieces(model, horizon)
    amp = model.amplitudes[idx]
    active = (x[:, None] > on[None, :]) & (x[:, None] <= end[None, :])
    vals = np.where(active, np.exp(-beta[None, :] * np.where(active, x[:, None] - on[None, :], 0.0)), 0.0)
    return vals @ amp


def _design_of(coeffs):
    cache = coeffs._cache
    if "E" not in cache:
        cache["E"] = _design(coeffs.landmarks, coeffs.times)
    return cache["E"]


def _value_grad(coeffs: SurrogateCoefficients, reg: RegularizerTerms, d, need_grad=True):
    d = np.asarray(d, dtype=float)
    delta = np.diff(coeffs.landmarks)
    E = _design_of(coeffs)
    u = E @ d
    lo, hi = coeffs.window
    if u.size and (np.any(u < lo) or np.any(u >= hi)):
        return np.inf, None
    if coeffs.kind == "frozen":
        comp = float(np.sum(coeffs.masses * delta / d))
        comp_grad = -coeffs.masses * delta / d**2 if need_grad else None
    else:
        comp, comp_grad = _compensator_value_grad(coeffs, d, need_grad)
    value = comp + float(coeffs.slope_weight @ u)
    reg_value, reg_grad = _reg_value_grad(reg, coeffs.landmarks, d)
    value += reg_value
    if not need_grad:
        return value, None
    return value, comp_grad + E.T @ coeffs.slope_weight + reg_grad


def surrogate_objective(coeffs: SurrogateCoefficients, reg: RegularizerTerms, d) -> float:
    """Majorizer of the regularized warped NLL (without its constant) at increments ``d``.

    Returns ``inf`` where a Poisson event would leave the support of the
    bumps its Jensen weights rely on.
    """
    return _value_grad(coeffs, reg, d, need_grad=False)[0]


def surrogate_gradient(coeffs: SurrogateCoefficients, reg: RegularizerTerms, d) -> np.ndarray:
    """Gradient of :func:`surrogate_objective` with respect to ``d``."""
    value, grad = _value_grad(coeffs, reg, d, need_grad=True)
    if grad is None:
        raise DomainError("gradient requested outside the surrogate's domain")
    return grad


# ---------------------------------------------------------------------------
# solver


def project(d, total: float, floor: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= floor, sum(x) = total}``."""
    d = np.asarray(d, dtype=float)
    n = d.size
    budget = total - n * floor
    if budget < 0:
        raise DomainError("floor too large for the horizon")
    y = d - floor
    s = np.sort(y)[::-1]
    css = np.cumsum(s) - budget
    k = np.arange(1, n + 1)
    rho = np.nonzero(s - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return floor + np.maximum(y - tau, 0.0)


def minimize_surrogate(coeffs: SurrogateCoefficients, reg: RegularizerTerms, d0,
                       config: WarpSolverConfig = WarpSolverConfig()):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking."""
    T = coeffs.horizon
    L = coeffs.landmarks.size
    floor = config.floor(T, L)
    d = project(d0, T, floor)
    f, g = _value_grad(coeffs, reg, d)
    if not np.isfinite(f):
        raise DomainError("starting point lies outside the surrogate's domain")
    gnorm = np.linalg.norm(g)
    step = T / (L * gnorm) if gnorm > 0 else 1.0
    for _ in range(config.pg_iters):
        accepted = False
        finite_seen = False
        predicted = 0.0
        for _ in range(60):
            cand = project(d - step * g, T, floor)
            move = cand - d
            predicted = float(g @ move)
            if np.max(np.abs(move)) <= 1e-14 * T:
                break
            fc, gc = _value_grad(coeffs, reg, cand)
            if np.isfinite(fc):
                finite_seen = True
                if fc <= f + config.armijo * predicted:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if finite_seen and -predicted > 1e-8 * max(1.0, abs(f)) and np.max(np.abs(move)) > 1e-9 * T:
                raise DescentFailure(
                    f"projected-gradient step of size {np.max(np.abs(move)):.3g} failed to decrease "
                    f"the surrogate (predicted change {predicted:.3g})")
            break
        change = abs(f - fc)
        s_vec, y_vec = cand - d, gc - g
        d, f, g = cand, fc, gc
        sy = float(s_vec @ y_vec)
        step = float(s_vec @ s_vec) / sy if sy > 0 else 2.0 * step
        if change <= config.tol * max(1.0, abs(f)):
            break
    return d, f


def true_objective(params: ModelSpec, unwarp: PiecewiseLinearWarp, seq: EventSequence,
                   reg: RegularizerTerms) -> float:
    """Regularized warped NLL of one sequence."""
    return warped_neg_log_likelihood(params, unwarp, seq) + regularizer_value(reg, unwarp)


def _safe_objective(params, landmarks, d, seq, reg):
    try:
        return true_objective(params, PiecewiseLinearWarp.from_increments(landmarks, d), seq, reg)
    except (ImpossibleEventError, DomainError):
        return np.inf


def solve_warp_subproblem(params: ModelSpec, prev_unwarp: PiecewiseLinearWarp, reg: RegularizerTerms,
                          seq: EventSequence, config: WarpSolverConfig = WarpSolverConfig()
                          ) -> PiecewiseLinearWarp:
    """Update one unwarp by repeated surrogate minimization.

    Each round rebuilds the surrogate at the current iterate, minimizes it,
    and accepts the result only if the true regularized NLL does not
    increase (otherwise it backtracks toward the previous iterate).
    """
    tl = prev_unwarp.landmarks
    T = prev_unwarp.horizon
    floor = config.floor(T, tl.size)
    d = prev_unwarp.increments
    if np.any(d < floor):
        d = project(d, T, floor)
    current = PiecewiseLinearWarp.from_increments(tl, d)
    f_true = true_objective(params, current, seq, reg)
    for _ in range(config.inner_rounds):
        coeffs = surrogate_coefficients(params, current, seq, config.surrogate)
        d_new, _ = minimize_surrogate(coeffs, reg, d, config)
        f_new = _safe_objective(params, tl, d_new, seq, reg)
        t = 1.0
        while not f_new <= f_true and t > 1e-6:
            t *= 0.5
            f_new = _safe_objective(params, tl, d + t * (d_new - d), seq, reg)
        if not f_new <= f_true:
            break
        d_new = d + t * (d_new - d) if t < 1.0 else d_new
        improvement = f_true - f_new
        d, f_true = d_new, f_new
        current = PiecewiseLinearWarp.from_increments(tl, d)
        if improvement <= config.tol * max(1.0, abs(f_true)):
            break
    return current
