"""Maximum-likelihood fitting on unwarped sequences.

Hawkes models are fitted by EM with closed-form updates; Poisson bump
models by projected Newton on the (concave) amplitude log-likelihood.

Both fitters take the observed sequences together with their current
unwarps ``U`` and maximize the likelihood of ``U(S)``.  Everything that does
not depend on the parameters (unwarped times, kernel sums, compensator
masses) is computed once per fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .core import (EventSequence, HawkesParams, PoissonBumpModel, bump_basis,
                   bump_basis_integrals, check_types, exp_integrals)
from .errors import DomainError, ImpossibleEventError


@dataclass(frozen=True)
class MleConfig:
    """EM / Newton stopping rule.

    Parameters
    ----------
    max_iters : int
        Maximum number of parameter updates.
    tol : float
        Stop once the relative NLL change falls below this value.
    exact_compensator : bool
        Use the exact kernel mass ``int_{t_i}^T exp(-w (U(s) - U(t_i))) ds``
        in the excitation update (default).  ``False`` selects the shifted
        approximation ``int_0^{T - t_i} exp(-w U(s)) ds``, which coincides
        with it for identity unwarps but does not give a monotone EM under
        general unwarps.
    """

    max_iters: int = 15
    tol: float = 1e-6
    exact_compensator: bool = True

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0:
            raise DomainError("max_iters and tol must be positive")


# ---------------------------------------------------------------------------
# Hawkes EM


def exp_compensator_integral(unwarp, decay: float, lower, upper):
    """``int_lower^upper exp(-w U(s)) ds`` in closed form, segment by segment.

    Vectorized over ``lower``/``upper``; ``decay == 0`` gives ``upper - lower``.
    """
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    T = unwarp.landmarks[-1]
    if np.any(lo < 0) or np.any(hi > T) or np.any(lo > hi):
        raise DomainError(f"integration bounds must satisfy 0 <= lower <= upper <= {T}")
    out = exp_integrals(unwarp.landmarks, unwarp.knots, float(decay), lo, hi, 0.0)
    return float(out[0]) if np.ndim(lower) == 0 and np.ndim(upper) == 0 else out


def kernel_sums(u, types, num_types: int, decay: float) -> np.ndarray:
    """``R[i, c] = sum_{j < i, c_j = c} exp(-w (u_i - u_j))`` by recursion."""
    n = u.size
    R = np.zeros((n, num_types))
    if n < 2:
        return R
    fade = np.exp(-decay * np.diff(u))
    row = np.zeros(num_types)
    for i in range(1, n):
        row[types[i - 1]] += 1.0
        row *= fade[i - 1]
        R[i] = row
    return R


@dataclass(frozen=True, eq=False)
class _HawkesData:
    """Parameter-free statistics of one unwarped sequence."""

    types: np.ndarray
    horizon: float
    sums: np.ndarray          # R[i, c']
    mass: np.ndarray          # exact kernel mass G_i on the observed timeline
    denom: np.ndarray         # excitation-update denominator per event
    seq_id: str


def _hawkes_data(seq: EventSequence, unwarp, num_types: int, decay: float,
                 exact: bool) -> _HawkesData:
    check_types(seq, num_types)
    if unwarp.landmarks[-1] != seq.horizon:
        raise DomainError(f"sequence {seq.seq_id!r}: unwarp horizon does not match")
    tl, vl = unwarp.landmarks, unwarp.knots
    T = seq.horizon
    u = np.interp(seq.times, tl, vl)
    R = kernel_sums(u, seq.types, num_types, decay)
    n = len(seq)
    if n:
        G = exp_integrals(tl, vl, decay, seq.times, np.full(n, T), u)
        D = G if exact else exp_integrals(tl, vl, decay, np.zeros(n), T - seq.times, 0.0)
    else:
        G = D = np.zeros(0)
    return _HawkesData(seq.types, T, R, G, D, seq.seq_id)


def _event_rates(params: HawkesParams, data: _HawkesData) -> np.ndarray:
    lam = params.mu[data.types] + np.einsum("ik,ik->i", params.phi[data.types], data.sums)
    bad = np.flatnonzero(~(lam > 0))
    if bad.size:
        raise ImpossibleEventError(int(bad[0]), data.seq_id)
    return lam


def _hawkes_nll(params: HawkesParams, data: _HawkesData, lam: np.ndarray) -> float:
    comp = params.mu.sum() * data.horizon + np.sum(params.phi.sum(axis=0)[data.types] * data.mass)
    return float(comp - np.sum(np.log(lam)))


@dataclass(frozen=True, eq=False)
class EmResponsibilities:
    """Posterior branching weights of one unwarped sequence.

    ``background[i]`` is the probability that event ``i`` is an immigrant;
    ``by_source[i, c']`` aggregates the triggering weights ``p_ij`` over the
    earlier events ``j`` of type ``c'``.  :meth:`pairwise` expands the full
    strictly lower-triangular ``p_ij`` matrix.
    """

    background: np.ndarray
    by_source: np.ndarray
    unwarped_times: np.ndarray
    types: np.ndarray
    phi: np.ndarray
    rates: np.ndarray
    decay: float

    def pairwise(self) -> np.ndarray:
        u = self.unwarped_times
        lower = np.tril(np.ones((u.size, u.size), dtype=bool), k=-1)
        gap = np.where(lower, u[:, None] - u[None, :], 0.0)
        trig = self.phi[self.types][:, self.types] * np.exp(-self.decay * gap)
        return np.where(lower, trig / self.rates[:, None], 0.0)


def _responsibilities(params: HawkesParams, data: _HawkesData, lam, u) -> EmResponsibilities:
    back = params.mu[data.types] / lam
    by_source = params.phi[data.types] * data.sums / lam[:, None]
    return EmResponsibilities(back, by_source, u, data.types, params.phi, lam, params.decay)


def em_responsibilities(params: HawkesParams, seq: EventSequence) -> EmResponsibilities:
    """E-step on a sequence whose times are already unwarped."""
    check_types(seq, params.num_types)
    R = kernel_sums(seq.times, seq.types, params.num_types, params.decay)
    data = _HawkesData(seq.types, seq.horizon, R, np.zeros(len(seq)), np.zeros(len(seq)), seq.seq_id)
    lam = _event_rates(params, data)
    return _responsibilities(params, data, lam, seq.times)


def _m_step(resps, datas, num_types: int, decay: float) -> HawkesParams:
    C = num_types
    background = np.zeros(C)
    trig = np.zeros((C, C))
    denom = np.zeros(C)
    total_time = 0.0
    for r, d in zip(resps, datas):
        background += np.bincount(d.types, weights=r.background, minlength=C)
        for c in range(C):
            sel = d.types == c
            if np.any(sel):
                trig[c] += r.by_source[sel].sum(axis=0)
        denom += np.bincount(d.types, weights=d.denom, minlength=C)
        total_time += d.horizon
    mu = background / total_time
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(denom[None, :] > 0, trig / denom[None, :], 0.0)
    return HawkesParams(mu, phi, decay)


def em_update(resps, seqs, unwarps, decay: float = 1.0, exact_compensator: bool = True) -> HawkesParams:
    """Closed-form M-step.

    ``mu_c`` is the expected number of type-``c`` immigrants over the total
    observation time; ``phi[c, c']`` is the expected number of type-``c``
    offspring of type-``c'`` events over their summed kernel mass.  Columns
    with zero kernel mass are set to 0.
    """
    resps, seqs, unwarps = list(resps), list(seqs), list(unwarps)
    if not (len(resps) == len(seqs) == len(unwarps)) or not seqs:
        raise DomainError("responsibilities, sequences and unwarps must be nonempty and aligned")
    C = resps[0].by_source.shape[1]
    datas = [_hawkes_data(s, u, C, decay, exact_compensator) for s, u in zip(seqs, unwarps)]
    return _m_step(resps, datas, C, decay)


def initial_hawkes(seqs, num_types: int, decay: float = 1.0) -> HawkesParams:
    counts = np.zeros(num_types)
    for s in seqs:
        counts += np.bincount(s.types, minlength=num_types)
    total = sum(s.horizon for s in seqs)
    return HawkesParams(counts / total, np.full((num_types, num_types), 0.1 / num_types), decay)


def fit_hawkes_mle(seqs, unwarps, config: MleConfig = MleConfig(), init: HawkesParams | None = None,
                   num_types: int | None = None, decay: float = 1.0, n_jobs: int = 1):
    """EM for a Hawkes process on the unwarped sequences ``U_m(S_m)``.

    Returns
    -------
    params : HawkesParams
    trace : ndarray
        Warped NLL of every iterate, starting with the initial parameters.
    """
    seqs, unwarps = list(seqs), list(unwarps)
    if not seqs or len(seqs) != len(unwarps):
        raise DomainError("need a nonempty set of sequences with one unwarp each")
    if init is not None:
        num_types, decay = init.num_types, init.decay
    elif num_types is None:
        num_types = 1 + max((int(s.types.max()) for s in seqs if len(s)), default=0)
    datas = parallel_map(lambda su: _hawkes_data(su[0], su[1], num_types, decay, config.exact_compensator),
                         list(zip(seqs, unwarps)), n_jobs)
    us = [np.interp(s.times, u.landmarks, u.knots) for s, u in zip(seqs, unwarps)]
    params = init if init is not None else initial_hawkes(seqs, num_types, decay)

    def evaluate(p):
        rates = [_event_rates(p, d) for d in datas]
        nll = sum(_hawkes_nll(p, d, lam) for d, lam in zip(datas, rates))
        return nll, rates

    nll, rates = evaluate(params)
    trace = [nll]
    for _ in range(config.max_iters):
        resps = [_responsibilities(params, d, lam, u) for d, lam, u in zip(datas, rates, us)]
        params = _m_step(resps, datas, num_types, decay)
        nll, rates = evaluate(params)
        change = abs(trace[-1] - nll) / max(abs(trace[-1]), 1e-300)
        trace.append(nll)
        if change < config.tol:
            break
    return params, np.array(trace)


# ---------------------------------------------------------------------------
# Poisson bump amplitudes


def poisson_design(model: PoissonBumpModel, seq: EventSequence, unwarp):
    """Per-event bump values at ``U(t_i)`` and the per-bump compensator weights.

    The warped NLL of amplitudes ``alpha`` is
    ``weights @ alpha - sum(log(basis @ alpha))``.
    """
    if len(seq) and np.any(seq.types != 0):
        raise DomainError(f"sequence {seq.seq_id!r}: Poisson bump models have a single event type")
    tl, vl = unwarp.landmarks, unwarp.knots
    T = seq.horizon
    basis = bump_basis(model, np.interp(seq.times, tl, vl), T)
    seg = bump_basis_integrals(model, vl[:-1], vl[1:], T)
    weights = (np.diff(tl) / np.diff(vl)) @ seg
    return basis, weights


def _poisson_objective(alpha, basis, weights):
    lam = basis @ alpha
    if np.any(lam <= 0):
        return np.inf
    return float(weights @ alpha - np.sum(np.log(lam)))


def fit_poisson_mle(seqs, unwarps, structure: PoissonBumpModel, config: MleConfig = MleConfig(),
                    tol: float = 1e-8, max_iters: int = 200, init=None):
    """Amplitude MLE for fixed bump onsets and decays.

    The objective is convex in the amplitudes; it is minimized over
    ``alpha >= 0`` by projected Newton with an active set and backtracking,
    stopping when the relative objective change drops below ``tol``.

    Raises
    ------
    ImpossibleEventError
        If some event lies where no bump is active.
    """
    seqs, unwarps = list(seqs), list(unwarps)
    if not seqs or len(seqs) != len(unwarps):
        raise DomainError("need a nonempty set of sequences with one unwarp each")
    parts = [poisson_design(structure, s, u) for s, u in zip(seqs, unwarps)]
    basis = np.vstack([p[0] for p in parts])
    weights = np.sum([p[1] for p in parts], axis=0)
    for s, p in zip(seqs, parts):
        dead = np.flatnonzero(~np.any(p[0] > 0, axis=1))
        if dead.size:
            raise ImpossibleEventError(int(dead[0]), s.seq_id, "event lies before every bump onset "
                                       "(or outside every bump), so no amplitudes give it positive intensity")
    J = weights.size
    n = basis.shape[0]
    if init is not None:
        alpha = np.maximum(np.asarray(init, dtype=float), 0.0)
        if not np.isfinite(_poisson_objective(alpha, basis, weights)):
            init = None
    if init is None:
        alpha = np.full(J, n / max(weights.sum(), 1e-300))
    f = _poisson_objective(alpha, basis, weights)
    for _ in range(max_iters):
        lam = basis @ alpha
        grad = weights - basis.T @ (1.0 / lam)
        free = ~((alpha <= 0) & (grad > 0))
        if not np.any(free):
            break
        Bf = basis[:, free] / lam[:, None]
        hess = Bf.T @ Bf
        hess[np.diag_indices_from(hess)] += 1e-14 * max(np.trace(hess), 1e-300)
        step = np.zeros(J)
        try:
            step[free] = -np.linalg.solve(hess, grad[free])
        except np.linalg.LinAlgError:
            step[free] = -grad[free]
        t = 1.0
        accepted = False
        while t > 1e-20:
            cand = np.maximum(alpha + t * step, 0.0)
            fc = _poisson_objective(cand, basis, weights)
            if fc <= f + 1e-4 * grad @ (cand - alpha):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        change = abs(f - fc) / max(abs(f), 1e-300)
        moved = np.max(np.abs(cand - alpha)) / max(np.max(np.abs(alpha)), 1e-300)
        alpha, f = cand, fc
        if change < tol and moved < 1e-10:
            break
    return PoissonBumpModel(structure.onsets, structure.decays, alpha, structure.period)


def fit_model(template, seqs, unwarps, config: MleConfig = MleConfig(), init=None, n_jobs: int = 1):
    """Dispatch to the fitter of ``template``'s family.

    For Hawkes models ``template`` fixes the type count and decay; for
    Poisson bump models it fixes the bump structure.
    """
    if isinstance(template, HawkesParams):
        params, _ = fit_hawkes_mle(seqs, unwarps, config, init=init,
                                   num_types=template.num_types, decay=template.decay, n_jobs=n_jobs)
        return params
    start = None if init is None else init.amplitudes
    return fit_poisson_mle(seqs, unwarps, template, config, init=start)
