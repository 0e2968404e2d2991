"""Arm-selection probabilities of perturbed top-m selection.

``phi_i(lam)`` is the probability that ``r_i - lam_i`` ranks among the ``m``
largest of ``r_q - lam_q`` for i.i.d. Frechet(2) ``r``. Conditioning on
arm ``i``'s perturbation ``y`` leaves a Poisson-binomial count of other
arms exceeding it, so each quadrature node costs a truncated O(d*m)
dynamic program instead of a sum over subsets. The substitution
``u = F(y)`` maps the half-line onto (0, 1) with a bounded integrand.

A Monte-Carlo estimator and a handful of numerical witnesses for the
auxiliary integrals used in the regret analysis live here too.
"""

from __future__ import annotations

import math

import numpy as np

from .core import frechet_sf, frechet_variates
from .exceptions import DomainError
from .quadrature import QuadratureResult, integrate

DEFAULT_TOL = 1e-8


def poisson_binomial_tail(p, threshold):
    """``P(X <= threshold)`` for ``X`` a sum of independent Bernoulli(p_q).

    ``p`` may carry leading batch dimensions; the last axis indexes the
    Bernoulli terms. Only counts ``0..threshold`` are tracked.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim == 0:
        raise DomainError("p must be a sequence")
    if ((p < 0) | (p > 1)).any() or np.isnan(p).any():
        raise DomainError("probabilities must lie in [0, 1]")
    threshold = int(threshold)
    n = p.shape[-1]
    if threshold < 0:
        raise DomainError("threshold must be nonnegative")
    if threshold >= n:
        return np.ones(p.shape[:-1]) if p.ndim > 1 else 1.0
    dp = np.zeros(p.shape[:-1] + (threshold + 1,))
    dp[..., 0] = 1.0
    for q in range(n):
        pq = p[..., q, None]
        shifted = np.zeros_like(dp)
        shifted[..., 1:] = dp[..., :-1]
        dp = dp * (1.0 - pq) + shifted * pq
    out = dp.sum(axis=-1)
    return out if p.ndim > 1 else float(out)


def _neg_log(u):
    # -log(u) without losing digits for u close to 1
    with np.errstate(divide="ignore"):
        return np.where(u > 0.5, -np.log1p(u - 1.0), -np.log(np.maximum(u, 1e-300)))


def _check_lambda(lam, m):
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size < 2:
        raise DomainError("lambda must be a vector with at least two entries")
    if not np.isfinite(lam).all():
        raise DomainError("lambda must be finite")
    if not 1 <= m <= lam.size:
        raise DomainError(f"m must lie in [1, d], got m={m}")
    return lam


_KNOT_STEPS = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])


def _knots(shifts):
    """Panel edges in u = F(y) around ``y = c + O(1)`` for each shift ``c``.

    The integrands switch from one regime to another as ``y`` passes the
    offsets of the other arms; with well separated arms that happens in
    slivers of (0, 1) next to u = 1.
    """
    y = (np.asarray(shifts, dtype=float)[:, None] + _KNOT_STEPS[None, :]).ravel()
    y = y[y > 0]
    u = np.exp(-1.0 / y**2)
    return np.unique(u[(u > 0) & (u < 1)])


def _order_integrand(lam, i, m, power):
    """Integrand over u in (0,1) for ``V_{i,N}`` with ``power = (N-3)/2``.

    ``y = (-log u)^(-1/2)`` is arm i's perturbation; another arm q beats it
    with probability ``1 - F(y - lam_i + lam_q)``.
    """
    others = np.delete(lam, i) - lam[i]

    def f(u):
        s = _neg_log(u)
        y = s ** -0.5
        p = frechet_sf(y[:, None] + others[None, :])
        tail = poisson_binomial_tail(p, m - 1)
        if power == 0:
            return tail
        return s ** power * tail

    return f


def phi_quadrature(lam, i, m, tol=DEFAULT_TOL):
    """``phi_i(lam)`` by adaptive quadrature; error estimate at most ``tol``."""
    lam = _check_lambda(lam, m)
    if not 0 <= i < lam.size:
        raise DomainError("arm index out of range")
    if not tol > 0:
        raise DomainError("tol must be positive")
    if m == lam.size:
        return QuadratureResult(1.0, 0.0, 0)
    return integrate(_order_integrand(lam, i, m, 0.0), 0.0, 1.0, tol=tol,
                     points=_knots(lam[i] - lam))


def phi_all(lam, m, tol=DEFAULT_TOL):
    """Selection probabilities of every arm; they sum to ``m``."""
    lam = _check_lambda(lam, m)
    w = np.array([phi_quadrature(lam, i, m, tol).value for i in range(lam.size)])
    total = w.sum()
    if abs(total - m) > lam.size * tol + 1e-12:
        raise ArithmeticError(f"selection probabilities sum to {total}, expected {m}")
    return np.clip(w, 0.0, 1.0)


def phi_monte_carlo(lam, m, samples, rng, chunk=200_000):
    """Empirical top-m frequencies and their binomial standard errors."""
    lam = _check_lambda(lam, m)
    if samples < 1:
        raise DomainError("samples must be >= 1")
    d = lam.size
    hits = np.zeros(d, dtype=np.int64)
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        scores = frechet_variates(rng, (b, d)) - lam
        if m == d:
            hits += b
        else:
            top = np.argpartition(-scores, m - 1, axis=1)[:, :m]
            hits += np.bincount(top.ravel(), minlength=d)
        done += b
    freq = hits / samples
    se = np.sqrt(freq * (1.0 - freq) / samples)
    return freq, se


def v_integral(lam, i, N, m, tol=DEFAULT_TOL):
    """The order-statistic integral ``V_{i,N}``; ``2*V_{i,3} = phi_i``."""
    lam = _check_lambda(lam, m)
    if N < 2:
        raise DomainError("N must be >= 2")
    if not 0 <= i < lam.size:
        raise DomainError("arm index out of range")
    power = 0.5 * (N - 3)
    if m == lam.size:
        # every other arm may exceed, the tail is identically one
        return QuadratureResult(0.5 * math.gamma(0.5 * (N - 1)), 0.0, 0)
    if power >= 0:
        f = _order_integrand(lam, i, m, power)
        return integrate(lambda u: 0.5 * f(u), 0.0, 1.0, tol=tol, points=_knots(lam[i] - lam))
    # For N < 3 the u-integrand blows up like (1-u)^((N-3)/2) as u -> 1, so
    # that end is done in v = sqrt(-log u) = 1/y, where it reads
    # v^(N-2) exp(-v^2) * tail and stays bounded.
    f = _order_integrand(lam, i, m, power)
    knots = _knots(lam[i] - lam)
    head = integrate(lambda u: 0.5 * f(u), 0.0, 0.5, tol=0.5 * tol, points=knots)
    others = np.delete(lam, i) - lam[i]

    def g(v):
        p = frechet_sf(1.0 / v[:, None] + others[None, :])
        return v ** (N - 2) * np.exp(-v * v) * poisson_binomial_tail(p, m - 1)

    tail = integrate(g, 0.0, math.sqrt(math.log(2.0)), tol=0.5 * tol,
                     points=np.sqrt(-np.log(knots)))
    return QuadratureResult(head.value + tail.value,
                            head.abs_error_estimate + tail.abs_error_estimate,
                            head.nodes_used + tail.nodes_used)


def lower_gaps(lam, m):
    """``(lam_i - lam_(m))^+`` with ``lam_(m)`` the m-th smallest entry."""
    lam = np.asarray(lam, dtype=float)
    ref = np.sort(lam)[m - 1]
    return np.maximum(lam - ref, 0.0)


def rank_positions(lam):
    """1-based rank of each entry in ascending order, ties by index."""
    order = np.argsort(lam, kind="stable")
    ranks = np.empty(len(lam), dtype=int)
    ranks[order] = np.arange(1, len(lam) + 1)
    return ranks


def _log_frechet_sf(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.log(-np.expm1(-1.0 / x[pos] ** 2))
    return out


def _witness_ratio(K, log_weight, tol):
    """``E[1/x]`` under the density proportional to ``x^-3 exp(-K/x^2) g(x)``.

    Substituting ``s = K/x^2 = exp(v)`` gives
    ``int exp(-s + log g + v) dv`` for the N=3 integral and an extra factor
    ``sqrt(s/K)`` for N=4. The integrand is rescaled by its peak so that
    ``g`` can be astronomically small (``(1-F)^M`` for large M) without
    underflowing, and the range of ``v`` is cut where it has decayed by
    ``exp(-80)``.
    """

    def log_f(v):
        s = np.exp(v)
        return -s + log_weight(np.sqrt(K / s)) + v

    grid = np.linspace(-60.0, 8.0, 6801)
    lf = log_f(grid)
    peak = lf.max()
    alive = np.nonzero(lf > peak - 80.0)[0]
    lo = grid[max(alive[0] - 1, 0)]
    hi = grid[min(alive[-1] + 1, grid.size - 1)]

    def den_f(v):
        return np.exp(log_f(v) - peak)

    def num_f(v):
        return np.exp(log_f(v) - peak + 0.5 * v)

    den = integrate(den_f, lo, hi, tol=0.0, rtol=tol)
    num = integrate(num_f, lo, hi, tol=0.0, rtol=tol)
    return num.value / den.value / math.sqrt(K)


def u_ratio_witness(K, tol=1e-10):
    """``U_4(mu)/U_3(mu)`` at ``mu = -sqrt(2K/log K)``.

    ``U_N(mu) = int_0^inf x^-N exp(-K/x^2) (1 - F(x + mu)) dx``.
    """
    if not K >= 2:
        raise DomainError("K must be >= 2")
    mu = -math.sqrt(2.0 * K / math.log(K))
    return _witness_ratio(K, lambda x: _log_frechet_sf(x + mu), tol)


def r_ratio_witness(M, K, tol=1e-10):
    """``R_4(1)/R_3(1)`` with ``R_N(mu) = int x^-N exp(-K/x^2) (1-F(x+mu))^M dx``."""
    if M < 2 or K < 1:
        raise DomainError("need M >= 2 and K >= 1")
    if M < 2 * K:
        raise DomainError("the witness needs M >= 2K")
    return _witness_ratio(K, lambda x: M * _log_frechet_sf(x + 1.0), tol)


def top_m_sum_estimate(d, m, samples, rng, chunk=None):
    """Monte-Carlo mean of the sum of the ``m`` largest of ``d`` Frechet(2) draws."""
    if not 1 <= m <= d:
        raise DomainError("need 1 <= m <= d")
    chunk = chunk or max(1, 2_000_000 // d)
    total = 0.0
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        r = frechet_variates(rng, (b, d))
        if m < d:
            r = np.partition(r, d - m, axis=1)[:, d - m:]
        total += r.sum()
        done += b
    return total / samples


def w_star(lam, m, tol=DEFAULT_TOL):
    """Probability that the ``m`` arms with smallest ``lam`` are selected exactly.

    ``lam`` is sorted first. The integral runs over the best perturbed score
    among the remaining arms, anchored at the first of them and mapped to
    (0, 1) through its own CDF.
    """
    lam = np.sort(_check_lambda(lam, m))
    d = lam.size
    if d < m + 1:
        raise DomainError("need d >= m + 1")
    anchor = lam[m]
    top = lam[:m] - anchor      # <= 0
    rest = lam[m:] - anchor     # >= 0, rest[0] == 0

    def f(u):
        s = _neg_log(u)
        y = s ** -0.5
        z = y[:, None] + rest[None, :]
        dens = ((y[:, None] / z) ** 3).sum(axis=1)
        cdf_rest = np.exp(-(1.0 / z[:, 1:] ** 2).sum(axis=1))
        keep = frechet_sf(y[:, None] + top[None, :]).prod(axis=1)
        return dens * cdf_rest * keep

    return integrate(f, 0.0, 1.0, tol=tol, points=_knots(np.concatenate([-top, -rest])))


def phi_lower_check(lam, m, i, tol=DEFAULT_TOL):
    """Whether ``phi_i(lam) >= gap_i^-2 / (4e)`` for a far-from-top arm.

    Needs arm ``i`` ranked beyond position ``m`` and the summed inverse
    squared gaps of the arms outside the top ``m`` below ``1/(2m)``.
    """
    lam = _check_lambda(lam, m)
    if not 0 <= i < lam.size:
        raise DomainError("arm index out of range")
    gaps = lower_gaps(lam, m)
    ranks = rank_positions(lam)
    outside = ranks > m
    if ranks[i] <= m:
        raise DomainError("arm must rank beyond the m-th position")
    with np.errstate(divide="ignore"):
        total = np.sum(gaps[outside] ** -2.0)
    if not total < 1.0 / (2 * m):
        raise DomainError("summed inverse squared gaps must be below 1/(2m)")
    value = phi_quadrature(lam, i, m, tol).value
    return bool(value >= gaps[i] ** -2.0 / (4.0 * math.e) - tol)
