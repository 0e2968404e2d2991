"""Comparison policies: CombUCB, Thompson sampling and FTRL over the capped simplex.

The FTRL variants (Shannon entropy, log-barrier and the hybrid regularizer)
work on marginals ``w`` in ``{w in [0,1]^d : sum w = m}`` and turn them into
m-sets with Madow's systematic sampling, so no action enumeration is needed.
As in :mod:`msetbandit.core`, the per-round work is done by numba kernels
shared with the simulation harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import ActionSet, _select_smallest, learning_rate
from .exceptions import DomainError

SHANNON = 0
LOG_BARRIER = 1
HYBRID = 2
REGULARIZERS = {"shannon": SHANNON, "log_barrier": LOG_BARRIER, "hybrid": HYBRID}
#: Lower clip for the marginals of each regularizer.
W_MIN = {SHANNON: 1e-12, LOG_BARRIER: 1e-9, HYBRID: 1e-12}
UCB_RADIUS = 1.5


# ---------------------------------------------------------------------------
# capped-simplex FTRL solver
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _hybrid_grad_logit(v):
    """Hybrid gradient and its derivative at ``w = sigmoid(v)``."""
    if v < 0.0:
        e = math.exp(v)
        softplus = math.log1p(e)
        root = math.sqrt(1.0 + 1.0 / e)
        slope = 0.25 / (e * root) + e / (1.0 + e)
    else:
        e = math.exp(-v)
        softplus = v + math.log1p(e)
        root = math.sqrt(1.0 + e)
        slope = 0.25 * e / root + 1.0 / (1.0 + e)
    return -0.5 * root + softplus - 1.0, slope


@numba.njit(cache=True)
def _hybrid_inverse(c):
    """Solve ``-1/(2 sqrt w) - log(1-w) - 1 = c``.

    Newton in logit coordinates, where the gradient is close to
    exponential on the left and linear on the right, so a few steps from
    the asymptotic guess suffice. Returns ``(w, dw/dc)``.
    """
    if c < -1.5:
        v = -2.0 * math.log(-2.0 * (c + 1.0))
    elif c > 0.5:
        v = c + 1.0
    else:
        v = 0.0
    slope = 1.0
    for _ in range(60):
        g, slope = _hybrid_grad_logit(v)
        step = (g - c) / slope
        v -= step
        if abs(step) <= 1e-14 * max(1.0, abs(v)):
            break
    w = 1.0 / (1.0 + math.exp(-v))
    return w, w * (1.0 - w) / slope


@numba.njit(cache=True)
def _coord(reg, z, wmin):
    """Coordinate minimizer and its derivative in the multiplier.

    ``z`` is the scaled loss plus the multiplier; the returned derivative
    is zero when the coordinate is clipped.
    """
    if reg == SHANNON:
        e = -1.0 - z
        if e >= 0.0:
            return 1.0, 0.0
        w = math.exp(e)
        if w <= wmin:
            return wmin, 0.0
        return w, -w
    elif reg == LOG_BARRIER:
        if z <= 1.0:
            return 1.0, 0.0
        w = 1.0 / z
        if w <= wmin:
            return wmin, 0.0
        return w, -w * w
    else:
        w, dw = _hybrid_inverse(-z)
        if w <= wmin:
            return wmin, 0.0
        return w, -dw


@numba.njit(cache=True)
def _simplex_sum(reg, x, mu, wmin, w):
    total = 0.0
    slope = 0.0
    for i in range(x.size):
        wi, di = _coord(reg, x[i] + mu, wmin)
        w[i] = wi
        total += wi
        slope += di
    return total, slope


@numba.njit(cache=True)
def _capped_simplex(reg, x, m, wmin, tol, mu0, w):
    """Minimize ``<w, x> + R(w)`` over the capped simplex clipped at ``wmin``.

    ``x`` is the learning-rate-scaled loss vector. Safeguarded Newton on
    the multiplier of ``sum w = m`` starting from ``mu0``; returns the
    multiplier (in the coordinates of ``x - min(x)``) or NaN if no bracket
    was found.
    """
    d = x.size
    if m == d:
        for i in range(d):
            w[i] = 1.0
        return mu0
    xs = x - x.min()
    # bracket: S(lo) >= m >= S(hi), S decreasing in mu
    lo = mu0
    hi = mu0
    s, _ = _simplex_sum(reg, xs, mu0, wmin, w)
    step = 1.0
    if s >= m:
        for _ in range(200):
            hi = lo + step
            s_hi, _ = _simplex_sum(reg, xs, hi, wmin, w)
            if s_hi <= m:
                break
            lo = hi
            step *= 2.0
        else:
            return np.nan
    else:
        for _ in range(200):
            lo = hi - step
            s_lo, _ = _simplex_sum(reg, xs, lo, wmin, w)
            if s_lo >= m:
                break
            hi = lo
            step *= 2.0
        else:
            return np.nan
    mu = 0.5 * (lo + hi)
    for _ in range(200):
        s, slope = _simplex_sum(reg, xs, mu, wmin, w)
        r = s - m
        if abs(r) <= tol:
            return mu
        if r > 0.0:
            lo = mu
        else:
            hi = mu
        nxt = mu - r / slope if slope < 0.0 else 0.5 * (lo + hi)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if nxt == mu or hi - lo <= 1e-15 * max(1.0, abs(mu)):
            # multiplier pinned to machine precision; rescale the free part
            free = 0.0
            clipped = 0.0
            for i in range(d):
                if wmin < w[i] < 1.0:
                    free += w[i]
                else:
                    clipped += w[i]
            if free > 0.0:
                scale = (m - clipped) / free
                for i in range(d):
                    if wmin < w[i] < 1.0:
                        w[i] = min(1.0, w[i] * scale)
            return mu
        mu = nxt
    return mu


def regularizer_value(w, regularizer):
    w = np.asarray(w, dtype=float)
    if regularizer == "shannon":
        return float(np.sum(w * np.log(w)))
    if regularizer == "log_barrier":
        return float(-np.sum(np.log(w)))
    if regularizer == "hybrid":
        one_minus = 1.0 - w
        ent = np.where(one_minus > 0, one_minus * np.log(np.where(one_minus > 0, one_minus, 1.0)), 0.0)
        return float(-np.sum(np.sqrt(w)) + np.sum(ent))
    raise DomainError(f"unknown regularizer {regularizer!r}")


def regularizer_gradient(w, regularizer):
    w = np.asarray(w, dtype=float)
    if regularizer == "shannon":
        return np.log(w) + 1.0
    if regularizer == "log_barrier":
        return -1.0 / w
    if regularizer == "hybrid":
        return -0.5 / np.sqrt(w) - np.log1p(-w) - 1.0
    raise DomainError(f"unknown regularizer {regularizer!r}")


def _reg_code(regularizer):
    try:
        return REGULARIZERS[regularizer]
    except KeyError:
        raise DomainError(f"unknown regularizer {regularizer!r}") from None


def capped_simplex_solve(lhat, eta, regularizer, m, tol=1e-10):
    """``argmin_w <w, lhat> + R(w)/eta`` over ``{w in [w_min, 1]^d : sum w = m}``."""
    lhat = np.asarray(lhat, dtype=float)
    if not eta > 0:
        raise DomainError("eta must be positive")
    if not 1 <= m <= lhat.size:
        raise DomainError("need 1 <= m <= d")
    code = _reg_code(regularizer)
    w = np.empty(lhat.size)
    mu = _capped_simplex(code, eta * lhat, m, W_MIN[code], tol, 0.0, w)
    if np.isnan(mu):
        raise RuntimeError("multiplier bisection could not be bracketed")
    return w


# ---------------------------------------------------------------------------
# Madow systematic sampling
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _madow(w, m, u, action):
    """Arms whose cumulative-sum interval contains one of ``u, u+1, ..., u+m-1``."""
    d = w.size
    taken = 0
    k = 0
    c = 0.0
    for i in range(d):
        c_next = c + w[i]
        if k < m and c <= u + k < c_next:
            action[taken] = i
            taken += 1
            k += 1
            # an interval of length <= 1 holds at most one point
            while k < m and u + k < c_next:
                k += 1
        c = c_next
    if taken < m:
        # only reachable through rounding of sum(w); top up with largest w
        for _ in range(m - taken):
            best = -1
            for i in range(d):
                used = False
                for s in range(taken):
                    if action[s] == i:
                        used = True
                        break
                if not used and (best < 0 or w[i] > w[best]):
                    best = i
            action[taken] = best
            taken += 1
        # keep index order
        for j in range(1, m):
            v = action[j]
            s = j - 1
            while s >= 0 and action[s] > v:
                action[s + 1] = action[s]
                s -= 1
            action[s + 1] = v


def madow_sample(w, rng):
    """Fixed-size set whose inclusion probabilities equal ``w`` exactly."""
    w = np.asarray(w, dtype=float)
    if ((w < 0) | (w > 1)).any():
        raise DomainError("marginals must lie in [0, 1]")
    total = w.sum()
    m = int(round(total))
    if m < 1 or abs(total - m) > 1e-6:
        raise DomainError(f"marginals must sum to an integer m, got {total}")
    action = np.empty(m, dtype=np.int64)
    _madow(w, m, rng.random(), action)
    return ActionSet(tuple(action), w.size)


# ---------------------------------------------------------------------------
# per-round kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _ftrl_step(rng, reg, lhat, eta, m, wmin, losses, w, mu, action):
    """Solve, sample, importance-weight. Returns (new multiplier, floor hits)."""
    new_mu = _capped_simplex(reg, eta * lhat, m, wmin, 1e-10, mu, w)
    if np.isnan(new_mu):
        return new_mu, -1
    _madow(w, m, rng.random(), action)
    floor_hits = 0
    for s in range(m):
        i = action[s]
        if w[i] <= wmin:
            floor_hits += 1
        lhat[i] += losses[i] / w[i]
    return new_mu, floor_hits


@numba.njit(cache=True)
def _combucb_step(t, m, pulls, means, losses, keys, idx, action):
    d = pulls.size
    init = False
    for i in range(d):
        if pulls[i] == 0:
            init = True
            break
    if init:
        # round-robin cover of all arms
        base = ((t - 1) * m) % d
        for j in range(m):
            action[j] = (base + j) % d
        for j in range(1, m):
            v = action[j]
            s = j - 1
            while s >= 0 and action[s] > v:
                action[s + 1] = action[s]
                s -= 1
            action[s + 1] = v
    else:
        radius = UCB_RADIUS * math.log(t)
        for i in range(d):
            keys[i] = means[i] - math.sqrt(radius / pulls[i])
        _select_smallest(keys, m, idx, action)
    for s in range(m):
        i = action[s]
        pulls[i] += 1
        means[i] += (losses[i] - means[i]) / pulls[i]


@numba.njit(cache=True)
def _thompson_step(rng, m, ones, zeros, losses, keys, idx, action):
    d = ones.size
    for i in range(d):
        keys[i] = rng.beta(1.0 + ones[i], 1.0 + zeros[i])
    _select_smallest(keys, m, idx, action)
    for s in range(m):
        i = action[s]
        ones[i] += losses[i]
        zeros[i] += 1.0 - losses[i]


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------

@dataclass
class StochasticStats:
    """Per-arm pull counts, empirical mean losses and Beta-posterior counts."""

    d: int
    m: int
    t: int = 1
    pulls: np.ndarray = field(default=None)
    mean_estimates: np.ndarray = field(default=None)
    ones: np.ndarray = field(default=None)
    zeros: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 1 <= self.m <= self.d:
            raise DomainError("need 1 <= m <= d")
        if self.pulls is None:
            self.pulls = np.zeros(self.d, dtype=np.int64)
        if self.mean_estimates is None:
            self.mean_estimates = np.zeros(self.d)
        if self.ones is None:
            self.ones = np.zeros(self.d)
        if self.zeros is None:
            self.zeros = np.zeros(self.d)


def _check_losses(losses, d):
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (d,) or (losses < 0).any() or (losses > 1).any():
        raise DomainError("losses must be a length-d vector in [0, 1]")
    return losses


def combucb_round(stats, losses):
    """Play and update CombUCB (lower confidence bounds on mean losses)."""
    losses = _check_losses(losses, stats.d)
    action = np.empty(stats.m, dtype=np.int64)
    _combucb_step(stats.t, stats.m, stats.pulls, stats.mean_estimates, losses,
                  np.empty(stats.d), np.empty(stats.d, dtype=np.int64), action)
    # keep the Beta counts in sync so one stats object serves both policies
    stats.ones[action] += losses[action]
    stats.zeros[action] += 1.0 - losses[action]
    stats.t += 1
    return ActionSet(tuple(action), stats.d), stats


def combucb_choose(stats, t):
    """The CombUCB action at round ``t`` without updating anything."""
    d, m = stats.d, stats.m
    if (stats.pulls == 0).any():
        base = ((t - 1) * m) % d
        return ActionSet.from_indices([(base + j) % d for j in range(m)], d)
    keys = stats.mean_estimates - np.sqrt(UCB_RADIUS * math.log(t) / stats.pulls)
    out = np.empty(m, dtype=np.int64)
    _select_smallest(keys, m, np.empty(d, dtype=np.int64), out)
    return ActionSet(tuple(out), d)


def thompson_round(stats, losses, rng):
    """Sample Beta posteriors on mean losses, play the ``m`` smallest, update."""
    losses = _check_losses(losses, stats.d)
    action = np.empty(stats.m, dtype=np.int64)
    _thompson_step(rng, stats.m, stats.ones, stats.zeros, losses,
                   np.empty(stats.d), np.empty(stats.d, dtype=np.int64), action)
    stats.pulls[action] += 1
    stats.mean_estimates[action] += (losses[action] - stats.mean_estimates[action]) / stats.pulls[action]
    stats.t += 1
    return ActionSet(tuple(action), stats.d), stats


def thompson_choose(stats, rng):
    keys = rng.beta(1.0 + stats.ones, 1.0 + stats.zeros)
    out = np.empty(stats.m, dtype=np.int64)
    _select_smallest(keys, stats.m, np.empty(stats.d, dtype=np.int64), out)
    return ActionSet(tuple(out), stats.d)


@dataclass
class FtrlState:
    d: int
    m: int
    regularizer: str = "shannon"
    rate_scale: float = 1.0
    t: int = 1
    lhat: np.ndarray = field(default=None)
    multiplier: float = 0.0
    floor_hits: int = 0

    def __post_init__(self):
        _reg_code(self.regularizer)
        if not 1 <= self.m <= self.d:
            raise DomainError("need 1 <= m <= d")
        if not self.rate_scale > 0:
            raise DomainError("rate_scale must be positive")
        if self.lhat is None:
            self.lhat = np.zeros(self.d)
        else:
            self.lhat = np.array(self.lhat, dtype=float)

    @property
    def eta(self):
        return learning_rate(self.t, self.rate_scale)


def ftrl_round(state, losses, rng):
    """One FTRL round with Madow sampling and importance-weighted estimates."""
    losses = _check_losses(losses, state.d)
    code = _reg_code(state.regularizer)
    w = np.empty(state.d)
    action = np.empty(state.m, dtype=np.int64)
    mu, hits = _ftrl_step(rng, code, state.lhat, state.eta, state.m, W_MIN[code],
                          losses, w, state.multiplier, action)
    if hits < 0:
        raise RuntimeError("multiplier bisection could not be bracketed")
    state.multiplier = mu
    state.floor_hits += hits
    state.t += 1
    return ActionSet(tuple(action), state.d), state
