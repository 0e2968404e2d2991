"""Follow-the-Perturbed-Leader with Frechet(2) noise and geometric resampling.

The per-round work lives in numba kernels so that the same code path serves
both the step-by-step Python API below and the long simulations driven by
:mod:`msetbandit.harness`. Both consume random numbers from a
``numpy.random.Generator`` in the same order, so a run is reproducible
whichever entry point produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import DomainError

#: Geometric resampling aborts after this many redraws; reaching it means a bug.
SAFETY_LIMIT = 10**9
#: ``cap`` value meaning "no truncation" inside the kernels.
UNLIMITED = 0


# ---------------------------------------------------------------------------
# Frechet(2) distribution
# ---------------------------------------------------------------------------

def frechet_cdf(x):
    """CDF ``exp(-1/x**2)`` for ``x > 0`` and 0 elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos] ** 2)
    return out


def frechet_sf(x):
    """Survival ``1 - F(x)``, accurate for large ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    pos = x > 0
    out[pos] = -np.expm1(-1.0 / x[pos] ** 2)
    return out


def sample_frechet(u):
    """Inverse-CDF transform of a uniform in the open interval (0, 1)."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise DomainError(f"uniform must lie in (0, 1), got {u!r}")
    return (-math.log(u)) ** -0.5


def frechet_variates(rng, size):
    """Draw i.i.d. Frechet(2) samples, rejecting exact-zero uniforms."""
    u = rng.random(size)
    bad = u == 0.0
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return (-np.log(u)) ** -0.5


def learning_rate(t, rate_scale=1.0):
    if t < 1:
        raise DomainError(f"round index must be >= 1, got {t}")
    if not rate_scale > 0:
        raise DomainError("rate_scale must be positive")
    return rate_scale / math.sqrt(t)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _frechet_draw(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return (-math.log(u)) ** -0.5


@numba.njit(cache=True)
def _before(keys, a, b):
    # Total order on arms: smaller key first, smaller index on ties.
    return keys[a] < keys[b] or (keys[a] == keys[b] and a < b)


@numba.njit(cache=True)
def _select_smallest(keys, m, idx, out):
    """Write the ``m`` arms with smallest keys into ``out`` in index order.

    Quickselect over an index buffer, so O(d) on average.
    """
    d = keys.size
    for j in range(d):
        idx[j] = j
    if m < d:
        k = m - 1
        lo = 0
        hi = d - 1
        while lo < hi:
            mid = (lo + hi) // 2
            # median of three, moved to hi
            a, b, c = idx[lo], idx[mid], idx[hi]
            if _before(keys, a, b):
                if _before(keys, b, c):
                    p = mid
                elif _before(keys, a, c):
                    p = hi
                else:
                    p = lo
            else:
                if _before(keys, a, c):
                    p = lo
                elif _before(keys, b, c):
                    p = hi
                else:
                    p = mid
            tmp = idx[p]
            idx[p] = idx[hi]
            idx[hi] = tmp
            pivot = idx[hi]
            store = lo
            for j in range(lo, hi):
                if _before(keys, idx[j], pivot):
                    tmp = idx[store]
                    idx[store] = idx[j]
                    idx[j] = tmp
                    store += 1
            idx[hi] = idx[store]
            idx[store] = pivot
            if store == k:
                break
            elif store < k:
                lo = store + 1
            else:
                hi = store - 1
    for j in range(m):
        out[j] = idx[j]
    # insertion sort, m is small
    for j in range(1, m):
        v = out[j]
        s = j - 1
        while s >= 0 and out[s] > v:
            out[s + 1] = out[s]
            s -= 1
        out[s + 1] = v


@numba.njit(cache=True)
def _in_top(keys, i, m):
    """True iff arm ``i`` is among the ``m`` smallest keys."""
    ki = keys[i]
    count = 0
    for j in range(keys.size):
        if j != i and (keys[j] < ki or (keys[j] == ki and j < i)):
            count += 1
            if count >= m:
                return False
    return True


@numba.njit(cache=True)
def _geometric_resample(rng, lhat, eta, arm, m, cap, keys):
    """Number of fresh perturbations until ``arm`` is selected again.

    Returns ``cap`` when truncated and -1 if the safety limit is hit.
    """
    d = lhat.size
    k = 0
    while True:
        k += 1
        for j in range(d):
            keys[j] = lhat[j] - _frechet_draw(rng) / eta
        if _in_top(keys, arm, m):
            return k
        if cap > 0 and k >= cap:
            return cap
        if k >= SAFETY_LIMIT:
            return -1


@numba.njit(cache=True)
def _ftpl_step(rng, lhat, eta, m, losses, cap, keys, idx, action, counts):
    """One round: select, resample for arms with nonzero loss, update ``lhat``.

    ``counts[s]`` receives K for ``action[s]`` (0 where the observed loss
    was zero and K was not needed). Returns the number of truncated
    resamples, or -1 on a safety abort.
    """
    d = lhat.size
    for j in range(d):
        keys[j] = lhat[j] - _frechet_draw(rng) / eta
    _select_smallest(keys, m, idx, action)
    truncated = 0
    for s in range(m):
        i = action[s]
        counts[s] = 0
        if losses[i] != 0.0:
            k = _geometric_resample(rng, lhat, eta, i, m, cap, keys)
            if k < 0:
                return -1
            if cap > 0 and k >= cap:
                truncated += 1
            counts[s] = k
    # estimates are added only after all resampling used the old lhat
    for s in range(m):
        i = action[s]
        lhat[i] += losses[i] * counts[s]
    return truncated


@numba.njit(cache=True)
def _resample_many(rng, lhat, eta, arm, m, cap, draws, out):
    keys = np.empty(lhat.size)
    for s in range(draws):
        out[s] = _geometric_resample(rng, lhat, eta, arm, m, cap, keys)


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionSet:
    """A size-``m`` subset of ``range(d)``, stored as sorted arm indices."""

    arms: tuple
    d: int

    def __post_init__(self):
        arms = tuple(int(a) for a in self.arms)
        if any(b <= a for a, b in zip(arms, arms[1:])):
            raise DomainError("arms must be strictly increasing")
        if arms and (arms[0] < 0 or arms[-1] >= self.d):
            raise DomainError(f"arm index out of range for d={self.d}")
        object.__setattr__(self, "arms", arms)

    @classmethod
    def from_indices(cls, indices, d):
        return cls(tuple(sorted(int(i) for i in indices)), d)

    @property
    def m(self):
        return len(self.arms)

    def mask(self):
        out = np.zeros(self.d, dtype=bool)
        out[list(self.arms)] = True
        return out

    def __contains__(self, arm):
        return arm in self.arms

    def __iter__(self):
        return iter(self.arms)

    def __len__(self):
        return len(self.arms)


@dataclass
class FtplState:
    """Cumulative loss estimates and round counter of one FTPL learner."""

    d: int
    m: int
    rate_scale: float = 1.0
    cap: int | None = None
    t: int = 1
    lhat: np.ndarray = field(default=None)
    truncations: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise DomainError("need at least two arms")
        if not 1 <= self.m <= self.d:
            raise DomainError(f"m must lie in [1, d], got m={self.m}")
        if not self.rate_scale > 0:
            raise DomainError("rate_scale must be positive")
        if self.cap is not None and self.cap < 1:
            raise DomainError("cap must be a positive integer or None")
        if self.lhat is None:
            self.lhat = np.zeros(self.d)
        else:
            self.lhat = np.array(self.lhat, dtype=float)
            if self.lhat.shape != (self.d,) or (self.lhat < 0).any():
                raise DomainError("lhat must be a nonnegative length-d vector")

    @property
    def eta(self):
        return learning_rate(self.t, self.rate_scale)


def select_action(lhat, eta, r, m):
    """The ``m`` arms minimizing ``lhat - r/eta``; ties go to the smaller index."""
    lhat = np.asarray(lhat, dtype=float)
    r = np.asarray(r, dtype=float)
    d = lhat.size
    if r.shape != lhat.shape or d < 2:
        raise DomainError("lhat and r must be length-d vectors with d >= 2")
    if not 1 <= m <= d:
        raise DomainError(f"m must lie in [1, d], got m={m}")
    if not eta > 0:
        raise DomainError("eta must be positive")
    keys = lhat - r / eta
    out = np.empty(m, dtype=np.int64)
    _select_smallest(keys, m, np.empty(d, dtype=np.int64), out)
    return ActionSet(tuple(out), d)


def _cap_code(cap):
    if cap is None:
        return UNLIMITED
    if cap < 1:
        raise DomainError("cap must be a positive integer or None")
    return int(cap)


def geometric_resample(lhat, eta, arm, m, rng, cap=None, size=None):
    """Geometric-resampling count K for ``arm`` (``size`` i.i.d. copies if given).

    ``E[K] = 1/phi_arm(eta*lhat)`` when ``cap`` is None; with a finite cap
    the result is ``min(K, cap)``.
    """
    lhat = np.asarray(lhat, dtype=float)
    if not 0 <= arm < lhat.size:
        raise DomainError("arm index out of range")
    if not 1 <= m <= lhat.size:
        raise DomainError("m must lie in [1, d]")
    n = 1 if size is None else int(size)
    out = np.empty(n, dtype=np.int64)
    _resample_many(rng, lhat, float(eta), int(arm), int(m), _cap_code(cap), n, out)
    if (out < 0).any():
        raise RuntimeError("geometric resampling hit the safety limit")
    return int(out[0]) if size is None else out


def ftpl_round(state, losses, rng):
    """Play one round of FTPL on ``state`` (updated in place and returned).

    Returns ``(action, state, counts)`` where ``counts[s]`` is the
    resampling count used for ``action.arms[s]``.
    """
    losses = np.asarray(losses, dtype=float)
    if losses.shape != (state.d,):
        raise DomainError("losses must be a length-d vector")
    if (losses < 0).any() or (losses > 1).any():
        raise DomainError("losses must lie in [0, 1]")
    action = np.empty(state.m, dtype=np.int64)
    counts = np.empty(state.m, dtype=np.int64)
    truncated = _ftpl_step(
        rng, state.lhat, state.eta, state.m, losses, _cap_code(state.cap),
        np.empty(state.d), np.empty(state.d, dtype=np.int64), action, counts,
    )
    if truncated < 0:
        raise RuntimeError("geometric resampling hit the safety limit")
    state.truncations += truncated
    state.t += 1
    return ActionSet(tuple(action), state.d), state, counts
