"""Loss processes for m-set semi-bandit experiments.

Every environment is described by a small table of mean-loss rows plus a
per-round row index, which is also the form the simulation kernels consume.
Realized losses are independent Bernoulli draws of the means.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ActionSet
from .exceptions import DomainError

STOCHASTIC = "stochastic"
PHASED = "phased_adversarial"
REPLAY = "replay"


def phase_durations(growth, horizon):
    """Lengths ``round(growth**s)`` (at least 1) of phases s = 1, 2, ...

    The last phase is truncated so the durations sum to ``horizon``.
    """
    if not growth > 1:
        raise DomainError("growth must exceed 1")
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    out = []
    total = 0
    s = 1
    while total < horizon:
        n_s = max(1, math.floor(growth**s + 0.5))
        n_s = min(n_s, horizon - total)
        out.append(n_s)
        total += n_s
        s += 1
    return out


@dataclass(frozen=True)
class GapVector:
    gaps: np.ndarray
    min_gap: float


def gap_vector(means, m):
    """Excess of each mean over the m-th smallest one, clipped at zero."""
    means = np.asarray(means, dtype=float)
    ref = np.sort(means)[m - 1]
    gaps = np.maximum(means - ref, 0.0)
    positive = gaps[gaps > 0]
    return GapVector(gaps, float(positive.min()) if positive.size else 0.0)


@dataclass(frozen=True)
class EnvironmentModel:
    kind: str
    d: int
    m: int
    mean_table: np.ndarray
    rows: np.ndarray | None = None
    horizon: int | None = None
    delta: float | None = None
    growth: float | None = None
    phases: tuple = field(default=())

    def mean_loss(self, t):
        self._check_round(t)
        return self.mean_table[self.row(t)]

    def row(self, t):
        return 0 if self.rows is None else int(self.rows[t - 1])

    def row_index(self, horizon):
        """Per-round row indices for rounds ``1..horizon`` (int32)."""
        if self.horizon is not None and horizon > self.horizon:
            raise DomainError("horizon exceeds the environment's length")
        if self.rows is None:
            return np.zeros(horizon, dtype=np.int32)
        return np.ascontiguousarray(self.rows[:horizon], dtype=np.int32)

    def gaps(self, t=1):
        return gap_vector(self.mean_loss(t), self.m)

    def _check_round(self, t):
        if t < 1 or (self.horizon is not None and t > self.horizon):
            raise DomainError(f"round {t} outside [1, {self.horizon}]")


def _check_sizes(d, m, delta):
    if d < 2 or not 1 <= m < d:
        raise DomainError("need d >= 2 and 1 <= m < d")
    if not 0 < delta < 0.5:
        raise DomainError("delta must lie in (0, 1/2)")


def make_stochastic(d, m, delta, horizon=None):
    """First ``m`` arms have mean ``1/2 - delta``, the rest ``1/2 + delta``."""
    _check_sizes(d, m, delta)
    means = np.full(d, 0.5 + delta)
    means[:m] = 0.5 - delta
    return EnvironmentModel(STOCHASTIC, d, m, means[None, :], horizon=horizon, delta=delta)


def make_phased_adversarial(d, m, delta, growth=1.6, horizon=1):
    """Alternating phases of length ``round(growth**s)``.

    Odd phases: first ``m`` arms at ``1 - delta/2``, the rest at 1.
    Even phases: first ``m`` arms at 0, the rest at ``delta/2``.
    """
    _check_sizes(d, m, delta)
    durations = phase_durations(growth, horizon)
    odd = np.full(d, 0.5 + delta / 4 + (0.5 - delta / 4))
    odd[:m] = 0.5 - delta / 4 + (0.5 - delta / 4)
    even = np.full(d, 0.5 + delta / 4 - (0.5 - delta / 4))
    even[:m] = 0.5 - delta / 4 - (0.5 - delta / 4)
    table = np.clip(np.vstack([odd, even]), 0.0, 1.0)
    parity = np.arange(len(durations)) % 2  # phase 1 -> row 0 (odd)
    rows = np.repeat(parity, durations).astype(np.int8)
    return EnvironmentModel(PHASED, d, m, table, rows=rows, horizon=horizon,
                            delta=delta, growth=growth, phases=tuple(durations))


def make_replay(means, m):
    """Environment whose round-t means are row ``t-1`` of ``means``."""
    means = np.asarray(means, dtype=float)
    if means.ndim != 2 or means.shape[0] < 1:
        raise DomainError("replay means must be a horizon x d matrix")
    if ((means < 0) | (means > 1)).any():
        raise DomainError("means must lie in [0, 1]")
    n, d = means.shape
    if not 1 <= m <= d:
        raise DomainError("need 1 <= m <= d")
    return EnvironmentModel(REPLAY, d, m, means, rows=np.arange(n), horizon=n)


def sample_loss(env, t, rng):
    """Independent Bernoulli draws of the round-``t`` means."""
    mu = env.mean_loss(t)
    return (rng.random(env.d) < mu).astype(float)


def realize_losses(env, horizon, rng):
    """A full ``horizon x d`` 0/1 loss matrix drawn round by round."""
    rows = env.row_index(horizon)
    out = np.empty((horizon, env.d), dtype=np.uint8)
    block = max(1, 1_000_000 // env.d)
    for start in range(0, horizon, block):
        stop = min(horizon, start + block)
        u = rng.random((stop - start, env.d))
        out[start:stop] = u < env.mean_table[rows[start:stop]]
    return out


def cumulative_means(env, n):
    """Column sums of the means over rounds ``1..n``."""
    rows = env.row_index(n)
    counts = np.bincount(rows, minlength=env.mean_table.shape[0])
    return counts @ env.mean_table


def best_fixed_action(env, n):
    """The ``m`` arms with the smallest total mean loss over rounds ``1..n``."""
    totals = cumulative_means(env, n)
    order = np.argsort(totals, kind="stable")
    return ActionSet.from_indices(order[: env.m], env.d)


def pseudo_regret_increment(env, t, action, a_star):
    mu = env.mean_loss(t)
    return float(mu[list(action.arms)].sum() - mu[list(a_star.arms)].sum())


# Loss-matrix files: two little-endian uint64 (d, horizon), then horizon*d
# bytes in row-major order, one 0/1 byte per entry.
_HEADER = struct.Struct("<QQ")


def save_loss_matrix(path, losses):
    losses = np.asarray(losses)
    if losses.ndim != 2:
        raise DomainError("loss matrix must be 2-d")
    if not np.isin(losses, (0, 1)).all():
        raise DomainError("loss matrix entries must be 0 or 1")
    horizon, d = losses.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(d, horizon))
        fh.write(np.ascontiguousarray(losses, dtype=np.uint8).tobytes())


def load_loss_matrix(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DomainError("truncated loss matrix header")
    d, horizon = _HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if body.size != d * horizon:
        raise DomainError(f"expected {d * horizon} loss bytes, found {body.size}")
    return body.reshape(horizon, d).copy()
