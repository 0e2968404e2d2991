"""Numerical check batteries behind ``msetbandit verify``.

Each check yields one :class:`CheckResult` row. Monte-Carlo comparisons use
the standard error implied by the quadrature reference value, so an arm
whose reference probability is tiny is not judged against a zero SE when
its empirical count happens to be zero.

Every battery draws from its own stream keyed by ``(seed, tag)``; running
one suite or all of them gives the same rows for the shared checks.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import core, phi

SUITES = ("phi", "resampling", "lemmas", "witnesses", "all")

#: Lower floors for the scaled witness ratios. The quadrature gives about
#: 0.70-0.75 for ratio*sqrt(K/log K) with K in [1e2, 1e8] and about
#: 0.83-0.89 for ratio/(M/K)^(1/3) on the default grid; 0.05 leaves a wide
#: margin while still pinning the growth shape.
U_FLOOR = 0.05
R_FLOOR = 0.05
#: Upper cap on ratio/(M/K)^(1/3); the largest value seen on
#: M/K in [2, 1e6] is 1.003 (at M=2, K=1).
R_CAP = 2.0

DEFAULT_K = (100.0, 1e4)
DEFAULT_MK = ((64, 2.0), (512, 4.0))

_TAG_PHI, _TAG_PB, _TAG_RESAMPLE, _TAG_LEMMA, _TAG_TOPM = range(1, 6)


@dataclass(frozen=True)
class CheckResult:
    name: str
    parameters: str
    value: float
    bound: float
    passed: bool
    # inputs needed to re-run a single check; not written to CSV
    case: tuple | None = field(default=None, compare=False, repr=False)


def _rng(seed, tag):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag])))


def _fmt_vec(x):
    return "[" + " ".join(f"{v:.6g}" for v in x) + "]"


def _le(name, params, value, bound, case=None):
    return CheckResult(name, params, float(value), float(bound), bool(value <= bound), case)


def _ge(name, params, value, bound):
    return CheckResult(name, params, float(value), float(bound), bool(value >= bound))


# ---------------------------------------------------------------------------
# selection probabilities
# ---------------------------------------------------------------------------

def random_lambda(rng, d_range=(3, 20), scale=5.0):
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    m = int(rng.integers(1, d + 1))
    return rng.uniform(0.0, scale, d), m


def phi_checks(instances=100, samples=10**6, seed=0, tol=phi.DEFAULT_TOL,
               sum_tol=1e-6):
    """Sum-to-m and quadrature-versus-Monte-Carlo agreement on random lambda."""
    rng = _rng(seed, _TAG_PHI)
    out = []
    for k in range(instances):
        lam, m = random_lambda(rng)
        params = f"instance={k} d={lam.size} m={m} lambda={_fmt_vec(lam)}"
        q = np.array([phi.phi_quadrature(lam, i, m, tol).value for i in range(lam.size)])
        out.append(_le("phi_sum", params, abs(q.sum() - m), sum_tol))
        freq, _ = phi.phi_monte_carlo(lam, m, samples, rng)
        se = np.sqrt(np.clip(q * (1.0 - q), 0.0, None) / samples)
        for i in range(lam.size):
            out.append(_le("phi_monte_carlo", f"{params} arm={i}",
                           abs(freq[i] - q[i]), 3.0 * se[i] + tol, (lam, m, i)))
    return out


def enumerate_tail(p, threshold):
    """``P(sum <= threshold)`` by summing over all ``2**len(p)`` outcomes."""
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(p)):
        if sum(bits) <= threshold:
            pr = 1.0
            for b, pq in zip(bits, p):
                pr *= pq if b else 1.0 - pq
            total += pr
    return total


def poisson_binomial_checks(instances=1000, seed=0, max_len=12, bound=1e-12):
    rng = _rng(seed, _TAG_PB)
    worst = 0.0
    worst_params = ""
    for k in range(instances):
        n = int(rng.integers(1, max_len + 1))
        p = rng.random(n)
        # exercise the degenerate endpoints too
        p[rng.random(n) < 0.1] = 0.0
        p[rng.random(n) < 0.1] = 1.0
        threshold = int(rng.integers(0, n + 1))
        err = abs(phi.poisson_binomial_tail(p, threshold) - enumerate_tail(p, threshold))
        if err >= worst:
            worst = err
            worst_params = f"instance={k} n={n} threshold={threshold}"
    return [_le("poisson_binomial_enumeration",
                f"instances={instances} max_len={max_len} worst={worst_params}",
                worst, bound)]


# ---------------------------------------------------------------------------
# geometric resampling
# ---------------------------------------------------------------------------

def frozen_states(count=20, seed=0):
    """Reproducible ``(lhat, eta, m)`` triples for resampling checks."""
    rng = _rng(seed, _TAG_RESAMPLE)
    out = []
    for _ in range(count):
        d = int(rng.integers(3, 9))
        m = int(rng.integers(1, d))
        t = int(rng.integers(1, 101))
        lhat = rng.uniform(0.0, 3.0 * math.sqrt(t), d)
        out.append((lhat, core.learning_rate(t), m))
    return out


def resampling_checks(states=20, draws=10**5, seed=0, min_phi=0.05,
                      ks=(1, 5, 20), tol=phi.DEFAULT_TOL):
    """Mean and survival function of K against the geometric law with p = phi."""
    rng = _rng(seed, _TAG_RESAMPLE + 100)
    out = []
    for s, (lhat, eta, m) in enumerate(frozen_states(states, seed)):
        lam = eta * lhat
        for arm in range(lhat.size):
            w = phi.phi_quadrature(lam, arm, m, tol).value
            if w < min_phi:
                continue
            params = f"state={s} d={lhat.size} m={m} eta={eta:.6g} arm={arm} phi={w:.6g}"
            k = core.geometric_resample(lhat, eta, arm, m, rng, size=draws)
            se = math.sqrt(1.0 - w) / w / math.sqrt(draws)
            case = (lhat, eta, m, arm)
            out.append(_le("resample_mean", params, abs(k.mean() - 1.0 / w), 3.0 * se, case))
            for j in ks:
                ref = (1.0 - w) ** j
                emp = float(np.mean(k > j))
                se_j = math.sqrt(ref * (1.0 - ref) / draws)
                out.append(_le("resample_survival", f"{params} k={j}",
                               abs(emp - ref), 3.0 * se_j + 1e-12, case + (j,)))
    return out


# ---------------------------------------------------------------------------
# lemma witnesses
# ---------------------------------------------------------------------------

def _gapped_lambda(rng, d, m, target):
    """Sorted-by-construction lambda with summed inverse squared gaps = target."""
    top = np.sort(rng.uniform(0.0, 1.0, m))
    raw = rng.uniform(1.0, 4.0, d - m)
    scale = math.sqrt(np.sum(raw**-2.0) / target)
    lam = np.concatenate([top, top[-1] + scale * raw])
    return rng.permutation(lam)


def w_star_instances(rng, count, regime):
    out = []
    for _ in range(count):
        d = int(rng.integers(3, 13))
        m = int(rng.integers(1, d))
        if regime == "small":
            target = rng.uniform(0.05, 0.95) / (2 * m)
        else:
            target = rng.uniform(1.0, 20.0) / (2 * m)
        out.append((_gapped_lambda(rng, d, m, target), m))
    return out


def gap_sum(lam, m):
    gaps = phi.lower_gaps(lam, m)
    outside = phi.rank_positions(lam) > m
    with np.errstate(divide="ignore"):
        return float(np.sum(gaps[outside] ** -2.0))


def lemma_checks(seed=0, tol=phi.DEFAULT_TOL, instances=20, top_m_samples=10**5,
                 top_m_pairs=((10, 5), (100, 10), (1000, 30))):
    rng = _rng(seed, _TAG_LEMMA)
    out = []

    for k, (lam, m) in enumerate(w_star_instances(rng, instances // 2, "small")):
        params = f"instance={k} m={m} gap_sum={gap_sum(lam, m):.6g} lambda={_fmt_vec(lam)}"
        out.append(_ge("w_star_lower", params, phi.w_star(lam, m, tol).value, 0.5 - tol))

    large = w_star_instances(rng, instances // 2, "large")
    # a tie at the m-th position makes the summed inverse gaps infinite
    lam_tie = np.array([0.0, 0.3, 0.3, 1.0, 2.0])
    large.append((lam_tie, 2))
    for k, (lam, m) in enumerate(large):
        params = f"instance={k} m={m} gap_sum={gap_sum(lam, m):.6g} lambda={_fmt_vec(lam)}"
        out.append(_le("w_star_upper", params, phi.w_star(lam, m, tol).value,
                       1.0 - 1.0 / (16 * m) + tol))

    for k, (lam, m) in enumerate(w_star_instances(rng, instances, "small")):
        gaps = phi.lower_gaps(lam, m)
        for i in np.nonzero(phi.rank_positions(lam) > m)[0]:
            value = phi.phi_quadrature(lam, int(i), m, tol).value
            bound = gaps[i] ** -2.0 / (4.0 * math.e)
            params = f"instance={k} m={m} arm={i} lambda={_fmt_vec(lam)}"
            out.append(_ge("phi_lower", params, value, bound - tol))

    # V_{i,N} bound and monotonicity through finite differences
    for k in range(instances // 2):
        d = int(rng.integers(3, 9))
        m = int(rng.integers(1, d))
        lam = np.sort(rng.uniform(0.0, 6.0, d))
        lam[m:] += 0.5  # keep the arms beyond m strictly separated
        gaps = phi.lower_gaps(lam, m)
        for N in (2, 3, 4):
            for i in range(m, d):
                v = phi.v_integral(lam, i, N, m, tol).value
                out.append(_le("v_bound", f"instance={k} m={m} N={N} arm={i} "
                               f"lambda={_fmt_vec(lam)}",
                               v, gaps[i] ** (1 - N) / (N - 1) + tol))
        i = int(rng.integers(0, d))
        j = int((i + 1 + rng.integers(0, d - 1)) % d)
        base = phi.phi_quadrature(lam, i, m, tol).value
        up_j = lam.copy()
        up_j[j] += 0.1
        up_i = lam.copy()
        up_i[i] += 0.1
        params = f"instance={k} m={m} arm={i} other={j} lambda={_fmt_vec(lam)}"
        out.append(_ge("phi_monotone_other", params,
                       phi.phi_quadrature(up_j, i, m, tol).value - base, -2 * tol))
        out.append(_le("phi_monotone_own", params,
                       phi.phi_quadrature(up_i, i, m, tol).value - base, 2 * tol))

    rng_top = _rng(seed, _TAG_TOPM)
    for d, m in top_m_pairs:
        est = phi.top_m_sum_estimate(d, m, top_m_samples, rng_top)
        out.append(_le("top_m_sum", f"d={d} m={m} samples={top_m_samples}",
                       est, 5.0 * math.sqrt(m * d)))
    return out


def witness_checks(k_grid=DEFAULT_K, mk_grid=DEFAULT_MK, tol=1e-10):
    out = []
    k_grid = sorted(float(k) for k in k_grid)
    ratios = []
    for K in k_grid:
        r = phi.u_ratio_witness(K, tol)
        ratios.append(r)
        out.append(_ge("u_ratio_floor", f"K={K:g}", r * math.sqrt(K / math.log(K)), U_FLOOR))
    if len(k_grid) > 1:
        out.append(_le("u_ratio_decay", f"K={k_grid[0]:g}..{k_grid[-1]:g}",
                       ratios[-1], ratios[0]))
    for M, K in mk_grid:
        scaled = phi.r_ratio_witness(M, K, tol) / (M / K) ** (1.0 / 3.0)
        out.append(_ge("r_ratio_floor", f"M={M} K={K:g}", scaled, R_FLOOR))
        out.append(_le("r_ratio_cap", f"M={M} K={K:g}", scaled, R_CAP))
    return out


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_suite(suite, seed=0, tol=phi.DEFAULT_TOL, k_grid=DEFAULT_K, mk_grid=DEFAULT_MK,
              instances=None, samples=None):
    """All check rows of ``suite`` (one of :data:`SUITES`)."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    rows = []
    if suite in ("phi", "all"):
        kw = {}
        if instances is not None:
            kw["instances"] = instances
        if samples is not None:
            kw["samples"] = samples
        rows += poisson_binomial_checks(seed=seed)
        rows += phi_checks(seed=seed, tol=tol, **kw)
    if suite in ("resampling", "all"):
        rows += resampling_checks(seed=seed, tol=tol)
    if suite in ("lemmas", "all"):
        rows += lemma_checks(seed=seed, tol=tol)
    if suite in ("witnesses", "all"):
        rows += witness_checks(k_grid, mk_grid)
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check_name", "parameters", "value", "bound", "pass"])
        for r in rows:
            w.writerow([r.name, r.parameters, repr(r.value), repr(r.bound),
                        "true" if r.passed else "false"])
