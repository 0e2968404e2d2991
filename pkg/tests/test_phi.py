import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sci

from msetbandit import phi
from msetbandit.exceptions import DomainError
from msetbandit.verify import enumerate_tail


def F(x):
    return math.exp(-1.0 / x**2) if x > 0 else 0.0


def density(x):
    return 2.0 * x**-3 * math.exp(-1.0 / x**2) if x > 0 else 0.0


def phi_by_subsets(lam, i, m):
    """phi_i straight from its definition: sum over sets of beating arms."""
    others = [q for q in range(len(lam)) if q != i]

    def integrand(x):
        total = 0.0
        for k in range(m):
            for S in itertools.combinations(others, k):
                pr = 1.0
                for q in others:
                    fq = F(x + lam[q])
                    pr *= (1.0 - fq) if q in S else fq
                total += pr
        return density(x + lam[i]) * total

    val, _ = sci.quad(integrand, -lam[i], np.inf, epsabs=1e-12, epsrel=1e-12, limit=400)
    return val


# -- Poisson-binomial tail ----------------------------------------------------

def test_tail_examples():
    assert phi.poisson_binomial_tail([0.5, 0.5], 1) == pytest.approx(0.75, abs=1e-15)
    assert phi.poisson_binomial_tail([1.0, 1.0], 1) == 0.0
    assert phi.poisson_binomial_tail([0.2, 0.3, 0.5], 0) == pytest.approx(0.28, abs=1e-15)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12), st.integers(0, 12))
def test_tail_equals_enumeration(p, threshold):
    threshold = min(threshold, len(p))
    got = phi.poisson_binomial_tail(p, threshold)
    assert abs(got - enumerate_tail(p, threshold)) <= 1e-12


def test_tail_batches_over_leading_axes(rng):
    p = rng.random((4, 3, 6))
    got = phi.poisson_binomial_tail(p, 2)
    assert got.shape == (4, 3)
    assert got[2, 1] == pytest.approx(enumerate_tail(p[2, 1], 2), abs=1e-14)


def test_tail_domain():
    with pytest.raises(DomainError):
        phi.poisson_binomial_tail([0.5, 1.2], 1)
    with pytest.raises(DomainError):
        phi.poisson_binomial_tail([0.5], -1)
    assert phi.poisson_binomial_tail([0.3, 0.9], 2) == 1.0


# -- selection probabilities --------------------------------------------------

# Values from the subset-sum definition integrated by scipy (phi_by_subsets),
# cross-checked by 10^7-sample Monte Carlo; frozen here.
FROZEN_0013 = [0.85514975, 0.85514975, 0.23113934, 0.05856117]


def test_symmetric_three_arms():
    for i in range(3):
        assert phi.phi_quadrature(np.zeros(3), i, 2).value == pytest.approx(2 / 3, abs=1e-8)


def test_dominant_arm_limit():
    assert phi.phi_quadrature([0.0, 1e6], 0, 1).value == pytest.approx(1.0, abs=1e-6)
    w = phi.phi_all(np.array([0.0, 0.0, 0.0, 1e6]), 1)
    assert w[3] < 1e-6


def test_matches_subset_definition():
    lam = np.array([0.0, 0.0, 1.0, 3.0])
    for i in range(4):
        ref = phi_by_subsets(lam, i, 2)
        assert ref == pytest.approx(FROZEN_0013[i], abs=1e-8)
        assert phi.phi_quadrature(lam, i, 2, 1e-10).value == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_random_instances_match_subset_definition(seed):
    g = np.random.default_rng(seed)
    d = int(g.integers(3, 6))
    m = int(g.integers(1, d))
    lam = g.uniform(0, 3, d)
    i = int(g.integers(0, d))
    assert phi.phi_quadrature(lam, i, m, 1e-10).value == pytest.approx(
        phi_by_subsets(lam, i, m), abs=1e-8)


def test_widely_separated_arms():
    # the mass of phi_i for a far-behind arm lives in a sliver next to u = 1
    lam = np.array([0.0, 10.0, 10.0, 10.0])
    # m = 1: arm 0 wins iff its score beats the other three
    ref, _ = sci.quad(lambda y: density(y) * F(y + 10) ** 3, 0, np.inf,
                      epsabs=1e-14, limit=500)
    w = phi.phi_all(lam, 1, 1e-10)
    assert w[0] == pytest.approx(ref, abs=1e-9)
    lam = np.array([0.0, 0.0, 20.0, 30.0, 40.0, 50.0])
    w = phi.phi_all(lam, 2, 1e-10)
    assert abs(w.sum() - 2) < 1e-8
    # an arm trailing by c is picked roughly when its perturbation exceeds c
    assert w[4] == pytest.approx(1 - math.exp(-1 / 40**2), rel=0.1)
    assert (np.diff(w[2:]) < 0).all()


def test_matches_monte_carlo_with_1e7_samples():
    lam = np.array([0.0, 0.0, 1.0, 3.0])
    freq, se = phi.phi_monte_carlo(lam, 2, 10**7, np.random.default_rng(5))
    q = phi.phi_all(lam, 2)
    ref_se = np.sqrt(q * (1 - q) / 1e7)
    assert (np.abs(freq - q) <= 3 * ref_se + 1e-8).all()
    assert freq.sum() == pytest.approx(2.0, abs=1e-12)


def test_monte_carlo_symmetric_pair(rng):
    freq, se = phi.phi_monte_carlo(np.zeros(2), 1, 10**6, rng)
    assert np.abs(freq - 0.5).max() < 0.0015
    assert se[0] == pytest.approx(0.0005, rel=1e-2)


@given(st.integers(1, 500), st.integers(0, 2**31))
@settings(max_examples=20)
def test_monte_carlo_frequencies_sum_to_m(samples, seed):
    g = np.random.default_rng(seed)
    lam = g.uniform(0, 3, 6)
    freq, _ = phi.phi_monte_carlo(lam, 4, samples, g)
    assert np.rint(freq * samples).sum() == 4 * samples
    assert abs(freq.sum() - 4) < 1e-12


@pytest.mark.parametrize("d,m", [(2, 1), (5, 2), (9, 9), (12, 7)])
def test_zero_lambda_is_uniform(d, m):
    assert np.allclose(phi.phi_all(np.zeros(d), m), m / d, atol=1e-8)


def test_sums_to_m_on_random_instances():
    g = np.random.default_rng(8)
    for _ in range(25):
        d = int(g.integers(2, 21))
        m = int(g.integers(1, d + 1))
        w = phi.phi_all(g.uniform(0, 5, d), m)
        assert abs(w.sum() - m) < 1e-6
        assert ((w >= 0) & (w <= 1)).all()


@given(st.integers(0, 2**31), st.floats(-50, 50))
@settings(max_examples=15)
def test_shift_invariance(seed, c):
    g = np.random.default_rng(seed)
    lam = g.uniform(0, 4, 6)
    a = phi.phi_all(lam, 2, 1e-9)
    b = phi.phi_all(lam + c, 2, 1e-9)
    assert np.abs(a - b).max() <= 2e-9 + 1e-12


def test_monotone_in_own_and_other_coordinates():
    g = np.random.default_rng(13)
    tol = 1e-9
    for _ in range(10):
        lam = g.uniform(0, 4, 6)
        i, j = g.choice(6, 2, replace=False)
        base = phi.phi_quadrature(lam, i, 3, tol).value
        up_own = lam.copy()
        up_own[i] += 0.1
        up_other = lam.copy()
        up_other[j] += 0.1
        assert phi.phi_quadrature(up_own, i, 3, tol).value <= base + 2 * tol
        assert phi.phi_quadrature(up_other, i, 3, tol).value >= base - 2 * tol


def test_input_validation():
    with pytest.raises(DomainError):
        phi.phi_quadrature([0.0], 0, 1)
    with pytest.raises(DomainError):
        phi.phi_quadrature([0.0, 1.0], 0, 3)
    with pytest.raises(DomainError):
        phi.phi_quadrature([0.0, np.nan], 0, 1)
    with pytest.raises(DomainError):
        phi.phi_quadrature([0.0, 1.0], 2, 1)
    with pytest.raises(DomainError):
        phi.phi_quadrature([0.0, 1.0], 0, 1, tol=0.0)


# -- V_{i,N} ------------------------------------------------------------------

def test_v3_is_half_phi():
    lam = np.array([0.3, 0.0, 2.0, 1.1, 4.0])
    for i in range(5):
        assert 2 * phi.v_integral(lam, i, 3, 2).value == pytest.approx(
            phi.phi_quadrature(lam, i, 2).value, abs=3e-8)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_v_integral_against_direct_integration(N):
    # V_{i,N} = int y^-N exp(-1/y^2) P(at most m-1 others beat) dy
    lam = np.array([0.0, 0.5, 2.0])
    i, m = 2, 1

    def f(y):
        x = y - lam[i]
        tail = F(x + lam[0]) * F(x + lam[1])
        return y**-N * math.exp(-1.0 / y**2) * tail

    ref = (sci.quad(f, 0, 50, epsabs=1e-13, limit=400)[0]
           + sci.quad(f, 50, np.inf, epsabs=1e-13, limit=400)[0])
    assert phi.v_integral(lam, i, N, m, 1e-11).value == pytest.approx(ref, abs=1e-10)


def test_v_integral_all_selected_is_gamma():
    for N in (2, 3, 5):
        assert phi.v_integral(np.zeros(3), 0, N, 3).value == pytest.approx(
            0.5 * math.gamma((N - 1) / 2))


def test_v_integral_bound_beyond_top_m():
    g = np.random.default_rng(17)
    for _ in range(8):
        lam = np.sort(g.uniform(0, 5, 6))
        lam[2:] += 0.3
        gaps = phi.lower_gaps(lam, 2)
        for N in (2, 3, 4):
            for i in range(2, 6):
                v = phi.v_integral(lam, i, N, 2, 1e-10).value
                assert v <= gaps[i] ** (1 - N) / (N - 1) + 1e-10


def test_v_integral_requires_n_at_least_two():
    with pytest.raises(DomainError):
        phi.v_integral(np.zeros(3), 0, 1, 1)


# -- witnesses ----------------------------------------------------------------

def u_ratio_direct(K):
    mu = -math.sqrt(2 * K / math.log(K))

    def u(N):
        f = lambda x: x**-N * math.exp(-K / x**2) * (1 - F(x + mu))
        peak = math.sqrt(2 * K / N)
        a, _ = sci.quad(f, 0, peak, limit=400, epsrel=1e-12, epsabs=0)
        b, _ = sci.quad(f, peak, np.inf, limit=400, epsrel=1e-12, epsabs=0)
        return a + b

    return u(4) / u(3)


def r_ratio_direct(M, K):
    def r(N):
        f = lambda x: x**-N * math.exp(-K / x**2) * (1 - F(x + 1)) ** M
        peak = math.sqrt(2 * K / N)
        a, _ = sci.quad(f, 0, peak, limit=400, epsrel=1e-12, epsabs=0)
        b, _ = sci.quad(f, peak, np.inf, limit=400, epsrel=1e-12, epsabs=0)
        return a + b

    return r(4) / r(3)


@pytest.mark.parametrize("K", [2.0, 100.0, 1e4])
def test_u_ratio_against_direct_integration(K):
    assert phi.u_ratio_witness(K) == pytest.approx(u_ratio_direct(K), rel=1e-7)


@pytest.mark.parametrize("M,K", [(4, 2.0), (64, 2.0), (512, 4.0)])
def test_r_ratio_against_direct_integration(M, K):
    assert phi.r_ratio_witness(M, K) == pytest.approx(r_ratio_direct(M, K), rel=1e-7)


# ratio*sqrt(K/log K) computed once by the quadrature oracle and frozen
FROZEN_U = {100.0: 0.7037, 1e4: 0.7381, 1e6: 0.7500, 1e8: 0.7432}
# ratio/(M/K)^(1/3), same provenance
FROZEN_R = {(64, 2.0): 0.8393, (512, 4.0): 0.8343, (1000, 1.0): 0.8397,
            (10**4, 1.0): 0.8372}


@pytest.mark.parametrize("K", sorted(FROZEN_U))
def test_u_ratio_frozen(K):
    scaled = phi.u_ratio_witness(K) * math.sqrt(K / math.log(K))
    assert scaled == pytest.approx(FROZEN_U[K], abs=1e-4)
    assert scaled >= 0.05


def test_u_ratio_decays():
    ks = sorted(FROZEN_U)
    r = [phi.u_ratio_witness(k) for k in ks]
    assert all(b < a for a, b in zip(r, r[1:]))
    assert r[-1] < 1e-3


@pytest.mark.parametrize("MK", sorted(FROZEN_R))
def test_r_ratio_frozen(MK):
    M, K = MK
    scaled = phi.r_ratio_witness(M, K) / (M / K) ** (1 / 3)
    assert scaled == pytest.approx(FROZEN_R[MK], abs=1e-4)
    assert 0.05 <= scaled <= 2.0


def test_witness_domains():
    with pytest.raises(DomainError):
        phi.u_ratio_witness(1.5)
    with pytest.raises(DomainError):
        phi.r_ratio_witness(3, 2.0)


# -- top-m sums, w_star, phi lower bound -------------------------------------

def test_top_m_sum_single_draw_is_sqrt_pi(rng):
    n = 400_000
    est = phi.top_m_sum_estimate(1, 1, n, rng)
    # Frechet-2 has infinite variance, so allow a generous band
    assert abs(est - math.sqrt(math.pi)) < 0.05
    assert est <= 5


@pytest.mark.parametrize("d,m", [(10, 5), (100, 10)])
def test_top_m_sum_bound(d, m, rng):
    assert phi.top_m_sum_estimate(d, m, 20_000, rng) <= 5 * math.sqrt(m * d)


def test_w_star_symmetric_pair():
    assert phi.w_star([0.0, 0.0], 1).value == pytest.approx(0.5, abs=1e-8)


def w_star_monte_carlo(lam, m, n, rng):
    from msetbandit.core import frechet_variates
    order = np.argsort(lam, kind="stable")
    best = set(order[:m])
    scores = frechet_variates(rng, (n, lam.size)) - lam
    top = np.argpartition(-scores, m - 1, axis=1)[:, :m]
    hit = np.array([set(row) == best for row in top])
    return hit.mean()


@pytest.mark.parametrize("seed", range(3))
def test_w_star_against_monte_carlo(seed):
    g = np.random.default_rng(100 + seed)
    d = int(g.integers(3, 7))
    m = int(g.integers(1, d))
    lam = g.uniform(0, 4, d)
    w = phi.w_star(lam, m, 1e-10).value
    n = 200_000
    est = w_star_monte_carlo(lam, m, n, g)
    assert abs(est - w) < 3 * math.sqrt(w * (1 - w) / n) + 1e-9


def test_w_star_lemma_regimes():
    # summed inverse squared gaps below 1/(2m): at least 1/2
    lam = np.array([0.0, 0.2, 6.0, 8.0, 9.0])
    assert phi.w_star(lam, 2).value >= 0.5
    # above 1/(2m): at most 1 - 1/(16m)
    lam = np.array([0.0, 0.2, 0.5, 0.7, 3.0])
    assert phi.w_star(lam, 2).value <= 1 - 1 / 32


def test_w_star_needs_an_excluded_arm():
    with pytest.raises(DomainError):
        phi.w_star(np.zeros(3), 3)


def test_phi_lower_check_examples():
    assert phi.phi_lower_check(np.array([0.0, 0, 20, 30, 40, 50]), 2, 4)
    assert phi.phi_lower_check(np.array([0.0, 10, 10, 10]), 1, 2)
    with pytest.raises(DomainError):
        phi.phi_lower_check(np.zeros(4), 1, 2)
    with pytest.raises(DomainError):
        # arm ranks inside the top m
        phi.phi_lower_check(np.array([0.0, 0, 20, 30]), 2, 0)
    with pytest.raises(DomainError):
        # summed inverse squared gaps too large
        phi.phi_lower_check(np.array([0.0, 1.0, 1.5]), 1, 2)


def test_lower_gaps_and_ranks():
    lam = np.array([3.0, 1.0, 1.0, 0.0])
    assert phi.lower_gaps(lam, 2).tolist() == [2.0, 0.0, 0.0, 0.0]
    assert phi.rank_positions(lam).tolist() == [4, 2, 3, 1]
