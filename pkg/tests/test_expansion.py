import numpy as np
import pytest
from scipy import integrate, special

from bfhybrid.expansion import (
    PriorDerivatives,
    bayes_m02,
    bayes_m1,
    bayes_q1,
    bayes_q2,
    bayes_terms,
    hybrid_terms,
    map_terms,
    mle_terms,
    power_coefficient,
)
from bfhybrid.gauss_moments import loss_normalizer, psi_derivative, psi_vector
from bfhybrid.index_algebra import MultiIndex, multi_indices
from bfhybrid.model_kit import (
    EmpiricalStats,
    FisherBlocks,
    empirical_stats,
    exprate,
    gauss1,
    gauss2,
)
from conftest import random_spd


def random_stats(rng, d=2, n=50, alpha=(0,)):
    """Synthetic statistics with a random SPD Fisher matrix and random higher-order entries."""
    I = random_spd(rng, d)
    sexpect, sdelta = {}, {}
    for o in range(1, 5):
        for i in multi_indices(d, o):
            sdelta[i] = rng.normal()
            sexpect[i] = rng.normal()
    for j in range(d):
        sexpect[MultiIndex.unit(d, j)] = 0.0
        for k in range(d):
            sexpect[MultiIndex.unit(d, j) + MultiIndex.unit(d, k)] = -I[j, k]
    beta = tuple(k for k in range(d) if k not in alpha)
    fisher = FisherBlocks(I, np.linalg.inv(I), tuple(alpha), beta)
    return EmpiricalStats(rng.normal(size=d), n, sdelta, sexpect, fisher, 3)


def fact_mle(s):
    """Literal transcription of the closed-form first three MLE terms."""
    d, Iinv = s.d, s.fisher.Iinv
    hp = lambda v, i: np.prod([v[r] ** i[r] for r in range(d)])
    H0 = Iinv @ s.delta0
    acc = sum(s.delta(i) * hp(H0, i) for i in multi_indices(d, 1))
    acc = acc + sum(s.expect(i) * hp(H0, i) / i.factorial() for i in multi_indices(d, 2))
    H1 = Iinv @ acc
    return H0, H1


def fact_second(s, H0, H1, rho=None):
    d, Iinv = s.d, s.fisher.Iinv
    hp = lambda v, i: np.prod([v[r] ** i[r] for r in range(d)])
    acc = np.zeros(d)
    if rho is not None:
        for i in multi_indices(d, 1):
            acc += rho[i] * hp(H0, i)
    for i in multi_indices(d, 2):
        acc += s.delta(i) * hp(H0, i) / i.factorial()
    for i in multi_indices(d, 1):
        acc += s.delta(i) * hp(H1, i)
    for i in multi_indices(d, 3):
        acc += s.expect(i) * hp(H0, i) / i.factorial()
    for i in multi_indices(d, 1):
        for j in multi_indices(d, 1):
            acc += s.expect(i + j) * (hp(H0, i) * hp(H1, j) + hp(H0, j) * hp(H1, i)) / 2
    return Iinv @ acc


def fact_q(s, a):
    """Closed-form Q_1 and the printed Q_2 (third-order M_{0,2} plus M_{i,1} <Q_1^i>)."""
    d, S = s.d, s.fisher.Iinv
    norm = loss_normalizer(a, S)
    q1 = np.linalg.solve(norm, sum(psi_vector(i, a, S) * s.sexpect[i] / i.factorial() for i in multi_indices(d, 3)))
    h0 = S @ s.delta0

    def n_stat(i):
        return (s.sdelta[i] + sum(s.sexpect[i + l] * h0[l.index(1)] for l in multi_indices(d, 1))) / i.factorial()

    m02 = np.linalg.solve(norm, sum(n_stat(i) * psi_vector(i, a, S) for i in multi_indices(d, 3)))
    q2 = m02.copy()
    for k in range(d):
        m1 = np.linalg.solve(norm, sum(n_stat(t) * psi_derivative(t, k, a, S) for t in multi_indices(d, 2)))
        q2 += m1 * q1[k]
    return q1, q2


def gauss2_posterior_mean_v(x):
    """Posterior mean of the variance under a flat prior on (mu, v), by quadrature."""
    n = len(x)
    ss = float(np.sum((x - x.mean()) ** 2))
    vhat = ss / n
    # log marginal of v after integrating mu: -(n-1)/2 log v - ss/(2v)
    logk = lambda v: -(n - 1) / 2 * np.log(v / vhat) - ss / (2 * v) + ss / (2 * vhat)
    lo, hi = vhat * (1 - 12 / np.sqrt(n)), vhat * (1 + 14 / np.sqrt(n))
    opts = dict(epsabs=0, epsrel=1e-11, limit=200, points=[vhat])
    z = integrate.quad(lambda v: np.exp(logk(v)), lo, hi, **opts)[0]
    m = integrate.quad(lambda v: (v - vhat) * np.exp(logk(v)), lo, hi, **opts)[0]
    return vhat + m / z, vhat


class TestPowerCoefficient:
    def test_single_term(self):
        H = [np.array([2.0, 3.0]), np.array([5.0, 7.0])]
        np.testing.assert_allclose(power_coefficient(H, (1, 2), 0), 2 * 9 / 2)
        # eps^1 coefficient of <(H0 + eps H1)^(1,2)>/2 = (H1_0 H0_1^2 + 2 H0_0 H0_1 H1_1)/2
        np.testing.assert_allclose(power_coefficient(H, (1, 2), 1), (5 * 9 + 2 * 2 * 3 * 7) / 2)

    def test_zero_index(self):
        H = [np.ones(2), np.ones(2), np.ones(2)]
        assert power_coefficient(H, (0, 0), 0) == 1.0
        assert power_coefficient(H, (0, 0), 2) == 0.0


class TestMleTerms:
    def test_matches_closed_form(self, rng):
        for _ in range(10):
            s = random_stats(rng, d=rng.integers(1, 4))
            t = mle_terms(s)
            H0, H1 = fact_mle(s)
            np.testing.assert_allclose(t.terms[0], H0, rtol=1e-12)
            np.testing.assert_allclose(t.terms[1], H1, rtol=1e-11, atol=1e-12)
            np.testing.assert_allclose(t.terms[2], fact_second(s, H0, H1), rtol=1e-10, atol=1e-11)

    def test_location_terminates(self, rng):
        x = rng.normal(1.0, 0.6, size=30)
        s = empirical_stats(gauss1(0.6), x, [0.8])
        t = mle_terms(s)
        np.testing.assert_allclose(t.terms[1], 0.0, atol=1e-12)
        np.testing.assert_allclose(t.terms[2], 0.0, atol=1e-12)
        np.testing.assert_allclose(t.estimate([0.8], 30), [x.mean()], rtol=1e-12)

    def test_normal_exact_two_terms(self, rng):
        # the normal MLE is polynomial in sample moments, so the expansion ends at H1
        m = gauss2()
        th = np.array([0.5, 2.0])
        for n in (100, 1000):
            x = m.sample(th, n, rng)
            t = mle_terms(empirical_stats(m, x, th))
            z = np.sqrt(n) * (np.array([x.mean(), x.var()]) - th)
            np.testing.assert_allclose(t.scaled_sum(n, 1), z, atol=1e-10)
            np.testing.assert_allclose(t.terms[2], 0.0, atol=1e-10)

    def test_remainder_slope(self):
        # exponential rate: MLE 1/xbar; remainders after r <= 1 and r <= 2 shrink like n^-1 and n^-3/2
        m = exprate()
        t0 = 1.3
        rng = np.random.default_rng(11)
        ns = np.array([100, 1000, 10000])
        med1, med2 = [], []
        for n in ns:
            e1, e2 = [], []
            for _ in range(200):
                x = m.sample([t0], n, rng)
                t = mle_terms(empirical_stats(m, x, [t0]))
                z = np.sqrt(n) * (1 / x.mean() - t0)
                e1.append(abs(z - t.scaled_sum(n, 1)[0]))
                e2.append(abs(z - t.scaled_sum(n, 2)[0]))
            med1.append(np.median(e1))
            med2.append(np.median(e2))
        s1 = np.polyfit(np.log(ns), np.log(med1), 1)[0]
        s2 = np.polyfit(np.log(ns), np.log(med2), 1)[0]
        assert -1.3 < s1 < -0.7
        assert -1.6 <= s2 <= -0.6
        assert s2 < s1

    def test_missing_orders(self, rng):
        s = empirical_stats(gauss2(), rng.normal(size=10), [0.0, 1.0], max_order=1)
        with pytest.raises(ValueError):
            mle_terms(s)


class TestMapTerms:
    def test_flat_prior_is_mle(self, rng):
        s = random_stats(rng, d=2)
        a, b = mle_terms(s), map_terms(s, PriorDerivatives.flat(2))
        for r in range(3):
            np.testing.assert_array_equal(a.terms[r], b.terms[r])

    def test_location_prior_shift(self, rng):
        s0, mu0, mu1, s1 = 0.7, 0.2, 1.1, 2.0
        s = empirical_stats(gauss1(s0), rng.normal(mu0, s0, size=20), [mu0])
        prior = PriorDerivatives.from_arrays([-(mu0 - mu1) / s1**2], [[-1 / s1**2]])
        t, t0 = map_terms(s, prior), mle_terms(s)
        np.testing.assert_allclose(t.terms[1] - t0.terms[1], [s0**2 * (mu1 - mu0) / s1**2], rtol=1e-12)

    def test_second_order_prior_terms(self, rng):
        for _ in range(5):
            s = random_stats(rng, d=2)
            g = rng.normal(size=2)
            h = random_spd(rng, 2)
            prior = PriorDerivatives.from_arrays(g, -h)
            t, t0 = map_terms(s, prior), mle_terms(s)
            H0 = t0.terms[0]
            c = s.fisher.Iinv @ g
            # standalone: rho_i <H0^i> plus the H1 shift c propagated through Delta_i and E_{i+j}
            acc = -h @ H0
            for i in multi_indices(2, 1):
                acc += s.delta(i) * c[i.index(1)]
                for j in multi_indices(2, 1):
                    acc += s.expect(i + j) * (H0[i.index(1)] * c[j.index(1)] + H0[j.index(1)] * c[i.index(1)]) / 2
            np.testing.assert_allclose(t.terms[2] - t0.terms[2], s.fisher.Iinv @ acc, rtol=1e-9, atol=1e-11)
            np.testing.assert_allclose(
                t.terms[2], fact_second(s, H0, t.terms[1], prior.rho), rtol=1e-10, atol=1e-11
            )

    def test_dimension_check(self, rng):
        with pytest.raises(ValueError):
            map_terms(random_stats(rng, d=2), PriorDerivatives.flat(3))


class TestBayesTerms:
    def test_location_has_no_correction(self, rng):
        s = empirical_stats(gauss1(), rng.normal(size=20), [0.0])
        np.testing.assert_allclose(bayes_q1(s, (2,)), [0.0], atol=1e-15)

    def test_normal_m01(self, rng):
        v = 1.7
        s = empirical_stats(gauss2(), rng.normal(0, np.sqrt(v), size=20), [0.0, v])
        formula_value = np.array([0.0, 5 * v])
        reference_value = np.array([0.0, 2 * v])
        q1 = bayes_q1(s, (2, 2))
        np.testing.assert_allclose(q1, formula_value, rtol=1e-12, atol=1e-14)
        assert not np.allclose(q1, reference_value)

    def test_exponential_q1(self, rng):
        s = empirical_stats(exprate(), rng.exponential(size=10), [2.5])
        np.testing.assert_allclose(bayes_q1(s, (2,)), [2.5], rtol=1e-12)

    def test_q1_simulation_oracle(self):
        # n (posterior mean - MAP) under a flat prior -> Q1; posterior mean by quadrature
        v, n, R = 2.0, 10_000, 300
        rng = np.random.default_rng(5)
        vals = []
        for _ in range(R):
            x = rng.normal(0.3, np.sqrt(v), size=n)
            pm, mode = gauss2_posterior_mean_v(x)
            vals.append(n * (pm - mode))
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(R)
        s = empirical_stats(gauss2(), x, [0.3, v])
        q1 = bayes_q1(s, (2, 2))[1]
        assert abs(vals.mean() - q1) < 4 * se + 5 * v * 5 / n
        assert abs(vals.mean() - 2 * v) > 100 * se

    def test_closed_form_transcription(self, rng):
        for _ in range(5):
            s = random_stats(rng, d=2)
            for a in ((2, 2), (4, 2)):
                q1, q2 = fact_q(s, a)
                np.testing.assert_allclose(bayes_q1(s, a), q1, rtol=1e-11)
                np.testing.assert_allclose(bayes_q2(s, a, form="printed"), q2, rtol=1e-10, atol=1e-12)

    def test_q2_exact_posterior_normal(self):
        # sqrt(n) (n (posterior mean - MAP) - Q1) -> Q2, exact posterior mean SS/(n-5) under a flat prior
        m = gauss2()
        th = np.array([0.5, 2.0])
        rng = np.random.default_rng(3)
        n = 100_000
        x = m.sample(th, n, rng)
        ss = float(np.sum((x - x.mean()) ** 2))
        s = empirical_stats(m, x, th)
        t = bayes_terms(s, PriorDerivatives.flat(2), (2, 2))
        target = np.sqrt(n) * (n * (ss / (n - 5) - ss / n) - t.corrections["Q1"][1])
        np.testing.assert_allclose(t.corrections["Q2"][1], target, rtol=0.05)
        H0 = mle_terms(s).terms[0]
        np.testing.assert_allclose(t.corrections["Q2"][1], 5 * H0[1], rtol=1e-9)
        printed = bayes_q2(s, (2, 2), form="printed")
        np.testing.assert_allclose(printed[1], -21.5 * H0[1], rtol=1e-9)

    @pytest.mark.parametrize("a", [2, 4])
    def test_q2_exact_posterior_exponential(self, a):
        from scipy import optimize

        m = exprate()
        t0, n = 1.5, 100_000
        rng = np.random.default_rng(17)
        x = m.sample([t0], n, rng)
        tot = float(x.sum())
        # Gamma(n+1, rate tot) posterior under a flat prior; moments scaled by the mode for accuracy
        mode = n / tot
        mom = [special.poch(n + 1, k) / tot**k / mode**k for k in range(4)]
        if a == 2:
            bayes = mom[1]
        else:
            g = lambda u: u**3 - 3 * u**2 * mom[1] + 3 * u * mom[2] - mom[3]
            bayes = optimize.brentq(g, 0.99, 1.01, xtol=1e-15)
        s = empirical_stats(m, x, [t0])
        t = bayes_terms(s, PriorDerivatives.flat(1), (a,))
        target = np.sqrt(n) * (n * mode * (bayes - 1) - t.corrections["Q1"][0])
        np.testing.assert_allclose(t.corrections["Q2"][0], target, rtol=0.05, atol=0.02)
        assert abs(bayes_q2(s, (a,), form="printed")[0] - target) > 0.5

    def test_q1_sample_invariant_m02_not(self, rng):
        m = gauss2()
        th = [0.1, 1.4]
        s1 = empirical_stats(m, m.sample(th, 40, rng), th)
        s2 = empirical_stats(m, m.sample(th, 40, rng), th)
        np.testing.assert_array_equal(bayes_q1(s1, (2, 2)), bayes_q1(s2, (2, 2)))
        assert not np.allclose(bayes_m02(s1, (2, 2)), bayes_m02(s2, (2, 2)))

    def test_difference_is_q(self, rng):
        s = random_stats(rng, d=2)
        prior = PriorDerivatives.from_arrays(rng.normal(size=2), -random_spd(rng, 2))
        b, h = bayes_terms(s, prior, (2, 2)), map_terms(s, prior)
        np.testing.assert_allclose(b.terms[1] - h.terms[1], b.corrections["Q1"], rtol=1e-12)
        np.testing.assert_allclose(b.terms[2] - h.terms[2], b.corrections["Q2"], rtol=1e-12)
        np.testing.assert_allclose(
            b.corrections["Q2"],
            bayes_m02(s, (2, 2)) + sum(bayes_m1(s, (2, 2), k) * b.corrections["Q1"][k] for k in range(2)),
            rtol=1e-12,
        )

    def test_normalizations_agree_for_diagonal_fisher(self, rng):
        s = empirical_stats(gauss2(), rng.normal(size=30), [0.0, 1.2])
        for a in ((2, 2), (4, 2), (2, 4)):
            np.testing.assert_allclose(
                bayes_q1(s, a, "moment"), bayes_q1(s, a, "stein"), rtol=1e-12, atol=1e-14
            )

    def test_normalizations_differ_for_correlated_fisher(self, rng):
        s = random_stats(rng, d=2)
        assert not np.allclose(bayes_q1(s, (2, 2), "moment"), bayes_q1(s, (2, 2), "stein"))

    def test_bad_form(self, rng):
        with pytest.raises(ValueError):
            bayes_q2(random_stats(rng), (2, 2), form="other")


class TestFirstOrderEquivalence:
    def test_bitwise_identical(self, rng):
        s = random_stats(rng, d=3, alpha=(0, 2))
        prior = PriorDerivatives.from_arrays(rng.normal(size=3), -random_spd(rng, 3))
        pa = prior.restrict((0, 2))
        terms = [
            mle_terms(s),
            map_terms(s, prior),
            bayes_terms(s, prior, (2, 2, 2)),
            hybrid_terms(s, pa, (2, 2)),
        ]
        for t in terms[1:]:
            np.testing.assert_array_equal(t.terms[0], terms[0].terms[0])


class TestHybridTerms:
    def test_location_scale_example(self, rng):
        # Bayes on mu with a normal prior, MLE on the variance
        s0sq, mu0, mu1, s1sq = 1.6, 0.2, 0.9, 3.0
        m = gauss2()
        s = empirical_stats(m, m.sample([mu0, s0sq], 60, rng), [mu0, s0sq])
        prior = PriorDerivatives.from_arrays([(mu1 - mu0) / s1sq], [[-1 / s1sq]])
        h, base = hybrid_terms(s, prior, (2,)), mle_terms(s)
        np.testing.assert_allclose(h.corrections["q1"], [0.0], atol=1e-14)
        np.testing.assert_allclose(h.terms[1] - base.terms[1], [s0sq * (mu1 - mu0) / s1sq, 0.0], rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(h.terms[1][1], base.terms[1][1])

    def test_flat_prior_no_third_derivatives(self, rng):
        m = gauss2()
        s = empirical_stats(m, m.sample([0.0, 1.0], 40, rng), [0.0, 1.0])
        h, base = hybrid_terms(s, PriorDerivatives.flat(1), (2,)), mle_terms(s)
        for r in range(3):
            np.testing.assert_allclose(h.terms[r], base.terms[r], atol=1e-12)

    def test_beta_block_gets_only_cross_information(self, rng):
        s = random_stats(rng, d=3, alpha=(1,))
        prior = PriorDerivatives.from_arrays(rng.normal(size=1), [[-0.7]])
        h, base = hybrid_terms(s, prior, (2,)), mle_terms(s)
        Iinv = s.fisher.Iinv
        diff = h.terms[1] - base.terms[1]
        np.testing.assert_allclose(diff[[0, 2]], Iinv[[0, 2], 1] * prior.gradient()[0], rtol=1e-12)
        sub = s.restrict((1,))
        np.testing.assert_allclose(diff[1], Iinv[1, 1] * prior.gradient()[0] + bayes_q1(sub, (2,))[0], rtol=1e-12)

    def test_variance_block_correction(self, rng):
        # Bayes on the variance: alpha correction is I^11 sigma(a1)^{-1} Psi E / 3! = 4 v under a flat prior
        v = 1.4
        m = gauss2()
        s = empirical_stats(m, m.sample([0.0, v], 30, rng), [0.0, v])
        h = hybrid_terms(s, PriorDerivatives.flat(1), (2,), alpha=(1,))
        np.testing.assert_allclose(h.corrections["q1"], [4 * v], rtol=1e-12)

    def test_needs_alpha(self, rng):
        s = random_stats(rng, d=2, alpha=())
        with pytest.raises(ValueError):
            hybrid_terms(s, PriorDerivatives.flat(1), (2,))
