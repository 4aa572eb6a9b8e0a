import numpy as np
import pytest
from scipy import stats

from bfhybrid.estimators import (
    Exponential,
    FergusonModel,
    Flat,
    Gamma,
    LossSpec,
    McmcConfig,
    Normal,
    OptimizerConfig,
    PriorSpec,
    ProductModel,
    PseudoObservation,
    SchwartzModel,
    StickUniform,
    Wishart,
    bayes_estimate,
    effective_sample_size,
    ferguson_mle,
    ferguson_posterior_mean,
    hybrid_estimate,
    mixture_bayes,
    mixture_hybrid_em,
    mixture_log_posterior,
    mixture_mle_em,
    mixture_prior,
    mle_estimate,
    mvn_hybrid_closed_form,
    newton_maximize,
    rwm,
    schwartz_bayes,
    schwartz_bayes_quadrature,
    schwartz_estimators,
    vech,
)
from bfhybrid.model_kit.bundled import gauss1, gauss2, mixture, mvn

TH_MIX = np.array([0.19, 0.54, -0.85, 0.22, 1.35, 0.45, 0.2, 0.86])
MIX_PRIORS = [(-0.85, 0.1), (0.22, 0.1), (1.35, 0.1)]


class TestLossSpec:
    def test_parse(self):
        assert LossSpec.parse("squared").kind == "squared"
        assert LossSpec.parse("power:4,2").exponents == (4, 2)
        assert LossSpec.parse("zero_one:0.01").delta == 0.01

    @pytest.mark.parametrize("bad", ["power:3", "power:0", "power:", "cubic", "squared:2"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            LossSpec.parse(bad)

    def test_zero_one_width(self):
        with pytest.raises(ValueError):
            LossSpec.zero_one(0.0)

    def test_exponents_broadcast(self):
        np.testing.assert_array_equal(LossSpec.power([4]).exponents_for(3), [4, 4, 4])
        with pytest.raises(ValueError):
            LossSpec.power([4, 2]).exponents_for(3)


class TestNewton:
    def test_quadratic_one_step(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -2.0])
        res = newton_maximize(lambda x: -0.5 * x @ A @ x + b @ x, lambda x: b - A @ x, lambda x: -A, [0.0, 0.0])
        np.testing.assert_allclose(res.x, np.linalg.solve(A, b), rtol=1e-13)
        assert res.converged and res.iterations == 1

    def test_box_projection(self):
        res = newton_maximize(lambda x: -(x[0] - 3) ** 2, lambda x: np.array([-2 * (x[0] - 3)]),
                              lambda x: np.array([[-2.0]]), [0.0], [-1.0], [1.0])
        assert res.x[0] <= 1.0 and res.x[0] > 0.99
        assert not res.converged

    def test_steepest_ascent_fallback(self):
        f = lambda x: -np.sum(x**4) + np.sum(x**2) / 2
        g = lambda x: -4 * x**3 + x
        h = lambda x: np.diag(-12 * x**2 + 1)
        res = newton_maximize(f, g, h, [0.05, -0.05])
        assert res.fallback_steps >= 1
        np.testing.assert_allclose(np.abs(res.x), [0.5, 0.5], rtol=1e-8)


class TestMle:
    def test_normal_three_points(self):
        res = mle_estimate(gauss2(), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(res.theta, [2.0, 2 / 3], rtol=1e-12)
        assert res.converged

    def test_location_one_step(self):
        x = np.array([0.3, 1.9, -0.4, 2.2])
        res = mle_estimate(gauss1(1.5), x, init=[0.0])
        np.testing.assert_allclose(res.theta, [x.mean()], rtol=1e-13)
        assert res.iterations == 1

    def test_single_component_mixture(self):
        x = np.random.default_rng(3).normal(1.0, 2.0, size=200)
        res = mle_estimate(mixture(1), x)
        np.testing.assert_allclose(res.theta, [x.mean(), x.var()], rtol=1e-9)

    def test_init_out_of_bounds(self):
        with pytest.raises(ValueError):
            mle_estimate(gauss2(), [1.0, 2.0], init=[0.0, -1.0])


class TestPriors:
    def test_parse(self):
        p = PriorSpec.parse(["mu:normal:0:1", "sigma2:exponential:2"], ("mu", "sigma2"))
        np.testing.assert_allclose(p.logpdf([0.5, 1.0]), stats.norm.logpdf(0.5) + stats.expon.logpdf(1.0, scale=0.5))

    @pytest.mark.parametrize("bad", ["mu:normal:0", "nu:normal:0:1", "mu:cauchy:0:1", "mu:normal:a:1", "mu"])
    def test_parse_errors(self, bad):
        with pytest.raises(ValueError):
            PriorSpec.parse([bad], ("mu", "sigma2"))

    def test_finite_difference_defaults(self):
        g = Gamma(3.0, 2.0)
        np.testing.assert_allclose(super(Gamma, g).grad([1.3]), g.grad([1.3]), rtol=1e-8)
        np.testing.assert_allclose(super(Gamma, g).hess([1.3]), g.hess([1.3]), rtol=1e-5)

    def test_stick(self):
        s = StickUniform(2 / 3, dim=2)
        np.testing.assert_allclose(s.logpdf([0.2, 0.5]), -np.log(2 / 3) - np.log(0.8))
        assert s.logpdf([0.7, 0.1]) == -np.inf
        assert s.logpdf([0.5, 0.6]) == -np.inf

    def test_wishart_matches_scipy(self):
        V = np.array([[1.0, 0.3], [0.3, 2.0]])
        M = np.array([[2.0, 0.4], [0.4, 1.5]])
        np.testing.assert_allclose(Wishart(4.5, V).logpdf(vech(M)), stats.wishart.logpdf(M, 4.5, V), rtol=1e-12)
        assert Wishart(4.5, V).logpdf([1.0, 2.0, 1.0]) == -np.inf

    def test_pseudo_observation_is_normal_prior(self):
        m = mvn(1)
        d = PseudoObservation(m, [0.4])
        np.testing.assert_allclose(d.logpdf([1.1, 2.0]), stats.norm.logpdf(1.1, 0.4, np.sqrt(2.0)), rtol=1e-13)
        np.testing.assert_allclose(d.grad([1.1, 2.0]), super(PseudoObservation, d).grad([1.1, 2.0]), rtol=1e-7)

    def test_flat(self):
        p = PriorSpec(2).add(0, Flat())
        assert p.is_flat and p.coords == set()

    def test_derivatives_restrict(self):
        p = PriorSpec(2).add(0, Normal(1.0, 4.0)).add(1, Exponential(0.5))
        d = p.derivatives([2.0, 1.0], coords=(0,))
        np.testing.assert_allclose(d.gradient(), [-0.25])
        np.testing.assert_allclose(d.hessian(), [[-0.25]])


class TestMcmc:
    def test_iid_ess(self):
        z = np.random.default_rng(0).standard_normal((4000, 2))
        ess = effective_sample_size(z)
        assert np.all(ess > 2000) and np.all(ess <= 4000)

    def test_ar1_ess(self):
        rng = np.random.default_rng(1)
        rho, n = 0.8, 40_000
        x = np.empty(n)
        x[0] = 0
        for t in range(1, n):
            x[t] = rho * x[t - 1] + rng.standard_normal()
        np.testing.assert_allclose(effective_sample_size(x)[0], n * (1 - rho) / (1 + rho), rtol=0.2)

    def test_targets_acceptance(self):
        res = rwm(lambda x: -0.5 * x @ x, np.zeros(3), McmcConfig(8000, 4000), np.random.default_rng(2))
        assert 0.2 < res.acceptance < 0.4 and not res.flagged
        np.testing.assert_allclose(res.mean, 0.0, atol=5 * res.mcse.max())

    def test_bad_start(self):
        with pytest.raises(ValueError):
            rwm(lambda x: -np.inf, np.zeros(1), McmcConfig(10, 10), np.random.default_rng(0))

    def test_deterministic(self):
        a = rwm(lambda x: -0.5 * x @ x, np.zeros(2), McmcConfig(500, 200), np.random.default_rng(5))
        b = rwm(lambda x: -0.5 * x @ x, np.zeros(2), McmcConfig(500, 200), np.random.default_rng(5))
        np.testing.assert_array_equal(a.samples, b.samples)


class TestBayes:
    def setup_method(self):
        self.x = np.random.default_rng(1).normal(0.7, 1.3, size=40)
        self.model = gauss1(1.3)
        self.prior = PriorSpec(1).add(0, Normal(0.2, 0.5))

    def conjugate(self):
        n = len(self.x)
        return (n * self.x.mean() / 1.69 + 0.2 / 0.5) / (n / 1.69 + 1 / 0.5)

    def test_conjugate_posterior_mean(self):
        res = bayes_estimate(self.model, self.x, self.prior, LossSpec.squared(), OptimizerConfig(seed=3))
        assert abs(res.theta[0] - self.conjugate()) < 3 * res.diagnostics["mcse"][0]
        assert not res.diagnostics["acceptance_flagged"]

    def test_mode_equals_conjugate(self):
        res = bayes_estimate(self.model, self.x, self.prior, LossSpec.zero_one())
        np.testing.assert_allclose(res.theta, [self.conjugate()], rtol=1e-12)

    def test_power_loss_symmetric_posterior(self):
        cfg = OptimizerConfig(seed=4)
        res = bayes_estimate(self.model, self.x, self.prior, LossSpec.power([4]), cfg)
        assert abs(res.theta[0] - self.conjugate()) < 0.02

    def test_flat_zero_one_is_mle(self):
        x = [1.0, 2.0, 3.0, 6.0]
        res = bayes_estimate(gauss2(), x, PriorSpec.flat(2), LossSpec.zero_one())
        np.testing.assert_allclose(res.theta, mle_estimate(gauss2(), x).theta, rtol=1e-12)

    def test_seed_reproducible(self):
        cfg = OptimizerConfig(seed=8, mcmc=McmcConfig(2000, 500))
        a = bayes_estimate(self.model, self.x, self.prior, LossSpec.squared(), cfg)
        b = bayes_estimate(self.model, self.x, self.prior, LossSpec.squared(), cfg)
        np.testing.assert_array_equal(a.theta, b.theta)


def shared_cov_prior(model, mu1):
    return PriorSpec(model.space.d).add(tuple(range(model.space.d)), PseudoObservation(model, mu1))


class TestHybrid:
    def test_closed_form_numbers(self):
        mu, om = mvn_hybrid_closed_form([1.0, 2.0, 3.0], [0.0])
        np.testing.assert_allclose(mu, [1.5], rtol=1e-15)
        np.testing.assert_allclose(om, [[1.25]], rtol=1e-15)

    def test_block_ascent_one_dim(self):
        m = mvn(1)
        res = hybrid_estimate(m, [1.0, 2.0, 3.0], shared_cov_prior(m, [0.0]), LossSpec.zero_one())
        np.testing.assert_allclose(res.theta, [1.5, 1.25], atol=1e-10)
        assert res.converged and not res.diagnostics["decoupled"]

    def test_block_ascent_bivariate(self):
        m = mvn(2)
        rng = np.random.default_rng(7)
        x = rng.multivariate_normal([0.5, -1.0], [[1.0, 0.4], [0.4, 0.8]], size=20)
        mu1 = np.array([0.2, 0.3])
        res = hybrid_estimate(m, x, shared_cov_prior(m, mu1), LossSpec.zero_one())
        mu, om = mvn_hybrid_closed_form(x, mu1)
        np.testing.assert_allclose(res.theta, np.concatenate([mu, vech(om)]), atol=1e-8)

    def test_squared_loss_same_closed_form(self):
        # posterior of mu given Omega is normal, so mean and mode coincide
        m = mvn(1)
        cfg = OptimizerConfig(seed=2, mcmc=McmcConfig(6000, 2000))
        res = hybrid_estimate(m, [1.0, 2.0, 3.0], shared_cov_prior(m, [0.0]), LossSpec.squared(), config=cfg)
        np.testing.assert_allclose(res.theta, [1.5, 1.25], atol=0.1)

    def test_flat_prior_is_mle(self):
        x = [0.5, 1.7, 2.2, 4.0]
        res = hybrid_estimate(gauss2(), x, PriorSpec.flat(2), LossSpec.zero_one())
        np.testing.assert_allclose(res.theta, mle_estimate(gauss2(), x).theta, rtol=1e-10)

    def test_decoupling_matches_block_ascent(self):
        m = mvn(2)
        x = np.random.default_rng(4).multivariate_normal([0, 1], [[1, 0.4], [0.4, 2]], size=25)
        prior = PriorSpec(5).add((2, 3, 4), Wishart(5.0, np.eye(2)))
        a = hybrid_estimate(m, x, prior, LossSpec.zero_one(), alpha=(2, 3, 4))
        b = hybrid_estimate(m, x, prior, LossSpec.zero_one(), alpha=(2, 3, 4), decouple=False)
        assert a.diagnostics["decoupled"] and not b.diagnostics["decoupled"]
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-8)
        np.testing.assert_allclose(a.beta_hat, x.mean(axis=0), rtol=1e-14)

    def test_variance_block_decoupling(self):
        x = [0.5, 1.7, 2.2, 4.0]
        prior = PriorSpec(2).add(1, Exponential(1.0))
        a = hybrid_estimate(gauss2(), x, prior, LossSpec.zero_one(), alpha=(1,))
        b = hybrid_estimate(gauss2(), x, prior, LossSpec.zero_one(), alpha=(1,), decouple=False)
        assert a.diagnostics["decoupled"]
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-9)

    def test_needs_both_blocks(self):
        with pytest.raises(ValueError):
            hybrid_estimate(gauss2(), [1.0, 2.0, 3.0], PriorSpec.flat(2), LossSpec.zero_one(), alpha=(0, 1))

    def test_prior_dimension(self):
        with pytest.raises(ValueError):
            hybrid_estimate(gauss2(), [1.0, 2.0, 3.0], PriorSpec.flat(1), LossSpec.zero_one())

    def test_first_order_closeness(self):
        m = gauss2()
        prior_h = PriorSpec(2).add(0, Normal(0.0, 1.0))
        prior_b = PriorSpec(2).add(0, Normal(0.0, 1.0)).add(1, Exponential(1.0))
        med_h, med_b = [], []
        for n in (1000, 10_000):
            dh, db = [], []
            for r in range(20):
                x = np.random.default_rng([n, r]).normal(0.5, 1.2, size=n)
                mle = mle_estimate(m, x).theta
                dh.append(np.linalg.norm(hybrid_estimate(m, x, prior_h, LossSpec.zero_one()).theta - mle))
                db.append(np.linalg.norm(bayes_estimate(m, x, prior_b, LossSpec.zero_one()).theta - mle))
            med_h.append(np.median(dh))
            med_b.append(np.median(db))
        for med in (med_h, med_b):
            slope = np.log10(med[1] / med[0])
            assert -1.4 <= slope <= -0.6, slope


class TestMixtureEm:
    def test_monotone(self):
        m = mixture(3)
        for seed in range(10):
            x = m.sample(TH_MIX, 200, np.random.default_rng(seed))
            res = mixture_hybrid_em(x, 3, MIX_PRIORS, config=OptimizerConfig(seed=seed))
            assert res.diagnostics["monotone_violations"] == 0
            assert np.all(np.diff(res.diagnostics["trace"]) >= -1e-10 * np.abs(res.diagnostics["trace"][1:]))

    def test_conjugate_one_step(self):
        x = np.random.default_rng(2).normal(1.0, 1.5, size=30)
        a0, t2, s2 = -0.5, 0.3, 2.25
        res = mixture_hybrid_em(x, 1, [(a0, t2)], fixed_variances=[s2], random_starts=0)
        n = len(x)
        expected = (n * x.mean() / s2 + a0 / t2) / (n / s2 + 1 / t2)
        np.testing.assert_allclose(res.alpha_hat, [expected], rtol=1e-10)
        assert res.iterations <= 2

    def test_diffuse_prior_is_sample_moments(self):
        x = np.random.default_rng(5).normal(2.0, 0.7, size=50)
        res = mixture_hybrid_em(x, 1, [(0.0, 1e8)])
        np.testing.assert_allclose(res.theta, [x.mean(), x.var()], rtol=1e-4)

    def test_canonical_order(self):
        x = mixture(3).sample(TH_MIX, 300, np.random.default_rng(1))
        res = mixture_mle_em(x, 3)
        assert np.all(np.diff(res.alpha_hat) > 0)
        np.testing.assert_allclose(sum(res.diagnostics["weights"]), 1.0)

    def test_seeded_reproducible(self):
        x = mixture(3).sample(TH_MIX, 200, np.random.default_rng(6))
        a = mixture_hybrid_em(x, 3, MIX_PRIORS, config=OptimizerConfig(seed=1))
        b = mixture_hybrid_em(x, 3, MIX_PRIORS, config=OptimizerConfig(seed=1))
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_bad_priors(self):
        with pytest.raises(ValueError):
            mixture_hybrid_em([0.0, 1.0, 2.0], 2, [(0.0, 1.0)])

    def test_fast_posterior_matches_prior_spec(self):
        from bfhybrid.estimators.bayes import _Objective

        m = mixture(3)
        x = m.sample(TH_MIX, 100, np.random.default_rng(0))
        lp = mixture_log_posterior(x, 3, MIX_PRIORS)
        obj = _Objective(m, x, mixture_prior(3, MIX_PRIORS), TH_MIX, range(8))
        for th in (TH_MIX, TH_MIX + 0.01):
            np.testing.assert_allclose(lp(th), obj.value_full(th), rtol=1e-12)
        assert lp(np.r_[0.7, 0.1, TH_MIX[2:]]) == -np.inf

    def test_bayes_runs(self):
        x = mixture(3).sample(TH_MIX, 150, np.random.default_rng(3))
        cfg = OptimizerConfig(seed=1, mcmc=McmcConfig(3000, 1000))
        res = mixture_bayes(x, 3, MIX_PRIORS, cfg)
        assert np.all(np.diff(res.theta[2:5]) > 0)
        assert "acceptance" in res.diagnostics


class TestFerguson:
    def test_delta_at_zero(self):
        np.testing.assert_allclose(FergusonModel(3).delta(0.0), 1.0, rtol=1e-15)

    def test_triangular_at_zero(self):
        xs = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(FergusonModel(3).pdf(xs, [0.0]), 1 - np.abs(xs), atol=1e-15)

    def test_density_integrates_to_one(self):
        from scipy.integrate import quad

        m = FergusonModel(3)
        a = 0.3
        dl = float(m.delta(a))
        total = quad(lambda t: m.pdf([t], [a])[0], -1, 1, points=[a - dl, a, a + dl], limit=200)[0]
        np.testing.assert_allclose(total, 1.0, rtol=1e-8)

    def test_rejects(self):
        with pytest.raises(ValueError):
            FergusonModel(2.0)
        with pytest.raises(ValueError):
            FergusonModel(3).logpdf([0.0], [1.2])

    def test_mle_near_one_in_bulk(self):
        m = FergusonModel(3)
        est = [ferguson_mle(m.sample([0.5], 2000, np.random.default_rng(s))) for s in range(10)]
        assert np.median(est) > 0.95

    def test_mle_small_sample_can_stay_at_cluster(self):
        # the largest observation 0.876 gives a spike of about 524 log-units, below the cluster plateau
        x = FergusonModel(3).sample([0.5], 200, np.random.default_rng(0))
        np.testing.assert_allclose(ferguson_mle(x), 0.5, atol=1e-3)

    def test_posterior_mean_near_truth(self):
        x = FergusonModel(3).sample([0.5], 200, np.random.default_rng(0))
        assert abs(ferguson_posterior_mean(x) - 0.5) < 1e-3

    def test_sorted_loglik_matches_direct(self):
        from bfhybrid.estimators.counterexamples import _SortedLoglik

        m = FergusonModel(3)
        x = m.sample([0.4], 100, np.random.default_rng(9))
        L = _SortedLoglik(m, x)
        alphas = np.array([0.0, 0.1, 0.4, 0.4001, 0.8, x[x > 0][0]])
        direct = [m.loglik(x, [a]) for a in alphas]
        np.testing.assert_allclose(L(alphas), direct, rtol=1e-12)


class TestSchwartz:
    def test_examples(self):
        mle, bayes = schwartz_estimators([0.2, 0.5, 0.9])
        assert mle == 1.0
        np.testing.assert_allclose(bayes, 124 / 75, rtol=1e-14)
        mle, bayes = schwartz_estimators([1.6])
        np.testing.assert_allclose(mle, 1.25, rtol=1e-15)
        np.testing.assert_allclose(bayes, (0.953125 / 3) / (0.5625 / 2), rtol=1e-14)

    @pytest.mark.parametrize("y", [[1.6], [0.2, 0.5, 0.9], [1.1, 0.3, 1.9, 0.4], list(np.linspace(0.1, 0.95, 30))])
    def test_quadrature(self, y):
        np.testing.assert_allclose(schwartz_bayes(y), schwartz_bayes_quadrature(y), rtol=1e-10)

    @pytest.mark.parametrize("n", [5, 50, 500])
    def test_closed_form_below_one(self, n):
        exact = (n + 1) * (2.0 ** (n + 2) - 1) / ((n + 2) * (2.0 ** (n + 1) - 1))
        np.testing.assert_allclose(schwartz_bayes(np.full(n, 0.5)), exact, rtol=1e-13)

    @pytest.mark.parametrize("n", [5, 50, 500, 5000])
    def test_limit_rate(self, n):
        # 2 - bayes = 2/(n+2) - (n+1)/((n+2)(2^{n+1}-1)), so the gap to 2 is of order 1/n
        gap = 2 - schwartz_bayes(np.full(n, 0.5))
        assert abs(gap - 2 / (n + 2)) <= 2.0**-n + 1e-15
        assert gap > 4 * 2.0**-n

    def test_rejects(self):
        with pytest.raises(ValueError):
            schwartz_estimators([0.5, 2.0])
        with pytest.raises(ValueError):
            schwartz_estimators([])

    def test_sampler_support(self):
        m = SchwartzModel()
        assert m.sample([1.0], 1000, np.random.default_rng(0)).max() <= 1.0
        y = m.sample([1.6], 1000, np.random.default_rng(0))
        assert y.max() <= 1.25 and y.max() > 1.2
        assert np.all(np.isneginf(m.logpdf([1.3], [1.6])))


class TestProductModel:
    def test_estimators(self):
        pm = ProductModel()
        x, y = pm.sample(0.5, 1.0, 300, np.random.default_rng(1))
        est = pm.estimators(x, y)
        assert set(est) == {"mle", "bayes", "hybrid", "reverse_hybrid"}
        assert est["hybrid"][1] == 1.0
        assert est["mle"][0] > 0.95
        assert abs(est["hybrid"][0] - 0.5) < 1e-3
        assert est["bayes"][1] > 1.9
