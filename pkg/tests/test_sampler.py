import time

import numpy as np
import pytest
from scipy import stats

from mdpsae import checks, kernels
from mdpsae.geweke import MUTATIONS, _batch_means_se, geweke_config
from mdpsae.io import demo_path, load_config, load_dataset
from mdpsae.model import Atom, ClusterState, Dataset, HyperConfig, binomial_loglik, cell_predictor
from mdpsae.sampler import (NormalApprox, Sampler, SingularInformation, acceptance_probability, combine_normals,
                            likelihood_normal_approx, mh_accept_independence, run_chain, sample_alpha,
                            sample_prior_state)

from conftest import simple_state, small_dataset


def rng(i=0):
    return kernels.rng_stream(777, i)


def no_data(I=4, S=2, M=1, D=2, p=2):
    return small_dataset(I=I, S=S, M=M, D=D, p=p, n=0, y=np.zeros(I * D, dtype=int))


# -- normal approximation pieces ----------------------------------------------

def test_likelihood_approx_no_information():
    with pytest.raises(SingularInformation):
        likelihood_normal_approx([0, 0], [0, 0], np.zeros(2), np.ones((2, 1)), [0.0])


def test_likelihood_approx_hand_values():
    like = likelihood_normal_approx([50], [100], np.zeros(1), np.ones((1, 1)), [0.0])
    assert np.isclose(like.precision[0, 0], 25.0)
    # working response 0 at the expansion point: mean stays at 0
    assert np.isclose(like.mean[0], 0.0)


def test_likelihood_approx_is_quadratic_expansion():
    # the kernel's gradient and curvature at the expansion point match the exact log-likelihood
    y, n = np.array([3, 9]), np.array([10, 12])
    Z = np.array([[1.0], [1.0]])
    x0 = 0.3
    like = likelihood_normal_approx(y, n, Z[:, 0] * x0, Z, [x0])
    f = lambda x: binomial_loglik(y, n, Z[:, 0] * x).sum()  # noqa: E731
    g = lambda x: like.log_kernel([x])  # noqa: E731
    h = 1e-4
    assert np.isclose((f(x0 + h) - f(x0 - h)) / (2 * h), (g(x0 + h) - g(x0 - h)) / (2 * h), rtol=1e-6)
    assert np.isclose((f(x0 + h) - 2 * f(x0) + f(x0 - h)) / h ** 2, -like.precision[0, 0], rtol=1e-4)


def test_combine_normals_cases():
    like = NormalApprox.from_moments([2.0], [[1.0]])
    flat = NormalApprox(np.zeros((1, 1)), np.zeros(1))
    out = combine_normals(flat, like)
    assert np.allclose(out.mean, [2.0]) and np.allclose(out.cov, [[1.0]])
    same = combine_normals(NormalApprox.from_moments([0.7], [[0.4]]), NormalApprox.from_moments([0.7], [[0.4]]))
    assert np.allclose(same.mean, [0.7]) and np.allclose(same.cov, [[0.2]])
    out = combine_normals(NormalApprox.from_moments([0.0], [[1.0]]), like)
    assert np.allclose(out.mean, [1.0], atol=1e-14) and np.allclose(out.cov, [[0.5]], atol=1e-14)


def test_acceptance_identity_and_exact_gaussian():
    approx = NormalApprox.from_moments([0.3, -0.2], [[1.0, 0.2], [0.2, 0.5]])
    x = np.array([0.1, 0.4])
    assert acceptance_probability(x, x, -4.0, -4.0, approx) == 1.0
    r = rng(1)
    for _ in range(100):
        cur, prop = r.standard_normal(2), r.standard_normal(2)
        # log-likelihood exactly equal to the approximation's kernel (plus a constant)
        llc, llp = approx.log_kernel(cur) + 3.0, approx.log_kernel(prop) + 3.0
        assert abs(acceptance_probability(cur, prop, llc, llp, approx) - 1.0) < 1e-12
        assert mh_accept_independence(cur, prop, llc, llp, approx, r)


def test_acceptance_matches_direct_density_arithmetic():
    res = checks.mh_ratio_oracle(n_instances=200)
    assert res.passed, res.detail


@pytest.mark.parametrize("cls", [Sampler] + list(MUTATIONS.values()))
def test_sweep_ratio_is_zero_when_proposal_equals_current(cls):
    s = cls.__new__(cls)
    r = s._log_accept_ratio(-3.0, -3.0, 1.5, 1.5, 0.2, 0.2)
    assert r == 0.0


# -- individual steps ------------------------------------------------------------

def test_step_b_no_information_is_prior_draw():
    ds = no_data()
    cfg = HyperConfig.default(2, 2, m_b=[1.0, -2.0], V_b_inv=np.array([[2.0, 0.5], [0.5, 1.0]]))
    s = Sampler(ds, cfg)
    st_ = simple_state(ds)
    r = rng(2)
    draws = np.empty((10_000, 2))
    for t in range(len(draws)):
        assert s.step_b(st_, r) == 1.0
        draws[t] = st_.b
    V = np.linalg.inv(cfg.V_b_inv)
    se = np.sqrt(np.diag(V) / len(draws))
    assert np.all(np.abs(draws.mean(0) - cfg.m_b) < 3.5 * se)
    assert np.allclose(np.cov(draws.T), V, atol=0.06)


def test_step_b_recovers_truth_with_huge_samples():
    r = rng(3)
    I, D, p = 6, 2, 2
    X = np.column_stack([np.ones(I * D), r.standard_normal(I * D)])
    b_true = np.array([-0.4, 0.8])
    n = np.full(I * D, 100_000)
    y = r.binomial(n, kernels.expit(X @ b_true))
    ds = Dataset(D=D, county_table={i + 1: (1, 1) for i in range(I)}, stratum_table={1: 1},
                 county=np.repeat(np.arange(1, I + 1), D), domain=np.tile([1, 2], I), y=y, n=n,
                 N_pop=n * 2, X=X)
    s = Sampler(ds, HyperConfig.default(p, D))
    st_ = simple_state(ds)
    draws = []
    acc = []
    for _ in range(600):
        acc.append(s.step_b(st_, r))
        draws.append(st_.b.copy())
    draws = np.array(draws[100:])
    assert np.mean(acc) > 0.5
    assert np.all(np.abs(draws.mean(0) - b_true) < 3 * draws.std(0) + 1e-12)


def test_step_b_accepts_on_demo(demo_dataset):
    cfg = load_config(demo_path("demo_config.json"))
    s = Sampler(demo_dataset, cfg)
    r = rng(4)
    st_ = s.initial_state(r)
    acc = [s.sweep(st_, r).accept_b for _ in range(30)]
    assert np.mean(acc) > 0


def test_step_beta_empty_county_is_exact_draw():
    ds = no_data(I=3, D=2)
    s = Sampler(ds, HyperConfig.default(2, 2))
    st_ = simple_state(ds)
    atom = Atom.from_cov(np.array([0.5, -1.0]), np.array([[0.3, 0.1], [0.1, 0.2]]))
    st_.clusters = ClusterState(np.zeros(3, dtype=np.int64), {0: atom})
    r = rng(5)
    draws = []
    for _ in range(4000):
        assert s.step_beta(st_, r) == 1.0
        draws.append(st_.beta.copy())
    draws = np.concatenate(draws)
    assert stats.kstest(draws[:, 0], stats.norm(0.5, np.sqrt(0.3)).cdf).pvalue > 0.001
    assert np.allclose(np.cov(draws.T), atom.Sigma, atol=0.02)


def test_step_nu_no_data_is_prior_draw():
    ds = no_data(I=4, S=4, M=2)
    s = Sampler(ds, HyperConfig.default(2, 2))
    st_ = simple_state(ds)
    st_.delta_sq = np.array([0.5, 2.0])
    r = rng(6)
    draws = np.array([(s.step_nu(st_, r), st_.nu.copy())[1] for _ in range(10_000)])
    var = st_.delta_sq[ds.layout.stratum_mega]
    assert np.all(np.abs(draws.mean(0)) < 3 * np.sqrt(var / len(draws)))
    assert np.allclose(draws.var(0), var, rtol=0.06)


def test_step_delta_conjugate_examples():
    ds = small_dataset(I=2, S=2, M=1)
    cfg = HyperConfig.default(2, 2, a_delta=1.0, b_delta=1.0)
    s = Sampler(ds, cfg)
    st_ = simple_state(ds, nu=[0.0, 0.0])
    r = rng(7)
    prec = np.array([(s.step_delta(st_, r), 1.0 / st_.delta_sq[0])[1] for _ in range(10_000)])
    assert stats.kstest(prec, stats.gamma(2.0, scale=1.0).cdf).pvalue > 0.01


def test_step_delta_long_run_mean():
    ds = small_dataset(I=6, S=3, M=1)
    cfg = HyperConfig.default(2, 2)
    s = Sampler(ds, cfg)
    st_ = simple_state(ds, nu=[0.4, -0.9, 0.1])
    r = rng(8)
    N = 100_000
    prec = np.empty(N)
    for t in range(N):
        s.step_delta(st_, r)
        prec[t] = 1.0 / st_.delta_sq[0]
    shape = cfg.a_delta + 1.5
    rate = cfg.b_delta + 0.5 * np.sum(st_.nu ** 2)
    assert abs(prec.mean() - shape / rate) < 3 * np.sqrt(shape) / rate / np.sqrt(N)


def test_delta_conjugacy_oracle():
    res = checks.delta_conjugacy()
    assert res.passed, res.detail


def test_step_clusters_huge_alpha_makes_singletons():
    ds = no_data(I=6, D=1, p=1)
    cfg = HyperConfig.default(1, 1)
    s = Sampler(ds, cfg)
    st_ = simple_state(ds, alpha=1e8)
    r = rng(9)
    st_.beta = r.standard_normal((6, 1))
    for _ in range(3):
        s.step_clusters(st_, r)
    assert st_.clusters.k == 6
    st_.clusters.check()


def _co_cluster_freq(alpha, sweeps, r):
    cfg = geweke_config(p=1, D=1)
    ds = no_data(I=2, S=1, D=1, p=1)
    s = Sampler(ds, cfg)
    st_ = sample_prior_state(ds.layout, cfg, r)
    st_.alpha = alpha
    together = np.empty(sweeps)
    for t in range(sweeps):
        mu, prec = s.county_priors(st_)
        st_.beta = kernels.sample_mvn_precision(mu, kernels.cholesky(prec), r)
        s.step_clusters(st_, r)
        s.step_cluster_params(st_, r)
        together[t] = st_.clusters.assignment[0] == st_.clusters.assignment[1]
    return together


def test_prior_only_co_clustering_probability():
    together = _co_cluster_freq(2.0, 20_000, rng(10))
    se = float(_batch_means_se(together))
    assert abs(together.mean() - 1 / 3) < 3 * max(se, 1e-3)


def test_assignment_update_partition_law():
    res = checks.neal_partition_oracle(sweeps=10_000)
    assert res.passed, res.detail


def test_step_clusters_separates_two_clouds():
    ds = no_data(I=20, D=2)
    cfg = HyperConfig.default(2, 2)
    s = Sampler(ds, cfg)
    r = rng(11)
    st_ = simple_state(ds)
    st_.beta = np.concatenate([r.normal(2.0, 0.1, (10, 2)), r.normal(-2.0, 0.1, (10, 2))])
    ks = []
    for t in range(400):
        s.step_clusters(st_, r)
        s.step_cluster_params(st_, r)
        s.step_base_hypers(st_, r)
        s.step_alpha(st_, r)
        if t >= 100:
            ks.append(st_.clusters.k)
    assert np.bincount(ks).argmax() == 2


def test_step_cluster_params_flat_prior_limit():
    ds = no_data(I=5, D=2)
    cfg = HyperConfig.default(2, 2)
    s = Sampler(ds, cfg)
    r = rng(12)
    st_ = simple_state(ds)
    st_.beta = r.standard_normal((5, 2))
    st_.B = np.eye(2) * 1e10
    prec = np.array([[4.0, 1.0], [1.0, 3.0]])
    draws = []
    for _ in range(4000):
        st_.clusters.atoms[0] = Atom(np.zeros(2), prec)
        s.step_cluster_params(st_, r)
        draws.append(st_.clusters.atoms[0].mu)
    draws = np.array(draws)
    se = np.sqrt(np.diag(np.linalg.inv(5 * prec)) / len(draws))
    assert np.all(np.abs(draws.mean(0) - st_.beta.mean(0)) < 3.5 * se)


def test_step_cluster_params_precision_weighted_mean():
    ds = no_data(I=4, D=1, p=1)
    cfg = HyperConfig.default(1, 1)
    s = Sampler(ds, cfg)
    r = rng(13)
    st_ = simple_state(ds)
    st_.beta = np.array([[0.5], [1.0], [1.5], [2.0]])
    st_.m = np.array([-1.0])
    st_.B = np.array([[0.5]])
    prec = 2.0
    P = 1 / 0.5 + 4 * prec
    mean = (-1.0 / 0.5 + prec * 5.0) / P
    draws = []
    for _ in range(20_000):
        st_.clusters.atoms[0] = Atom(np.zeros(1), np.array([[prec]]))
        s.step_cluster_params(st_, r)
        draws.append(st_.clusters.atoms[0].mu[0])
    assert abs(np.mean(draws) - mean) < 3 * np.sqrt(1 / P / len(draws))


def test_step_base_hypers_limits_and_wishart_mean():
    ds = no_data(I=3, D=2)
    cfg = HyperConfig.default(2, 2, A=np.eye(2) * 1e10)
    s = Sampler(ds, cfg)
    r = rng(14)
    st_ = simple_state(ds)
    mus = np.array([[1.0, 0.0], [3.0, -2.0]])
    precs = [np.array([[2.0, 0.3], [0.3, 1.0]]), np.array([[1.0, 0.0], [0.0, 4.0]])]
    st_.clusters = ClusterState(np.array([0, 1, 1]), {0: Atom(mus[0], precs[0]), 1: Atom(mus[1], precs[1])})
    ms, Ss = [], []
    for _ in range(20_000):
        st_.B = np.eye(2) * 0.5
        s.step_base_hypers(st_, r)
        ms.append(st_.m)
        Ss.append(st_.S)
    ms, Ss = np.array(ms), np.array(Ss)
    assert np.all(np.abs(ms.mean(0) - mus.mean(0)) < 3 * np.sqrt(0.25 / len(ms)))
    scale = np.linalg.inv(cfg.q * np.linalg.inv(cfg.R) + cfg.s_df * sum(precs))
    expected = (cfg.q + 2 * cfg.s_df) * scale
    se = Ss.std(0) / np.sqrt(len(Ss))
    assert np.all(np.abs(Ss.mean(0) - expected) < 3.5 * se)


def test_base_hypers_single_atom_at_prior_center():
    ds = no_data(I=2, D=2)
    cfg = HyperConfig.default(2, 2, a_vec=[0.3, -0.3])
    s = Sampler(ds, cfg)
    r = rng(15)
    st_ = simple_state(ds)
    st_.clusters = ClusterState(np.zeros(2, dtype=np.int64), {0: Atom(np.array([0.3, -0.3]), np.eye(2))})
    ms = []
    for _ in range(5000):
        st_.B = np.eye(2)
        s.step_base_hypers(st_, r)
        ms.append(st_.m)
    assert np.all(np.abs(np.mean(ms, 0) - [0.3, -0.3]) < 0.05)


def test_alpha_update_keeps_gamma_prior():
    # alternate k | alpha from the urn and alpha | k: the alpha marginal is the prior
    r = rng(16)
    a, b, n = 2.0, 1.5, 10
    alpha = 1.0
    draws = np.empty(40_000)
    for t in range(len(draws)):
        k = 1 + int(np.sum(r.uniform(size=n - 1) < alpha / (alpha + np.arange(1, n))))
        alpha = sample_alpha(alpha, k, n, a, b, r)
        draws[t] = alpha
    se = float(_batch_means_se(draws))
    assert abs(draws.mean() - a / b) < 3 * se
    assert abs(draws.var() - a / b ** 2) < 0.15 * a / b ** 2


def test_alpha_grows_with_k_and_stays_finite():
    r = rng(17)
    lo = [sample_alpha(1.0, 2, 40, 1.0, 1.0, r) for _ in range(5000)]
    hi = [sample_alpha(1.0, 12, 40, 1.0, 1.0, r) for _ in range(5000)]
    assert np.mean(hi) > np.mean(lo)
    alpha = 1.0
    for t in range(100_000):
        alpha = sample_alpha(alpha, 1 + t % 40, 40, 1.0, 1.0, r)
        assert 0 < alpha < np.inf


# -- whole chain ----------------------------------------------------------------

def test_run_chain_bookkeeping_and_determinism(small, small_config):
    cfg = HyperConfig.default(2, 2, iterations=11, burn_in=10)
    out = run_chain(small, cfg, rng(18))
    assert out.n_draws == 1 and out.iteration.tolist() == [11]
    cfg = HyperConfig.default(2, 2, iterations=40, burn_in=10, thin=3)
    a = run_chain(small, cfg, kernels.rng_stream(5))
    b = run_chain(small, cfg, kernels.rng_stream(5))
    assert a.iteration.tolist() == list(range(13, 41, 3))
    for name in ("b", "beta", "nu", "delta_sq", "alpha", "k", "assignment", "atom_mu", "atom_Sigma"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_cluster_state_consistent_after_every_sweep(small, small_config):
    def cb(t, state, report):
        state.clusters.check()
        assert 1 <= state.clusters.k <= small.layout.I
        assert np.all(np.isfinite(state.beta)) and state.alpha > 0

    run_chain(small, small_config, rng(19), callback=cb)


def test_parametric_keeps_one_cluster(small, small_config):
    out = run_chain(small, small_config, rng(20), parametric=True)
    assert np.all(out.k == 1)
    assert np.all(out.alpha == out.alpha[0])


def test_chain_state_round_trip(small, small_config):
    out = run_chain(small, small_config, rng(21))
    st_ = out.state(out.n_draws - 1)
    assert np.allclose(cell_predictor(st_, small), small.X @ out.b[-1] + out.beta[-1][
        small.layout.cell_county, small.layout.cell_domain] + out.nu[-1][small.layout.cell_stratum])
    st_.clusters.check()


def test_initial_state_newton_when_flat_prior(small):
    cfg = HyperConfig.default(2, 2, V_b_inv=np.zeros((2, 2)))
    st_ = Sampler(small, cfg).initial_state(rng(22))
    assert np.any(st_.b != 0)


def test_demo_chain_runtime():
    ds = load_dataset(demo_path())
    cfg = load_config(demo_path("demo_config.json"))
    t0 = time.perf_counter()
    out = run_chain(ds, cfg)
    assert time.perf_counter() - t0 < 60
    assert out.n_draws == cfg.iterations - cfg.burn_in
    assert out.accept[:, 0].mean() > 0.3
