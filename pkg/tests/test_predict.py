import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdpsae import checks, kernels
from mdpsae.model import Atom, ClusterState, Dataset, HyperConfig, cell_predictor
from mdpsae.predict import (PolyaUrn, PredictionTarget, TotalDraw, aggregate_states, all_county_state,
                            impute_unsampled,
                            parametric_fit, polya_urn_extend, posterior_totals, sample_average_estimate,
                            simulate_totals, summarize_totals, synthetic_estimate)
from mdpsae.sampler import run_chain
from mdpsae.synthetic import TruthSpec, generate_synthetic

from conftest import simple_state


def rng(i=0):
    return kernels.rng_stream(4242, i)


def token_urn(counts, alpha):
    fresh = iter(range(100, 10 ** 9))
    return PolyaUrn(list(range(len(counts))), counts, alpha, lambda r: next(fresh))


def targets_for(ds: Dataset, strata, states, X=None, N=None) -> PredictionTarget:
    J = len(strata)
    D, p = ds.D, ds.p
    return PredictionTarget(
        county_ids=np.arange(1000, 1000 + J), county_stratum=np.array(strata), county_state=np.array(states),
        stratum_mega=dict(ds.stratum_table) | {s: 1 for s in strata if s not in ds.stratum_table},
        X=np.zeros((J, D, p)) if X is None else X, N_pop=np.full((J, D), 50) if N is None else N,
    )


# -- urn --------------------------------------------------------------------------

def test_urn_probabilities_examples():
    assert np.allclose(token_urn([1], 1.0).probabilities(), [0.5, 0.5])
    assert np.isclose(token_urn([2], 2.0).probabilities()[-1], 0.5)
    assert np.isclose(token_urn([1, 1], 2.0).probabilities()[-1], 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.lists(st.integers(1, 50), max_size=10))
def test_urn_normalization(alpha, counts):
    pr = token_urn(counts, alpha).probabilities()
    assert abs(pr.sum() - 1.0) < 1e-12
    n = sum(counts)
    if n:
        assert np.allclose(pr[:-1], np.array(counts) / (alpha + n))


def test_urn_appends_draws():
    urn = token_urn([], 1.0)
    r = rng(1)
    for i in range(5):
        polya_urn_extend(urn, r)
    assert urn.n == 5 and len(urn.atoms) == len(urn.counts)


def test_urn_partition_frequencies_small():
    res = checks.urn_partition_oracle(n_runs=20_000)
    assert res.passed, res.detail
    assert np.isclose(res.values["exact"][0], 1 / 3) and np.isclose(res.values["exact"][-1], 1 / 6)


def test_urn_exchangeability_with_existing_atoms():
    # with a non-empty urn the three pair partitions of new draws are equally likely
    r = rng(2)
    N = 60_000
    counts = np.zeros(5)
    for _ in range(N):
        urn = token_urn([2, 1], 0.8)
        z = [urn.draw(r)[1] for _ in range(3)]
        counts[checks._partition_index(z)] += 1
    pairs = counts[1:4] / N
    se = np.sqrt(pairs.mean() * (1 - pairs.mean()) / N)
    assert np.ptp(pairs) < 3 * np.sqrt(2) * se


# -- imputation -------------------------------------------------------------------

def test_impute_reuses_sampled_stratum_effect_and_draws_fresh_otherwise(small):
    st_ = simple_state(small, nu=[0.8, -0.3])
    t = targets_for(small, strata=[2, 7, 7], states=[1, 1, 2])
    beta, nu, p = impute_unsampled(st_, small, t, s_df=5.0, rng=rng(3))
    assert nu[0] == -0.3
    assert nu[1] == nu[2] and nu[1] not in (0.8, -0.3)
    assert beta.shape == (3, 2) and p.shape == (3, 2)
    assert np.all((p > 0) & (p < 1))


def test_impute_all_zero_effects_gives_half(small):
    st_ = simple_state(small)
    st_.clusters = ClusterState(np.zeros(4, dtype=np.int64), {0: Atom.from_cov(np.zeros(2), np.eye(2) * 1e-20)})
    st_.alpha = 1e-12
    t = targets_for(small, strata=[1, 2], states=[1, 1])
    _, _, p = impute_unsampled(st_, small, t, s_df=5.0, rng=rng(4))
    assert np.allclose(p, 0.5, atol=1e-8)


def test_impute_rejects_missing_covariates(small):
    X = np.zeros((1, 2, 2))
    X[0, 1, 0] = np.nan
    with pytest.raises(ValueError):
        impute_unsampled(simple_state(small), small, targets_for(small, [1], [1], X=X), 5.0, rng(5))


def test_imputed_probability_monotone_in_covariate(small):
    st_ = simple_state(small, b=[1.0, 0.0])
    xs = np.linspace(-2, 2, 5)
    X = np.zeros((5, 2, 2))
    X[:, :, 0] = xs[:, None]
    t = targets_for(small, strata=[9] * 5, states=[1] * 5, X=X)
    r = rng(6)
    means = np.mean([impute_unsampled(st_, small, t, 5.0, r)[2].mean(1) for _ in range(400)], axis=0)
    assert np.all(np.diff(means) > 0)
    slope = np.polyfit(xs, means, 1)[0]
    assert slope > 0.05


# -- totals -------------------------------------------------------------------------

def test_simulate_totals_cases():
    r = rng(7)
    assert simulate_totals(np.array([0.3]), np.array([0]), r)[0] == 0
    assert simulate_totals(np.array([1.0]), np.array([23]), r)[0] == 23
    Y = simulate_totals(np.full(100_000, 0.37), np.full(100_000, 50), r)
    assert abs(Y.mean() / 50 - 0.37) < 3 * np.sqrt(0.37 * 0.63 / 50 / len(Y))


def test_aggregate_examples():
    one = aggregate_states(np.array([[3, 4]]), np.array([9]))
    assert one.state_ids.tolist() == [9] and one.Y.tolist() == [7]
    two = aggregate_states(np.array([[5, 1], [5, 1]]), np.array([1, 2]))
    assert two.Y[0] == two.Y[1] == 6
    with pytest.raises(KeyError):
        aggregate_states(np.array([1, 2]), np.array([1, 3]), state_ids=np.array([1, 2]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_aggregate_conserves_total(J, A, seed):
    r = np.random.default_rng(seed)
    N = r.integers(0, 1000, (J, 3))
    Y = r.binomial(N, 0.3)
    states = r.integers(1, A + 1, J)
    agg = aggregate_states(Y, states, N=N)
    assert agg.Y.sum() == Y.sum() and agg.Y.dtype.kind == "i"
    assert np.all((0 <= agg.Y) & (agg.Y <= agg.N))


def test_summarize_examples():
    ids = np.array([1])
    draws = [TotalDraw(ids, np.array([40]), np.array([100])), TotalDraw(ids, np.array([60]), np.array([100]))]
    s = summarize_totals(draws)
    assert np.isclose(s.mean[0], 50.0) and abs(s.sd[0] - 14.1421356) < 1e-6
    const = summarize_totals([TotalDraw(ids, np.array([7]), np.array([10]))] * 3)
    assert const.sd[0] == 0
    with pytest.raises(ValueError):
        summarize_totals(draws[:1])


def test_posterior_totals_conservation_and_bounds():
    ds, targets, _ = generate_synthetic(TruthSpec(I=12, J_extra=6, S=4, A=3), rng(8))
    cfg = HyperConfig.default(ds.p, ds.D, iterations=40, burn_in=20)
    chain = run_chain(ds, cfg, rng(9))
    draws = posterior_totals(chain, ds, targets, rng(10))
    total_N = ds.N_pop.sum() + targets.N_pop.sum()
    assert len(draws) == chain.n_draws
    for d in draws:
        assert d.N.sum() == total_N
        assert np.all((0 <= d.Y) & (d.Y <= d.N))
    # conservation: the grand total equals the sum over cells, checked with a replayed stream
    r1, r2 = rng(11), rng(11)
    a = posterior_totals(chain, ds, targets, r1, draws=[0])[0]
    st_ = chain.state(0)
    lay = ds.layout
    p_s = np.zeros((lay.I, ds.D))
    p_s[lay.cell_county, lay.cell_domain] = kernels.expit(cell_predictor(st_, ds))
    _, _, p_t = impute_unsampled(st_, ds, targets, float(chain.config["s_df"]), r2)
    _, N_all = all_county_state(ds, targets)
    Y = simulate_totals(np.concatenate([p_s, p_t]), N_all, r2)
    assert a.Y.sum() == Y.sum()


# -- baseline estimators --------------------------------------------------------------

def one_county_per_state(y, n, N, D=2):
    I = len(y) // D
    return Dataset(D=D, county_table={i + 1: (1, i + 1) for i in range(I)}, stratum_table={1: 1},
                   county=np.repeat(np.arange(1, I + 1), D), domain=np.tile(np.arange(1, D + 1), I),
                   y=y, n=n, N_pop=N, X=np.zeros((len(y), 1)))


def test_synthetic_examples():
    ds = one_county_per_state(y=[3, 6, 1, 2], n=[10, 20, 10, 20], N=[100, 50, 30, 400])
    est = synthetic_estimate(ds)
    assert np.allclose(list(est.values()), 20.0)
    ds = one_county_per_state(y=[0, 10, 0, 5], n=[0, 10, 10, 5], N=[0, 80, 20, 20])
    est = synthetic_estimate(ds)
    assert np.isclose(est[1], 100.0) and np.isclose(est[2], 50.0)
    ds = one_county_per_state(y=[0, 4], n=[0, 10], N=[10, 20])
    with pytest.raises(ValueError):
        synthetic_estimate(ds)


def test_synthetic_matches_independent_recomputation():
    ds, targets, _ = generate_synthetic(TruthSpec(I=20, J_extra=7, A=4), rng(12))
    est = synthetic_estimate(ds, targets)
    # spreadsheet style: loop over rows
    rate = {}
    for d in range(1, ds.D + 1):
        ys = sum(int(ds.y[k]) for k in range(ds.n_cells) if ds.domain[k] == d)
        ns = sum(int(ds.n[k]) for k in range(ds.n_cells) if ds.domain[k] == d)
        rate[d] = ys / ns
    num, den = {}, {}
    for k in range(ds.n_cells):
        a = ds.county_table[int(ds.county[k])][1]
        num[a] = num.get(a, 0.0) + ds.N_pop[k] * rate[int(ds.domain[k])]
        den[a] = den.get(a, 0) + int(ds.N_pop[k])
    for j in range(targets.J):
        a = int(targets.county_state[j])
        for d in range(ds.D):
            num[a] = num.get(a, 0.0) + targets.N_pop[j, d] * rate[d + 1]
            den[a] = den.get(a, 0) + int(targets.N_pop[j, d])
    for a in est:
        assert abs(est[a] - 100 * num[a] / den[a]) < 1e-12


def test_synthetic_invariant_to_splitting_a_cell():
    base = Dataset(D=2, county_table={1: (1, 1), 2: (1, 2)}, stratum_table={1: 1},
                   county=[1, 1, 2, 2], domain=[1, 2, 1, 2], y=[2, 5, 3, 1], n=[10, 10, 10, 10],
                   N_pop=[100, 60, 40, 90], X=np.zeros((4, 1)))
    split = Dataset(D=2, county_table={1: (1, 1), 2: (1, 2), 3: (1, 1)}, stratum_table={1: 1},
                    county=[1, 1, 2, 2, 3], domain=[1, 2, 1, 2, 1], y=[1, 5, 3, 1, 1], n=[5, 10, 10, 10, 5],
                    N_pop=[70, 60, 40, 90, 30], X=np.zeros((5, 1)))
    a, b = synthetic_estimate(base), synthetic_estimate(split)
    assert all(abs(a[k] - b[k]) < 1e-12 for k in a)


def test_sample_average_examples():
    ds = Dataset(D=1, county_table={1: (1, 1), 2: (1, 2)}, stratum_table={1: 1}, county=[1, 2], domain=[1, 1],
                 y=[30, 0], n=[60, 0], N_pop=[600, 100], X=np.zeros((2, 1)))
    est = sample_average_estimate(ds)
    pct, se = est[1]
    assert pct == 50.0 and abs(se - 6.4549722) < 1e-6
    assert est[2] is None


def test_parametric_fit_single_cluster(small):
    out = parametric_fit(small, HyperConfig.default(2, 2, iterations=30, burn_in=5), rng(13))
    assert np.all(out.k == 1) and out.parametric
