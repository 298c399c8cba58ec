"""Sampler-correctness oracles used by ``mdpsae check`` and the test suite.

Each check compares one piece of the sampler against an independent
computation: a closed-form conditional, direct density arithmetic, brute-force
partition enumeration or a discretized posterior.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .geweke import MUTATIONS, _batch_means_se, geweke_check, geweke_config, skeleton_dataset
from .model import Atom, ClusterState, Dataset, ModelState, binomial_loglik
from .predict import PolyaUrn
from .sampler import NormalApprox, Sampler, acceptance_probability, mh_accept_independence, sample_prior_state


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _sampler_class(mutation):
    return MUTATIONS[mutation] if mutation else Sampler


# -- delta conjugacy ----------------------------------------------------------

def delta_conjugacy(mutation=None, n_draws=10_000, seed=0) -> CheckResult:
    """Empirical step_delta draws at fixed nu vs the closed-form inverse gamma."""
    t0 = time.perf_counter()
    rng = kernels.rng_stream(seed, 10)
    ds = skeleton_dataset(I=12, S=6, M=2, D=2, p=2, n=5, rng=kernels.rng_stream(seed, 11))
    cfg = geweke_config()
    sampler = _sampler_class(mutation)(ds, cfg)
    state = sample_fixed_state(sampler, rng)
    state.nu = rng.normal(0.0, 0.7, ds.layout.S)
    draws = np.empty(n_draws)
    for t in range(n_draws):
        sampler.step_delta(state, rng)
        draws[t] = state.delta_sq[0]
    lay = ds.layout
    nu0 = state.nu[lay.stratum_mega == 0]
    shape = cfg.a_delta + 0.5 * len(nu0)
    rate = cfg.b_delta + 0.5 * np.sum(nu0 ** 2)
    pval = stats.kstest(1.0 / draws, stats.gamma(shape, scale=1.0 / rate).cdf).pvalue
    return CheckResult("delta conjugacy (KS)", pval > 0.01, f"p={pval:.3g}",
                       time.perf_counter() - t0, {"pvalue": pval})


def sample_fixed_state(sampler: Sampler, rng) -> ModelState:
    return sample_prior_state(sampler.lay, sampler.config, rng, parametric=sampler.parametric)


# -- independence MH ratio ----------------------------------------------------

def reference_acceptance(current, proposal, ll_current, ll_proposal, m1, V1) -> float:
    """min(1, L(prop) phi(cur; m1, V1) / (L(cur) phi(prop; m1, V1))) by direct density evaluation."""
    phi = stats.multivariate_normal(mean=m1, cov=V1)
    num = ll_proposal + phi.logpdf(current)
    den = ll_current + phi.logpdf(proposal)
    return float(min(1.0, np.exp(num - den)))


def random_mh_instance(dim, rng):
    A = rng.standard_normal((dim, dim))
    V1 = A @ A.T / dim + 0.5 * np.eye(dim)
    m1 = rng.standard_normal(dim)
    A0 = rng.standard_normal((dim, dim))
    V0 = A0 @ A0.T / dim + np.eye(dim)
    m0 = rng.standard_normal(dim)
    current = m1 + rng.standard_normal(dim)
    proposal = m1 + rng.standard_normal(dim)
    ll_cur, ll_prop = -rng.gamma(2.0, 3.0, 2)
    return current, proposal, float(ll_cur), float(ll_prop), m1, V1, m0, V0


def mh_ratio_oracle(mutation=None, n_instances=1000, dims=(1, 6), seed=0) -> CheckResult:
    """Implementation vs direct density arithmetic on random instances.

    The sampler's own ratio (which sees likelihood and prior kernels) is
    compared too, so a corrupted ratio inside the sweep is caught here.
    """
    t0 = time.perf_counter()
    rng = kernels.rng_stream(seed, 20)
    ratio_owner = _sampler_class(mutation).__new__(_sampler_class(mutation))
    worst = 0.0
    worst_step = 0.0
    decisions_agree = True
    for dim in dims:
        for _ in range(n_instances):
            cur, prop, llc, llp, m1, V1, m0, V0 = random_mh_instance(dim, rng)
            ref = reference_acceptance(cur, prop, llc, llp, m1, V1)
            like = NormalApprox.from_moments(m1, V1)
            prior = NormalApprox.from_moments(m0, V0)
            worst = max(worst, abs(acceptance_probability(cur, prop, llc, llp, like) - ref))
            r = ratio_owner._log_accept_ratio(llc, llp, like.log_kernel(cur), like.log_kernel(prop),
                                              prior.log_kernel(cur), prior.log_kernel(prop))
            worst_step = max(worst_step, abs(min(1.0, float(np.exp(min(r, 0.0)))) - ref))
            seed_u = int(rng.integers(2 ** 32))
            u = kernels.rng_stream(seed_u).uniform()
            if abs(np.log(u) - np.log(ref)) > 1e-9:
                got = mh_accept_independence(cur, prop, llc, llp, like, kernels.rng_stream(seed_u))
                decisions_agree &= got == (u < ref)
    ok = worst < 1e-12 and worst_step < 1e-12 and decisions_agree
    return CheckResult("independence MH ratio", ok,
                       f"max |a - a_ref| = {worst:.2e} (function), {worst_step:.2e} (sweep ratio)",
                       time.perf_counter() - t0, {"max_err": worst, "max_err_sweep": worst_step})


# -- Polya urn partitions -----------------------------------------------------

PARTITIONS_3 = ["{123}", "{12}{3}", "{13}{2}", "{1}{23}", "{1}{2}{3}"]


def crp_partition_probs(alpha: float) -> np.ndarray:
    """Exact partition law of three sequential urn draws, in PARTITIONS_3 order."""
    a = float(alpha)
    one = 1 / (1 + a) * 2 / (2 + a)
    pair = a / (1 + a) / (2 + a)
    three = a * a / ((1 + a) * (2 + a))
    return np.array([one, pair, pair, pair, three])


def _partition_index(z) -> int:
    a, b, c = z
    if a == b == c:
        return 0
    if a == b:
        return 1
    if a == c:
        return 2
    if b == c:
        return 3
    return 4


def urn_partition_oracle(n_runs=100_000, alpha=1.0, seed=0) -> CheckResult:
    """Partition frequencies of three urn draws vs enumeration, within 3 MC ses."""
    t0 = time.perf_counter()
    rng = kernels.rng_stream(seed, 30)
    counter = iter(range(10 ** 9))
    counts = np.zeros(5)
    for _ in range(n_runs):
        urn = PolyaUrn([], [], alpha, lambda r: next(counter))
        z = [urn.draw(rng)[1] for _ in range(3)]
        counts[_partition_index(z)] += 1
    freq = counts / n_runs
    exact = crp_partition_probs(alpha)
    se = np.sqrt(exact * (1 - exact) / n_runs)
    zs = (freq - exact) / se
    ok = bool(np.all(np.abs(zs) < 3))
    return CheckResult("urn partitions (n=3)", ok, "max |z| = %.2f" % np.max(np.abs(zs)),
                       time.perf_counter() - t0, {"freq": freq, "exact": exact, "z": zs})


def neal_partition_oracle(mutation=None, sweeps=20_000, alpha=1.0, seed=0) -> CheckResult:
    """Assignment update on three data-free units reproduces the urn partition law.

    Alternating exact draws of beta from their atoms with the assignment and
    atom updates leaves the prior invariant, so the partition of the three
    units must follow the enumerated law.
    """
    t0 = time.perf_counter()
    rng = kernels.rng_stream(seed, 40)
    D = 1
    cfg = geweke_config(p=2, D=D)
    ds = skeleton_dataset(I=3, S=1, M=1, D=D, p=2, n=0, rng=kernels.rng_stream(seed, 41))
    sampler = _sampler_class(mutation)(ds, cfg)
    state = sample_fixed_state(sampler, rng)
    state.alpha = alpha
    idx = np.empty(sweeps, dtype=int)
    for t in range(sweeps):
        mu, prec = sampler.county_priors(state)
        L = kernels.cholesky(prec)
        state.beta = kernels.sample_mvn_precision(mu, L, rng)
        sampler.step_clusters(state, rng)
        sampler.step_cluster_params(state, rng)
        idx[t] = _partition_index(state.clusters.assignment.tolist())
    onehot = np.eye(5)[idx]
    freq = onehot.mean(0)
    se = _batch_means_se(onehot)
    exact = crp_partition_probs(alpha)
    zs = (freq - exact) / np.maximum(se, 1e-12)
    ok = bool(np.all(np.abs(zs) < 4))
    return CheckResult("assignment update partitions", ok, "max |z| = %.2f" % np.max(np.abs(zs)),
                       time.perf_counter() - t0, {"freq": freq, "exact": exact, "z": zs})


# -- grid posterior -----------------------------------------------------------

def grid_posterior_oracle(sweeps=100_000, grid_points=201, seed=0) -> CheckResult:
    """County-effect marginals (I=2, D=1) vs a discretized posterior.

    Clusters, atoms, b and nu are held fixed so each county effect has a
    one-dimensional posterior: binomial likelihood times its atom's normal.
    """
    t0 = time.perf_counter()
    rng = kernels.rng_stream(seed, 50)
    cfg = geweke_config(p=1, D=1)
    ds = Dataset(D=1, county_table={1: (1, 1), 2: (1, 1)}, stratum_table={1: 1},
                 county=[1, 2], domain=[1, 1], y=np.array([3, 17]), n=np.array([20, 25]),
                 N_pop=np.array([200, 250]), X=np.array([[1.0], [1.0]]))
    sampler = Sampler(ds, cfg)
    atoms = {0: Atom.from_cov(np.array([0.5]), np.array([[0.8]])),
             1: Atom.from_cov(np.array([-0.3]), np.array([[0.3]]))}
    state = ModelState(b=np.array([-0.4]), beta=np.zeros((2, 1)), nu=np.array([0.15]),
                       delta_sq=np.array([0.2]), clusters=ClusterState(np.array([0, 1]), atoms, 2),
                       m=np.zeros(1), B=np.eye(1), S=np.eye(1), alpha=1.0)
    draws = np.empty((sweeps, 2))
    for t in range(sweeps):
        sampler.step_beta(state, rng)
        draws[t] = state.beta[:, 0]
    offset = state.b[0] + state.nu[0]
    tvs = []
    for i in range(2):
        atom = atoms[i]
        sd = float(np.sqrt(atom.Sigma[0, 0]))

        def logpost(g):
            return (binomial_loglik(ds.y[i], ds.n[i], offset + g)
                    + stats.norm.logpdf(g, atom.mu[0], sd))

        fine = np.linspace(atom.mu[0] - 10 * sd, atom.mu[0] + 10 * sd, 20001)
        w = np.exp(logpost(fine) - logpost(fine).max())
        w /= w.sum()
        mean = float(w @ fine)
        psd = float(np.sqrt(w @ (fine - mean) ** 2))
        grid = np.linspace(mean - 6 * psd, mean + 6 * psd, grid_points)
        h = grid[1] - grid[0]
        lp = logpost(grid)
        mass = np.exp(lp - lp.max())
        mass /= mass.sum()
        edges = np.concatenate([grid - h / 2, [grid[-1] + h / 2]])
        hist = np.histogram(draws[:, i], bins=edges)[0] / sweeps
        tvs.append(0.5 * np.abs(hist - mass).sum() + 0.5 * (1 - hist.sum()))
    ok = max(tvs) < 0.05
    return CheckResult("grid posterior (I=2, D=1)", ok, "TV = " + ", ".join(f"{v:.4f}" for v in tvs),
                       time.perf_counter() - t0, {"tv": tvs})


# -- driver --------------------------------------------------------------------

def run_checks(n_samples=10_000, mutation=None, seed=2024, verbose=False, include_grid=False) -> bool:
    """Run the oracle suite plus the joint-distribution test; True iff all pass."""
    results = [
        delta_conjugacy(mutation, seed=seed),
        mh_ratio_oracle(mutation, seed=seed),
        urn_partition_oracle(seed=seed),
        neal_partition_oracle(mutation, seed=seed),
    ]
    if include_grid:
        results.append(grid_posterior_oracle(seed=seed))
    if verbose:
        for r in results:
            print(r.line(), flush=True)
    t0 = time.perf_counter()
    g = geweke_check(n_samples=n_samples, mutation=mutation, seed=seed)
    gres = CheckResult("joint-distribution test", g.passed(), f"max |z| = {g.max_abs_z:.2f}",
                       time.perf_counter() - t0)
    results.append(gres)
    if verbose:
        print(g.table())
        print(gres.line())
    return all(r.passed for r in results)
