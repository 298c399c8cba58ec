"""Joint-distribution ("getting it right") test of the full sweep.

Two samplers target the joint law of parameters and data:

* marginal-conditional: parameters from the prior, then data given them;
* successive-conditional: one sweep given the data, then fresh data given the
  new parameters, repeated.

If every update leaves its conditional invariant, both produce the prior
marginal of the parameters. Means of test functions are compared with
z-scores that use batch-means standard errors for the autocorrelated chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import expit
from .model import Dataset, HyperConfig
from .sampler import Sampler, sample_prior_state

STAT_NAMES = ["b_1", "b_2", "delta_sq_1", "alpha", "k", "beta_1_1"]


@dataclass
class GewekeResult:
    names: list
    z: np.ndarray
    marginal_mean: np.ndarray
    successive_mean: np.ndarray
    n_marginal: int
    n_successive: int
    mutation: str | None = None

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def passed(self, threshold: float = 4.0) -> bool:
        return bool(np.all(np.isfinite(self.z))) and self.max_abs_z < threshold

    def table(self) -> str:
        lines = [f"{'statistic':<16}{'marginal':>12}{'successive':>12}{'z':>9}"]
        for name, a, b, z in zip(self.names, self.marginal_mean, self.successive_mean, self.z):
            lines.append(f"{name:<16}{a:>12.4f}{b:>12.4f}{z:>9.2f}")
        return "\n".join(lines)


class _BrokenAcceptance(Sampler):
    # normal factors evaluated at the combined proposal moments instead of the
    # likelihood approximation
    def _log_accept_ratio(self, ll_cur, ll_prop, lk_cur, lk_prop, lp_cur, lp_prop):
        return (ll_prop - ll_cur) + (lk_cur + lp_cur) - (lk_prop + lp_prop)


class _BrokenDelta(Sampler):
    def _delta_rate(self, b_delta, half_sumsq):
        return 0.5 * (b_delta + half_sumsq)


class _BrokenUrn(Sampler):
    # new-cluster weight alpha per auxiliary component instead of alpha/m
    def _aux_log_weight(self, alpha, m_aux):
        return np.log(alpha)


MUTATIONS = {"acceptance": _BrokenAcceptance, "delta": _BrokenDelta, "urn": _BrokenUrn}


def geweke_config(p: int = 2, D: int = 2) -> HyperConfig:
    """Proper, light-tailed priors so every tracked moment has finite variance."""
    return HyperConfig(
        m_b=np.zeros(p), V_b_inv=np.eye(p), a_delta=6.0, b_delta=2.5,
        a_vec=np.zeros(D), A=0.5 * np.eye(D), c=D + 6.0, C=0.5 * np.eye(D),
        q=D + 6.0, R=0.3 * np.eye(D), s_df=D + 6.0, a_alpha=2.0, b_alpha=2.0,
        neal_aux_m=3, iterations=2, burn_in=0, thin=1, seed=0,
    )


def skeleton_dataset(I=8, S=4, M=2, D=2, p=2, n=5, rng=None) -> Dataset:
    """Fixed design with ``n`` trials per cell; counts are placeholders."""
    rng = kernels.rng_stream(12345) if rng is None else rng
    z = rng.standard_normal((I, p))
    county, domain, X = [], [], []
    for i in range(I):
        for d in range(D):
            county.append(i + 1)
            domain.append(d + 1)
            X.append(z[i])
    cells = I * D
    return Dataset(
        D=D,
        county_table={i + 1: (i % S + 1, 1) for i in range(I)},
        stratum_table={s + 1: s % M + 1 for s in range(S)},
        county=county, domain=domain, y=np.zeros(cells, dtype=int), n=np.full(cells, n),
        N_pop=np.full(cells, 10 * n), X=np.array(X),
    )


def tracked_statistics(state) -> np.ndarray:
    first = np.array([state.b[0], state.b[1], state.delta_sq[0], state.alpha,
                      float(state.clusters.k), state.beta[0, 0]])
    return np.concatenate([first, first ** 2])


def _batch_means_se(x, n_batches=50):
    T = len(x) // n_batches * n_batches
    means = x[:T].reshape(n_batches, -1, *x.shape[1:]).mean(1)
    return means.std(0, ddof=1) / np.sqrt(n_batches)


def geweke_check(config: HyperConfig | None = None, n_samples: int = 10_000, mutation: str | None = None,
                 seed: int = 2024, sizes: dict | None = None, burn_in: int = 200) -> GewekeResult:
    sizes = dict(I=8, S=4, M=2, D=2, p=2, n=5) | (sizes or {})
    cfg = config or geweke_config(sizes["p"], sizes["D"])
    rng = kernels.rng_stream(seed, 0)
    ds = skeleton_dataset(**sizes, rng=kernels.rng_stream(seed, 1))
    lay = ds.layout
    cls = MUTATIONS[mutation] if mutation else Sampler
    sampler = cls(ds, cfg)

    def simulate(state):
        return rng.binomial(ds.n, expit(sampler.eta(state))).astype(float)

    marginal = np.array([tracked_statistics(sample_prior_state(lay, cfg, rng)) for _ in range(n_samples)])

    state = sample_prior_state(lay, cfg, rng)
    sampler.y = simulate(state)
    succ = []
    for t in range(n_samples + burn_in):
        sampler.sweep(state, rng)
        sampler.y = simulate(state)
        if t >= burn_in:
            succ.append(tracked_statistics(state))
    succ = np.array(succ)
    names = STAT_NAMES + [f"{s}^2" for s in STAT_NAMES]
    se = np.sqrt(marginal.var(0, ddof=1) / n_samples + _batch_means_se(succ) ** 2)
    z = (marginal.mean(0) - succ.mean(0)) / se
    return GewekeResult(names, z, marginal.mean(0), succ.mean(0), n_samples, n_samples, mutation)
