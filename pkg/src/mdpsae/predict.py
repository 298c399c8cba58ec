"""Posterior prediction of finite-population totals and baseline estimators.

For every saved posterior draw, counties outside the sample get a cluster atom
from the Polya urn, a county effect from that atom, and a stratum effect
(the current one if their stratum was sampled, a fresh prior draw otherwise).
Cell totals are then simulated as Binomial(N_pop, p) for all counties and
summed within states. All percentages are in units of 0-100.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import expit
from .model import Atom, Dataset, HyperConfig, ModelState, cell_predictor
from .sampler import ChainOutput, run_chain


@dataclass
class PredictionTarget:
    """Counties without sample: covariates and populations for every domain.

    ``X`` has shape (J, D, p) and ``N_pop`` (J, D); cells absent from the
    target file have zero population.
    """

    county_ids: np.ndarray
    county_stratum: np.ndarray
    county_state: np.ndarray
    stratum_mega: dict
    X: np.ndarray
    N_pop: np.ndarray

    @property
    def J(self) -> int:
        return len(self.county_ids)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "PredictionTarget":
        """Build targets from records in the dataset file schema (y, n ignored)."""
        ids = np.array(sorted(ds.county_table), dtype=np.int64)
        pos = {c: k for k, c in enumerate(ids.tolist())}
        J, D, p = len(ids), ds.D, ds.p
        X = np.zeros((J, D, p))
        N = np.zeros((J, D), dtype=np.int64)
        for k in range(ds.n_cells):
            j = pos[int(ds.county[k])]
            X[j, ds.domain[k] - 1] = ds.X[k]
            N[j, ds.domain[k] - 1] = ds.N_pop[k]
        return cls(
            county_ids=ids,
            county_stratum=np.array([ds.county_table[c][0] for c in ids.tolist()], dtype=np.int64),
            county_state=np.array([ds.county_table[c][1] for c in ids.tolist()], dtype=np.int64),
            stratum_mega=dict(ds.stratum_table),
            X=X,
            N_pop=N,
        )

    def sampled_stratum(self, dataset: Dataset) -> np.ndarray:
        return np.isin(self.county_stratum, dataset.layout.stratum_ids)


@dataclass
class TotalDraw:
    state_ids: np.ndarray
    Y: np.ndarray
    N: np.ndarray

    @property
    def percent(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * self.Y / self.N


class PolyaUrn:
    """Sequential predictive rule for draws from a Dirichlet process.

    With ``n`` previous draws (counted with multiplicity) the next draw equals
    each previous value with probability 1/(alpha + n) and is a fresh base
    measure draw with probability alpha/(alpha + n). Every draw is appended.
    """

    def __init__(self, atoms, counts, alpha, base_draw):
        self.atoms = list(atoms)
        self.counts = [int(c) for c in counts]
        self.alpha = float(alpha)
        self.base_draw = base_draw

    @classmethod
    def from_state(cls, state: ModelState, s_df: float) -> "PolyaUrn":
        D = len(state.m)
        B_chol = kernels.cholesky(state.B, jitter=True)
        W_chol = kernels.cholesky(kernels.spd_inverse(s_df * state.S, jitter=True), jitter=True)

        def base_draw(rng):
            mu = state.m + B_chol @ rng.standard_normal(D)
            ch = kernels.wishart_factor(s_df, W_chol, rng)
            return Atom(mu, ch @ ch.T, ch)

        # order of first appearance, so the draw sequence does not depend on label values
        assign, atoms = state.clusters.canonical()
        return cls(atoms, np.bincount(assign, minlength=len(atoms)).tolist(), state.alpha, base_draw)

    @property
    def n(self) -> int:
        return sum(self.counts)

    def probabilities(self) -> np.ndarray:
        """Probabilities of joining each existing atom, then of a new atom."""
        w = np.array(self.counts + [self.alpha], dtype=float)
        return w / (self.alpha + self.n)

    def draw(self, rng) -> tuple[int, object]:
        pr = self.probabilities()
        j = int(np.searchsorted(np.cumsum(pr), rng.uniform() * pr.sum(), side="right"))
        j = min(j, len(pr) - 1)
        if j == len(self.atoms):
            self.atoms.append(self.base_draw(rng))
            self.counts.append(1)
        else:
            self.counts[j] += 1
        return j, self.atoms[j]


def polya_urn_extend(urn: PolyaUrn, rng):
    """Draw one more atom from the urn and append it."""
    return urn.draw(rng)[1]


def impute_unsampled(state: ModelState, dataset: Dataset, targets: PredictionTarget,
                     s_df: float, rng, urn: PolyaUrn | None = None):
    """Impute (beta, nu, p) for each target county given one posterior draw.

    Returns arrays of shape (J, D), (J,), (J, D).
    """
    lay = dataset.layout
    if urn is None:
        urn = PolyaUrn.from_state(state, s_df)
    J, D = targets.J, dataset.D
    s_pos = {s: k for k, s in enumerate(lay.stratum_ids.tolist())}
    m_pos = {m: k for k, m in enumerate(lay.mega_ids.tolist())}
    fresh_nu = {}
    beta = np.zeros((J, D))
    nu = np.zeros(J)
    for j in range(J):
        atom = polya_urn_extend(urn, rng)
        beta[j] = kernels.sample_mvn_precision(atom.mu, atom.prec_chol, rng)
        s = int(targets.county_stratum[j])
        if s in s_pos:
            nu[j] = state.nu[s_pos[s]]
        else:
            if s not in fresh_nu:
                mega = targets.stratum_mega.get(s)
                if mega not in m_pos:
                    raise KeyError(f"target stratum {s} has unknown mega-stratum {mega}")
                fresh_nu[s] = rng.standard_normal() * np.sqrt(state.delta_sq[m_pos[mega]])
            nu[j] = fresh_nu[s]
    if not np.all(np.isfinite(targets.X)):
        raise ValueError("missing covariates for a target county")
    eta = targets.X @ state.b + beta + nu[:, None]
    return beta, nu, expit(eta)


def simulate_totals(p, N, rng) -> np.ndarray:
    return kernels.sample_binomial(np.asarray(N), np.asarray(p), rng)


def aggregate_states(Y, county_state, state_ids=None, N=None) -> TotalDraw:
    """Sum county-by-domain totals within states.

    ``Y`` and ``N`` are (counties, D) or (counties,); ``county_state`` holds
    each county's state id.
    """
    Y = np.asarray(Y)
    county_state = np.asarray(county_state)
    if Y.ndim == 2:
        Y = Y.sum(1)
    if state_ids is None:
        state_ids = np.unique(county_state)
    state_ids = np.asarray(state_ids)
    pos = {a: k for k, a in enumerate(state_ids.tolist())}
    try:
        idx = np.array([pos[a] for a in county_state.tolist()], dtype=np.int64)
    except KeyError as e:
        raise KeyError(f"county mapped to unknown state {e.args[0]}") from None
    Ya = np.zeros(len(state_ids), dtype=np.int64)
    np.add.at(Ya, idx, Y.astype(np.int64))
    Na = np.zeros(len(state_ids), dtype=np.int64)
    if N is not None:
        N = np.asarray(N)
        np.add.at(Na, idx, (N.sum(1) if N.ndim == 2 else N).astype(np.int64))
    return TotalDraw(state_ids, Ya, Na)


@dataclass
class StateSummary:
    state_ids: np.ndarray
    N: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray


def summarize_totals(draws: list[TotalDraw]) -> StateSummary:
    if len(draws) < 2:
        raise ValueError("need at least two draws")
    pct = np.stack([d.percent for d in draws])
    q = np.quantile(pct, [0.025, 0.5, 0.975], axis=0)
    return StateSummary(draws[0].state_ids, draws[0].N, pct.mean(0), pct.std(0, ddof=1), q[0], q[1], q[2])


def all_county_state(dataset: Dataset, targets: PredictionTarget | None):
    """State id and (county, D) population for sampled then target counties."""
    lay = dataset.layout
    N_s = np.zeros((lay.I, dataset.D), dtype=np.int64)
    N_s[lay.cell_county, lay.cell_domain] = dataset.N_pop
    states = lay.state_ids[lay.county_state]
    if targets is None:
        return states, N_s
    return np.concatenate([states, targets.county_state]), np.concatenate([N_s, targets.N_pop])


def posterior_totals(chain: ChainOutput, dataset: Dataset, targets: PredictionTarget | None, rng,
                     draws=None) -> list[TotalDraw]:
    """Simulate state totals Y_a for each saved posterior draw."""
    lay = dataset.layout
    s_df = float(chain.config["s_df"])
    county_state, N_all = all_county_state(dataset, targets)
    state_ids = np.unique(county_state)
    out = []
    for t in range(chain.n_draws) if draws is None else draws:
        state = chain.state(t)
        p_s = np.zeros((lay.I, dataset.D))
        p_s[lay.cell_county, lay.cell_domain] = expit(cell_predictor(state, dataset))
        if targets is not None and targets.J:
            _, _, p_t = impute_unsampled(state, dataset, targets, s_df, rng)
            p_all = np.concatenate([p_s, p_t])
        else:
            p_all = p_s
        Y = simulate_totals(p_all, N_all, rng)
        out.append(aggregate_states(Y, county_state, state_ids, N_all))
    return out


def synthetic_estimate(dataset: Dataset, targets: PredictionTarget | None = None) -> dict:
    """National domain rates applied to each state's domain populations (percent)."""
    D = dataset.D
    ny = np.bincount(dataset.domain - 1, weights=dataset.y, minlength=D)
    nn = np.bincount(dataset.domain - 1, weights=dataset.n, minlength=D)
    if np.any(nn == 0):
        raise ValueError(f"domain(s) {np.flatnonzero(nn == 0) + 1} have zero national sample")
    rate = ny / nn
    county_state, N_all = all_county_state(dataset, targets)
    state_ids, idx = np.unique(county_state, return_inverse=True)
    expected = np.bincount(idx, weights=(N_all * rate).sum(1))
    pop = np.bincount(idx, weights=N_all.sum(1))
    return {int(a): 100.0 * expected[k] / pop[k] for k, a in enumerate(state_ids)}


def sample_average_estimate(dataset: Dataset) -> dict:
    """Per-state sample proportion and binomial standard error, in percent.

    States with no sampled individuals map to ``None``.
    """
    lay = dataset.layout
    st = lay.county_state[lay.cell_county]
    ys = np.bincount(st, weights=dataset.y, minlength=len(lay.state_ids))
    ns = np.bincount(st, weights=dataset.n, minlength=len(lay.state_ids))
    out = {}
    for k, a in enumerate(lay.state_ids.tolist()):
        if ns[k] == 0:
            out[a] = None
        else:
            r = ys[k] / ns[k]
            out[a] = (100.0 * r, 100.0 * np.sqrt(r * (1 - r) / ns[k]))
    return out


def parametric_fit(dataset: Dataset, config: HyperConfig, rng=None) -> ChainOutput:
    """Same chain with the DP mixture replaced by one normal random-effects law."""
    if rng is None:
        rng = kernels.rng_stream(config.seed, 0)
    return run_chain(dataset, config, rng, parametric=True)
