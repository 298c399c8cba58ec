"""Markov chain Monte Carlo for the Dirichlet-process-mixture random-effects model.

One sweep updates, in order,

1. the regression coefficients ``b``,
2. the county effects ``beta_i`` (conditionally independent across counties),
3. the stratum effects ``nu_s``,
4. the stratum-effect variances ``delta_sq`` (exact Gibbs),
5. the mixture: cluster assignments (Neal's auxiliary-component method),
   cluster atoms, base-measure hyperparameters ``(m, B, S)`` and the total
   mass ``alpha``.

The three logistic blocks use an independence Metropolis-Hastings chain whose
proposal combines a Gaussian approximation of the likelihood (linearized
logistic link) with the block's Gaussian prior. The approximation is expanded
at the point reached by IRLS iterations started from the prior mean, so
it does not depend on the current value of the block and the acceptance
ratio below is exact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import expit
from .model import Atom, ClusterState, Dataset, HyperConfig, ModelState, binomial_loglik

P_CLAMP = 1e-6


class SingularInformation(np.linalg.LinAlgError):
    """The likelihood carries no information about the block."""


@dataclass
class NormalApprox:
    """Gaussian in canonical form: density proportional to exp(-x'Px/2 + h'x).

    Likelihood approximations can have a singular precision (e.g. a county
    with data in only some domains); the canonical form still defines the
    kernel, while :attr:`mean` and :attr:`cov` need ``precision`` to be PD.
    """

    precision: np.ndarray
    shift: np.ndarray

    @classmethod
    def from_moments(cls, mean, cov) -> "NormalApprox":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        P = kernels.spd_inverse(np.atleast_2d(cov))
        return cls(P, P @ mean)

    @property
    def mean(self) -> np.ndarray:
        L = kernels.cholesky(self.precision)
        return np.linalg.solve(L.T, np.linalg.solve(L, self.shift))

    @property
    def cov(self) -> np.ndarray:
        return kernels.spd_inverse(self.precision)

    def log_kernel(self, x) -> float:
        """Log density up to an additive constant that cancels in ratios."""
        x = np.atleast_1d(x)
        return float(-0.5 * x @ self.precision @ x + self.shift @ x)


def likelihood_normal_approx(y, n, eta, Z, current) -> NormalApprox:
    """Gaussian approximation of a binomial-logit likelihood in a block.

    ``eta`` is the linear predictor of each cell at the expansion point,
    ``Z`` the block's design (cells x q) and ``current`` the block value at the
    expansion point. Weights are ``n p (1-p)`` and working responses
    ``eta + (y - n p) / w``, with ``p`` clamped away from 0 and 1.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(len(y), -1)
    current = np.atleast_1d(np.asarray(current, dtype=float))
    p = np.clip(expit(eta), P_CLAMP, 1.0 - P_CLAMP)
    w = n * p * (1.0 - p)
    if not np.any(w > 0):
        raise SingularInformation("block has no sampled cells")
    P = (Z * w[:, None]).T @ Z
    # Z'W(working response - offset) = P @ current + Z'(y - n p)
    h = P @ current + Z.T @ (y - n * p)
    return NormalApprox(P, h)


def combine_normals(prior: NormalApprox, like: NormalApprox) -> NormalApprox:
    P = prior.precision + like.precision
    try:
        kernels.cholesky(P)
    except kernels.NotPositiveDefinite:
        raise np.linalg.LinAlgError("combined precision is singular") from None
    return NormalApprox(P, prior.shift + like.shift)


def independence_log_ratio(current, proposal, loglik_current, loglik_proposal, approx: NormalApprox) -> float:
    return (loglik_proposal - loglik_current) + approx.log_kernel(current) - approx.log_kernel(proposal)


def acceptance_probability(current, proposal, loglik_current, loglik_proposal, approx: NormalApprox) -> float:
    """min(1, L(proposal) phi(current) / (L(current) phi(proposal))), phi the likelihood approximation."""
    r = independence_log_ratio(current, proposal, loglik_current, loglik_proposal, approx)
    return float(np.exp(min(0.0, r)))


def mh_accept_independence(current, proposal, loglik_current, loglik_proposal, approx, rng) -> bool:
    r = independence_log_ratio(current, proposal, loglik_current, loglik_proposal, approx)
    return bool(np.log(rng.uniform()) < r)


@dataclass
class SweepReport:
    accept_b: float
    accept_beta: float
    accept_nu: float
    k: int
    alpha: float
    loglik: float


@dataclass
class ChainOutput:
    """Saved posterior draws, row-indexed by sweep number."""

    county_ids: np.ndarray
    stratum_ids: np.ndarray
    mega_ids: np.ndarray
    config: dict
    parametric: bool
    iteration: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    nu: np.ndarray
    delta_sq: np.ndarray
    alpha: np.ndarray
    k: np.ndarray
    m: np.ndarray
    B: np.ndarray
    S: np.ndarray
    assignment: np.ndarray
    atom_draw: np.ndarray
    atom_size: np.ndarray
    atom_mu: np.ndarray
    atom_Sigma: np.ndarray
    accept: np.ndarray  # (T, 3): b, beta rate, nu rate
    loglik: np.ndarray
    elapsed: float = 0.0

    @property
    def n_draws(self) -> int:
        return len(self.iteration)

    def state(self, t: int) -> ModelState:
        rows = np.flatnonzero(self.atom_draw == t)
        atoms = {j: Atom.from_cov(self.atom_mu[r], self.atom_Sigma[r]) for j, r in enumerate(rows)}
        return ModelState(
            b=self.b[t].copy(),
            beta=self.beta[t].copy(),
            nu=self.nu[t].copy(),
            delta_sq=self.delta_sq[t].copy(),
            clusters=ClusterState(self.assignment[t].copy(), atoms),
            m=self.m[t].copy(),
            B=self.B[t].copy(),
            S=self.S[t].copy(),
            alpha=float(self.alpha[t]),
        )

    def posterior_mean_b(self) -> np.ndarray:
        return self.b.mean(axis=0)

    @classmethod
    def concatenate(cls, chains: list["ChainOutput"]) -> "ChainOutput":
        first = chains[0]
        offsets = np.cumsum([0] + [c.n_draws for c in chains[:-1]])
        cat = lambda name: np.concatenate([getattr(c, name) for c in chains])  # noqa: E731
        return cls(
            county_ids=first.county_ids,
            stratum_ids=first.stratum_ids,
            mega_ids=first.mega_ids,
            config=first.config,
            parametric=first.parametric,
            iteration=cat("iteration"),
            b=cat("b"), beta=cat("beta"), nu=cat("nu"), delta_sq=cat("delta_sq"),
            alpha=cat("alpha"), k=cat("k"), m=cat("m"), B=cat("B"), S=cat("S"),
            assignment=cat("assignment"),
            atom_draw=np.concatenate([c.atom_draw + o for c, o in zip(chains, offsets)]),
            atom_size=cat("atom_size"), atom_mu=cat("atom_mu"), atom_Sigma=cat("atom_Sigma"),
            accept=cat("accept"), loglik=cat("loglik"),
            elapsed=sum(c.elapsed for c in chains),
        )


class Sampler:
    """Gibbs/Metropolis sweep over the full model state.

    ``parametric=True`` replaces the DP mixture by a single normal random
    effects distribution with the same base-measure hyperpriors: assignments
    are frozen to one cluster and ``alpha`` is not updated.
    """

    # linearization point: IRLS from the prior mean, run to convergence
    irls_max_steps = 50
    irls_tol = 1e-8

    def __init__(self, dataset: Dataset, config: HyperConfig, parametric: bool = False):
        config.validate(dataset.D, dataset.p)
        self.dataset = dataset
        self.config = config
        self.parametric = parametric
        lay = dataset.layout
        self.lay = lay
        self.D = dataset.D
        self.I = lay.I
        self.y = dataset.y.astype(float)
        self.n = dataset.n.astype(float)
        self.X = dataset.X
        self._cell_flat = lay.cell_county * self.D + lay.cell_domain
        self._S_per_mega = lay.strata_per_mega()

    # -- helpers ---------------------------------------------------------

    def eta(self, state: ModelState) -> np.ndarray:
        lay = self.lay
        return self.X @ state.b + state.beta[lay.cell_county, lay.cell_domain] + state.nu[lay.cell_stratum]

    def loglik(self, state: ModelState) -> float:
        return float(binomial_loglik(self.y, self.n, self.eta(state)).sum())

    def _weights(self, eta):
        p = np.clip(expit(eta), P_CLAMP, 1.0 - P_CLAMP)
        return self.n * p * (1.0 - p), self.y - self.n * p

    def _log_accept_ratio(self, ll_cur, ll_prop, lk_cur, lk_prop, lp_cur, lp_prop):
        # lk: likelihood-approximation log kernel; lp: prior log kernel (cancels)
        return (ll_prop - ll_cur) + (lk_cur - lk_prop)

    def _delta_rate(self, b_delta, half_sumsq):
        return b_delta + half_sumsq

    def _aux_log_weight(self, alpha, m_aux):
        return np.log(alpha / m_aux)

    def draw_base_atom(self, state: ModelState, rng) -> Atom:
        """Draw (mu, Sigma) from the base measure N(m, B) x W[Sigma^-1; s, (sS)^-1]."""
        mu, ch = self.draw_base_atoms(state, rng, 1)
        return Atom(mu[0], ch[0] @ ch[0].T, ch[0])

    def draw_base_atoms(self, state: ModelState, rng, size: int):
        """Means (size, D) and precision Cholesky factors (size, D, D) from the base measure."""
        cfg = self.config
        B_chol = kernels.cholesky(state.B, jitter=True)
        W_chol = kernels.cholesky(kernels.spd_inverse(cfg.s_df * state.S, jitter=True), jitter=True)
        mu = state.m + rng.standard_normal((size, self.D)) @ B_chol.T
        return mu, kernels.wishart_factor(cfg.s_df, W_chol, rng, size)

    # -- initialization ---------------------------------------------------

    def initial_state(self, rng) -> ModelState:
        cfg = self.config
        lay = self.lay
        b = np.zeros(self.dataset.p)
        if not np.any(cfg.V_b_inv):
            b = _fixed_effects_newton(self.X, self.y, self.n)
        m = cfg.a_vec.copy()
        B = cfg.C.copy()
        S = cfg.R.copy()
        state = ModelState(
            b=b,
            beta=np.zeros((lay.I, self.D)),
            nu=np.zeros(lay.S),
            delta_sq=np.full(lay.M, cfg.b_delta / cfg.a_delta),
            clusters=ClusterState(np.zeros(lay.I, dtype=np.int64), {}),
            m=m, B=B, S=S,
            alpha=cfg.a_alpha / cfg.b_alpha,
        )
        state.clusters.atoms[state.clusters.new_label()] = self.draw_base_atom(state, rng)
        return state

    # -- step (i) ----------------------------------------------------------

    def step_b(self, state: ModelState, rng) -> float:
        cfg = self.config
        X = self.X
        offset = self.eta(state) - X @ state.b
        prior = NormalApprox(cfg.V_b_inv, cfg.V_b_inv @ cfg.m_b)
        point = cfg.m_b.copy()
        like = None
        for _ in range(self.irls_max_steps):
            w, r = self._weights(offset + X @ point)
            if not np.any(w > 0):
                like = None
                break
            P1 = (X * w[:, None]).T @ X
            like = NormalApprox(P1, P1 @ point + X.T @ r)
            new = combine_normals(prior, like).mean
            done = np.max(np.abs(new - point)) < self.irls_tol
            point = new
            if done:
                break
        if like is None:
            # no information: exact prior draw
            L = kernels.cholesky(cfg.V_b_inv)
            state.b = kernels.sample_mvn_precision(cfg.m_b, L, rng)
            return 1.0
        post = combine_normals(prior, like)
        L3 = kernels.cholesky(post.precision, jitter=True)
        prop = kernels.sample_mvn_precision(post.mean, L3, rng)
        ll_cur = binomial_loglik(self.y, self.n, offset + X @ state.b).sum()
        ll_prop = binomial_loglik(self.y, self.n, offset + X @ prop).sum()
        r = self._log_accept_ratio(ll_cur, ll_prop, like.log_kernel(state.b), like.log_kernel(prop),
                                   prior.log_kernel(state.b), prior.log_kernel(prop))
        if np.log(rng.uniform()) < r:
            state.b = prop
            return 1.0
        return 0.0

    # -- step (ii) ---------------------------------------------------------

    def county_priors(self, state: ModelState):
        """Per-county prior mean (I, D) and precision (I, D, D) from cluster atoms."""
        labels = sorted(state.clusters.atoms)
        pos = {lab: j for j, lab in enumerate(labels)}
        mus = np.stack([state.clusters.atoms[lab].mu for lab in labels])
        precs = np.stack([state.clusters.atoms[lab].prec for lab in labels])
        idx = np.array([pos[lab] for lab in state.clusters.assignment.tolist()], dtype=np.int64)
        return mus[idx], precs[idx]

    def step_beta(self, state: ModelState, rng) -> float:
        lay = self.lay
        I, D = self.I, self.D
        offset = self.eta(state) - state.beta[lay.cell_county, lay.cell_domain]
        mu, prec = self.county_priors(state)
        prior_h = np.einsum("ijk,ik->ij", prec, mu)
        point = mu.copy()
        for _ in range(self.irls_max_steps):
            w, r = self._weights(offset + point[lay.cell_county, lay.cell_domain])
            W = np.zeros(I * D)
            Rr = np.zeros(I * D)
            W[self._cell_flat] = w
            Rr[self._cell_flat] = r
            W = W.reshape(I, D)
            h1 = W * point + Rr.reshape(I, D)
            P3 = prec.copy()
            P3[:, np.arange(D), np.arange(D)] += W
            new = np.linalg.solve(P3, (prior_h + h1)[..., None])[..., 0]
            done = np.max(np.abs(new - point)) < self.irls_tol
            point = new
            if done:
                break
        m3 = point
        L3 = kernels.cholesky(P3, jitter=True)
        prop = kernels.sample_mvn_precision(m3, L3, rng)

        def lk(x):
            return -0.5 * (W * x * x).sum(1) + (h1 * x).sum(1)

        def lp(x):
            return -0.5 * np.einsum("ij,ijk,ik->i", x, prec, x) + (prior_h * x).sum(1)

        cc, dd = lay.cell_county, lay.cell_domain
        ll_cur = np.bincount(cc, binomial_loglik(self.y, self.n, offset + state.beta[cc, dd]), minlength=I)
        ll_prop = np.bincount(cc, binomial_loglik(self.y, self.n, offset + prop[cc, dd]), minlength=I)
        r = self._log_accept_ratio(ll_cur, ll_prop, lk(state.beta), lk(prop), lp(state.beta), lp(prop))
        acc = np.log(rng.uniform(size=I)) < r
        state.beta[acc] = prop[acc]
        return float(acc.mean())

    # -- step (iii) --------------------------------------------------------

    def step_nu(self, state: ModelState, rng) -> float:
        lay = self.lay
        S = lay.S
        cs = lay.cell_stratum
        offset = self.eta(state) - state.nu[cs]
        prior_prec = 1.0 / state.delta_sq[lay.stratum_mega]
        point = np.zeros(S)
        for _ in range(self.irls_max_steps):
            w, r = self._weights(offset + point[cs])
            Ws = np.bincount(cs, w, minlength=S)
            h1 = Ws * point + np.bincount(cs, r, minlength=S)
            P3 = prior_prec + Ws
            new = h1 / P3
            done = S == 0 or np.max(np.abs(new - point)) < self.irls_tol
            point = new
            if done:
                break
        prop = point + rng.standard_normal(S) / np.sqrt(P3)
        ll_cur = np.bincount(cs, binomial_loglik(self.y, self.n, offset + state.nu[cs]), minlength=S)
        ll_prop = np.bincount(cs, binomial_loglik(self.y, self.n, offset + prop[cs]), minlength=S)
        lk = lambda x: -0.5 * Ws * x * x + h1 * x  # noqa: E731
        r = self._log_accept_ratio(ll_cur, ll_prop, lk(state.nu), lk(prop),
                                   -0.5 * prior_prec * state.nu ** 2, -0.5 * prior_prec * prop ** 2)
        acc = np.log(rng.uniform(size=S)) < r
        state.nu[acc] = prop[acc]
        return float(acc.mean()) if S else 1.0

    # -- step (iv) ---------------------------------------------------------

    def step_delta(self, state: ModelState, rng) -> None:
        cfg = self.config
        lay = self.lay
        half_ss = 0.5 * np.bincount(lay.stratum_mega, state.nu ** 2, minlength=lay.M)
        shape = cfg.a_delta + 0.5 * self._S_per_mega
        rate = self._delta_rate(cfg.b_delta, half_ss)
        state.delta_sq = 1.0 / rng.gamma(shape, 1.0 / rate)

    # -- step (v) ----------------------------------------------------------

    def step_clusters(self, state: ModelState, rng) -> None:
        """Neal's auxiliary-component update of the cluster assignments.

        Fresh auxiliary atoms depend only on the base measure, which is fixed
        during this step, so all of them are drawn up front.
        """
        cl = state.clusters
        m_aux = self.config.neal_aux_m
        aux_mu, aux_ch = self.draw_base_atoms(state, rng, self.I * m_aux)
        aux_mu = aux_mu.reshape(self.I, m_aux, self.D)
        aux_ch = aux_ch.reshape(self.I, m_aux, self.D, self.D)
        u = rng.uniform(size=self.I)
        log_aux_w = self._aux_log_weight(state.alpha, m_aux)
        sizes = cl.sizes
        labels = list(sizes)
        mus = [cl.atoms[lb].mu for lb in labels]
        chs = [cl.atoms[lb].prec_chol for lb in labels]
        counts = [sizes[lb] for lb in labels]
        for i in range(self.I):
            j_old = labels.index(int(cl.assignment[i]))
            counts[j_old] -= 1
            amu, ach = aux_mu[i], aux_ch[i]
            if counts[j_old] == 0:
                # a singleton's atom becomes the first auxiliary component
                amu = amu.copy()
                ach = ach.copy()
                amu[0], ach[0] = mus[j_old], chs[j_old]
                del cl.atoms[labels[j_old]]
                for lst in (labels, mus, chs, counts):
                    del lst[j_old]
            k = len(labels)
            cand_mu = np.concatenate([np.array(mus).reshape(k, self.D), amu])
            cand_ch = np.concatenate([np.array(chs).reshape(k, self.D, self.D), ach])
            logw = kernels.mvn_logpdf_precision(state.beta[i], cand_mu, cand_ch)
            logw[:k] += np.log(counts)
            logw[k:] += log_aux_w
            pr = np.cumsum(np.exp(logw - logw.max()))
            j = min(int(np.searchsorted(pr, u[i] * pr[-1], side="right")), len(pr) - 1)
            if j < k:
                counts[j] += 1
                cl.assignment[i] = labels[j]
            else:
                lab = cl.new_label()
                mu, ch = cand_mu[j].copy(), cand_ch[j].copy()
                cl.atoms[lab] = Atom(mu, ch @ ch.T, ch)
                labels.append(lab)
                mus.append(mu)
                chs.append(ch)
                counts.append(1)
                cl.assignment[i] = lab

    def step_cluster_params(self, state: ModelState, rng) -> None:
        cfg = self.config
        cl = state.clusters
        B_prec = kernels.spd_inverse(state.B, jitter=True)
        B_h = B_prec @ state.m
        sS = cfg.s_df * state.S
        for lab in sorted(cl.atoms):
            members = state.beta[cl.assignment == lab]
            nj = len(members)
            atom = cl.atoms[lab]
            P = B_prec + nj * atom.prec
            h = B_h + atom.prec @ members.sum(0)
            mu = _draw_canonical(P, h, rng)
            dev = members - mu
            scale = kernels.spd_inverse(sS + dev.T @ dev, jitter=True)
            prec = kernels.sample_wishart(cfg.s_df + nj, scale, rng)
            cl.atoms[lab] = Atom(mu, prec)

    def step_base_hypers(self, state: ModelState, rng) -> None:
        cfg = self.config
        atoms = [state.clusters.atoms[lab] for lab in sorted(state.clusters.atoms)]
        k = len(atoms)
        mus = np.stack([a.mu for a in atoms])
        A_prec = kernels.spd_inverse(cfg.A)
        B_prec = kernels.spd_inverse(state.B, jitter=True)
        state.m = _draw_canonical(A_prec + k * B_prec, A_prec @ cfg.a_vec + B_prec @ mus.sum(0), rng)
        dev = mus - state.m
        scale = kernels.spd_inverse(cfg.c * cfg.C + dev.T @ dev, jitter=True)
        state.B = kernels.spd_inverse(kernels.sample_wishart(cfg.c + k, scale, rng), jitter=True)
        prec_sum = sum(a.prec for a in atoms)
        scale = kernels.spd_inverse(cfg.q * kernels.spd_inverse(cfg.R) + cfg.s_df * prec_sum, jitter=True)
        state.S = kernels.sample_wishart(cfg.q + k * cfg.s_df, scale, rng)

    def step_alpha(self, state: ModelState, rng) -> None:
        state.alpha = sample_alpha(state.alpha, state.clusters.k, self.I,
                                   self.config.a_alpha, self.config.b_alpha, rng)

    # -- full sweep --------------------------------------------------------

    def sweep(self, state: ModelState, rng) -> SweepReport:
        acc_b = self.step_b(state, rng)
        acc_beta = self.step_beta(state, rng)
        acc_nu = self.step_nu(state, rng)
        self.step_delta(state, rng)
        if not self.parametric:
            self.step_clusters(state, rng)
        self.step_cluster_params(state, rng)
        self.step_base_hypers(state, rng)
        if not self.parametric:
            self.step_alpha(state, rng)
        return SweepReport(acc_b, acc_beta, acc_nu, state.clusters.k, state.alpha, self.loglik(state))


def sample_alpha(alpha, k, n, a, b, rng) -> float:
    """Total-mass update given k occupied clusters among n units.

    Auxiliary eta ~ Beta(alpha + 1, n), then alpha from the two-component
    gamma mixture with odds (a + k - 1) / (n (b - log eta)).
    """
    eta = rng.beta(alpha + 1.0, n)
    rate = b - np.log(eta)
    odds = (a + k - 1.0) / (n * rate)
    shape = a + k if rng.uniform() < odds / (1.0 + odds) else a + k - 1.0
    if shape <= 0:
        shape = a + k
    return float(rng.gamma(shape, 1.0 / rate))


def _draw_canonical(P, h, rng):
    L = kernels.cholesky(P, jitter=True)
    mean = np.linalg.solve(P, h)
    return kernels.sample_mvn_precision(mean, L, rng)


def _fixed_effects_newton(X, y, n, iters=25):
    p = X.shape[1]
    b = np.zeros(p)
    for _ in range(iters):
        eta = X @ b
        pr = np.clip(expit(eta), P_CLAMP, 1.0 - P_CLAMP)
        w = n * pr * (1 - pr)
        H = (X * w[:, None]).T @ X + 1e-8 * np.eye(p)
        g = X.T @ (y - n * pr)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return np.zeros(p)
        b = b + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return b if np.all(np.isfinite(b)) else np.zeros(p)


def _record(out, t, state, report):
    cl = state.clusters
    assign, atoms = cl.canonical()
    out["iteration"].append(t)
    out["b"].append(state.b.copy())
    out["beta"].append(state.beta.copy())
    out["nu"].append(state.nu.copy())
    out["delta_sq"].append(state.delta_sq.copy())
    out["alpha"].append(state.alpha)
    out["k"].append(cl.k)
    out["m"].append(state.m.copy())
    out["B"].append(state.B.copy())
    out["S"].append(state.S.copy())
    out["assignment"].append(assign)
    sizes = np.bincount(assign, minlength=len(atoms))
    draw = len(out["iteration"]) - 1
    for j, a in enumerate(atoms):
        out["atom_draw"].append(draw)
        out["atom_size"].append(sizes[j])
        out["atom_mu"].append(a.mu.copy())
        out["atom_Sigma"].append(a.Sigma)
    out["accept"].append([report.accept_b, report.accept_beta, report.accept_nu])
    out["loglik"].append(report.loglik)


def run_chain(dataset: Dataset, config: HyperConfig, rng=None, parametric: bool = False,
              callback=None) -> ChainOutput:
    """Run burn-in plus sampling sweeps and return the thinned draws.

    ``config.iterations`` counts all sweeps including ``config.burn_in``;
    sweep ``t`` (1-based) is saved when ``t > burn_in`` and
    ``(t - burn_in) % thin == 0``. ``callback(t, state, report)`` is called
    after every sweep.
    """
    sampler = Sampler(dataset, config, parametric=parametric)
    if rng is None:
        rng = kernels.rng_stream(config.seed, 0)
    t0 = time.perf_counter()
    state = sampler.initial_state(rng)
    keys = ["iteration", "b", "beta", "nu", "delta_sq", "alpha", "k", "m", "B", "S", "assignment",
            "atom_draw", "atom_size", "atom_mu", "atom_Sigma", "accept", "loglik"]
    out = {k: [] for k in keys}
    for t in range(1, config.iterations + 1):
        report = sampler.sweep(state, rng)
        if callback is not None:
            callback(t, state, report)
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            _record(out, t, state, report)
    lay = dataset.layout
    D = dataset.D
    return ChainOutput(
        county_ids=lay.county_ids,
        stratum_ids=lay.stratum_ids,
        mega_ids=lay.mega_ids,
        config=config.to_dict(),
        parametric=parametric,
        iteration=np.array(out["iteration"], dtype=np.int64),
        b=np.array(out["b"]).reshape(-1, dataset.p),
        beta=np.array(out["beta"]).reshape(-1, lay.I, D),
        nu=np.array(out["nu"]).reshape(-1, lay.S),
        delta_sq=np.array(out["delta_sq"]).reshape(-1, lay.M),
        alpha=np.array(out["alpha"], dtype=float),
        k=np.array(out["k"], dtype=np.int64),
        m=np.array(out["m"]).reshape(-1, D),
        B=np.array(out["B"]).reshape(-1, D, D),
        S=np.array(out["S"]).reshape(-1, D, D),
        assignment=np.array(out["assignment"], dtype=np.int64).reshape(-1, lay.I),
        atom_draw=np.array(out["atom_draw"], dtype=np.int64),
        atom_size=np.array(out["atom_size"], dtype=np.int64),
        atom_mu=np.array(out["atom_mu"]).reshape(-1, D),
        atom_Sigma=np.array(out["atom_Sigma"]).reshape(-1, D, D),
        accept=np.array(out["accept"]).reshape(-1, 3),
        loglik=np.array(out["loglik"], dtype=float),
        elapsed=time.perf_counter() - t0,
    )


def sample_prior_state(layout, config: HyperConfig, rng, parametric: bool = False) -> ModelState:
    """Draw the full parameter vector from the prior (b prior must be proper)."""
    cfg = config
    D = cfg.D
    Lb = kernels.cholesky(cfg.V_b_inv)
    b = kernels.sample_mvn_precision(cfg.m_b, Lb, rng)
    delta_sq = 1.0 / rng.gamma(cfg.a_delta, 1.0 / cfg.b_delta, size=layout.M)
    nu = rng.standard_normal(layout.S) * np.sqrt(delta_sq[layout.stratum_mega])
    S = kernels.sample_wishart(cfg.q, cfg.R / cfg.q, rng)
    m = kernels.sample_mvn(cfg.a_vec, kernels.cholesky(cfg.A), rng)
    B = kernels.spd_inverse(kernels.sample_wishart(cfg.c, kernels.spd_inverse(cfg.c * cfg.C), rng), jitter=True)
    alpha = float(rng.gamma(cfg.a_alpha, 1.0 / cfg.b_alpha))
    I = layout.I
    # Chinese restaurant process over counties
    assign = np.zeros(I, dtype=np.int64)
    counts = []
    for i in range(I):
        if parametric:
            j = 0
            if not counts:
                counts.append(0)
        else:
            w = np.array(counts + [alpha], dtype=float)
            j = int(rng.choice(len(w), p=w / w.sum()))
            if j == len(counts):
                counts.append(0)
        counts[j] += 1
        assign[i] = j
    state = ModelState(b=b, beta=np.zeros((I, D)), nu=nu, delta_sq=delta_sq,
                       clusters=ClusterState(assign, {}), m=m, B=B, S=S, alpha=alpha)
    W_chol = kernels.cholesky(kernels.spd_inverse(cfg.s_df * S, jitter=True), jitter=True)
    B_chol = kernels.cholesky(B, jitter=True)
    for j in range(len(counts)):
        mu = m + B_chol @ rng.standard_normal(D)
        ch = kernels.wishart_factor(cfg.s_df, W_chol, rng)
        state.clusters.atoms[j] = Atom(mu, ch @ ch.T, ch)
    state.clusters.next_label = len(counts)
    for i in range(I):
        a = state.clusters.atoms[int(assign[i])]
        state.beta[i] = kernels.sample_mvn_precision(a.mu, a.prec_chol, rng)
    return state
