"""Synthetic survey data drawn from the model with a finite cluster truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .kernels import expit
from .model import Dataset
from .predict import PredictionTarget


@dataclass
class TruthSpec:
    """Generating parameters for :func:`generate_synthetic`.

    ``clusters`` is a list of ``{"weight", "mu", "Sigma"}`` dicts; county
    effects are drawn from the mixture with exactly proportional cluster
    counts. ``b`` covers the domain-indicator columns first (when
    ``domain_intercepts``) and then ``n_covariates`` standard-normal county
    covariates. ``unsampled_strata`` strata receive only unsampled counties.
    With ``states_by_cluster`` each state holds counties of a single cluster.
    ``N_log_sd > 0`` multiplies each county's populations by a lognormal
    size factor, giving the skewed county sizes of real frames.
    """

    I: int = 40
    J_extra: int = 20
    S: int = 8
    M: int = 2
    D: int = 2
    A: int = 5
    n_covariates: int = 1
    domain_intercepts: bool = True
    b: list = field(default_factory=lambda: [-0.3, 0.2, 0.5])
    clusters: list = field(default_factory=lambda: [
        {"weight": 0.6, "mu": [0.6, 0.4], "Sigma": [[0.04, 0.01], [0.01, 0.04]]},
        {"weight": 0.4, "mu": [-0.8, -0.5], "Sigma": [[0.04, -0.01], [-0.01, 0.04]]},
    ])
    delta_sq: list = field(default_factory=lambda: [0.05, 0.1])
    n_range: tuple = (10, 30)
    N_range: tuple = (500, 3000)
    unsampled_strata: int = 1
    states_by_cluster: bool = False
    N_log_sd: float = 0.0

    @property
    def p(self) -> int:
        return self.n_covariates + (self.D if self.domain_intercepts else 0)

    def check(self) -> None:
        if min(self.I, self.S, self.M, self.D, self.A) < 1 or self.J_extra < 0:
            raise ValueError("sizes must be positive")
        if self.S - self.unsampled_strata < 1:
            raise ValueError("need at least one sampled stratum")
        if self.S < self.M:
            raise ValueError("every mega-stratum needs a stratum")
        if len(self.b) != self.p:
            raise ValueError(f"b must have length {self.p}")
        if len(self.delta_sq) != self.M:
            raise ValueError("delta_sq must have one entry per mega-stratum")
        if not self.clusters:
            raise ValueError("at least one cluster required")
        for c in self.clusters:
            if len(c["mu"]) != self.D or not kernels.is_spd(np.array(c["Sigma"], dtype=float)):
                raise ValueError("cluster mu/Sigma have the wrong shape or Sigma is not SPD")
        if self.states_by_cluster and self.A < len(self.clusters):
            raise ValueError("states_by_cluster needs at least one state per cluster")
        lo, hi = self.n_range
        if self.N_log_sd < 0:
            raise ValueError("N_log_sd must be non-negative")
        if not 0 <= lo <= hi or self.N_range[0] < hi:
            raise ValueError("need 0 <= n_lo <= n_hi <= N_lo")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_range"] = list(self.n_range)
        d["N_range"] = list(self.N_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TruthSpec":
        return cls(**d)


def _exact_counts(weights, total):
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    counts = np.floor(w * total).astype(int)
    for j in np.argsort(-(w * total - counts))[: total - counts.sum()]:
        counts[j] += 1
    return counts


def generate_synthetic(truth: TruthSpec, rng) -> tuple[Dataset, PredictionTarget, dict]:
    """Draw (dataset, prediction targets, truth record) from the model.

    The truth record holds every generating quantity, including the realized
    finite-population state totals, and is JSON-serializable.
    """
    truth.check()
    J = truth.I + truth.J_extra
    D = truth.D
    strata = np.arange(1, truth.S + 1)
    stratum_mega = {int(s): int((s - 1) % truth.M) + 1 for s in strata}
    n_sampled_strata = truth.S - truth.unsampled_strata

    counts = _exact_counts([c["weight"] for c in truth.clusters], J)
    label = rng.permutation(np.repeat(np.arange(len(truth.clusters)), counts))
    county_stratum = np.empty(J, dtype=np.int64)
    county_stratum[: truth.I] = rng.permutation(np.arange(truth.I) % n_sampled_strata + 1)
    county_stratum[truth.I:] = rng.integers(1, truth.S + 1, size=truth.J_extra)
    if truth.states_by_cluster:
        groups = np.array_split(np.arange(1, truth.A + 1), len(truth.clusters))
        county_state = np.array([rng.choice(groups[c]) for c in label], dtype=np.int64)
    else:
        county_state = rng.integers(1, truth.A + 1, size=J)

    beta = np.zeros((J, D))
    for j in range(J):
        c = truth.clusters[label[j]]
        beta[j] = kernels.sample_mvn(c["mu"], kernels.cholesky(c["Sigma"]), rng)
    nu = np.array([rng.normal(0.0, np.sqrt(truth.delta_sq[stratum_mega[int(s)] - 1])) for s in strata])
    z = rng.standard_normal((J, truth.n_covariates))
    X = np.zeros((J, D, truth.p))
    for d in range(D):
        if truth.domain_intercepts:
            X[:, d, d] = 1.0
        X[:, d, truth.p - truth.n_covariates:] = z
    b = np.asarray(truth.b, dtype=float)
    eta = X @ b + beta + nu[county_stratum - 1][:, None]
    p = expit(eta)
    n = rng.integers(truth.n_range[0], truth.n_range[1] + 1, size=(J, D))
    n[truth.I:] = 0
    N = rng.integers(truth.N_range[0], truth.N_range[1] + 1, size=(J, D))
    if truth.N_log_sd > 0:
        size = np.exp(truth.N_log_sd * rng.standard_normal(J))
        N = np.maximum(np.round(N * size[:, None]).astype(np.int64), truth.n_range[1])
    y = rng.binomial(n, p)
    Y_true = y + rng.binomial(N - n, p)

    county_ids = np.arange(1, J + 1)
    rows = [(j, d) for j in range(J) for d in range(D)]

    def build(sel):
        rr = [(j, d) for j, d in rows if sel[j]]
        return Dataset(
            D=D,
            county_table={int(county_ids[j]): (int(county_stratum[j]), int(county_state[j]))
                          for j in range(J) if sel[j]},
            stratum_table=dict(stratum_mega),
            county=[county_ids[j] for j, _ in rr],
            domain=[d + 1 for _, d in rr],
            y=[y[j, d] for j, d in rr],
            n=[n[j, d] for j, d in rr],
            N_pop=[N[j, d] for j, d in rr],
            X=np.array([X[j, d] for j, d in rr]).reshape(len(rr), truth.p),
        )

    sampled = np.arange(J) < truth.I
    dataset = build(sampled)
    # sampled-only stratum table keeps the dataset free of strata without counties
    dataset.stratum_table = {s: m for s, m in stratum_mega.items() if s in set(county_stratum[: truth.I].tolist())}
    targets = PredictionTarget.from_dataset(build(~sampled)) if truth.J_extra else None

    states = np.arange(1, truth.A + 1)
    Ya = np.array([Y_true[county_state == a].sum() for a in states])
    Na = np.array([N[county_state == a].sum() for a in states])
    Ea = np.array([(N * p)[county_state == a].sum() for a in states])
    record = {
        "spec": truth.to_dict(),
        "b": b.tolist(),
        "cluster_label": label.tolist(),
        "beta": beta.tolist(),
        "nu": nu.tolist(),
        "county_stratum": county_stratum.tolist(),
        "county_state": county_state.tolist(),
        "state_ids": states.tolist(),
        "state_Y": Ya.tolist(),
        "state_N": Na.tolist(),
        "state_percent": (100.0 * Ya / np.maximum(Na, 1)).tolist(),
        "state_expected_percent": (100.0 * Ea / np.maximum(Na, 1)).tolist(),
    }
    return dataset, targets, record
