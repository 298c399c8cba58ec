"""Plot-ready tables from a posterior run.

Every table is a plain CSV; nothing depends on cluster labels except the atom
table, which lists atoms in order of first appearance within each draw.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import write_rows
from .model import Dataset
from .predict import (PredictionTarget, TotalDraw, posterior_totals, sample_average_estimate,
                      summarize_totals, synthetic_estimate)
from .sampler import ChainOutput


def k_distribution(chain: ChainOutput) -> tuple[np.ndarray, np.ndarray]:
    ks, counts = np.unique(chain.k, return_counts=True)
    return ks, counts / counts.sum()


def beta_domain_correlation(chain: ChainOutput) -> np.ndarray:
    """Across-county correlation of county effects between domains, averaged over draws."""
    D = chain.beta.shape[2]
    if chain.beta.shape[1] < 3:
        return np.full((D, D), np.nan)
    cors = [np.corrcoef(b.T) for b in chain.beta]
    return np.clip(np.nanmean(cors, axis=0).reshape(D, D), -1.0, 1.0)


def _atom_rows_canonical(chain: ChainOutput, t: int) -> list:
    """Atom rows of draw ``t`` ordered by first appearance in the assignment."""
    rows = np.flatnonzero(chain.atom_draw == t)
    _, first = np.unique(chain.assignment[t], return_index=True)
    labels = np.unique(chain.assignment[t])
    order = labels[np.argsort(first)]
    return [int(rows[j]) for j in order]


def export_summaries(chain: ChainOutput, dataset: Dataset, targets: PredictionTarget | None, outdir,
                     rng=None, totals: list[TotalDraw] | None = None) -> dict:
    """Write summary tables to ``outdir`` and return their paths by name.

    ``totals`` may be passed to reuse already simulated state totals;
    otherwise they are simulated with ``rng``.
    """
    if chain.n_draws == 0:
        raise ValueError("chain has no saved draws")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if totals is None:
        totals = posterior_totals(chain, dataset, targets, rng)

    rows = [[int(it)] + d.Y.tolist() for it, d in zip(chain.iteration, totals)]
    paths["totals_draws"] = out / "totals_draws.csv"
    write_rows(paths["totals_draws"], ["iteration"] + [f"state_{a}" for a in totals[0].state_ids], rows)

    synth = synthetic_estimate(dataset, targets)
    sample = sample_average_estimate(dataset)
    if len(totals) >= 2:
        summ = summarize_totals(totals)
        rows = []
        for k, a in enumerate(summ.state_ids.tolist()):
            sa = sample.get(a)
            rows.append([a, int(summ.N[k]), float(summ.mean[k]), float(summ.sd[k]), float(summ.q025[k]),
                         float(summ.q50[k]), float(summ.q975[k]), float(synth[a]),
                         None if sa is None else float(sa[0]), None if sa is None else float(sa[1])])
        paths["state_totals"] = out / "state_totals.csv"
        write_rows(paths["state_totals"], ["state_id", "N_pop", "mean_pct", "sd_pct", "q025_pct", "q50_pct",
                                           "q975_pct", "synthetic_pct", "sample_avg_pct", "sample_se_pct"], rows)

    D = chain.beta.shape[2]
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    rows = []
    for d in range(D):
        v = chain.beta[:, :, d].ravel()
        rows.append([d + 1, float(v.mean())] + [float(x) for x in np.quantile(v, qs)])
    paths["beta_by_domain"] = out / "beta_by_domain.csv"
    write_rows(paths["beta_by_domain"], ["domain", "mean", "q05", "q25", "q50", "q75", "q95"], rows)

    cor = beta_domain_correlation(chain)
    paths["beta_correlation"] = out / "beta_correlation.csv"
    write_rows(paths["beta_correlation"], ["domain_i", "domain_j", "correlation"],
               [[i + 1, j + 1, float(cor[i, j])] for i in range(D) for j in range(i + 1, D)])

    ks, prob = k_distribution(chain)
    paths["k_posterior"] = out / "k_posterior.csv"
    write_rows(paths["k_posterior"], ["k", "probability"], [[int(k), float(p)] for k, p in zip(ks, prob)])

    paths["nu_posterior"] = out / "nu_posterior.csv"
    write_rows(paths["nu_posterior"], ["stratum_id", "mean", "sd"],
               [[int(s), float(chain.nu[:, j].mean()), float(chain.nu[:, j].std())]
                for j, s in enumerate(chain.stratum_ids)])

    I = chain.beta.shape[1]
    rows = []
    for t in range(chain.n_draws):
        for cluster, r in enumerate(_atom_rows_canonical(chain, t)):
            rows.append([int(chain.iteration[t]), cluster, float(chain.atom_size[r] / I)]
                        + [float(x) for x in chain.atom_mu[r]])
    paths["atoms_mu"] = out / "atoms_mu.csv"
    write_rows(paths["atoms_mu"], ["iteration", "cluster", "weight"] + [f"mu_{d}" for d in range(1, D + 1)], rows)
    return paths
