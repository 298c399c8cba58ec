"""Fit the bundled demo survey and compare state estimates with the truth.

The demo data come from a two-cluster synthetic truth (see
``mdpsae/data/demo_truth.json``). The script fits the mixture model, then
prints the posterior on the number of clusters, the posterior of the
fixed effects and, per state, the model estimate next to the synthetic and
sample-average estimates and the true percentage.

    python demos/recovery_walkthrough.py --iterations 2000
"""

import argparse
import json
from importlib import resources

import numpy as np

from mdpsae import kernels
from mdpsae.io import demo_path, load_config, load_dataset
from mdpsae.predict import (PredictionTarget, posterior_totals, sample_average_estimate, summarize_totals,
                            synthetic_estimate)
from mdpsae.sampler import run_chain
from mdpsae.summaries import k_distribution


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ds = load_dataset(demo_path())
    targets = PredictionTarget.from_dataset(load_dataset(demo_path("demo_targets.csv")))
    truth = json.loads(resources.files("mdpsae").joinpath("data/demo_truth.json").read_text())
    cfg = load_config(demo_path("demo_config.json"))
    cfg.iterations, cfg.burn_in, cfg.seed = args.iterations, args.iterations // 4, args.seed

    print(f"{ds.layout.I} sampled counties, {targets.J} unsampled, D={ds.D}, p={ds.p}")
    chain = run_chain(ds, cfg)
    print(f"mean acceptance: b {chain.accept[:, 0].mean():.2f}, beta {chain.accept[:, 1].mean():.2f}, "
          f"nu {chain.accept[:, 2].mean():.2f}")

    ks, pr = k_distribution(chain)
    print("\np(k | y):", "  ".join(f"k={k}: {p:.2f}" for k, p in zip(ks, pr) if p >= 0.01))

    lo, hi = np.quantile(chain.b, [0.025, 0.975], axis=0)
    print("\nfixed effects (domain intercepts are only weakly identified next to the cluster means)")
    for j, t in enumerate(truth["b"]):
        print(f"  b[{j}] truth {t:6.2f}   posterior mean {chain.b[:, j].mean():6.2f}   95% [{lo[j]:.2f}, {hi[j]:.2f}]")

    s = summarize_totals(posterior_totals(chain, ds, targets, kernels.rng_stream(args.seed, 1)))
    synth = synthetic_estimate(ds, targets)
    sample = sample_average_estimate(ds)
    true_pct = dict(zip(truth["state_ids"], truth["state_percent"]))
    print(f"\n{'state':>5} {'truth':>7} {'model':>14} {'synthetic':>10} {'sample avg':>11}")
    for k, a in enumerate(s.state_ids.tolist()):
        sa = sample[a]
        print(f"{a:>5} {true_pct[a]:7.2f} {s.mean[k]:7.2f} ({s.sd[k]:.2f}) {synth[a]:10.2f} "
              f"{'-' if sa is None else f'{sa[0]:.2f}':>11}")


if __name__ == "__main__":
    main()
