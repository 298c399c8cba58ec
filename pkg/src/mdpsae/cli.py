"""Command line interface: ``mdpsae {simulate,fit,predict,check,compare}``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__, kernels
from .io import (DatasetError, dataset_digest, load_chain, load_config, load_dataset, output_dir, save_chain,
                 write_dataset, write_rows, write_targets)
from .model import HyperConfig
from .predict import PredictionTarget, posterior_totals, sample_average_estimate, summarize_totals, synthetic_estimate
from .sampler import ChainOutput, run_chain
from .summaries import export_summaries
from .synthetic import TruthSpec, generate_synthetic

SCHEMA_HELP = """\
dataset / target file schema (CSV, one row per county x domain cell):
  county_id,stratum_id,mega_stratum_id,state_id,domain_id,y,n,N_pop,x_1,...,x_p
  integer ids; domain_id in 1..D; 0 <= y <= n <= N_pop; target files use y=n=0.
config file: JSON object keyed by HyperConfig field names
  (m_b, V_b_inv, a_delta, b_delta, a_vec, A, c, C, q, R, s_df, a_alpha, b_alpha,
   neal_aux_m, iterations, burn_in, thin, seed); matrices as nested lists.
environment: MDPSAE_OUTPUT_DIR overrides the default output directory.
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\n{SCHEMA_HELP}")
        sys.exit(2)


def _config_for(args, ds) -> HyperConfig:
    cfg = load_config(args.config, ds.p, ds.D) if args.config else HyperConfig.default(ds.p, ds.D)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate(ds.D, ds.p)
    return cfg


def _run_one(payload):
    ds, cfg, chain_id, parametric = payload
    return run_chain(ds, cfg, kernels.rng_stream(cfg.seed, chain_id), parametric=parametric)


def cmd_simulate(args) -> int:
    truth = TruthSpec.from_dict(json.loads(Path(args.truth).read_text())) if args.truth else TruthSpec()
    out = Path(args.out) if args.out else output_dir("simulate")
    out.mkdir(parents=True, exist_ok=True)
    ds, targets, record = generate_synthetic(truth, kernels.rng_stream(args.seed, 0))
    write_dataset(ds, out / "dataset.csv")
    if targets is not None:
        write_targets(targets, out / "targets.csv")
    (out / "truth.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}/dataset.csv ({ds.layout.I} counties, D={ds.D}, p={ds.p})")
    return 0


def cmd_fit(args) -> int:
    ds = load_dataset(args.data)
    cfg = _config_for(args, ds)
    out = Path(args.out) if args.out else output_dir("fit")
    payloads = [(ds, cfg, c, args.parametric) for c in range(args.chains)]
    if args.chains == 1:
        chains = [_run_one(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=args.chains) as ex:
            chains = list(ex.map(_run_one, payloads))
    extra = {"dataset_digest": dataset_digest(args.data), "dataset_path": str(args.data)}
    for c, ch in enumerate(chains):
        target = out if args.chains == 1 else out / f"chain_{c + 1}"
        save_chain(ch, target, dict(extra, chain=c))
        acc = ch.accept.mean(0)
        print(f"chain {c + 1}: {ch.n_draws} draws in {ch.elapsed:.1f}s; acceptance b={acc[0]:.2f} "
              f"beta={acc[1]:.2f} nu={acc[2]:.2f}; mean k={ch.k.mean():.2f} -> {target}")
    return 0


def _load_draws(paths) -> ChainOutput:
    chains = []
    for p in paths:
        p = Path(p)
        subdirs = sorted(p.glob("chain_*")) if not (p / "manifest.json").exists() else [p]
        chains.extend(load_chain(s) for s in subdirs)
    if not chains:
        raise FileNotFoundError(f"no draws found in {paths}")
    return chains[0] if len(chains) == 1 else ChainOutput.concatenate(chains)


def cmd_predict(args) -> int:
    ds = load_dataset(args.data)
    chain = _load_draws(args.draws)
    targets = PredictionTarget.from_dataset(load_dataset(args.targets)) if args.targets else None
    out = Path(args.out) if args.out else output_dir("predict")
    paths = export_summaries(chain, ds, targets, out, kernels.rng_stream(args.seed, 1))
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    ok = run_checks(n_samples=args.samples, mutation=args.mutation, seed=args.seed, verbose=True)
    print("check: PASS" if ok else "check: FAIL")
    return 0 if ok else 1


def cmd_compare(args) -> int:
    ds = load_dataset(args.data)
    cfg = _config_for(args, ds)
    targets = PredictionTarget.from_dataset(load_dataset(args.targets)) if args.targets else None
    out = Path(args.out) if args.out else output_dir("compare")
    out.mkdir(parents=True, exist_ok=True)
    rng = kernels.rng_stream(cfg.seed, 0)
    mdp = summarize_totals(posterior_totals(run_chain(ds, cfg, rng), ds, targets, rng))
    par = summarize_totals(posterior_totals(run_chain(ds, cfg, rng, parametric=True), ds, targets, rng))
    synth = synthetic_estimate(ds, targets)
    sample = sample_average_estimate(ds)
    header = ["state_id", "mdp_mean_pct", "mdp_sd_pct", "parametric_mean_pct", "parametric_sd_pct",
              "synthetic_pct", "sample_avg_pct", "sample_se_pct"]
    rows = []
    for k, a in enumerate(mdp.state_ids.tolist()):
        sa = sample.get(a)
        rows.append([a, float(mdp.mean[k]), float(mdp.sd[k]), float(par.mean[k]), float(par.sd[k]),
                     float(synth[a]), None if sa is None else float(sa[0]), None if sa is None else float(sa[1])])
    write_rows(out / "compare.csv", header, rows)
    print(f"{'state':>6} {'MDP':>14} {'parametric':>14} {'synthetic':>10} {'sample':>14}")
    for r in rows:
        samp = "-" if r[6] is None else f"{r[6]:6.2f}({r[7]:.2f})"
        print(f"{r[0]:>6} {r[1]:7.2f}({r[2]:.2f}) {r[3]:7.2f}({r[4]:.2f}) {r[5]:10.2f} {samp:>14}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdpsae", description="Dirichlet-process-mixture small area estimation",
                     epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a truth spec")
    p.add_argument("--truth", help="JSON truth spec (TruthSpec fields); default demo spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default $MDPSAE_OUTPUT_DIR/simulate)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the MCMC and persist draws")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--config", help="hyperparameter JSON (default: weakly informative defaults)")
    p.add_argument("--out", help="output directory (default $MDPSAE_OUTPUT_DIR/fit)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--chains", type=int, default=1, help="independent chains, written to chain_<c>/")
    p.add_argument("--parametric", action="store_true", help="single-normal random effects instead of DP")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="state totals and summary tables from saved draws")
    p.add_argument("--data", required=True, help="dataset CSV used for the fit")
    p.add_argument("--draws", required=True, nargs="+", help="fit output directories")
    p.add_argument("--targets", help="unsampled counties, dataset schema with y=n=0")
    p.add_argument("--out", help="output directory (default $MDPSAE_OUTPUT_DIR/predict)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("check", help="sampler-correctness checks (Geweke + oracles)")
    p.add_argument("--samples", type=int, default=10_000, help="draws per Geweke sampler")
    p.add_argument("--mutation", choices=["acceptance", "delta", "urn"], help="run a deliberately broken sampler")
    p.add_argument("--seed", type=int, default=2024)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("compare", help="MDP vs parametric vs synthetic vs sample averages")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--config", help="hyperparameter JSON")
    p.add_argument("--targets", help="unsampled counties, dataset schema with y=n=0")
    p.add_argument("--out", help="output directory (default $MDPSAE_OUTPUT_DIR/compare)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError, FileNotFoundError, KeyError) as e:
        print(f"mdpsae {args.command}: error: {e}", file=sys.stderr)
        for v in getattr(e, "violations", [])[:20]:
            print(f"  {v}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
