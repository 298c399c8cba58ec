"""Dataset, configuration and posterior-draw files.

Dataset files are comma-separated with the header::

    county_id,stratum_id,mega_stratum_id,state_id,domain_id,y,n,N_pop,x_1,...,x_p

one row per (county, domain) cell. Prediction targets use the same schema
with ``y`` and ``n`` set to zero. Configurations are JSON objects whose keys
are the :class:`~mdpsae.model.HyperConfig` field names.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .model import Dataset, HyperConfig, validate
from .sampler import ChainOutput

HEADER = ["county_id", "stratum_id", "mega_stratum_id", "state_id", "domain_id", "y", "n", "N_pop"]
OUTPUT_DIR_ENV = "MDPSAE_OUTPUT_DIR"
TIMESTAMPS_FILE = "timestamps.json"


class DatasetError(ValueError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


def _fmt(v) -> str:
    return repr(float(v))


def read_dataset(path) -> Dataset:
    """Parse a dataset file without validating cell-level rules."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: no records") from None
        header = [h.strip() for h in header]
        if header[:8] != HEADER:
            raise DatasetError(f"{path}:1: header must start with {','.join(HEADER)}")
        xcols = header[8:]
        if xcols != [f"x_{k}" for k in range(1, len(xcols) + 1)]:
            raise DatasetError(f"{path}:1: covariate columns must be x_1..x_p")
        county_table, stratum_table = {}, {}
        cols = {k: [] for k in ("county", "domain", "y", "n", "N_pop", "X")}
        conflicts = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                c, s, m, a, d, y, n, N = (int(v) for v in row[:8])
                x = [float(v) for v in row[8:]]
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from None
            if county_table.setdefault(c, (s, a)) != (s, a):
                conflicts.append(f"line {lineno}: county {c} listed in more than one stratum/state")
            if stratum_table.setdefault(s, m) != m:
                conflicts.append(f"line {lineno}: stratum {s} listed in more than one mega-stratum")
            for key, v in zip(("county", "domain", "y", "n", "N_pop", "X"), (c, d, y, n, N, x)):
                cols[key].append(v)
    if not cols["county"]:
        raise DatasetError(f"{path}: no records")
    if conflicts:
        raise DatasetError(f"{path}: inconsistent nesting", conflicts)
    D = max(cols["domain"])
    X = np.array(cols.pop("X"), dtype=float).reshape(len(cols["county"]), len(xcols))
    return Dataset(D=D, county_table=county_table, stratum_table=stratum_table, X=X, **cols)


def load_dataset(path) -> Dataset:
    """Read and validate a dataset file; raises :class:`DatasetError`."""
    ds = read_dataset(path)
    problems = validate(ds)
    if problems:
        raise DatasetError(f"{path}: {len(problems)} violation(s): " + "; ".join(problems[:5]), problems)
    return ds


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER + [f"x_{k}" for k in range(1, ds.p + 1)])
        for k in range(ds.n_cells):
            c = int(ds.county[k])
            s, a = ds.county_table[c]
            w.writerow([c, s, ds.stratum_table[s], a, int(ds.domain[k]), int(ds.y[k]),
                        int(ds.n[k]), int(ds.N_pop[k])] + [_fmt(v) for v in ds.X[k]])


def dataset_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path, p: int | None = None, D: int | None = None) -> HyperConfig:
    """Read a JSON config; matrices are checked for symmetry and definiteness.

    Given the dataset's ``p`` and ``D``, keys absent from the file take the
    :meth:`HyperConfig.default` values.
    """
    with open(path) as fh:
        cfg = HyperConfig.from_dict(json.load(fh), p, D)
    cfg.validate(D, p)
    return cfg


def save_config(config: HyperConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def output_dir(subdir: str) -> Path:
    """Default output location ``<base>/<subdir>``.

    ``<base>`` is ``$MDPSAE_OUTPUT_DIR`` when set, else ``./mdpsae_out``.
    """
    return Path(os.environ.get(OUTPUT_DIR_ENV) or "mdpsae_out") / subdir


# -- draws ------------------------------------------------------------------

def _savetxt(path, header, rows, fmt="%.17g"):
    rows = np.asarray(rows)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        if rows.size:
            np.savetxt(fh, rows, fmt=fmt, delimiter=",")


def _loadtxt(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def save_chain(chain: ChainOutput, directory, manifest_extra=None) -> Path:
    """Write one delimited file per parameter family plus ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    T = chain.n_draws
    it = chain.iteration[:, None]
    D = chain.beta.shape[2]
    p = chain.b.shape[1]
    I = len(chain.county_ids)
    dd = [f"{i}{j}" for i in range(1, D + 1) for j in range(1, D + 1)]
    _savetxt(out / "b.csv", ["iteration"] + [f"b_{k}" for k in range(1, p + 1)], np.hstack([it, chain.b]))
    beta_rows = np.column_stack([
        np.repeat(chain.iteration, I), np.tile(chain.county_ids, T), chain.beta.reshape(T * I, D)])
    _savetxt(out / "beta.csv", ["iteration", "county_id"] + [f"beta_{d}" for d in range(1, D + 1)], beta_rows)
    _savetxt(out / "nu.csv", ["iteration"] + [f"stratum_{s}" for s in chain.stratum_ids], np.hstack([it, chain.nu]))
    _savetxt(out / "delta_sq.csv", ["iteration"] + [f"mega_{m}" for m in chain.mega_ids],
             np.hstack([it, chain.delta_sq]))
    _savetxt(out / "scalars.csv", ["iteration", "alpha", "k", "loglik", "accept_b", "accept_beta", "accept_nu"],
             np.column_stack([chain.iteration, chain.alpha, chain.k, chain.loglik, chain.accept]))
    _savetxt(out / "base.csv", ["iteration"] + [f"m_{d}" for d in range(1, D + 1)]
             + [f"B_{x}" for x in dd] + [f"S_{x}" for x in dd],
             np.hstack([it, chain.m, chain.B.reshape(T, -1), chain.S.reshape(T, -1)]))
    _savetxt(out / "assignment.csv", ["iteration"] + [f"county_{c}" for c in chain.county_ids],
             np.hstack([it, chain.assignment]), fmt="%d")
    _savetxt(out / "atoms.csv", ["iteration", "cluster", "size"] + [f"mu_{d}" for d in range(1, D + 1)]
             + [f"Sigma_{x}" for x in dd],
             np.column_stack([chain.iteration[chain.atom_draw] if len(chain.atom_draw) else np.zeros(0),
                              _cluster_index(chain.atom_draw), chain.atom_size,
                              chain.atom_mu, chain.atom_Sigma.reshape(len(chain.atom_draw), -1)]))
    manifest = {
        "config": chain.config,
        "seed": chain.config.get("seed"),
        "parametric": chain.parametric,
        "county_ids": chain.county_ids.tolist(),
        "stratum_ids": chain.stratum_ids.tolist(),
        "mega_ids": chain.mega_ids.tolist(),
        "n_draws": T,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamps_file": TIMESTAMPS_FILE,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # wall-clock data lives in a sidecar so every other file is a pure function of the inputs
    with open(out / TIMESTAMPS_FILE, "w") as fh:
        json.dump({"written": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                   "elapsed_seconds": round(chain.elapsed, 3)}, fh, indent=2)
        fh.write("\n")
    return out


def _cluster_index(atom_draw):
    idx = np.zeros(len(atom_draw), dtype=np.int64)
    for k in range(1, len(atom_draw)):
        idx[k] = idx[k - 1] + 1 if atom_draw[k] == atom_draw[k - 1] else 0
    return idx


def load_chain(directory) -> ChainOutput:
    src = Path(directory)
    with open(src / "manifest.json") as fh:
        man = json.load(fh)
    county_ids = np.array(man["county_ids"], dtype=np.int64)
    stratum_ids = np.array(man["stratum_ids"], dtype=np.int64)
    mega_ids = np.array(man["mega_ids"], dtype=np.int64)
    I = len(county_ids)
    _, b = _loadtxt(src / "b.csv")
    T = b.shape[0]
    iteration = b[:, 0].astype(np.int64)
    _, beta = _loadtxt(src / "beta.csv")
    D = beta.shape[1] - 2
    _, nu = _loadtxt(src / "nu.csv")
    _, dl = _loadtxt(src / "delta_sq.csv")
    _, sc = _loadtxt(src / "scalars.csv")
    _, base = _loadtxt(src / "base.csv")
    _, asg = _loadtxt(src / "assignment.csv")
    _, atoms = _loadtxt(src / "atoms.csv")
    pos = {int(t): k for k, t in enumerate(iteration)}
    atom_draw = np.array([pos[int(t)] for t in atoms[:, 0]], dtype=np.int64)
    return ChainOutput(
        county_ids=county_ids, stratum_ids=stratum_ids, mega_ids=mega_ids,
        config=man["config"], parametric=bool(man["parametric"]),
        iteration=iteration,
        b=b[:, 1:],
        beta=beta[:, 2:].reshape(T, I, D),
        nu=nu[:, 1:].reshape(T, len(stratum_ids)),
        delta_sq=dl[:, 1:].reshape(T, len(mega_ids)),
        alpha=sc[:, 1], k=sc[:, 2].astype(np.int64), loglik=sc[:, 3], accept=sc[:, 4:7],
        m=base[:, 1:1 + D], B=base[:, 1 + D:1 + D + D * D].reshape(T, D, D),
        S=base[:, 1 + D + D * D:].reshape(T, D, D),
        assignment=asg[:, 1:].astype(np.int64),
        atom_draw=atom_draw, atom_size=atoms[:, 2].astype(np.int64),
        atom_mu=atoms[:, 3:3 + D], atom_Sigma=atoms[:, 3 + D:].reshape(-1, D, D),
    )


def write_rows(path, header, rows) -> None:
    """Small CSV writer for summary tables; floats use repr for stable bytes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (_fmt(v) if isinstance(v, (float, np.floating)) else v) for v in row])


def write_targets(targets, path) -> None:
    """Write a :class:`~mdpsae.predict.PredictionTarget` in the dataset schema (y = n = 0)."""
    J, D, p = targets.X.shape
    rows = []
    for j in range(J):
        s = int(targets.county_stratum[j])
        for d in range(D):
            rows.append([int(targets.county_ids[j]), s, int(targets.stratum_mega[s]), int(targets.county_state[j]),
                         d + 1, 0, 0, int(targets.N_pop[j, d])] + [_fmt(v) for v in targets.X[j, d]])
    write_rows(path, HEADER + [f"x_{k}" for k in range(1, p + 1)], rows)


def demo_path(name: str = "demo_dataset.csv") -> Path:
    """Path of a bundled demo file: demo_dataset.csv, demo_targets.csv, demo_config.json, demo_truth.json."""
    path = Path(str(resources.files("mdpsae") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled file {name!r}")
    return path
