"""Data model for the county/stratum/domain logistic random-effects model.

Index structure: counties nest in strata, strata nest in mega-strata, and
every county belongs to one state. Each county has up to ``D`` demographic
domain cells; a cell carries a success count ``y`` out of ``n`` sampled and a
population size ``N_pop``. The logit of the cell probability is

    x'b + beta[county, domain] + nu[stratum(county)].

Arrays in :class:`ModelState` are indexed by the positional order of
:attr:`Layout.county_ids` / :attr:`Layout.stratum_ids` /
:attr:`Layout.mega_ids`, which are the sorted ids of the dataset tables.
"""

from __future__ import annotations

import copy
from dataclasses import MISSING, dataclass, field, fields
from functools import cached_property
from typing import Iterator

import numpy as np

from . import kernels


@dataclass(frozen=True)
class CellRecord:
    county: int
    domain: int
    y: int
    n: int
    N_pop: int
    x: np.ndarray


@dataclass(frozen=True)
class Layout:
    """Integer index maps compiled from a validated :class:`Dataset`."""

    county_ids: np.ndarray
    stratum_ids: np.ndarray
    mega_ids: np.ndarray
    state_ids: np.ndarray
    county_stratum: np.ndarray  # county index -> stratum index
    county_state: np.ndarray  # county index -> state index
    stratum_mega: np.ndarray  # stratum index -> mega index
    cell_county: np.ndarray  # cell -> county index
    cell_domain: np.ndarray  # cell -> 0-based domain
    cell_stratum: np.ndarray

    @property
    def I(self) -> int:
        return len(self.county_ids)

    @property
    def S(self) -> int:
        return len(self.stratum_ids)

    @property
    def M(self) -> int:
        return len(self.mega_ids)

    def strata_per_mega(self) -> np.ndarray:
        return np.bincount(self.stratum_mega, minlength=self.M)


@dataclass
class Dataset:
    """Long-format survey records plus the county and stratum tables.

    ``county_table`` maps county id to ``(stratum id, state id)`` and
    ``stratum_table`` maps stratum id to mega-stratum id. Cell columns are
    parallel arrays; ``domain`` is 1-based as in the file format.
    """

    D: int
    county_table: dict
    stratum_table: dict
    county: np.ndarray
    domain: np.ndarray
    y: np.ndarray
    n: np.ndarray
    N_pop: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.county = np.asarray(self.county, dtype=np.int64)
        self.domain = np.asarray(self.domain, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.n = np.asarray(self.n, dtype=np.int64)
        self.N_pop = np.asarray(self.N_pop, dtype=np.int64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] != len(self.county) and len(self.county) == 0:
            self.X = self.X.reshape(0, self.X.shape[-1])

    @classmethod
    def from_records(cls, records, county_table, stratum_table, D) -> "Dataset":
        records = list(records)
        p = len(records[0].x) if records else 0
        return cls(
            D=D,
            county_table=dict(county_table),
            stratum_table=dict(stratum_table),
            county=[r.county for r in records],
            domain=[r.domain for r in records],
            y=[r.y for r in records],
            n=[r.n for r in records],
            N_pop=[r.N_pop for r in records],
            X=np.array([r.x for r in records], dtype=float).reshape(len(records), p),
        )

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_cells(self) -> int:
        return len(self.county)

    def records(self) -> Iterator[CellRecord]:
        for k in range(self.n_cells):
            yield CellRecord(
                int(self.county[k]), int(self.domain[k]), int(self.y[k]),
                int(self.n[k]), int(self.N_pop[k]), self.X[k].copy(),
            )

    @cached_property
    def layout(self) -> Layout:
        problems = validate(self)
        if problems:
            raise ValueError("invalid dataset: " + "; ".join(problems[:10]))
        county_ids = np.array(sorted(self.county_table), dtype=np.int64)
        stratum_ids = np.array(sorted(self.stratum_table), dtype=np.int64)
        mega_ids = np.array(sorted(set(self.stratum_table.values())), dtype=np.int64)
        state_ids = np.array(sorted({st for _, st in self.county_table.values()}), dtype=np.int64)
        c_pos = {c: k for k, c in enumerate(county_ids.tolist())}
        s_pos = {s: k for k, s in enumerate(stratum_ids.tolist())}
        m_pos = {m: k for k, m in enumerate(mega_ids.tolist())}
        a_pos = {a: k for k, a in enumerate(state_ids.tolist())}
        county_stratum = np.array([s_pos[self.county_table[c][0]] for c in county_ids.tolist()], dtype=np.int64)
        county_state = np.array([a_pos[self.county_table[c][1]] for c in county_ids.tolist()], dtype=np.int64)
        stratum_mega = np.array([m_pos[self.stratum_table[s]] for s in stratum_ids.tolist()], dtype=np.int64)
        cell_county = np.array([c_pos[c] for c in self.county.tolist()], dtype=np.int64)
        return Layout(
            county_ids=county_ids,
            stratum_ids=stratum_ids,
            mega_ids=mega_ids,
            state_ids=state_ids,
            county_stratum=county_stratum,
            county_state=county_state,
            stratum_mega=stratum_mega,
            cell_county=cell_county,
            cell_domain=self.domain - 1,
            cell_stratum=county_stratum[cell_county],
        )


def validate(dataset: Dataset) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    ds = dataset
    if ds.D < 1:
        out.append(f"D={ds.D}: number of domains must be positive")
    if ds.n_cells == 0:
        out.append("no records")
    if ds.X.shape[0] != ds.n_cells:
        out.append("covariate matrix row count does not match records")
        return out
    seen = set()
    for k in range(ds.n_cells):
        c, d = int(ds.county[k]), int(ds.domain[k])
        y, n, N = int(ds.y[k]), int(ds.n[k]), int(ds.N_pop[k])
        tag = f"record {k} (county {c}, domain {d})"
        if c not in ds.county_table:
            out.append(f"{tag}: county not in county table")
        if not 1 <= d <= ds.D:
            out.append(f"{tag}: domain outside 1..{ds.D}")
        if (c, d) in seen:
            out.append(f"{tag}: duplicate (county, domain) pair")
        seen.add((c, d))
        if y < 0 or n < 0 or N < 0:
            out.append(f"{tag}: negative count")
        if y > n:
            out.append(f"{tag}: y>n")
        if n > N:
            out.append(f"{tag}: n>N_pop")
        if not np.all(np.isfinite(ds.X[k])):
            out.append(f"{tag}: non-finite covariate")
    for c, (s, _state) in ds.county_table.items():
        if s not in ds.stratum_table:
            out.append(f"county {c}: orphan county (stratum {s} not in stratum table)")
    return out


@dataclass
class HyperConfig:
    """Fixed hyperparameters and sampler settings.

    Wishart parameters follow E[W(df, scale)] = df * scale; gamma parameters
    are (shape, rate).
    """

    m_b: np.ndarray
    V_b_inv: np.ndarray
    a_delta: float
    b_delta: float
    a_vec: np.ndarray
    A: np.ndarray
    c: float
    C: np.ndarray
    q: float
    R: np.ndarray
    s_df: float
    a_alpha: float
    b_alpha: float
    neal_aux_m: int = 3
    iterations: int = 2000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("m_b", "a_vec"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("V_b_inv", "A", "C", "R"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("a_delta", "b_delta", "c", "q", "s_df", "a_alpha", "b_alpha"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("neal_aux_m", "iterations", "burn_in", "thin", "seed"):
            setattr(self, name, int(getattr(self, name)))

    @property
    def D(self) -> int:
        return len(self.a_vec)

    @property
    def p(self) -> int:
        return len(self.m_b)

    @classmethod
    def default(cls, p: int, D: int, **overrides) -> "HyperConfig":
        """Weakly informative defaults used by the demo and the tests."""
        kw = dict(
            m_b=np.zeros(p),
            V_b_inv=np.eye(p) / 100.0,
            a_delta=3.0,
            b_delta=0.5,
            a_vec=np.zeros(D),
            A=np.eye(D) * 4.0,
            c=D + 3.0,
            C=np.eye(D),
            q=D + 3.0,
            R=np.eye(D) * 0.1,
            s_df=D + 3.0,
            a_alpha=1.0,
            b_alpha=1.0,
        )
        kw.update(overrides)
        return cls(**kw)

    def validate(self, D: int | None = None, p: int | None = None) -> None:
        Dm = self.D
        if D is not None and D != Dm:
            raise ValueError(f"config has D={Dm} but dataset has D={D}")
        if p is not None and p != self.p:
            raise ValueError(f"config has p={self.p} but dataset has p={p}")
        if self.V_b_inv.shape != (self.p, self.p):
            raise ValueError("V_b_inv must be p x p")
        vb = self.V_b_inv
        if np.any(vb != 0) and not (np.allclose(vb, vb.T) and np.all(np.linalg.eigvalsh(vb) >= 0)):
            raise ValueError("V_b_inv must be symmetric positive semi-definite")
        for name in ("A", "C", "R"):
            mat = getattr(self, name)
            if mat.shape != (Dm, Dm):
                raise ValueError(f"{name} must be {Dm} x {Dm}")
            if not kernels.is_spd(mat):
                raise ValueError(f"{name} must be symmetric positive definite")
        for name in ("c", "q", "s_df"):
            if not getattr(self, name) > Dm - 1:
                raise ValueError(f"{name} must exceed D-1={Dm - 1}")
        for name in ("a_delta", "b_delta", "a_alpha", "b_alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.neal_aux_m < 1 or self.thin < 1 or self.iterations < 1:
            raise ValueError("neal_aux_m, iterations and thin must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be in [0, iterations)")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict, p: int | None = None, D: int | None = None) -> "HyperConfig":
        """Build from a dict; with ``p`` and ``D`` missing keys take :meth:`default` values."""
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if p is not None and D is not None:
            return cls.default(p, D, **d)
        missing = {f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING} - set(d)
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        return cls(**d)


@dataclass
class Atom:
    """Cluster parameters; the precision and its Cholesky factor are cached."""

    mu: np.ndarray
    prec: np.ndarray
    prec_chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.prec_chol is None:
            self.prec_chol = kernels.cholesky(self.prec, jitter=True)

    @property
    def Sigma(self) -> np.ndarray:
        return kernels.spd_inverse(self.prec, jitter=True)

    @classmethod
    def from_cov(cls, mu, Sigma) -> "Atom":
        return cls(np.asarray(mu, dtype=float), kernels.spd_inverse(Sigma))


@dataclass
class ClusterState:
    """Assignment of counties to DP atoms.

    Labels are opaque integers; a label is never reused after its cluster
    empties.
    """

    assignment: np.ndarray
    atoms: dict
    next_label: int = 0

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.atoms:
            self.next_label = max(self.next_label, max(self.atoms) + 1)

    @property
    def k(self) -> int:
        return len(self.atoms)

    @property
    def sizes(self) -> dict:
        labels, counts = np.unique(self.assignment, return_counts=True)
        return dict(zip(labels.tolist(), counts.tolist()))

    def new_label(self) -> int:
        lab = self.next_label
        self.next_label += 1
        return lab

    def check(self) -> None:
        sizes = self.sizes
        if set(sizes) != set(self.atoms):
            raise AssertionError("assignment labels and atoms disagree")
        if sum(sizes.values()) != len(self.assignment):
            raise AssertionError("cluster sizes do not sum to I")

    def canonical(self) -> tuple[np.ndarray, list]:
        """Relabel clusters 0..k-1 in order of first appearance."""
        order = []
        seen = set()
        for lab in self.assignment.tolist():
            if lab not in seen:
                seen.add(lab)
                order.append(lab)
        remap = {lab: j for j, lab in enumerate(order)}
        return np.array([remap[lab] for lab in self.assignment.tolist()], dtype=np.int64), [self.atoms[lab] for lab in order]


@dataclass
class ModelState:
    b: np.ndarray
    beta: np.ndarray  # (I, D)
    nu: np.ndarray  # (S,)
    delta_sq: np.ndarray  # (M,)
    clusters: ClusterState
    m: np.ndarray
    B: np.ndarray
    S: np.ndarray
    alpha: float

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def cell_predictor(state: ModelState, dataset: Dataset) -> np.ndarray:
    """Linear predictor for every cell of ``dataset``."""
    lay = dataset.layout
    return (
        dataset.X @ state.b
        + state.beta[lay.cell_county, lay.cell_domain]
        + state.nu[lay.cell_stratum]
    )


def linear_predictor(state: ModelState, dataset: Dataset, rec: CellRecord) -> float:
    lay = dataset.layout
    hit = np.flatnonzero(lay.county_ids == rec.county)
    if hit.size == 0:
        raise KeyError(f"unknown county {rec.county}")
    i = int(hit[0])
    s = lay.county_stratum[i]
    return float(np.dot(rec.x, state.b) + state.beta[i, rec.domain - 1] + state.nu[s])


def binomial_loglik(y, n, eta) -> np.ndarray:
    """Per-cell y*log(p) + (n-y)*log(1-p) at p = expit(eta).

    The binomial coefficient is omitted; it cancels in every acceptance ratio.
    """
    return y * eta - n * np.logaddexp(0.0, eta)


def county_loglik(state: ModelState, dataset: Dataset, county_id) -> float:
    """Log-likelihood of one county's cells, without binomial coefficients."""
    lay = dataset.layout
    hit = np.flatnonzero(lay.county_ids == county_id)
    if hit.size == 0:
        raise KeyError(f"unknown county {county_id}")
    mask = lay.cell_county == hit[0]
    eta = cell_predictor(state, dataset)[mask]
    return float(binomial_loglik(dataset.y[mask], dataset.n[mask], eta).sum())


def loglik_by_county(dataset: Dataset, eta: np.ndarray) -> np.ndarray:
    lay = dataset.layout
    ll = binomial_loglik(dataset.y, dataset.n, eta)
    return np.bincount(lay.cell_county, weights=ll, minlength=lay.I)
