"""Configuration-driven chain runs, histograms and comparisons with limits.

Alleles and loci are 1-based in configuration files and CSV output and
0-based everywhere in the Python API.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .breeding import ProductBreeding, effective_alpha
from .errors import ConfigError, InvalidArgument
from .genotype import AlleleSpace, as_alpha_per_locus, scaled_weights
from .kernels import DiscreteDistribution, Kernel, KernelConfig, LuckConfig
from .limits import LimitPrediction, predict_limit

BATCHES = 100
DEFAULT_THRESHOLDS = {"point": 0.02, "density": 0.08, "mixture": 0.05}

# file key -> dataclass attribute, where they differ
_KEY_ALIASES = {"lambda": "lam", "alpha": "base_alpha"}


def _version() -> str:
    from . import __version__
    return __version__


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a set of chain runs.

    The file format is flat YAML whose keys are the field names, except
    that ``lambda`` is stored in ``lam``.  ``allele`` and ``locus`` are
    1-based.
    """

    K: int = 2
    L: int = 1
    base_alpha: Any = (0.3, 0.7)
    phi: Any = (0.0, float(np.log(6.0)))
    lam: float = 0.0
    prior_scaling: str = "scaled"
    n: Any = (100,)
    kernel: str = "inverse_fitness"
    tournament_rule: str | None = None
    m_distribution: Any = None
    t_distribution: Any = None
    steps: int = 10_000_000
    burn_in: int = 1_000_000
    thinning: int = 100
    seed: int = 0
    replicates: int = 1
    luck: Any = None
    niche_weights: Any = None
    bins: int = 200
    allele: int = 1
    locus: int = 1
    threshold: float | None = None
    trajectory: bool = False
    workers: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        try:
            self._normalise()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def _normalise(self):
        for name in ("K", "L", "steps", "burn_in", "thinning", "seed", "replicates", "bins",
                     "allele", "locus", "workers"):
            v = getattr(self, name)
            if isinstance(v, str):
                v = float(v)
            if float(v) != int(float(v)):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            setattr(self, name, int(float(v)))
        self.lam = float(self.lam)
        ns = self.n if isinstance(self.n, (list, tuple, np.ndarray)) else [self.n]
        self.n = [int(float(v)) for v in ns]
        self.space  # validates K, L
        self.base_alpha = [list(map(float, a)) for a in as_alpha_per_locus(self.base_alpha, self.L)]
        if any(len(a) != self.K for a in self.base_alpha):
            raise ConfigError(f"each alpha vector needs {self.K} entries")
        self.phi = [float(v) for v in np.asarray(self.phi, dtype=float).ravel()]
        if len(self.phi) != self.K ** self.L:
            raise ConfigError(f"phi needs {self.K ** self.L} entries (one per genome)")
        if self.prior_scaling not in ("fixed", "scaled"):
            raise ConfigError("prior_scaling must be 'fixed' or 'scaled'")
        if self.prior_scaling == "scaled" and not 0.0 <= self.lam <= 1.0:
            raise ConfigError("a scaled prior needs lambda in [0, 1]")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if min(self.n) < 1:
            raise ConfigError("population sizes must be >= 1")
        if self.thinning < 1:
            raise ConfigError("thinning must be >= 1")
        if not 0 <= self.burn_in < self.steps:
            raise ConfigError("need 0 <= burn_in < steps")
        if self.replicates < 1 or self.workers < 1:
            raise ConfigError("replicates and workers must be >= 1")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        if not (1 <= self.allele <= self.K and 1 <= self.locus <= self.L):
            raise ConfigError("allele/locus out of range (1-based)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        self.m_distribution = _as_dist(self.m_distribution)
        self.t_distribution = _as_dist(self.t_distribution)
        if self.luck is not None and not isinstance(self.luck, LuckConfig):
            d = _as_dist(self.luck)
            self.luck = LuckConfig(d)
        self.kernel_config  # validates the kernel fields

    @property
    def space(self) -> AlleleSpace:
        return AlleleSpace(self.K, self.L)

    @property
    def kernel_config(self) -> KernelConfig:
        try:
            return KernelConfig(self.kernel, self.tournament_rule, self.m_distribution,
                                self.t_distribution)
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def alpha(self):
        return self.base_alpha[0] if self.L == 1 else self.base_alpha

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, value in (data or {}).items():
            attr = _KEY_ALIASES.get(key, key)
            if attr not in names:
                raise ConfigError(f"unknown configuration key {key!r}")
            kw[attr] = value
        return cls(**kw)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping of keys to values")
        data.update(overrides or {})
        return cls.from_mapping(data)

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({_inv_alias(k): v for k, v in kw.items()})
        return ExperimentConfig.from_mapping(d)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, DiscreteDistribution):
                v = v.to_dict()
            elif isinstance(v, LuckConfig):
                v = v.to_dict()
            elif isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = list(v)
            out[_inv_alias(f.name)] = v
        return out


def _inv_alias(name: str) -> str:
    return {"lam": "lambda"}.get(name, name)


def _as_dist(spec):
    if spec is None or isinstance(spec, DiscreteDistribution):
        return spec
    if isinstance(spec, LuckConfig):
        return spec.distribution
    if isinstance(spec, dict):
        values = spec.get("values")
        probs = spec.get("probs")
        if probs is None:
            probs = np.full(len(values), 1.0 / len(values))
        return DiscreteDistribution(values, probs)
    if np.isscalar(spec):
        return DiscreteDistribution.point(float(spec))
    values = list(spec)
    return DiscreteDistribution(values, np.full(len(values), 1.0 / len(values)))


@dataclass
class ChainRecord:
    """Output of one chain: recorded per-locus counts after burn-in."""

    n: int
    counts: np.ndarray  # (R, L, K)
    alpha_used: list
    weights_used: np.ndarray
    steps: int
    burn_in: int
    thinning: int
    luck_table: np.ndarray | None = None  # (R, A, K**L)

    @property
    def record_steps(self) -> np.ndarray:
        return self.burn_in + self.thinning * (1 + np.arange(self.counts.shape[0]))


def chain_parameters(config: ExperimentConfig, n: int):
    """Urn prior and weights used at population size ``n``."""
    if config.prior_scaling == "scaled":
        alpha = [effective_alpha(a, n, config.lam) for a in config.base_alpha]
    else:
        alpha = [np.asarray(a, dtype=float) for a in config.base_alpha]
    return alpha, scaled_weights(config.phi, n, config.lam)


def run_chain(config: ExperimentConfig, n: int, rng, *, luck_table: bool = False) -> ChainRecord:
    """Run one chain at size ``n`` from a population sampled from the urn.

    Records per-locus counts every ``thinning`` generations after
    ``burn_in``.
    """
    alpha, w = chain_parameters(config, n)
    breeding = ProductBreeding(tuple(alpha))
    niche = None
    if config.niche_weights is not None:
        niche = np.asarray(config.niche_weights, dtype=float)
        if niche.shape[0] != n:
            raise ConfigError(f"niche_weights has {niche.shape[0]} rows, population size is {n}")
    kernel = Kernel(config.kernel_config, breeding, w, config.luck, niche)
    pop = breeding.sample_population(n, rng)
    chain = kernel.chain(pop, rng)
    counts, _, table = chain.run(config.steps, config.burn_in, config.thinning, rng,
                                 luck_table=luck_table)
    return ChainRecord(n, counts, [a.tolist() for a in alpha], w, config.steps, config.burn_in,
                       config.thinning, table)


@dataclass(frozen=True)
class FrequencyHistogram:
    """Normalised histogram of one allele's frequency (or of two loci jointly).

    ``masses`` has shape ``(B,)`` for one locus and ``(B, B)`` when
    ``locus`` is a pair.  Bins are ``[j/B, (j+1)/B)`` with the last one
    closed.  ``mean``/``sd`` come from the raw samples; ``stderr`` is the
    batch-means standard error of the mean.
    """

    edges: np.ndarray
    masses: np.ndarray
    n: int | None
    allele: int
    locus: Any
    sample_count: int
    mean: Any
    sd: Any
    stderr: Any

    @property
    def bins(self) -> int:
        return self.edges.size - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            if self.masses.ndim == 1:
                wr.writerow(["bin_left", "bin_right", "mass"])
                for lo, hi, m in zip(self.edges[:-1], self.edges[1:], self.masses):
                    wr.writerow([_fmt(lo), _fmt(hi), _fmt(m)])
            else:
                wr.writerow(["bin1_left", "bin1_right", "bin2_left", "bin2_right", "mass"])
                e = self.edges
                for i in range(self.bins):
                    for j in range(self.bins):
                        wr.writerow([_fmt(e[i]), _fmt(e[i + 1]), _fmt(e[j]), _fmt(e[j + 1]),
                                     _fmt(self.masses[i, j])])

    @classmethod
    def from_csv(cls, path, allele: int = 0, locus: int = 0) -> "FrequencyHistogram":
        """Read a one-dimensional histogram; moments are taken at bin midpoints."""
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read histogram {path}: {exc}") from exc
        if data.shape[1] != 3:
            raise ConfigError("histogram CSV must have columns bin_left, bin_right, mass")
        edges = np.append(data[:, 0], data[-1, 1])
        masses = data[:, 2] / data[:, 2].sum()
        mid = 0.5 * (data[:, 0] + data[:, 1])
        mean = float(masses @ mid)
        sd = float(np.sqrt(masses @ (mid - mean) ** 2))
        return cls(edges, masses, None, allele, locus, 0, mean, sd, None)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _batch_stderr(x: np.ndarray, batches: int = BATCHES) -> float:
    if x.shape[0] < 2 * batches:
        return float(np.std(x, ddof=1) / np.sqrt(x.shape[0])) if x.shape[0] > 1 else float("nan")
    size = x.shape[0] // batches
    means = x[: size * batches].reshape(batches, size, *x.shape[1:]).mean(axis=1)
    return np.std(means, ddof=1, axis=0) / np.sqrt(batches)


def build_histogram(stream, bins: int = 200, *, allele: int = 0, locus=0,
                    n: int | None = None) -> FrequencyHistogram:
    """Histogram of the frequency of ``allele`` at ``locus``.

    Parameters
    ----------
    stream : ChainRecord or array_like
        A chain record, an array of per-locus counts ``(R, L, K)`` or
        ``(R, K)`` (then ``n`` is inferred from the row sums), or a 1-D
        array of frequencies in ``[0, 1]``.
    locus : int or pair of int
        A pair produces the joint two-dimensional histogram.
    """
    if bins < 2:
        raise InvalidArgument("need at least 2 bins")
    if isinstance(stream, ChainRecord):
        n = stream.n
        stream = stream.counts
    arr = np.asarray(stream)
    if arr.size == 0:
        raise InvalidArgument("empty stream")
    loci = tuple(locus) if isinstance(locus, (tuple, list)) else (locus,)
    if arr.ndim == 1:
        if len(loci) != 1:
            raise InvalidArgument("a frequency stream has a single locus")
        freq = arr.astype(float)[:, None]
        if np.any(freq < 0) or np.any(freq > 1):
            raise InvalidArgument("frequencies must lie in [0, 1]")
        idx = np.minimum((freq * bins).astype(np.int64), bins - 1)
    else:
        if arr.ndim == 2:
            arr = arr[:, None, :]
        c = arr[:, list(loci), allele].astype(np.int64)
        tot = arr[:, 0, :].sum(axis=1)
        if n is None:
            n = int(tot[0])
        if np.any(tot != n):
            raise InvalidArgument("count vectors do not all sum to n")
        idx = np.minimum(c * bins // n, bins - 1)
        freq = c / n
    edges = np.linspace(0.0, 1.0, bins + 1)
    R = freq.shape[0]
    if len(loci) == 1:
        masses = np.bincount(idx[:, 0], minlength=bins) / R
        f = freq[:, 0]
        return FrequencyHistogram(edges, masses, n, allele, loci[0], R, float(f.mean()),
                                  float(f.std()), float(_batch_stderr(f)))
    flat = idx[:, 0] * bins + idx[:, 1]
    masses = (np.bincount(flat, minlength=bins * bins) / R).reshape(bins, bins)
    return FrequencyHistogram(edges, masses, n, allele, loci, R, freq.mean(axis=0),
                              freq.std(axis=0), _batch_stderr(freq))


@dataclass(frozen=True)
class ComparisonReport:
    kind: str
    distance: float
    passed: bool
    threshold: float
    mean_error: float | None = None
    sd: float | None = None
    tv: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "distance": self.distance, "pass": bool(self.passed),
             "threshold": self.threshold}
        for k in ("mean_error", "sd", "tv"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        d.update(self.details)
        return d


def compare_to_prediction(hist: FrequencyHistogram, pred: LimitPrediction,
                          threshold: float | None = None) -> ComparisonReport:
    """Distance between an empirical histogram and a predicted limit.

    Point masses: ``mean_error = |mean - target|`` decides pass/fail
    against ``threshold``; ``distance = sqrt(mean_error**2 + sd**2)`` is the
    2-Wasserstein distance of the samples to the point.  Densities: total
    variation over the histogram's bins.  Mixtures (joint two-locus
    histogram): bins are assigned to the nearest atom; ``distance`` is the
    largest gap between an atom and its cell's mean and ``tv`` compares cell
    masses with the mixture weights.
    """
    kind = pred.kind
    thr = DEFAULT_THRESHOLDS[kind] if threshold is None else float(threshold)
    if kind == "point":
        if hist.masses.ndim != 1:
            raise InvalidArgument("point predictions compare against a one-locus histogram")
        target = pred.frequency_limit(hist.allele, hist.locus)
        err = abs(hist.mean - target)
        dist = float(np.hypot(err, hist.sd))
        return ComparisonReport(kind, dist, err <= thr, thr, float(err), float(hist.sd),
                                details={"target": target, "mean": hist.mean})
    if kind == "density":
        if hist.masses.ndim != 1:
            raise InvalidArgument("density predictions compare against a one-locus histogram")
        ref = pred.density.bin_masses(hist.edges, hist.allele, hist.locus)
        tv = 0.5 * float(np.abs(hist.masses - ref).sum())
        return ComparisonReport(kind, tv, tv < thr, thr, tv=tv)
    if pred.mixture is None:
        raise InvalidArgument("mixture prediction has no weights (non-definite Hessian)")
    if hist.masses.ndim != 2:
        raise InvalidArgument("mixture predictions compare against a joint two-locus histogram")
    sp = pred.space
    loci = hist.locus
    atoms = np.array([[a.q @ sp.locus_projection(l)[:, hist.allele] for l in loci]
                      for _, a in pred.mixture])
    weights = np.array([p for p, _ in pred.mixture])
    cx, cy = np.meshgrid(hist.centers, hist.centers, indexing="ij")
    pts = np.stack([cx.ravel(), cy.ravel()], axis=1)
    owner = np.argmin(((pts[:, None, :] - atoms[None, :, :]) ** 2).sum(axis=2), axis=1)
    m = hist.masses.ravel()
    cell_mass = np.bincount(owner, weights=m, minlength=len(atoms))
    cell_mean = np.stack([np.bincount(owner, weights=m * pts[:, j], minlength=len(atoms))
                          for j in range(2)], axis=1) / np.maximum(cell_mass, 1e-300)[:, None]
    gap = float(np.max(np.abs(cell_mean - atoms)))
    tv = 0.5 * float(np.abs(cell_mass - weights).sum())
    return ComparisonReport(kind, gap, gap <= thr and tv <= thr, thr, tv=tv,
                            details={"atoms": atoms.tolist(), "cell_mass": cell_mass.tolist(),
                                     "cell_mean": cell_mean.tolist()})


def _histogram_for(config: ExperimentConfig, pred: LimitPrediction | None, counts, n):
    allele, locus = config.allele - 1, config.locus - 1
    if pred is not None and pred.kind == "mixture" and config.L == 2:
        locus = (0, 1)
    return build_histogram(counts, config.bins, allele=allele, locus=locus, n=n)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dump_json(obj, path=None, **kw) -> str:
    text = json.dumps(obj, default=_json_default, indent=2, **kw)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def run_suite(config: ExperimentConfig, *, workers: int | None = None,
              out_dir: str | None = None) -> dict:
    """Run every configured population size and compare with the limit.

    Per-chain seeds come from spawning ``SeedSequence(seed)`` in (n,
    replicate) order, so results do not depend on ``workers``.  Returns the
    summary mapping (also written as ``summary.json`` with per-n CSV files
    when ``out_dir`` is set).
    """
    workers = config.workers if workers is None else int(workers)
    out_dir = config.out_dir if out_dir is None else out_dir
    pred = predict_limit(config, rng=np.random.default_rng(config.seed))
    children = np.random.SeedSequence(config.seed).spawn(len(config.n) * config.replicates)
    jobs = [(n, children[i * config.replicates + r])
            for i, n in enumerate(config.n) for r in range(config.replicates)]

    def work(job):
        n, ss = job
        return run_chain(config, n, np.random.default_rng(ss))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    per_run = []
    for i, n in enumerate(config.n):
        recs = records[i * config.replicates:(i + 1) * config.replicates]
        counts = np.concatenate([r.counts for r in recs])
        hist = _histogram_for(config, pred, counts, n)
        rep = compare_to_prediction(hist, pred, config.threshold)
        entry = {"n": n, "mean": hist.mean, "sd": hist.sd, "stderr": hist.stderr,
                 "samples": hist.sample_count, "distance": rep.distance, "pass": bool(rep.passed),
                 "comparison": rep.to_dict(), "alpha_used": recs[0].alpha_used,
                 "weights_used": recs[0].weights_used.tolist()}
        per_run.append(entry)
        if out_dir:
            hist.to_csv(os.path.join(out_dir, f"hist_n{n}.csv"))
            if config.trajectory:
                for r, rec in enumerate(recs):
                    suffix = f"_r{r + 1}" if config.replicates > 1 else ""
                    write_trajectory(rec, os.path.join(out_dir, f"traj_n{n}{suffix}.csv"))
    summary = {"config_echo": config.to_dict(), "prediction": pred.to_json(), "per_run": per_run,
               "seed": config.seed, "version": _version(),
               "budget": {"steps": config.steps, "burn_in": config.burn_in,
                          "thinning": config.thinning, "bins": config.bins}}
    if out_dir:
        dump_json(summary, os.path.join(out_dir, "summary.json"))
    return summary


def write_trajectory(rec: ChainRecord, path) -> None:
    """CSV of recorded counts: ``step, n_1, ..., n_K`` (``n_l_k`` for several loci)."""
    L, K = rec.counts.shape[1:]
    if L == 1:
        header = [f"n_{k + 1}" for k in range(K)]
    else:
        header = [f"n_{l + 1}_{k + 1}" for l in range(L) for k in range(K)]
    flat = rec.counts.reshape(rec.counts.shape[0], -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step"] + header)
        for s, row in zip(rec.record_steps, flat):
            wr.writerow([int(s)] + [int(v) for v in row])
