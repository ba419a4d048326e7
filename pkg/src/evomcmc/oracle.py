"""Exact computations on small instances.

Two granularities are supported: ordered populations (states in
``X^n``), where detailed balance is meaningful, and count vectors
(states in the lattice ``{c : sum(c) = n}``), which scale much further
for stationarity checks.  The transition probabilities here are assembled
analytically and share no code with the compiled chain engine.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import gammaln, logsumexp

from .breeding import DirichletCategorical, joint_log_prob
from .errors import BudgetExceeded, ConvergenceError, InvalidArgument, UnsupportedKernel
from .genotype import AlleleSpace, as_alpha_per_locus
from .kernels import KernelConfig

FULL_STATE_BUDGET = 20_000
COUNT_STATE_BUDGET = 2_000_000


@dataclass(frozen=True)
class CountDistribution:
    """Probability measure on genome-type count vectors summing to ``n``."""

    space: AlleleSpace
    support: np.ndarray  # (S, K**L) counts
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-10:
            raise InvalidArgument("count distribution must be nonnegative and sum to 1")

    @property
    def n(self) -> int:
        return int(self.support[0].sum())

    def locus_counts(self, locus: int = 0) -> np.ndarray:
        """Support projected onto allele counts at one locus, shape ``(S, K)``."""
        return self.support @ self.space.locus_projection(locus)

    def frequency_law(self, allele: int = 0, locus: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Exact law of the allele frequency ``n_k / n`` (values, probabilities)."""
        c = self.locus_counts(locus)[:, allele]
        p = np.bincount(c, weights=self.probs, minlength=self.n + 1)
        return np.arange(self.n + 1) / self.n, p

    def mean_frequency(self, allele: int = 0, locus: int = 0) -> float:
        f, p = self.frequency_law(allele, locus)
        return float(f @ p)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in s): float(p) for s, p in zip(self.support, self.probs)}


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix over enumerated states.

    ``states`` holds ordered populations (flat genome indices, shape
    ``(S, n)``) in full mode or count vectors in lumped mode.
    """

    space: AlleleSpace
    states: np.ndarray
    rows: np.ndarray
    mode: str = "ordered"

    def __post_init__(self):
        T = self.rows
        if T.shape != (len(self.states), len(self.states)):
            raise InvalidArgument("matrix shape does not match the state list")
        if np.any(T < 0) or np.max(np.abs(T.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidArgument("rows must be nonnegative and sum to 1")

    def index(self, state) -> int:
        G = self.space.size
        if self.mode != "ordered":
            raise InvalidArgument("index lookup is for ordered states")
        return int(np.asarray(state) @ (G ** np.arange(len(state) - 1, -1, -1)))


def compositions(n: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``n``, lexicographically descending."""
    out = []
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(n + parts - 1 - prev - 1)
        out.append(row)
    arr = np.array(out, dtype=np.int64).reshape(-1, parts)
    return arr[np.lexsort(arr.T[::-1])][::-1]


def _procs(alpha, space: AlleleSpace) -> list[DirichletCategorical]:
    return [DirichletCategorical(a) for a in as_alpha_per_locus(alpha, space.L)]


def _space_for(alpha, w, space) -> AlleleSpace:
    if space is not None:
        return space
    a = as_alpha_per_locus(alpha, 1) if np.ndim(alpha) == 1 else list(alpha)
    return AlleleSpace(len(a[0]), len(a))


def _log_breeding(locus_counts_per_locus, procs) -> np.ndarray:
    """Vectorised log-probability of an ordered sequence given per-locus counts ``(S, K)`` each."""
    total = 0.0
    for c, p in zip(locus_counts_per_locus, procs):
        a = p.alpha
        total = total + (np.sum(gammaln(a[None, :] + c) - gammaln(a)[None, :], axis=1)
                         - (gammaln(p.alpha_total + c.sum(axis=1)) - gammaln(p.alpha_total)))
    return total


def stationary_counts(n: int, alpha_effective, w, *, space: AlleleSpace | None = None,
                      budget: int = COUNT_STATE_BUDGET) -> CountDistribution:
    """Exact stationary law over genome-type counts.

    ``P(c) ∝ multinomial(n; c) * P_breed(any sequence with counts c) * prod_g w(g)**c_g``,
    all in log space and normalised by log-sum-exp.
    """
    space = _space_for(alpha_effective, w, space)
    G = space.size
    w = np.asarray(w, dtype=float).ravel()
    if w.size != G or np.any(w <= 0):
        raise InvalidArgument(f"need {G} strictly positive weights")
    size = comb(n + G - 1, G - 1)
    if size > budget:
        raise BudgetExceeded(f"{size} count states exceed the budget of {budget}")
    procs = _procs(alpha_effective, space)
    support = compositions(n, G)
    per_locus = [support @ space.locus_projection(l) for l in range(space.L)]
    logp = (gammaln(n + 1) - gammaln(support + 1).sum(axis=1)
            + _log_breeding(per_locus, procs) + support @ np.log(w))
    probs = np.exp(logp - logsumexp(logp))
    return CountDistribution(space, support, probs)


def _ordered_states(n: int, G: int, budget: int) -> np.ndarray:
    if G ** n > budget:
        raise BudgetExceeded(f"{G ** n} ordered states exceed the budget of {budget}")
    return np.array(list(itertools.product(range(G), repeat=n)), dtype=np.int64).reshape(-1, n)


def stationary_ordered(n: int, alpha_effective, w, *, space: AlleleSpace | None = None,
                       niche_weights=None, budget: int = FULL_STATE_BUDGET):
    """Closed-form stationary law on ordered populations.

    Breeding term times fitness term; with ``niche_weights`` (one table per
    position) the fitness term is ``prod_j w_j(x_j)`` instead.  Returns
    ``(states, probs)``.
    """
    space = _space_for(alpha_effective, w, space)
    G = space.size
    states = _ordered_states(n, G, budget)
    procs = _procs(alpha_effective, space)
    genomes = space.genomes
    per_locus = [np.stack([np.bincount(row, minlength=space.K) for row in genomes[states, l]])
                 for l in range(space.L)]
    logp = _log_breeding(per_locus, procs)
    if niche_weights is not None:
        nw = np.asarray(niche_weights, dtype=float)
        logp = logp + np.log(nw[np.arange(n)[None, :], states]).sum(axis=1)
    else:
        logp = logp + np.log(np.asarray(w, dtype=float))[states].sum(axis=1)
    return states, np.exp(logp - logsumexp(logp))


def _breed_probs(locus_counts, procs, genomes) -> np.ndarray:
    p = np.ones(genomes.shape[0])
    for l, proc in enumerate(procs):
        p *= proc.predictive(locus_counts[l])[genomes[:, l]]
    return p


def _tickets(ext_w, n, m, t):
    """Exact law of the final ticket holders after ``t`` tournaments.

    Returns a dict ``slots_tuple -> probability`` where ``slots[a]`` is the
    extended-population index holding the ticket of slot ``a``.
    """
    dist = {(tuple(range(n)), tuple(range(n, n + m))): 1.0}
    if m == 0:
        t = 0
    for _ in range(t):
        nxt = {}
        for (slots, non), p in dist.items():
            base = p / (n * m)
            for a in range(n):
                for b in range(m):
                    i, j = slots[a], non[b]
                    keep = ext_w[i] / (ext_w[i] + ext_w[j])
                    key = (slots, non)
                    nxt[key] = nxt.get(key, 0.0) + base * keep
                    s2 = slots[:a] + (j,) + slots[a + 1:]
                    n2 = non[:b] + (i,) + non[b + 1:]
                    nxt[(s2, n2)] = nxt.get((s2, n2), 0.0) + base * (1.0 - keep)
        dist = nxt
    out = {}
    for (slots, _), p in dist.items():
        out[slots] = out.get(slots, 0.0) + p
    return out


def full_transition_matrix(kernel_cfg: KernelConfig, n: int, alpha_effective, w, *,
                           space: AlleleSpace | None = None, niche_weights=None,
                           budget: int = FULL_STATE_BUDGET) -> TransitionMatrix:
    """Exact one-step kernel on ordered populations.

    Single tournament: breed probability, times ``1/n`` for the challenged
    slot, times the win probability; rejected children leave the state
    unchanged.  Inverse fitness: ejection over the ``n + 1`` individuals with
    probability ``∝ 1 / w``.  Niche: the challenged slot's own weight table.
    Breed-many: offspring sequences and every tournament ordering are
    enumerated, for ``m <= 2`` and ``t <= 2``.
    """
    space = _space_for(alpha_effective, w, space)
    G = space.size
    w = np.asarray(w, dtype=float).ravel()
    states = _ordered_states(n, G, budget)
    procs = _procs(alpha_effective, space)
    genomes = space.genomes
    place = G ** np.arange(n - 1, -1, -1)
    S = len(states)
    T = np.zeros((S, S))
    kind = kernel_cfg.kind
    if kind == "niche":
        if niche_weights is None:
            raise InvalidArgument("niche kernel needs niche weight tables")
        nw = np.asarray(niche_weights, dtype=float)
        if nw.shape != (n, G):
            raise InvalidArgument(f"niche weights must have shape ({n}, {G})")
    if kind == "breed_many":
        m_law = list(zip(kernel_cfg.m_distribution.as_counts(1), kernel_cfg.m_distribution.probs))
        t_law = list(zip(kernel_cfg.t_distribution.as_counts(0), kernel_cfg.t_distribution.probs))
        if max(m for m, _ in m_law) > 2 or max(t for t, _ in t_law) > 2:
            raise UnsupportedKernel("exact breed_many matrices need m <= 2 and t <= 2")

    for s, x in enumerate(states):
        counts = [np.bincount(genomes[x, l], minlength=space.K) for l in range(space.L)]
        if kind == "breed_many":
            for m, pm in m_law:
                for t, pt in t_law:
                    _breed_many_row(T, s, x, counts, procs, genomes, w, place, m, t, pm * pt)
            continue
        pb = _breed_probs(counts, procs, genomes)
        for g in range(G):
            if pb[g] == 0:
                continue
            if kind == "inverse_fitness":
                inv = np.append(1.0 / w[x], 1.0 / w[g])
                eject = inv / inv.sum()
                T[s, s] += pb[g] * eject[-1]
                for i in range(n):
                    T[s, s + (g - x[i]) * place[i]] += pb[g] * eject[i]
                continue
            for i in range(n):
                if kind == "niche":
                    wn, wo = nw[i, g], nw[i, x[i]]
                    acc = wn / (wn + wo)
                elif kernel_cfg.tournament_rule == "metropolis_min":
                    acc = min(1.0, w[g] / w[x[i]])
                else:
                    acc = w[g] / (w[g] + w[x[i]])
                T[s, s + (g - x[i]) * place[i]] += pb[g] * acc / n
                T[s, s] += pb[g] * (1.0 - acc) / n
    return TransitionMatrix(space, states, T)


def _breed_many_row(T, s, x, counts, procs, genomes, w, place, m, t, weight):
    n = len(x)
    for kids in itertools.product(range(genomes.shape[0]), repeat=m):
        p = weight
        c = [cl.copy() for cl in counts]
        for g in kids:
            p *= _breed_probs(c, procs, genomes)[g]
            for l in range(len(c)):
                c[l][genomes[g, l]] += 1
        if p == 0:
            continue
        ext = np.concatenate([x, np.asarray(kids, dtype=np.int64)])
        for slots, q in _tickets(w[ext], n, m, t).items():
            dest = int(ext[list(slots)] @ place)
            T[s, dest] += p * q


def check_detailed_balance(pi, T) -> tuple[float, tuple[int, int]]:
    """Largest ``|pi(x) T(x, y) - pi(y) T(y, x)|`` and the pair attaining it."""
    rows = T.rows if isinstance(T, TransitionMatrix) else np.asarray(T)
    pi = np.asarray(pi, dtype=float)
    if rows.shape != (pi.size, pi.size):
        raise InvalidArgument(f"dimension mismatch: pi {pi.shape} vs T {rows.shape}")
    flux = pi[:, None] * rows
    viol = np.abs(flux - flux.T)
    i, j = np.unravel_index(int(np.argmax(viol)), viol.shape)
    return float(viol[i, j]), (int(i), int(j))


def power_iteration(T, tol: float = 1e-14, max_iters: int = 1_000_000) -> np.ndarray:
    """Stationary vector by repeated ``v <- v T`` from the uniform vector."""
    rows = T.rows if isinstance(T, TransitionMatrix) else np.asarray(T, dtype=float)
    v = np.full(rows.shape[0], 1.0 / rows.shape[0])
    for _ in range(max_iters):
        nv = v @ rows
        nv /= nv.sum()
        if np.abs(nv - v).sum() < tol:
            return nv
        v = nv
    raise ConvergenceError(f"power iteration did not reach {tol} in {max_iters} iterations")


def lump_to_counts(probs, states, space: AlleleSpace) -> CountDistribution:
    """Sum ordered-state probabilities over permutation orbits."""
    states = np.asarray(states)
    n = states.shape[1]
    support = compositions(n, space.size)
    key = {tuple(r): i for i, r in enumerate(support)}
    out = np.zeros(len(support))
    counts = np.stack([np.bincount(row, minlength=space.size) for row in states])
    for c, p in zip(counts, np.asarray(probs, dtype=float)):
        out[key[tuple(c)]] += p
    return CountDistribution(space, support, out)


def marginal_probability(dist: CountDistribution, m: int, genomes) -> float:
    """``P(X_1..X_m = genomes)`` under the exchangeable law with these counts.

    Each count vector contributes its probability times the chance that an
    ordered draw without replacement yields the given prefix:
    ``prod_g (c_g)_(m_g) / (n)_m`` with falling factorials.
    """
    genomes = np.asarray(genomes, dtype=np.int64).ravel()
    n = dist.n
    if m != genomes.size:
        raise InvalidArgument("prefix length does not match the genome list")
    if m > n:
        raise InvalidArgument(f"prefix length {m} exceeds population size {n}")
    need = np.bincount(genomes, minlength=dist.space.size)
    c = dist.support.astype(float)
    num = np.ones(len(c))
    for g in np.nonzero(need)[0]:
        for j in range(need[g]):
            num *= np.clip(c[:, g] - j, 0, None)
    den = np.prod(n - np.arange(m, dtype=float))
    return float(dist.probs @ num / den)


def dump_distribution_csv(dist: CountDistribution, path) -> None:
    """Write ``state,probability``; a state is the counts of genome types 1..G joined by '-'."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["state", "probability"])
        for s, p in zip(dist.support, dist.probs):
            wr.writerow(["-".join(str(int(v)) for v in s), f"{p:.17g}"])


def dump_matrix_csv(T: TransitionMatrix, path) -> None:
    """Write the matrix with 1-based ordered-state labels (genome indices + 1)."""
    labels = ["-".join(str(int(v) + 1) for v in s) for s in T.states]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["state"] + labels)
        for lab, row in zip(labels, T.rows):
            wr.writerow([lab] + [f"{v:.17g}" for v in row])
