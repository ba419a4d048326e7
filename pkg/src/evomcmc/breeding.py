"""Exchangeable breeding: the Polya urn and its product over loci.

Breeding treats every member identically: the offspring law depends on
the population only through allele counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from . import _engine
from .errors import InvalidArgument
from .genotype import AlleleSpace, Population, as_alpha_per_locus


@dataclass(frozen=True)
class DirichletCategorical:
    """Polya urn over ``K`` colours with prior pseudo-counts ``alpha``."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).ravel()
        if a.size < 2 or not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise InvalidArgument("alpha must hold at least two finite positive entries")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def K(self) -> int:
        return self.alpha.size

    @property
    def alpha_total(self) -> float:
        return float(self.alpha.sum())

    def predictive(self, counts) -> np.ndarray:
        """``P(next = k | counts) = (n_k + a_k) / (n + |a|)``."""
        c = _check_counts(counts, self.K)
        return (c + self.alpha) / (c.sum() + self.alpha_total)

    def mutation_rate(self, n: int) -> float:
        return self.alpha_total / (self.alpha_total + n)


@dataclass(frozen=True)
class ProductBreeding:
    """Independent urns, one per locus (linkage equilibrium)."""

    loci: tuple

    def __post_init__(self):
        loci = tuple(p if isinstance(p, DirichletCategorical) else DirichletCategorical(p)
                     for p in self.loci)
        if not loci:
            raise InvalidArgument("need at least one locus")
        if len({p.K for p in loci}) != 1:
            raise InvalidArgument("all loci must share the same K")
        object.__setattr__(self, "loci", loci)

    @classmethod
    def from_alpha(cls, alpha, L: int = 1) -> "ProductBreeding":
        return cls(tuple(as_alpha_per_locus(alpha, L)))

    @property
    def L(self) -> int:
        return len(self.loci)

    @property
    def K(self) -> int:
        return self.loci[0].K

    @property
    def space(self) -> AlleleSpace:
        return AlleleSpace(self.K, self.L)

    @property
    def alpha_matrix(self) -> np.ndarray:
        return np.stack([p.alpha for p in self.loci])

    def offspring_distribution(self, locus_counts) -> np.ndarray:
        """Probability of each flat genome index for the next offspring."""
        locus_counts = np.asarray(locus_counts)
        genomes = self.space.genomes
        p = np.ones(genomes.shape[0])
        for j, proc in enumerate(self.loci):
            p *= proc.predictive(locus_counts[j])[genomes[:, j]]
        return p

    def log_prob(self, locus_counts) -> float:
        """Log probability of one ordered population with these per-locus counts."""
        locus_counts = np.asarray(locus_counts)
        return float(sum(joint_log_prob(locus_counts[j], p) for j, p in enumerate(self.loci)))

    def sample_population(self, n: int, rng) -> Population:
        """Sequential urn sampling ``x_i ~ P(. | x_1..x_{i-1})`` from empty."""
        if n < 1:
            raise InvalidArgument("n must be >= 1")
        L, K = self.L, self.K
        counts = np.zeros((L, K), np.int64)
        genomes = np.empty((n, L), np.int64)
        for i in range(n):
            for j, proc in enumerate(self.loci):
                k, _ = _engine.draw_allele(counts[j], proc.alpha, proc.alpha_total, i, rng)
                genomes[i, j] = k
                counts[j, k] += 1
        return Population(self.space, genomes)


@dataclass(frozen=True)
class AlleleCountVector:
    counts: np.ndarray

    def __post_init__(self):
        c = _check_counts(self.counts, None)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def _check_counts(counts, K) -> np.ndarray:
    if isinstance(counts, AlleleCountVector):
        counts = counts.counts
    c = np.asarray(counts)
    if c.ndim != 1 or (K is not None and c.size != K):
        raise InvalidArgument(f"counts must be a vector of length {K}")
    if not np.all(np.asarray(c, dtype=float) == np.floor(c)) or np.any(c < 0):
        raise InvalidArgument("counts must be nonnegative integers")
    return np.array(c, dtype=np.int64)


def conditional_sample(counts, proc: DirichletCategorical, rng, size=None):
    """Draw the next allele of an urn holding ``counts``.

    Returns ``(k, mutation)``.  The mutation flag marks a draw attributed to
    the prior mass: given ``k`` it is set with probability
    ``alpha_k / (n_k + alpha_k)``, so overall ``P(mutation) = |a| / (|a| + n)``.
    With ``size`` the results are arrays of that length.
    """
    c = _check_counts(counts, proc.K)
    n = int(c.sum())
    if size is None:
        k, mut = _engine.draw_allele(c, proc.alpha, proc.alpha_total, n, rng)
        return int(k), bool(mut)
    return _engine.draw_alleles(c, np.asarray(proc.alpha), n, rng, int(size))


def joint_log_prob(counts, proc: DirichletCategorical) -> float:
    """Log probability of one ordered urn sequence with the given counts.

    Ratio of rising factorials, evaluated as log-gamma differences.
    """
    c = _check_counts(counts, proc.K)
    a = proc.alpha
    return float(np.sum(gammaln(a + c) - gammaln(a))
                 - (gammaln(proc.alpha_total + c.sum()) - gammaln(proc.alpha_total)))


def breed_genome(pop: Population, proc: ProductBreeding, rng, size=None):
    """Breed one genome (or ``size`` independent ones) from ``pop``.

    Each locus is an independent urn draw on that locus' counts.  Returns
    ``(genome, mutation_flags)``; ``pop`` may be ``None`` to sample the prior.
    """
    L, K = proc.L, proc.K
    if pop is None:
        counts, n = np.zeros((L, K), np.int64), 0
    else:
        if pop.space != proc.space:
            raise InvalidArgument("population and breeding process disagree on (K, L)")
        counts, n = pop.locus_counts.astype(np.int64), pop.n
    genomes, muts = _engine.breed_batch(counts, proc.alpha_matrix, proc.space.radix, n, rng,
                                        1 if size is None else int(size))
    if size is None:
        return tuple(int(v) for v in genomes[0]), tuple(bool(v) for v in muts[0])
    return genomes, muts


def effective_alpha(base_alpha, n: int, lam: float) -> np.ndarray:
    """Urn prior used at population size ``n`` under scaling ``lam``: ``n**(1-lam) * alpha``."""
    a = np.asarray(base_alpha, dtype=float)
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument(f"prior scaling needs lambda in [0, 1], got {lam}")
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise InvalidArgument("alpha must be finite and positive")
    return float(n) ** (1.0 - lam) * a


def effective_alpha_per_locus(base_alpha: Sequence, n: int, lam: float) -> list[np.ndarray]:
    """Per-locus version; each locus is scaled independently."""
    return [effective_alpha(a, n, lam) for a in base_alpha]
