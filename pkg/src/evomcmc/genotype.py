"""Allele spaces, simplex points, fitness tables and populations.

Genomes are dense tuples of 0-based allele indices.  A genome of ``L``
loci over ``K`` alleles is also addressed by a flat index in
``range(K**L)`` using row-major order (locus 0 most significant), so a
fitness table for ``K = L = 2`` given as ``(phi11, phi12, phi21, phi22)``
maps genome ``(0, 1)`` to ``phi12``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument

SIMPLEX_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


@dataclass(frozen=True)
class AlleleSpace:
    """``K`` alleles at each of ``L`` loci."""

    K: int
    L: int = 1

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise InvalidArgument(f"K must be an integer >= 2, got {self.K}")
        if int(self.L) != self.L or self.L < 1:
            raise InvalidArgument(f"L must be an integer >= 1, got {self.L}")

    @property
    def size(self) -> int:
        """Number of distinct genomes, ``K**L``."""
        return self.K ** self.L

    @cached_property
    def radix(self) -> np.ndarray:
        return self.K ** np.arange(self.L - 1, -1, -1, dtype=np.int64)

    @cached_property
    def genomes(self) -> np.ndarray:
        """All genomes as a ``(K**L, L)`` array, in flat-index order."""
        idx = np.arange(self.size, dtype=np.int64)
        return (idx[:, None] // self.radix[None, :]) % self.K

    def encode(self, genome) -> int | np.ndarray:
        g = np.asarray(genome, dtype=np.int64)
        if g.shape[-1] != self.L:
            raise InvalidArgument(f"genome must have {self.L} loci, got shape {g.shape}")
        if g.min(initial=0) < 0 or g.max(initial=0) >= self.K:
            raise InvalidArgument(f"allele index out of range for K={self.K}")
        out = g @ self.radix
        return int(out) if out.ndim == 0 else out

    def decode(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise InvalidArgument(f"genome index {index} out of range")
        return tuple(int(v) for v in self.genomes[index])

    def locus_projection(self, locus: int) -> np.ndarray:
        """0/1 matrix ``(K**L, K)`` mapping genome counts to counts at ``locus``."""
        P = np.zeros((self.size, self.K), dtype=np.int64)
        P[np.arange(self.size), self.genomes[:, locus]] = 1
        return P


class SimplexPoint:
    """A probability vector.

    Inputs within ``1e-9`` of the simplex (in total mass or negativity) are
    clipped and renormalised; anything farther away is rejected.
    """

    __slots__ = ("_q",)

    def __init__(self, q):
        q = np.array(q, dtype=float, copy=True).ravel()
        if q.size == 0 or not np.all(np.isfinite(q)):
            raise InvalidArgument("simplex point must be a finite nonempty vector")
        if q.min() < -RENORMALIZE_TOL:
            raise InvalidArgument(f"negative probability {q.min():.3g}")
        total = q.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise InvalidArgument(f"probabilities sum to {total!r}, not 1")
        q = np.clip(q, 0.0, None)
        if abs(q.sum() - 1.0) > SIMPLEX_TOL:
            q = q / q.sum()
        q.setflags(write=False)
        self._q = q

    @property
    def q(self) -> np.ndarray:
        return self._q

    def __array__(self, dtype=None, copy=None):
        return self._q if dtype is None else self._q.astype(dtype)

    def __len__(self):
        return self._q.size

    def __getitem__(self, k):
        return self._q[k]

    def __iter__(self):
        return iter(self._q)

    def __eq__(self, other):
        if not isinstance(other, SimplexPoint):
            return NotImplemented
        return np.array_equal(self._q, other._q)

    def __hash__(self):
        return hash(self._q.tobytes())

    def __repr__(self):
        return f"SimplexPoint({np.array2string(self._q, precision=6)})"


def _as_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InvalidArgument("weights must be finite and strictly positive")
    return w


def scaled_weights(phi, n: int, lam: float) -> np.ndarray:
    """Fitness weights at population size ``n``: ``exp(-phi / n**lam)``.

    Parameters
    ----------
    phi : array_like
        Nonnegative log-fitness penalties, one per genome.
    n : int
        Population size, at least 1.
    lam : float
        Scaling exponent, at least 0.

    Returns
    -------
    ndarray
        Weights in ``(0, 1]``.
    """
    phi = np.asarray(phi, dtype=float)
    if n < 1 or int(n) != n:
        raise InvalidArgument(f"n must be a positive integer, got {n}")
    if not np.isfinite(lam) or lam < 0:
        raise InvalidArgument(f"lambda must be >= 0, got {lam}")
    if not np.all(np.isfinite(phi)) or np.any(phi < 0):
        raise InvalidArgument("phi must be finite and nonnegative")
    w = np.exp(-phi / float(n) ** lam)
    if np.any(w <= 0):
        raise InvalidArgument("phi too large: weights underflow to zero")
    return w


def r_map(q, w) -> SimplexPoint:
    """Fitness-tilted vector ``r_q(k) = w(k) q(k) / <q, w>``."""
    q = SimplexPoint(q).q
    w = np.asarray(w, dtype=float)
    if w.shape != q.shape:
        raise InvalidArgument(f"shape mismatch: q {q.shape} vs w {w.shape}")
    w = _as_weights(w)
    wq = w * q
    return SimplexPoint(wq / wq.sum())


@dataclass(frozen=True)
class FitnessSpec:
    """Log-fitness table ``phi`` with its population-size scaling.

    Only ``phi`` is stored; weights are derived on demand.
    """

    phi: np.ndarray
    lam: float = 0.0
    reference_n: int = 1

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float).ravel()
        if not np.all(np.isfinite(phi)) or np.any(phi < 0):
            raise InvalidArgument("phi must be finite and nonnegative")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        scaled_weights(phi, self.reference_n, self.lam)

    @property
    def weights(self) -> np.ndarray:
        return scaled_weights(self.phi, self.reference_n, self.lam)

    def at(self, n: int) -> "FitnessSpec":
        return FitnessSpec(self.phi, self.lam, n)

    @classmethod
    def from_weights(cls, w, lam: float = 0.0, reference_n: int = 1) -> "FitnessSpec":
        """Build from weights at ``reference_n``; weights above 1 are not representable."""
        w = _as_weights(w)
        if np.any(w > 1):
            raise InvalidArgument("weights above 1 correspond to negative phi")
        return cls(-np.log(w) * float(reference_n) ** lam, lam, reference_n)


@dataclass(frozen=True, eq=False)
class Population:
    """An ordered population of genomes, shape ``(n, L)``, 0-based alleles.

    ``luck`` optionally carries each member's log-luck value, assigned at
    birth by a luck-wrapped kernel.
    """

    space: AlleleSpace
    genomes: np.ndarray
    luck: np.ndarray | None = field(default=None)

    def __post_init__(self):
        g = np.array(self.genomes, dtype=np.int64, copy=True)
        if g.ndim == 1 and self.space.L == 1:
            g = g[:, None]
        if g.ndim != 2 or g.shape[1] != self.space.L:
            raise InvalidArgument(f"genomes must have shape (n, {self.space.L}), got {g.shape}")
        if g.shape[0] < 1:
            raise InvalidArgument("population must be nonempty")
        if g.min() < 0 or g.max() >= self.space.K:
            raise InvalidArgument(f"allele index out of range for K={self.space.K}")
        g.setflags(write=False)
        object.__setattr__(self, "genomes", g)
        if self.luck is not None:
            luck = np.array(self.luck, dtype=float, copy=True).ravel()
            if luck.shape != (g.shape[0],):
                raise InvalidArgument("luck must have one entry per member")
            luck.setflags(write=False)
            object.__setattr__(self, "luck", luck)

    @classmethod
    def from_indices(cls, space: AlleleSpace, indices: Iterable[int], luck=None) -> "Population":
        """Build from flat genome indices."""
        idx = np.asarray(list(indices), dtype=np.int64)
        return cls(space, space.genomes[idx], luck)

    def __len__(self):
        return self.genomes.shape[0]

    @property
    def n(self) -> int:
        return self.genomes.shape[0]

    @cached_property
    def indices(self) -> np.ndarray:
        """Flat genome index of each member."""
        return self.genomes @ self.space.radix

    @cached_property
    def locus_counts(self) -> np.ndarray:
        """Allele counts per locus, shape ``(L, K)``; every row sums to ``n``."""
        K = self.space.K
        return np.stack([np.bincount(self.genomes[:, j], minlength=K) for j in range(self.space.L)])

    @cached_property
    def genome_counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.space.size)

    def __eq__(self, other):
        if not isinstance(other, Population):
            return NotImplemented
        same_luck = (self.luck is None and other.luck is None) or (
            self.luck is not None and other.luck is not None and np.array_equal(self.luck, other.luck)
        )
        return self.space == other.space and np.array_equal(self.genomes, other.genomes) and same_luck

    def __repr__(self):
        return f"Population(n={self.n}, K={self.space.K}, L={self.space.L})"


def as_alpha_per_locus(alpha, L: int) -> list[np.ndarray]:
    """Normalise a prior given as one vector per locus, or one vector shared by all loci."""
    arr = alpha
    if isinstance(arr, np.ndarray) and arr.ndim == 1 or (
        isinstance(arr, Sequence) and len(arr) > 0 and np.isscalar(arr[0])
    ):
        return [np.asarray(arr, dtype=float)] * L
    out = [np.asarray(a, dtype=float) for a in arr]
    if len(out) != L:
        raise InvalidArgument(f"need {L} alpha vectors, got {len(out)}")
    return out
