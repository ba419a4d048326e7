"""Generation-step kernels: breed, then discard by fitness.

All kernels keep the population size fixed and replace in place, so a
member's position survives until it dies (position is the niche identity
for the niche kernel).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _engine
from .breeding import ProductBreeding
from .errors import InvalidArgument, UnsupportedKernel
from .genotype import Population

KINDS = ("single_tournament", "inverse_fitness", "breed_many", "niche")
RULES = ("ratio", "metropolis_min")
_KIND_CODE = {
    "single_tournament": _engine.TOURNAMENT,
    "inverse_fitness": _engine.INVERSE,
    "breed_many": _engine.BREED_MANY,
    "niche": _engine.NICHE,
}
_RULE_CODE = {"ratio": _engine.RATIO, "metropolis_min": _engine.METROPOLIS_MIN}


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite law over real values."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        p = np.array(self.probs, dtype=float).ravel()
        if v.size == 0 or v.shape != p.shape:
            raise InvalidArgument("values and probs must be nonempty and of equal length")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-9 or not np.all(np.isfinite(v)):
            raise InvalidArgument("probs must be a probability vector over finite values")
        v.setflags(write=False)
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, value) -> "DiscreteDistribution":
        return cls([value], [1.0])

    @property
    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def as_counts(self, minimum: int) -> np.ndarray:
        if not np.all(self.values == np.round(self.values)) or self.values.min() < minimum:
            raise InvalidArgument(f"values must be integers >= {minimum}")
        return self.values.astype(np.int64)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}


@dataclass(frozen=True)
class KernelConfig:
    """Which discard rule to run.

    ``tournament_rule`` applies to ``single_tournament`` only; the offspring
    and tournament count laws to ``breed_many`` only (default: one of each).
    """

    kind: str = "single_tournament"
    tournament_rule: str | None = None
    m_distribution: DiscreteDistribution | None = None
    t_distribution: DiscreteDistribution | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "single_tournament":
            rule = self.tournament_rule or "ratio"
            if rule not in RULES:
                raise InvalidArgument(f"unknown tournament rule {rule!r}")
            object.__setattr__(self, "tournament_rule", rule)
        elif self.tournament_rule is not None:
            raise InvalidArgument("tournament_rule is only meaningful for single_tournament")
        if self.kind == "breed_many":
            m = self.m_distribution or DiscreteDistribution.point(1)
            t = self.t_distribution or DiscreteDistribution.point(1)
            m.as_counts(1)
            t.as_counts(0)
            object.__setattr__(self, "m_distribution", m)
            object.__setattr__(self, "t_distribution", t)
        elif self.m_distribution is not None or self.t_distribution is not None:
            raise InvalidArgument("m/t distributions are only meaningful for breed_many")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.tournament_rule:
            d["tournament_rule"] = self.tournament_rule
        if self.kind == "breed_many":
            d["m_distribution"] = self.m_distribution.to_dict()
            d["t_distribution"] = self.t_distribution.to_dict()
        return d


@dataclass(frozen=True)
class LuckConfig:
    """Law of the log-luck ``psi`` drawn once at each birth.

    A member's effective weight is ``w(x) * exp(-psi)`` for its whole life.
    """

    distribution: DiscreteDistribution

    @classmethod
    def from_values(cls, values, probs=None) -> "LuckConfig":
        values = np.asarray(values, dtype=float)
        if probs is None:
            probs = np.full(values.size, 1.0 / values.size)
        return cls(DiscreteDistribution(values, probs))

    @property
    def values(self) -> np.ndarray:
        return self.distribution.values

    def atom_index(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        idx = np.array([int(np.argmin(np.abs(self.values - v))) for v in psi.ravel()], dtype=np.int64)
        if psi.size and not np.allclose(self.values[idx], psi.ravel(), rtol=0, atol=1e-12):
            raise InvalidArgument("luck values not in the luck distribution's support")
        return idx

    def to_dict(self) -> dict:
        return self.distribution.to_dict()


_NO_LUCK = LuckConfig(DiscreteDistribution.point(0.0))


@dataclass(frozen=True)
class Kernel:
    """A fully specified generation step.

    Parameters
    ----------
    config : KernelConfig
    breeding : ProductBreeding
    weights : array_like
        Strictly positive weight per flat genome index.
    luck : LuckConfig, optional
        Multiplicative luck; single tournament and inverse fitness only.
    niche_weights : array_like, optional
        ``(n, K**L)`` table, one weight table per niche; niche kernel only.
    """

    config: KernelConfig
    breeding: ProductBreeding
    weights: np.ndarray
    luck: LuckConfig | None = None
    niche_weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size != self.breeding.space.size:
            raise InvalidArgument(f"need {self.breeding.space.size} weights, got {w.size}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidArgument("weights must be finite and strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.luck is not None and self.config.kind not in ("single_tournament", "inverse_fitness"):
            raise UnsupportedKernel("luck wraps only single_tournament or inverse_fitness")
        if self.config.kind == "niche":
            if self.niche_weights is None:
                raise InvalidArgument("niche kernel needs per-niche weight tables")
            nw = np.array(self.niche_weights, dtype=float)
            if nw.ndim != 2 or nw.shape[1] != w.size:
                raise InvalidArgument(f"niche weights must have shape (n, {w.size})")
            if not np.all(np.isfinite(nw)) or np.any(nw <= 0):
                raise InvalidArgument("niche weights must be finite and strictly positive")
            nw.setflags(write=False)
            object.__setattr__(self, "niche_weights", nw)
        elif self.niche_weights is not None:
            raise InvalidArgument("niche_weights given for a non-niche kernel")

    def chain(self, pop: Population, rng=None) -> "Chain":
        return Chain(self, pop, rng)

    def step(self, pop: Population, rng) -> Population:
        ch = Chain(self, pop, rng)
        ch.step(rng)
        return ch.population

    def sample_next(self, pop: Population, rng, reps: int, newborn: bool = False) -> np.ndarray:
        """Flat genome indices after one step, for ``reps`` independent replicates.

        Returns shape ``(reps, n)``, or ``(reps, n + 1)`` with ``newborn``, the
        last column then being the genome bred this step (the first one for
        ``breed_many``).
        """
        return Chain(self, pop, rng).state.sample_next(rng, int(reps), newborn)


class Chain:
    """Mutable single-chain state driven by a :class:`Kernel`.

    Members of ``pop`` without luck values get luck drawn from the luck law
    (no draw is made when that law is a single atom).
    """

    def __init__(self, kernel: Kernel, pop: Population, rng=None):
        if pop.space != kernel.breeding.space:
            raise InvalidArgument("population and kernel disagree on (K, L)")
        cfg = kernel.config
        if cfg.kind == "niche" and kernel.niche_weights.shape[0] != pop.n:
            raise InvalidArgument(
                f"{kernel.niche_weights.shape[0]} niche tables for a population of {pop.n}")
        luck = kernel.luck or _NO_LUCK
        if kernel.luck is None or luck.values.size == 1:
            lidx = np.zeros(pop.n, np.int64)
        elif pop.luck is not None:
            lidx = luck.atom_index(pop.luck)
        else:
            if rng is None:
                raise InvalidArgument("need an rng to assign initial luck")
            lidx = rng.choice(luck.values.size, size=pop.n, p=luck.distribution.probs).astype(np.int64)
        m = t = None
        if cfg.kind == "breed_many":
            m = (cfg.m_distribution.as_counts(1), cfg.m_distribution.cumulative)
            t = (cfg.t_distribution.as_counts(0), cfg.t_distribution.cumulative)
        self.kernel = kernel
        self.space = pop.space
        self._luck = luck
        self.state = _engine.ChainState(
            _KIND_CODE[cfg.kind],
            _RULE_CODE.get(cfg.tournament_rule or "ratio"),
            pop.genomes,
            lidx,
            kernel.breeding.alpha_matrix,
            kernel.weights,
            np.exp(-luck.values),
            luck.distribution.cumulative,
            niche_w=kernel.niche_weights,
            m_vals=m[0] if m else None, m_cum=m[1] if m else None,
            t_vals=t[0] if t else None, t_cum=t[1] if t else None,
        )

    @property
    def n(self) -> int:
        return self.state.n

    def step(self, rng) -> None:
        self.state.step(rng)

    def run(self, steps: int, burn_in: int, thinning: int, rng, *, genome_counts=False, luck_table=False):
        """Advance ``steps`` generations, recording after ``burn_in`` every ``thinning``.

        Returns ``(locus_counts, genome_counts, luck_table)`` arrays of shapes
        ``(R, L, K)``, ``(R, K**L)`` and ``(R, A, K**L)``; the latter two are
        ``None`` unless requested.
        """
        if thinning < 1 or burn_in < 0 or steps < burn_in:
            raise InvalidArgument("need thinning >= 1 and 0 <= burn_in <= steps")
        return self.state.run(int(steps), int(burn_in), int(thinning), rng,
                              genome_counts=genome_counts, luck_table=luck_table)

    @property
    def population(self) -> Population:
        luck = None
        if self.kernel.luck is not None:
            luck = self._luck.values[self.state.current_luck_idx]
        return Population(self.space, self.state.current_genomes, luck)

    @property
    def locus_counts(self) -> np.ndarray:
        return self.state.counts.copy()


def _kernel(kind, breeding, w, cfg, **kw) -> Kernel:
    if cfg is None:
        cfg = KernelConfig(kind)
    elif cfg.kind != kind:
        raise InvalidArgument(f"config kind {cfg.kind!r} does not match {kind!r}")
    return Kernel(cfg, breeding, w, **kw)


def step_single_tournament(pop: Population, breeding: ProductBreeding, w, cfg: KernelConfig | None = None,
                           rng=None) -> Population:
    """Breed one child; it challenges a uniform member and replaces it on a win."""
    return _kernel("single_tournament", breeding, w, cfg).step(pop, rng)


def step_inverse_fitness(pop: Population, breeding: ProductBreeding, w, rng) -> Population:
    """Breed one child; eject one of the ``n + 1`` with probability ``∝ 1 / w``."""
    return _kernel("inverse_fitness", breeding, w, None).step(pop, rng)


def step_breed_many(pop: Population, breeding: ProductBreeding, w, cfg: KernelConfig | None = None,
                    rng=None) -> Population:
    """Breed ``m`` children sequentially, then run ``t`` survival-ticket tournaments."""
    return _kernel("breed_many", breeding, w, cfg).step(pop, rng)


def step_niche(pop: Population, breeding: ProductBreeding, w_table, rng) -> Population:
    """Single tournament where niche ``j`` judges with its own weight table."""
    w_table = np.asarray(w_table, dtype=float)
    if w_table.ndim != 2 or w_table.shape[0] != pop.n:
        raise InvalidArgument(f"need one weight table per niche ({pop.n}), got shape {w_table.shape}")
    return Kernel(KernelConfig("niche"), breeding, np.ones(w_table.shape[1]),
                  niche_weights=w_table).step(pop, rng)


def wrap_with_luck(kernel: Kernel, luck: LuckConfig) -> Kernel:
    """Same kernel, with each newborn carrying a lifelong luck factor ``exp(-psi)``."""
    if kernel.config.kind not in ("single_tournament", "inverse_fitness"):
        raise UnsupportedKernel("luck wraps only single_tournament or inverse_fitness")
    return replace(kernel, luck=luck)
