"""Compiled kernel steps shared by the per-step API and the chain runner.

Chain state lives in flat arrays so a whole run stays inside one nogil
call.  Per-locus allele counts, genome-type counts and the per-class
member lists used by inverse-fitness ejection are updated incrementally
on every birth and death.

A member's class is ``genome_index * A + luck_atom``; all members of a
class share one effective weight, so ejection with probability
proportional to ``1 / weight`` costs O(classes) rather than O(n).
"""

from __future__ import annotations

import numpy as np
from numba import njit

TOURNAMENT = 0
INVERSE = 1
BREED_MANY = 2
NICHE = 3

RATIO = 0
METROPOLIS_MIN = 1


@njit(nogil=True, cache=True, inline="always")
def draw_allele(counts_l, alpha_l, alpha_tot, n, rng):
    """Urn draw: allele ``k`` w.p. ``(n_k + a_k) / (n + |a|)``, then a mutation
    flag w.p. ``a_k / (n_k + a_k)``."""
    u = rng.random() * (n + alpha_tot)
    K = counts_l.shape[0]
    k = K - 1
    acc = 0.0
    for j in range(K):
        acc += counts_l[j] + alpha_l[j]
        if u < acc:
            k = j
            break
    mut = rng.random() * (counts_l[k] + alpha_l[k]) < alpha_l[k]
    return k, mut


@njit(nogil=True, cache=True)
def draw_alleles(counts_l, alpha_l, n, rng, size):
    ks = np.empty(size, np.int64)
    muts = np.empty(size, np.bool_)
    atot = alpha_l.sum()
    for s in range(size):
        k, m = draw_allele(counts_l, alpha_l, atot, n, rng)
        ks[s] = k
        muts[s] = m
    return ks, muts


@njit(nogil=True, cache=True, inline="always")
def _draw_index(cum, rng):
    if cum.shape[0] == 1:
        return 0
    u = rng.random()
    for a in range(cum.shape[0] - 1):
        if u < cum[a]:
            return a
    return cum.shape[0] - 1


@njit(nogil=True, cache=True, inline="always")
def _breed(counts, alpha, atot, radix, n, genomes, flat, pos, mutflags, rng):
    g = 0
    for l in range(counts.shape[0]):
        k, mut = draw_allele(counts[l], alpha[l], atot[l], n, rng)
        genomes[pos, l] = k
        mutflags[l] = mut
        g += k * radix[l]
    flat[pos] = g


@njit(nogil=True, cache=True)
def breed_batch(counts, alpha, radix, n, rng, size):
    """``size`` independent offspring of one population (no state change)."""
    L = counts.shape[0]
    atot = np.empty(L)
    for l in range(L):
        atot[l] = alpha[l].sum()
    genomes = np.empty((size, L), np.int64)
    flat = np.empty(size, np.int64)
    muts = np.empty((size, L), np.bool_)
    for s in range(size):
        _breed(counts, alpha, atot, radix, n, genomes, flat, s, muts[s], rng)
    return genomes, muts


@njit(nogil=True, cache=True, inline="always")
def _add_loci(counts, genomes, i, sign):
    for l in range(counts.shape[0]):
        counts[l, genomes[i, l]] += sign


@njit(nogil=True, cache=True, inline="always")
def _cls_remove(i, cls, members, csize, cslot):
    c = cls[i]
    s = cslot[i]
    last = csize[c] - 1
    j = members[c, last]
    members[c, s] = j
    cslot[j] = s
    csize[c] = last


@njit(nogil=True, cache=True, inline="always")
def _cls_insert(i, c, cls, members, csize, cslot):
    s = csize[c]
    members[c, s] = i
    cslot[i] = s
    csize[c] = s + 1
    cls[i] = c


@njit(nogil=True, cache=True, inline="always")
def _replace(i, src, A, genomes, flat, lidx, counts, gcounts, cls, members, csize, cslot):
    """Member ``i`` dies and the individual stored at ``src`` takes its slot."""
    _add_loci(counts, genomes, i, -1)
    gcounts[flat[i]] -= 1
    _cls_remove(i, cls, members, csize, cslot)
    for l in range(genomes.shape[1]):
        genomes[i, l] = genomes[src, l]
    flat[i] = flat[src]
    lidx[i] = lidx[src]
    _add_loci(counts, genomes, i, 1)
    gcounts[flat[i]] += 1
    _cls_insert(i, flat[i] * A + lidx[i], cls, members, csize, cslot)


@njit(nogil=True, cache=True)
def _run(kind, rule, n, steps, burn_in, thinning, rec_counts, rec_gcounts, rec_luck,
         genomes, flat, lidx, counts, gcounts, cls, members, csize, cslot,
         alpha, atot, radix, w, lfac, lcum, niche_w, m_vals, m_cum, t_vals, t_cum,
         mutflags, slots, nonh, buf_gen, buf_flat, buf_l, touched, rng):
    """Advance ``steps`` generations, recording after ``burn_in`` every ``thinning``.

    The step body lives in this loop (not in a helper) so the state arrays
    are not re-passed on every generation.
    """
    A = lfac.shape[0]
    C = csize.shape[0]
    L = genomes.shape[1]
    rec = 0
    want_g = rec_gcounts.shape[0] > 0
    want_luck = rec_luck.shape[0] > 0
    for s in range(1, steps + 1):
        if kind == BREED_MANY:
            m = m_vals[_draw_index(m_cum, rng)]
            t = t_vals[_draw_index(t_cum, rng)]
            for r in range(m):
                _breed(counts, alpha, atot, radix, n + r, genomes, flat, n + r, mutflags, rng)
                lidx[n + r] = 0
                _add_loci(counts, genomes, n + r, 1)
            for a in range(n):
                slots[a] = a
                touched[a] = False
            for b in range(m):
                nonh[b] = n + b
            if m > 0:
                for _ in range(t):
                    a = min(int(rng.random() * n), n - 1)
                    b = min(int(rng.random() * m), m - 1)
                    i = slots[a]
                    j = nonh[b]
                    wi = w[flat[i]]
                    wj = w[flat[j]]
                    if rng.random() >= wi / (wi + wj):
                        slots[a] = j
                        nonh[b] = i
                        touched[a] = True
            for b in range(m):
                _add_loci(counts, genomes, nonh[b], -1)
            # survivors move into their ticket's slot; buffer first since sources may be overwritten
            for a in range(n):
                if touched[a] and slots[a] != a:
                    src = slots[a]
                    for l in range(L):
                        buf_gen[a, l] = genomes[src, l]
                    buf_flat[a] = flat[src]
                    buf_l[a] = lidx[src]
                    gcounts[flat[a]] -= 1
                    _cls_remove(a, cls, members, csize, cslot)
            for a in range(n):
                if touched[a] and slots[a] != a:
                    for l in range(L):
                        genomes[a, l] = buf_gen[a, l]
                    flat[a] = buf_flat[a]
                    lidx[a] = buf_l[a]
                    gcounts[flat[a]] += 1
                    _cls_insert(a, flat[a] * A + lidx[a], cls, members, csize, cslot)
        else:
            _breed(counts, alpha, atot, radix, n, genomes, flat, n, mutflags, rng)
            lidx[n] = _draw_index(lcum, rng)
            w_new = w[flat[n]] * lfac[lidx[n]]
            if kind == TOURNAMENT or kind == NICHE:
                i = min(int(rng.random() * n), n - 1)
                if kind == NICHE:
                    w_new = niche_w[i, flat[n]]
                    w_old = niche_w[i, flat[i]]
                else:
                    w_old = w[flat[i]] * lfac[lidx[i]]
                if rule == RATIO:
                    p = w_new / (w_new + w_old)
                else:
                    p = min(1.0, w_new / w_old)
                if rng.random() < p:
                    _replace(i, n, A, genomes, flat, lidx, counts, gcounts, cls, members, csize, cslot)
            else:
                # inverse fitness: eject among n + 1 with probability proportional to 1 / weight
                c_new = flat[n] * A + lidx[n]
                total = 0.0
                for c in range(C):
                    size = csize[c] + (1 if c == c_new else 0)
                    if size > 0:
                        total += size / (w[c // A] * lfac[c % A])
                u = rng.random() * total
                chosen = -1
                acc = 0.0
                for c in range(C):
                    size = csize[c] + (1 if c == c_new else 0)
                    if size > 0:
                        chosen = c
                        acc += size / (w[c // A] * lfac[c % A])
                        if u < acc:
                            break
                size = csize[chosen] + (1 if chosen == c_new else 0)
                r = min(int(rng.random() * size), size - 1)
                if r < csize[chosen]:  # otherwise the newborn itself is ejected
                    _replace(members[chosen, r], n, A, genomes, flat, lidx, counts, gcounts,
                             cls, members, csize, cslot)

        if s > burn_in and (s - burn_in) % thinning == 0 and rec < rec_counts.shape[0]:
            rec_counts[rec] = counts
            if want_g:
                rec_gcounts[rec] = gcounts
            if want_luck:
                for i in range(n):
                    rec_luck[rec, lidx[i], flat[i]] += 1
            rec += 1
    return rec


@njit(nogil=True, cache=True)
def _sample_next(reps, out, kind, rule, n, rec_counts, rec_gcounts, rec_luck,
                 genomes, flat, lidx, counts, gcounts, cls, members, csize, cslot,
                 alpha, atot, radix, w, lfac, lcum, niche_w, m_vals, m_cum, t_vals, t_cum,
                 mutflags, slots, nonh, buf_gen, buf_flat, buf_l, touched, rng):
    """One step from fresh copies of the state, ``reps`` times.

    Records slots ``0..out.shape[1]-1``; slot ``n`` holds the (first) newborn.
    """
    for r in range(reps):
        g2 = genomes.copy()
        f2 = flat.copy()
        l2 = lidx.copy()
        c2 = counts.copy()
        gc2 = gcounts.copy()
        cl2 = cls.copy()
        mem2 = members.copy()
        cs2 = csize.copy()
        csl2 = cslot.copy()
        _run(kind, rule, n, 1, 1, 1, rec_counts, rec_gcounts, rec_luck,
             g2, f2, l2, c2, gc2, cl2, mem2, cs2, csl2, alpha, atot, radix, w, lfac, lcum,
             niche_w, m_vals, m_cum, t_vals, t_cum, mutflags, slots, nonh, buf_gen, buf_flat,
             buf_l, touched, rng)
        for i in range(out.shape[1]):
            out[r, i] = f2[i]


class ChainState:
    """Mutable compiled state of one chain.

    Parameters
    ----------
    kind, rule : int
        Kernel code and tournament rule code (module constants).
    genomes : (n, L) int array
    luck_idx : (n,) int array
        Luck atom of each member (all zero without luck).
    alpha : (L, K) float array
        Urn prior used for breeding.
    w : (K**L,) float array
        Genome weights.
    luck_factor, luck_cum : (A,) float arrays
        ``exp(-psi_a)`` per luck atom and cumulative atom probabilities.
    niche_w : (n, K**L) float array or None
    m_vals, m_cum, t_vals, t_cum : arrays
        Offspring and tournament count laws for breed-many.
    """

    def __init__(self, kind, rule, genomes, luck_idx, alpha, w, luck_factor, luck_cum,
                 niche_w=None, m_vals=None, m_cum=None, t_vals=None, t_cum=None):
        genomes = np.asarray(genomes, dtype=np.int64)
        n, L = genomes.shape
        alpha = np.ascontiguousarray(alpha, dtype=float)
        K = alpha.shape[1]
        G = K ** L
        A = len(luck_factor)
        self.kind, self.rule, self.n, self.K, self.L, self.G, self.A = kind, rule, n, K, L, G, A
        one = np.ones(1, dtype=np.int64)
        self.m_vals = np.asarray(m_vals if m_vals is not None else one, dtype=np.int64)
        self.m_cum = np.asarray(m_cum if m_cum is not None else [1.0], dtype=float)
        self.t_vals = np.asarray(t_vals if t_vals is not None else one, dtype=np.int64)
        self.t_cum = np.asarray(t_cum if t_cum is not None else [1.0], dtype=float)
        m_max = int(self.m_vals.max()) if kind == BREED_MANY else 1
        cap = n + max(m_max, 1)
        self.radix = K ** np.arange(L - 1, -1, -1, dtype=np.int64)
        self.genomes = np.zeros((cap, L), np.int64)
        self.genomes[:n] = genomes
        self.flat = np.zeros(cap, np.int64)
        self.flat[:n] = genomes @ self.radix
        self.lidx = np.zeros(cap, np.int64)
        self.lidx[:n] = luck_idx
        self.counts = np.stack([np.bincount(genomes[:, l], minlength=K) for l in range(L)]).astype(np.int64)
        self.gcounts = np.bincount(self.flat[:n], minlength=G).astype(np.int64)
        C = G * A
        self.cls = np.zeros(cap, np.int64)
        self.members = np.zeros((C, cap), np.int64)
        self.csize = np.zeros(C, np.int64)
        self.cslot = np.zeros(cap, np.int64)
        for i in range(n):
            c = self.flat[i] * A + self.lidx[i]
            self.members[c, self.csize[c]] = i
            self.cslot[i] = self.csize[c]
            self.csize[c] += 1
            self.cls[i] = c
        self.alpha = alpha
        self.atot = alpha.sum(axis=1)
        self.w = np.ascontiguousarray(w, dtype=float)
        self.lfac = np.ascontiguousarray(luck_factor, dtype=float)
        self.lcum = np.ascontiguousarray(luck_cum, dtype=float)
        self.niche_w = (np.ones((1, G)) if niche_w is None
                        else np.ascontiguousarray(niche_w, dtype=float))
        self.mutflags = np.zeros(L, np.bool_)
        self.slots = np.zeros(n, np.int64)
        self.nonh = np.zeros(max(m_max, 1), np.int64)
        self.buf_gen = np.zeros((n, L), np.int64)
        self.buf_flat = np.zeros(n, np.int64)
        self.buf_l = np.zeros(n, np.int64)
        self.touched = np.zeros(n, np.bool_)

    def _args(self):
        return (self.genomes, self.flat, self.lidx, self.counts, self.gcounts, self.cls,
                self.members, self.csize, self.cslot, self.alpha, self.atot, self.radix, self.w,
                self.lfac, self.lcum, self.niche_w, self.m_vals, self.m_cum, self.t_vals,
                self.t_cum, self.mutflags, self.slots, self.nonh, self.buf_gen, self.buf_flat,
                self.buf_l, self.touched)

    def _empty(self):
        return (np.zeros((0, self.L, self.K), np.int64), np.zeros((0, self.G), np.int64),
                np.zeros((0, self.A, self.G), np.int64))

    def step(self, rng):
        _run(self.kind, self.rule, self.n, 1, 1, 1, *self._empty(), *self._args(), rng)

    def run(self, steps, burn_in, thinning, rng, genome_counts=False, luck_table=False):
        records = max(0, (steps - burn_in) // thinning)
        rec_counts = np.zeros((records, self.L, self.K), np.int64)
        rec_g = np.zeros((records if genome_counts else 0, self.G), np.int64)
        rec_luck = np.zeros((records if luck_table else 0, self.A, self.G), np.int64)
        done = _run(self.kind, self.rule, self.n, steps, burn_in, thinning, rec_counts, rec_g,
                    rec_luck, *self._args(), rng)
        assert done == records
        return rec_counts, (rec_g if genome_counts else None), (rec_luck if luck_table else None)

    def sample_next(self, rng, reps, newborn=False):
        """Flat genome indices of slots ``0..n-1`` after one step from the current
        state, for ``reps`` independent replicates (the state is left unchanged).

        With ``newborn`` an extra last column holds the (first) newborn's genome.
        """
        out = np.zeros((reps, self.n + int(bool(newborn))), np.int64)
        _sample_next(reps, out, self.kind, self.rule, self.n, *self._empty(), *self._args(), rng)
        return out

    @property
    def current_genomes(self):
        return self.genomes[: self.n].copy()

    @property
    def current_luck_idx(self):
        return self.lidx[: self.n].copy()

    def check_invariants(self):
        """Recompute derived counts from scratch and compare (debug aid)."""
        g = self.genomes[: self.n]
        counts = np.stack([np.bincount(g[:, l], minlength=self.K) for l in range(self.L)])
        assert np.array_equal(counts, self.counts)
        assert np.array_equal(np.bincount(self.flat[: self.n], minlength=self.G), self.gcounts)
        assert np.array_equal(g @ self.radix, self.flat[: self.n])
        assert self.csize.sum() == self.n
        for i in range(self.n):
            c = self.flat[i] * self.A + self.lidx[i]
            assert self.cls[i] == c and self.members[c, self.cslot[i]] == i
