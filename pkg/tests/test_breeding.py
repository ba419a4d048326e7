import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import betaln

from evomcmc import (AlleleCountVector, AlleleSpace, DirichletCategorical, InvalidArgument,
                     Population, ProductBreeding, breed_genome, conditional_sample,
                     effective_alpha, effective_alpha_per_locus, joint_log_prob)


def sequential_log_prob(seq, proc):
    """Log probability of an ordered sequence as the product of urn predictives."""
    counts = np.zeros(proc.K, np.int64)
    total = 0.0
    for k in seq:
        total += np.log(proc.predictive(counts)[k])
        counts[k] += 1
    return total


class TestConditionalSample:
    def test_empty_population_samples_prior(self):
        proc = DirichletCategorical([0.5, 1.5])
        k, mut = conditional_sample([0, 0], proc, np.random.default_rng(0), size=200_000)
        assert np.all(mut)
        p1 = np.mean(k == 0)
        assert abs(p1 - 0.25) < 4 * np.sqrt(0.25 * 0.75 / k.size)

    def test_frequencies(self):
        proc = DirichletCategorical([1.0, 1.0])
        N = 10**6
        k, _ = conditional_sample([3, 0], proc, np.random.default_rng(1), size=N)
        np.testing.assert_allclose(proc.predictive([3, 0]), [0.8, 0.2], rtol=1e-15)
        assert abs(np.mean(k == 0) - 0.8) < 3 * np.sqrt(0.8 * 0.2 / N)

    def test_scalar_draw(self):
        k, mut = conditional_sample(AlleleCountVector([2, 0, 1]), DirichletCategorical([1, 1, 1]),
                                    np.random.default_rng(2))
        assert k in (0, 1, 2) and isinstance(mut, bool)

    @pytest.mark.parametrize("counts,alpha", [([0, 0], [0.3, 0.7]), ([5, 2], [0.3, 0.7]),
                                              ([40, 10, 50], [2.0, 1.0, 0.5])])
    def test_mutation_rate(self, counts, alpha):
        proc = DirichletCategorical(alpha)
        N = 10**6
        _, mut = conditional_sample(counts, proc, np.random.default_rng(3), size=N)
        u = proc.alpha_total / (proc.alpha_total + sum(counts))
        assert u == pytest.approx(proc.mutation_rate(sum(counts)))
        assert abs(mut.mean() - u) <= 4 * np.sqrt(u * (1 - u) / N)

    def test_mutation_attribution_given_allele(self):
        # given k, the draw is a mutation with probability alpha_k / (n_k + alpha_k)
        proc = DirichletCategorical([1.0, 3.0])
        N = 10**6
        k, mut = conditional_sample([4, 1], proc, np.random.default_rng(4), size=N)
        for allele, expect in [(0, 1.0 / 5.0), (1, 3.0 / 4.0)]:
            sel = mut[k == allele]
            assert abs(sel.mean() - expect) < 4 * np.sqrt(expect * (1 - expect) / sel.size)

    def test_invalid_counts(self):
        proc = DirichletCategorical([1.0, 1.0])
        for bad in ([1, -1], [1.5, 0], [1, 1, 1]):
            with pytest.raises(InvalidArgument):
                conditional_sample(bad, proc, np.random.default_rng(0))


class TestJointLogProb:
    def test_single_draw(self):
        proc = DirichletCategorical([0.4, 1.1])
        assert joint_log_prob([1, 0], proc) == pytest.approx(np.log(0.4 / 1.5), abs=1e-15)

    def test_hand_value(self):
        proc = DirichletCategorical([1.0, 1.0])
        assert joint_log_prob([2, 1], proc) == pytest.approx(np.log(1 / 12), abs=1e-14)
        assert sequential_log_prob([0, 0, 1], proc) == pytest.approx(np.log(1 / 12), abs=1e-14)

    def test_empty_is_zero(self):
        assert joint_log_prob([0, 0, 0], DirichletCategorical([1, 2, 3])) == 0.0

    def test_large_counts_finite(self):
        v = joint_log_prob([10**7, 3 * 10**7], DirichletCategorical([0.3, 0.7]))
        assert np.isfinite(v) and v < 0

    def test_predictive_sums_to_one(self):
        proc = DirichletCategorical([0.2, 0.5, 2.0])
        c = np.array([3, 0, 4])
        base = joint_log_prob(c, proc)
        total = sum(np.exp(joint_log_prob(c + e, proc) - base) for e in np.eye(3, dtype=int))
        assert total == pytest.approx(1.0, abs=1e-12)


class TestExchangeability:
    """Every ordering of a multiset has the same sequential probability."""

    @pytest.mark.parametrize("alpha", [[1.0, 1.0], [0.3, 0.7], [0.5, 2.0, 1.5]])
    def test_orderings(self, alpha):
        proc = DirichletCategorical(alpha)
        K = proc.K
        for n in range(1, 6):
            for seq in itertools.combinations_with_replacement(range(K), n):
                counts = np.bincount(seq, minlength=K)
                ref = joint_log_prob(counts, proc)
                for perm in set(itertools.permutations(seq)):
                    assert abs(sequential_log_prob(perm, proc) - ref) < 1e-12

    @pytest.mark.parametrize("alpha", [[1.0, 1.0], [0.3, 0.7], [0.5, 2.0, 1.5]])
    def test_kolmogorov_consistency(self, alpha):
        proc = DirichletCategorical(alpha)
        K = proc.K
        for n in range(0, 6):
            for seq in itertools.product(range(K), repeat=n):
                c = np.bincount(np.array(seq, dtype=int), minlength=K)
                p = np.exp(joint_log_prob(c, proc))
                ext = sum(np.exp(joint_log_prob(c + e, proc)) for e in np.eye(K, dtype=int))
                assert abs(ext - p) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(alpha=st.lists(st.floats(0.05, 20.0), min_size=2, max_size=4),
           data=st.data())
    def test_consistency_random(self, alpha, data):
        proc = DirichletCategorical(alpha)
        counts = np.array(data.draw(st.lists(st.integers(0, 50), min_size=len(alpha),
                                             max_size=len(alpha))))
        base = joint_log_prob(counts, proc)
        ext = [joint_log_prob(counts + e, proc) - base for e in np.eye(len(alpha), dtype=int)]
        np.testing.assert_allclose(np.exp(ext), proc.predictive(counts), rtol=1e-10)

    @pytest.mark.parametrize("alpha", [(1.0, 1.0), (0.3, 0.7), (2.5, 0.4)])
    def test_de_finetti_quadrature(self, alpha):
        a, b = alpha
        proc = DirichletCategorical(alpha)
        for n in range(0, 5):
            for c1 in range(n + 1):
                c2 = n - c1
                val, _ = integrate.quad(
                    lambda q: np.exp((a + c1 - 1) * np.log(q) + (b + c2 - 1) * np.log1p(-q)
                                     - betaln(a, b)),
                    0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=200)
                assert abs(np.log(val) - joint_log_prob([c1, c2], proc)) < 1e-8


class TestProductBreeding:
    def test_offspring_distribution_product(self):
        proc = ProductBreeding((DirichletCategorical([1.0, 2.0]), DirichletCategorical([0.5, 0.5])))
        p = proc.offspring_distribution([[2, 1], [0, 3]])
        a = np.array([3, 3]) / 6
        b = np.array([0.5, 3.5]) / 4
        np.testing.assert_allclose(p, np.outer(a, b).ravel(), rtol=1e-15)
        assert p.sum() == pytest.approx(1.0, abs=1e-15)

    def test_log_prob_sums_loci(self):
        proc = ProductBreeding.from_alpha([[1.0, 2.0], [0.5, 0.5]], L=2)
        lc = np.array([[2, 1], [0, 3]])
        assert proc.log_prob(lc) == pytest.approx(
            joint_log_prob(lc[0], proc.loci[0]) + joint_log_prob(lc[1], proc.loci[1]), abs=1e-15)

    def test_mixed_K_rejected(self):
        with pytest.raises(InvalidArgument):
            ProductBreeding((DirichletCategorical([1, 1]), DirichletCategorical([1, 1, 1])))

    def test_sample_population_law(self):
        # n = 2 sequential urn draws: P(both type 1) = a(a+1) / (|a|(|a|+1))
        proc = ProductBreeding.from_alpha([0.3, 0.7])
        rng = np.random.default_rng(7)
        N = 40_000
        hits = sum(proc.sample_population(2, rng).locus_counts[0, 0] == 2 for _ in range(N))
        p = 0.3 * 1.3 / (1.0 * 2.0)
        assert abs(hits / N - p) < 4 * np.sqrt(p * (1 - p) / N)


class TestBreedGenome:
    def test_l1_matches_conditional_sample(self):
        proc = ProductBreeding.from_alpha([0.5, 1.5, 1.0])
        pop = Population.from_indices(AlleleSpace(3, 1), [0, 0, 2, 1])
        g, m = breed_genome(pop, proc, np.random.default_rng(5), size=500)
        k, mm = conditional_sample(pop.locus_counts[0], proc.loci[0], np.random.default_rng(5),
                                   size=500)
        np.testing.assert_array_equal(g[:, 0], k)
        np.testing.assert_array_equal(m[:, 0], mm)

    def test_identical_population_copies(self):
        n = 50
        proc = ProductBreeding.from_alpha([0.01, 0.01], L=2)
        pop = Population(AlleleSpace(2, 2), np.tile([1, 0], (n, 1)))
        N = 200_000
        g, _ = breed_genome(pop, proc, np.random.default_rng(6), size=N)
        same = np.mean((g[:, 0] == 1) & (g[:, 1] == 0))
        bound = (n / (n + 0.02)) ** 2
        assert same >= bound - 4 * np.sqrt(bound * (1 - bound) / N)

    def test_per_locus_mutation_rates(self):
        proc = ProductBreeding.from_alpha([[3.0, 1.0], [0.5, 0.25]], L=2)
        rng = np.random.default_rng(8)
        pop = proc.sample_population(20, rng)
        N = 10**6
        _, m = breed_genome(pop, proc, rng, size=N)
        for j, tot in enumerate([4.0, 0.75]):
            u = tot / (tot + 20)
            assert abs(m[:, j].mean() - u) < 4 * np.sqrt(u * (1 - u) / N)

    def test_loci_independent(self):
        proc = ProductBreeding.from_alpha([1.0, 1.0], L=2)
        pop = Population(AlleleSpace(2, 2), [[0, 0], [0, 1], [1, 1]])
        N = 400_000
        g, _ = breed_genome(pop, proc, np.random.default_rng(9), size=N)
        joint = np.bincount(g[:, 0] * 2 + g[:, 1], minlength=4) / N
        expect = proc.offspring_distribution(pop.locus_counts)
        sd = np.sqrt(expect * (1 - expect) / N)
        assert np.all(np.abs(joint - expect) < 4 * sd)

    def test_no_population(self):
        proc = ProductBreeding.from_alpha([1.0, 1.0], L=3)
        genome, flags = breed_genome(None, proc, np.random.default_rng(0))
        assert len(genome) == 3 and all(flags)

    def test_space_mismatch(self):
        proc = ProductBreeding.from_alpha([1.0, 1.0], L=2)
        with pytest.raises(InvalidArgument):
            breed_genome(Population.from_indices(AlleleSpace(2, 1), [0]), proc,
                         np.random.default_rng(0))


class TestEffectiveAlpha:
    def test_lambda1_unchanged(self):
        np.testing.assert_array_equal(effective_alpha([0.3, 0.7], 1000, 1.0), [0.3, 0.7])

    def test_lambda0(self):
        np.testing.assert_allclose(effective_alpha([0.3, 0.7], 100, 0.0), [30.0, 70.0], rtol=1e-15)

    def test_lambda_half(self):
        np.testing.assert_allclose(effective_alpha([0.3, 0.7], 100, 0.5), [3.0, 7.0], rtol=1e-14)

    @pytest.mark.parametrize("lam", [-0.1, 1.5])
    def test_out_of_range(self, lam):
        with pytest.raises(InvalidArgument):
            effective_alpha([0.3, 0.7], 100, lam)

    def test_per_locus(self):
        out = effective_alpha_per_locus([[0.25, 0.25], [1.0, 2.0]], 16, 0.5)
        np.testing.assert_allclose(out[0], [1.0, 1.0])
        np.testing.assert_allclose(out[1], [4.0, 8.0])
