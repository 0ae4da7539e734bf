import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimscale.model import (
    ItemPartition,
    ModelParameters,
    ResponseMatrix,
    ValidationError,
    conditional_probabilities,
    dataset_log_likelihood,
    dimension_frequency,
    pattern_log_likelihood,
    permute_classes,
    posterior_class_probabilities,
    success_probability,
)
from dimscale.simulate import brute_force_loglik

from conftest import random_parameters, random_partition


def one_item(gamma, beta, theta_c):
    """k=2 so that class 1 can carry an arbitrary ability."""
    return ModelParameters([0.5, 0.5], [[0.0], [theta_c]], [beta], [gamma]), ItemPartition(((0,),))


class TestTypes:
    def test_partition_rejects_overlap(self):
        with pytest.raises(ValidationError):
            ItemPartition(((0, 1), (1, 2)))

    def test_partition_rejects_gaps(self):
        with pytest.raises(ValidationError):
            ItemPartition(((0,), (2,)))

    def test_partition_rejects_empty_group(self):
        with pytest.raises(ValidationError):
            ItemPartition(((0, 1), ()))

    def test_partition_is_canonical(self):
        assert ItemPartition(((3, 1), (2, 0))) == ItemPartition(((0, 2), (1, 3)))

    def test_indicator_matches_membership(self):
        part = ItemPartition(((0, 2), (1,), (3, 4)))
        delta = part.indicator()
        assert delta.shape == (5, 3)
        assert delta.sum(axis=1).tolist() == [1] * 5
        for d, g in enumerate(part.groups):
            for j in range(5):
                assert delta[j, d] == (j in g)

    def test_merge(self):
        part = ItemPartition.singletons(4)
        assert part.merge(1, 3) == ItemPartition(((0,), (1, 3), (2,)))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            ModelParameters([0.5, 0.6], np.zeros((2, 1)), [0.0], [1.0])

    def test_anchor_row_must_be_zero(self):
        with pytest.raises(ValidationError):
            ModelParameters([1.0], [[0.5]], [0.0], [1.0])

    def test_discriminations_positive(self):
        with pytest.raises(ValidationError):
            ModelParameters([1.0], [[0.0]], [0.0], [0.0])

    def test_reference_gamma_checked_against_partition(self):
        params = ModelParameters([1.0], [[0.0]], [0.0, 0.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            conditional_probabilities(params, ItemPartition(((1,), (0,))))

    def test_response_matrix_rejects_non_binary(self):
        with pytest.raises(ValidationError):
            ResponseMatrix.from_array([[0, 2]])

    def test_response_matrix_rejects_duplicate_ids(self):
        with pytest.raises(ValidationError):
            ResponseMatrix(np.zeros((2, 2), dtype=int), ("a", "a"))


class TestSuccessProbability:
    def test_zero_logit(self):
        params, part = one_item(1.0, 0.0, 0.0)
        assert success_probability(params, part, 0, 1) == 0.5

    def test_theta_equals_beta(self):
        params, part = one_item(2.0, 1.0, 1.0)
        assert success_probability(params, part, 0, 1) == 0.5

    def test_worked_value(self):
        params, part = one_item(1.5, 0.5, 1.2)
        assert success_probability(params, part, 0, 1) == pytest.approx(0.740774899182154, abs=1e-15)

    def test_index_errors(self):
        params, part = one_item(1.0, 0.0, 0.0)
        with pytest.raises(IndexError):
            success_probability(params, part, 1, 0)
        with pytest.raises(IndexError):
            success_probability(params, part, 0, 2)

    @given(
        gamma=st.floats(0.05, 5.0),
        beta=st.floats(-3.0, 3.0),
        theta=st.floats(-3.0, 3.0),
        bump=st.floats(0.05, 2.0),
    )
    def test_monotone_in_theta_and_beta(self, gamma, beta, theta, bump):
        base, part = one_item(gamma, beta, theta)
        p = success_probability(base, part, 0, 1)
        assert 0.0 < p < 1.0
        higher_theta, _ = one_item(gamma, beta, theta + bump)
        higher_beta, _ = one_item(gamma, beta + bump, theta)
        assert success_probability(higher_theta, part, 0, 1) > p
        assert success_probability(higher_beta, part, 0, 1) < p


class TestLikelihood:
    def test_single_bernoulli(self):
        params = ModelParameters([1.0], [[0.0]], [0.0], [1.0])
        part = ItemPartition(((0,),))
        assert pattern_log_likelihood(params, part, [1]) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_identical_components_collapse(self, rng):
        part = ItemPartition(((0, 1), (2,)))
        beta, gamma = [0.3, -0.7, 1.1], [1.0, 1.7, 1.0]
        one = ModelParameters([1.0], np.zeros((1, 2)), beta, gamma)
        two = ModelParameters([0.5, 0.5], np.zeros((2, 2)), beta, gamma)
        row = [1, 0, 1]
        assert pattern_log_likelihood(two, part, row) == pytest.approx(pattern_log_likelihood(one, part, row), abs=1e-14)

    def test_single_row_matches_brute_force(self, rng):
        part = ItemPartition(((0, 2), (1,)))
        params = random_parameters(rng, 2, part)
        row = np.array([[1, 0, 1]])
        assert pattern_log_likelihood(params, part, row[0]) == pytest.approx(
            brute_force_loglik(params, part, row), abs=1e-12
        )

    def test_rejects_non_binary_row(self, rng):
        part = ItemPartition.singletons(2)
        params = random_parameters(rng, 2, part)
        with pytest.raises(ValidationError):
            pattern_log_likelihood(params, part, [1, 2])

    def test_duplicate_rows_double(self, rng):
        part = ItemPartition.singletons(3)
        params = random_parameters(rng, 3, part)
        row = [0, 1, 1]
        assert dataset_log_likelihood(params, part, np.array([row, row])) == pytest.approx(
            2 * pattern_log_likelihood(params, part, row), abs=1e-13
        )

    def test_independence_when_one_class(self, rng):
        part = ItemPartition(((0, 1, 2, 3),))
        params = ModelParameters([1.0], [[0.0]], rng.normal(size=4), [1.0, 0.7, 1.3, 2.0])
        data = rng.integers(0, 2, size=(50, 4))
        lam = conditional_probabilities(params, part)[0]
        ones = data.sum(axis=0)
        expected = float(np.sum(ones * np.log(lam) + (50 - ones) * np.log(1 - lam)))
        assert dataset_log_likelihood(params, part, data) == pytest.approx(expected, abs=1e-10)

    def test_random_matches_brute_force(self, rng):
        part = ItemPartition(((0, 1), (2,)))
        params = random_parameters(rng, 2, part)
        data = rng.integers(0, 2, size=(20, 3))
        assert dataset_log_likelihood(params, part, data) == pytest.approx(
            brute_force_loglik(params, part, data), abs=1e-10
        )

    def test_aggregation_matches_rowwise(self, rng):
        part = random_partition(rng, 8, 3)
        params = random_parameters(rng, 4, part)
        data = rng.integers(0, 2, size=(300, 8))
        agg = dataset_log_likelihood(params, part, data, aggregate=True)
        naive = dataset_log_likelihood(params, part, data, aggregate=False)
        assert agg == pytest.approx(naive, abs=1e-10)

    def test_dimension_mismatch(self, rng):
        part = ItemPartition.singletons(3)
        params = random_parameters(rng, 2, part)
        with pytest.raises(ValidationError):
            dataset_log_likelihood(params, part, np.zeros((4, 2), dtype=int))

    def test_long_patterns_stay_finite(self, rng):
        part = random_partition(rng, 60, 4)
        params = random_parameters(rng, 3, part, spread=6.0)
        data = rng.integers(0, 2, size=(10, 60))
        value = dataset_log_likelihood(params, part, data)
        assert np.isfinite(value) and value < 0

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 4))
    def test_label_swap_symmetry(self, seed, k):
        rng = np.random.default_rng(seed)
        part = random_partition(rng, 5, 2)
        params = random_parameters(rng, k, part)
        order = rng.permutation(k)
        swapped = permute_classes(params, part, order)
        assert np.allclose(conditional_probabilities(swapped, part), conditional_probabilities(params, part)[order])
        row = rng.integers(0, 2, size=5)
        assert pattern_log_likelihood(swapped, part, row) == pytest.approx(
            pattern_log_likelihood(params, part, row), abs=1e-12
        )


class TestPosterior:
    def test_equal_likelihoods_give_prior(self):
        part = ItemPartition.singletons(2)
        params = ModelParameters([0.2, 0.3, 0.5], np.zeros((3, 2)), [0.1, -0.4], [1.0, 1.0])
        assert np.allclose(posterior_class_probabilities(params, part, [1, 0]), [0.2, 0.3, 0.5], atol=1e-15)

    def test_single_class(self):
        params = ModelParameters([1.0], [[0.0]], [0.0], [1.0])
        assert posterior_class_probabilities(params, ItemPartition(((0,),)), [0]).tolist() == [1.0]

    def test_hand_bayes(self):
        part = ItemPartition(((0, 1),))
        params = ModelParameters([0.3, 0.7], [[0.0], [1.5]], [0.2, -0.4], [1.0, 2.0])
        lam = [[1 / (1 + math.exp(-g * (t - b))) for g, b in ((1.0, 0.2), (2.0, -0.4))] for t in (0.0, 1.5)]
        joint = [pi * l[0] * (1 - l[1]) for pi, l in zip((0.3, 0.7), lam)]
        expected = [v / sum(joint) for v in joint]
        post = posterior_class_probabilities(params, part, [1, 0])
        assert post == pytest.approx(expected, abs=1e-12)

    def test_extreme_rows_do_not_underflow(self, rng):
        part = ItemPartition.single_group(200)
        params = ModelParameters([0.5, 0.5], [[0.0], [15.0]], np.zeros(200), np.ones(200))
        post = posterior_class_probabilities(params, part, np.ones(200, dtype=int))
        assert np.all(np.isfinite(post)) and post.sum() == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 5))
    def test_is_a_distribution(self, seed, k):
        rng = np.random.default_rng(seed)
        part = random_partition(rng, 6, 3)
        params = random_parameters(rng, k, part, spread=4.0)
        post = posterior_class_probabilities(params, part, rng.integers(0, 2, size=6))
        assert np.all(post >= 0)
        assert abs(post.sum() - 1.0) <= 1e-12


class TestDimensionFrequency:
    def test_plain_mean_with_one_class(self):
        lam = np.array([0.2, 0.4])
        beta = -np.log(lam / (1 - lam))
        params = ModelParameters([1.0], [[0.0]], beta, [1.0, 1.0])
        out = dimension_frequency(params, ItemPartition(((0, 1),)))
        assert out == pytest.approx([0.3], abs=1e-12)

    def test_weighted_mean(self):
        # class 0: lambda 0.2; class 1: lambda 0.6
        beta = -math.log(0.2 / 0.8)
        theta1 = math.log(0.6 / 0.4) + beta
        params = ModelParameters([0.5, 0.5], [[0.0], [theta1]], [beta], [1.0])
        assert dimension_frequency(params, ItemPartition(((0,),))) == pytest.approx([0.4], abs=1e-12)

    def test_need_not_sum_to_one(self, rng):
        part = ItemPartition.singletons(3)
        params = ModelParameters([1.0], np.zeros((1, 3)), [-2.0, -2.0, -2.0], [1.0, 1.0, 1.0])
        out = dimension_frequency(params, part)
        assert out.sum() > 1.0
        assert np.all((out > 0) & (out < 1))

    def test_one_class_equals_group_means(self, rng):
        part = random_partition(rng, 9, 3)
        params = random_parameters(rng, 1, part)
        lam = conditional_probabilities(params, part)[0]
        expected = [lam[list(g)].mean() for g in part.groups]
        assert dimension_frequency(params, part) == pytest.approx(expected, abs=1e-14)
