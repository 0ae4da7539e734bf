import math

import pytest

from dimscale.estimation import parameter_count
from dimscale.selection import aic, bic, cut_by_min_bic, lr_statistic, select_min_bic

# published BIC values for a 31-item, k=3 clustering path, steps 1..30 (s = 31 - step)
PUBLISHED_BIC = [
    91615.2, 91607.2, 91599.1, 91591.1, 91583.0, 91574.9, 91566.9, 91558.8, 91550.8, 91542.8,
    91534.7, 91526.7, 91518.8, 91510.9, 91503.0, 91495.3, 91487.8, 91480.8, 91473.9, 91468.8,
    91464.5, 91461.6, 91458.5, 91455.3, 91453.2, 91460.7, 91510.4, 91575.5, 91708.4, 92181.7,
]


class TestCriteria:
    def test_bic_worked_value(self):
        assert bic(-100.0, 5, 100) == pytest.approx(223.02585092994047, abs=1e-12)

    def test_bic_with_one_respondent_is_deviance(self):
        assert bic(-3.5, 10, 1) == 7.0

    def test_bic_rejects_empty_sample(self):
        with pytest.raises(ValueError):
            bic(-1.0, 1, 0)

    def test_aic(self):
        assert aic(-100.0, 5) == 210.0

    def test_lr_is_not_clamped(self):
        assert lr_statistic(-10.0, -12.0) == -4.0
        assert lr_statistic(-12.0, -10.0) == 4.0


class TestParameterCount:
    @pytest.mark.parametrize(
        "items, k, s, expected",
        [(1, 1, 1, 1), (2, 2, 1, 5), (31, 3, 6, 70), (31, 3, 31, 95), (31, 1, 31, 31)],
    )
    def test_counts(self, items, k, s, expected):
        # weights k-1, abilities (k-1)s, difficulties J, discriminations J-s
        assert parameter_count(items, k, s) == expected

    def test_merge_removes_k_minus_two(self):
        for k in (1, 2, 3, 5):
            assert parameter_count(10, k, 6) - parameter_count(10, k, 5) == k - 2

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            parameter_count(3, 2, 4)


class TestCut:
    def test_published_cut(self):
        rows = [(step, 31 - step, value) for step, value in enumerate(PUBLISHED_BIC, start=1)]
        assert cut_by_min_bic(rows) == (25, 6)

    def test_tie_prefers_fewer_dimensions(self):
        assert select_min_bic([(1, 3, 10.0), (2, 2, 10.0), (3, 1, 11.0)]) == (2, 2)

    def test_single_row(self):
        assert select_min_bic([(0, 4, 1.0)]) == (0, 4)

    def test_per_step_increment_matches_log_n(self):
        n = 3180
        delta = [PUBLISHED_BIC[i] - PUBLISHED_BIC[i + 1] for i in range(14)]
        mean = sum(delta) / len(delta)
        assert mean == pytest.approx(8.0142857, abs=1e-6)
        analytic = (parameter_count(31, 3, 31) - parameter_count(31, 3, 30)) * math.log(n)
        assert analytic == pytest.approx(8.064636475774222, abs=1e-12)
        assert abs(analytic - mean) < 0.1
