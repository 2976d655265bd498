#!/usr/bin/env python3
"""
Tests for the BDF coefficient generator, deflation and exactness checks.
"""

import sys
from fractions import Fraction as F
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from zerostab_errors import InvalidMethodError, InvalidRatioError, NotPreconsistentError
from zerostab_method import (
    CoefficientRow,
    DeflatedRow,
    MethodSpec,
    Normalization,
    bdf_alpha_batch,
    bdf_constant_row,
    bdf_variable_row,
    convolve_nabla,
    deflate_alpha_batch,
    deflate_row,
    exactness_residual,
    method_spec,
    ratio_array,
)

# Standard constant step rows, oldest coefficient first
CONSTANT_ALPHA = {
    1: (F(-1), F(1)),
    2: (F(1, 2), F(-2), F(3, 2)),
    3: (F(-1, 3), F(3, 2), F(-3), F(11, 6)),
    4: (F(1, 4), F(-4, 3), F(3), F(-4), F(25, 12)),
    5: (F(-1, 5), F(5, 4), F(-10, 3), F(5), F(-5), F(137, 60)),
    6: (F(1, 6), F(-6, 5), F(15, 4), F(-20, 3), F(15, 2), F(-6), F(49, 20)),
}

CONSTANT_GAMMA = {
    2: (F(-1, 2), F(3, 2)),
    3: (F(1, 3), F(-7, 6), F(11, 6)),
    4: (F(-1, 4), F(13, 12), F(-23, 12), F(25, 12)),
    5: (F(1, 5), F(-21, 20), F(137, 60), F(-163, 60), F(137, 60)),
    6: (F(-1, 6), F(31, 30), F(-163, 60), F(79, 20), F(-71, 20), F(49, 20)),
}


@pytest.fixture
def bdf2():
    return method_spec(2)


@pytest.fixture
def bdf3():
    return method_spec(3)


class TestMethodSpec:
    def test_name(self):
        assert method_spec(4).name == "BDF4"
        assert MethodSpec(family="BDF", k=2).name == "BDF2"

    @pytest.mark.parametrize("k", [0, 7, -1])
    def test_step_number_out_of_range(self, k):
        with pytest.raises(InvalidMethodError):
            method_spec(k)

    def test_unknown_family(self):
        with pytest.raises(InvalidMethodError):
            method_spec(2, family="adams")

    def test_spec_is_frozen(self, bdf2):
        with pytest.raises(Exception):
            bdf2.k = 3


class TestConstantRows:
    @pytest.mark.parametrize("k", range(1, 7))
    def test_constant_alpha_rows(self, k):
        row = bdf_constant_row(method_spec(k), exact=True)
        assert row.alpha == CONSTANT_ALPHA[k]
        assert row.beta[-1] == 1
        assert all(b == 0 for b in row.beta[:-1])

    @pytest.mark.parametrize("k", range(2, 7))
    def test_constant_deflated_rows(self, k):
        gamma = deflate_row(bdf_constant_row(method_spec(k), exact=True)).gamma
        assert gamma == CONSTANT_GAMMA[k]

    @pytest.mark.parametrize("k", range(1, 7))
    def test_float_rows_match_exact(self, k):
        exact = bdf_constant_row(method_spec(k), exact=True)
        approx = bdf_constant_row(method_spec(k))
        assert list(approx.alpha) == pytest.approx([float(a) for a in exact.alpha], abs=1e-13)

    def test_leading_coefficient_is_harmonic_number(self):
        for k in range(1, 7):
            row = bdf_constant_row(method_spec(k), exact=True)
            assert row.alpha[-1] == sum(F(1, j) for j in range(1, k + 1))


class TestVariableRows:
    def test_bdf2_closed_form(self, bdf2):
        for r in (F(1, 2), F(1), F(2), F(7, 3)):
            row = bdf_variable_row(bdf2, [r], exact=True)
            assert row.alpha == (r * r / 2, -(1 + r) ** 2 / 2, (1 + 2 * r) / 2)
            assert row.beta[-1] == (1 + r) / 2

    def test_bdf2_unit_beta_normalization(self, bdf2):
        r = F(2)
        classical = bdf_variable_row(bdf2, [r], exact=True)
        unit = bdf_variable_row(bdf2, [r], exact=True, normalization=Normalization.UNIT_BETA)
        scale = (1 + r) / 2
        assert unit.beta[-1] == 1
        assert tuple(a * scale for a in unit.alpha) == classical.alpha

    def test_bdf3_newest_ratio_doubled(self, bdf3):
        row = bdf_variable_row(bdf3, [1, 2], exact=True)
        assert row.alpha == (F(-3, 2), F(16, 3), F(-6), F(13, 6))
        assert deflate_row(row).gamma == (F(3, 2), F(-23, 6), F(13, 6))

    def test_bdf3_oldest_ratio_doubled(self, bdf3):
        row = bdf_variable_row(bdf3, [2, 1], exact=True)
        assert deflate_row(row).gamma == (F(16, 15), F(-43, 30), F(19, 10))

    @pytest.mark.parametrize("k", range(2, 7))
    def test_rows_sum_to_zero(self, k):
        rng = np.random.default_rng(k)
        ratios = rng.uniform(0.5, 2.0, size=k - 1)
        row = bdf_variable_row(method_spec(k), ratios)
        assert abs(sum(row.alpha)) < 1e-12

    def test_batch_matches_single_rows(self, bdf3):
        ratios = np.array([[1.0, 2.0], [0.5, 1.5], [1.1, 0.9]])
        alpha, beta_k = bdf_alpha_batch(3, ratios)
        for i, r in enumerate(ratios):
            row = bdf_variable_row(bdf3, r)
            assert list(alpha[i]) == pytest.approx(list(row.alpha), rel=1e-13)
            assert beta_k[i] == 1.0

    def test_ratios_are_never_clamped(self, bdf2):
        with pytest.raises(InvalidRatioError):
            bdf_variable_row(bdf2, [0.0])
        with pytest.raises(InvalidRatioError):
            bdf_variable_row(bdf2, [-1.0])
        with pytest.raises(InvalidRatioError):
            bdf_variable_row(bdf2, [float("inf")])

    def test_wrong_number_of_ratios(self, bdf3):
        with pytest.raises(InvalidRatioError):
            bdf_variable_row(bdf3, [1.0])

    def test_ratio_array_shape(self):
        assert ratio_array([1.0, 2.0], 3).shape == (1, 2)
        assert ratio_array(np.ones((5, 2)), 3).shape == (5, 2)
        assert ratio_array(["1/2", 3], 3, exact=True)[0, 0] == F(1, 2)


class TestExactness:
    @pytest.mark.parametrize("k", range(1, 7))
    def test_polynomials_up_to_degree_k(self, k):
        ratios = [F(3, 2) if i % 2 else F(2, 3) for i in range(k - 1)]
        row = bdf_variable_row(method_spec(k), ratios, exact=True)
        steps = [F(1)]
        for r in ratios:
            steps.append(steps[-1] * r)
        nodes = [F(0)]
        for h in steps:
            nodes.append(nodes[-1] + h)
        assert exactness_residual(row, nodes) == 0

    def test_degree_k_plus_one_is_not_exact(self, bdf2):
        row = bdf_variable_row(bdf2, [2], exact=True)
        assert exactness_residual(row, [F(0), F(1), F(3)], max_degree=3) != 0

    def test_float_rows(self, bdf3):
        row = bdf_variable_row(bdf3, [1.25, 0.8])
        nodes = [0.0, 0.4, 0.9, 1.3]
        assert exactness_residual(row, nodes) < 1e-12

    def test_nodes_must_match_ratios(self, bdf2):
        row = bdf_variable_row(bdf2, [2], exact=True)
        with pytest.raises(InvalidRatioError):
            exactness_residual(row, [F(0), F(1), F(2)])


class TestDeflation:
    def test_reconstruct_round_trip(self, bdf3):
        row = bdf_variable_row(bdf3, [F(3, 4), F(5, 4)], exact=True)
        deflated = deflate_row(row)
        assert deflated.reconstruct() == row.alpha
        assert isinstance(deflated, DeflatedRow)
        assert deflated.k == 3

    def test_convolve_nabla(self):
        assert convolve_nabla((F(-1, 2), F(3, 2))) == CONSTANT_ALPHA[2]

    def test_not_preconsistent(self):
        row = CoefficientRow(alpha=(F(1), F(1)), beta=(F(0), F(1)), ratios=())
        with pytest.raises(NotPreconsistentError):
            deflate_row(row)

    def test_float_tolerance(self):
        row = CoefficientRow(alpha=(0.5, -2.0, 1.5 + 1e-15), beta=(0.0, 0.0, 1.0), ratios=(1.0,))
        gamma = deflate_row(row).gamma
        assert gamma == pytest.approx((-0.5, 1.5))
        bad = CoefficientRow(alpha=(0.5, -2.0, 1.5 + 1e-6), beta=(0.0, 0.0, 1.0), ratios=(1.0,))
        with pytest.raises(NotPreconsistentError):
            deflate_row(bad)

    def test_batch_deflation(self):
        alpha = np.array([[0.5, -2.0, 1.5], [2.0, -4.5, 2.5]])
        gamma = deflate_alpha_batch(alpha)
        assert list(gamma[0]) == pytest.approx([-0.5, 1.5])
        assert list(gamma[1]) == pytest.approx([-2.0, 2.5])
        with pytest.raises(NotPreconsistentError):
            deflate_alpha_batch(np.array([[1.0, 1.0]]))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
