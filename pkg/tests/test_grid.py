#!/usr/bin/env python3
"""
Tests for grid maps, realised grids, regularity estimates and the step size controller.
"""

import math
import sys
from fractions import Fraction as F
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from zerostab_errors import ControllerError, GridError, UsageError
from zerostab_grid import (
    CallableMap,
    ControllerConfig,
    ExpRampMap,
    Grid,
    IdentityMap,
    PowerMap,
    SigmoidMap,
    build_grid,
    constant_ratio_grid,
    controller_grid,
    parse_grid_map,
    ratio_of_ratios,
    regularity,
    uniform_grid,
)


@pytest.fixture
def exp_map():
    return ExpRampMap(c=2.0)


@pytest.fixture
def sigmoid_map():
    return SigmoidMap(a=0.5, c=0.5, w=0.1)


class TestGridMaps:
    @pytest.mark.parametrize("grid_map", [
        IdentityMap(), ExpRampMap(c=2.0), ExpRampMap(c=-1.0), PowerMap(a=2.0), SigmoidMap(),
    ])
    def test_maps_fix_the_endpoints(self, grid_map):
        assert float(grid_map.phi_map(0.0)) == pytest.approx(0.0, abs=1e-15)
        assert float(grid_map.phi_map(1.0)) == pytest.approx(1.0, rel=1e-14)

    def test_density_is_derivative_of_map(self, sigmoid_map):
        tau = np.linspace(0.05, 0.95, 19)
        step = 1e-6
        numeric = (sigmoid_map.phi_map(tau + step) - sigmoid_map.phi_map(tau - step)) / (2 * step)
        assert list(numeric) == pytest.approx(list(sigmoid_map.density(tau)), rel=1e-6)

    def test_parse_grid_map(self):
        assert parse_grid_map("exp:c=2") == ExpRampMap(c=2.0)
        assert parse_grid_map("sigmoid:a=0.5,w=0.05") == SigmoidMap(a=0.5, w=0.05)
        assert parse_grid_map("identity") == IdentityMap()
        assert parse_grid_map("exp:c=2").label == "exp:c=2"

    @pytest.mark.parametrize("text", ["spline:c=1", "exp:c", "exp:c=two", "exp:d=1"])
    def test_parse_errors(self, text):
        with pytest.raises(UsageError):
            parse_grid_map(text)

    def test_invalid_sigmoid(self):
        with pytest.raises(GridError):
            SigmoidMap(a=1.5)

    def test_model_steps(self, exp_map):
        steps = exp_map.model_steps(200)
        assert math.fsum(steps) == pytest.approx(1.0, rel=1e-4)


class TestRegularity:
    def test_identity(self):
        assert regularity(IdentityMap()).value == 0.0

    def test_exp_ramp_is_constant(self, exp_map):
        result = regularity(exp_map)
        assert result.value == 2.0
        assert result.method == "analytic"

    def test_power_map_is_singular(self):
        assert math.isinf(regularity(PowerMap(a=2.0)).value)
        assert regularity(PowerMap(a=1.0)).value == 0.0

    def test_sigmoid_analytic_maximum(self, sigmoid_map):
        result = regularity(sigmoid_map)
        taus = np.linspace(0.0, 1.0, 200001)
        brute = float(np.max(np.abs(sigmoid_map.log_derivative(taus))))
        assert result.value == pytest.approx(brute, rel=1e-8)
        assert 0.0 < result.tau < sigmoid_map.c
        assert result.t == pytest.approx(float(sigmoid_map.phi_map(result.tau)))

    def test_central_difference_agrees(self, sigmoid_map):
        custom = CallableMap(phi_fn=sigmoid_map.phi_map, density_fn=sigmoid_map.density, name="sigmoid-copy")
        estimate = regularity(custom, sampling=20000)
        assert estimate.method == "central-difference"
        assert estimate.value == pytest.approx(regularity(sigmoid_map).value, rel=1e-3)

    def test_non_positive_density(self):
        bad = CallableMap(phi_fn=lambda t: t * t, density_fn=lambda t: 2 * t - 0.5, name="bad")
        with pytest.raises(GridError):
            regularity(bad)


class TestGrid:
    def test_exp_ramp_ratios(self, exp_map):
        grid = build_grid(exp_map, 100)
        assert grid.N == 100
        assert grid.t[0] == 0.0 and grid.t[-1] == 1.0
        assert np.allclose(grid.r, math.exp(2.0 / 100), rtol=1e-10)

    @pytest.mark.parametrize("N", [100, 1000])
    def test_increment_model_accuracy(self, exp_map, N):
        c = exp_map.c
        deviation = float(np.max(np.abs(build_grid(exp_map, N).v - c / N)))
        assert deviation <= 5 * c * c / N ** 2

    @pytest.mark.parametrize("N", [100, 200, 400])
    def test_exp_ramp_increments_halve(self, exp_map, N):
        coarse = build_grid(exp_map, N).max_abs_v()
        fine = build_grid(exp_map, 2 * N).max_abs_v()
        assert coarse / fine == pytest.approx(2.0, rel=0.01)

    def test_endpoints_are_checked(self):
        half = CallableMap(phi_fn=lambda t: 0.5 * t, density_fn=lambda t: 0.5 + 0 * t, name="half")
        with pytest.raises(GridError, match="half"):
            build_grid(half, 10)
        shifted = CallableMap(phi_fn=lambda t: 0.1 + 0.9 * t, density_fn=lambda t: 0.9 + 0 * t)
        with pytest.raises(GridError):
            build_grid(shifted, 10)

    def test_ratio_of_ratios_is_second_order(self, sigmoid_map):
        deviations = [ratio_of_ratios(build_grid(sigmoid_map, N)) for N in (400, 800, 1600)]
        assert deviations[0] / deviations[1] >= 3.5
        assert deviations[1] / deviations[2] >= 3.5

    def test_uniform_exact(self):
        grid = uniform_grid(4, exact=True)
        assert grid.exact
        assert list(grid.h) == [F(1, 4)] * 4
        assert list(grid.r) == [F(1)] * 3
        assert grid.max_abs_v() == 0.0

    def test_constant_ratio_grid(self):
        grid = constant_ratio_grid(F(2), 5)
        assert list(grid.r) == [F(2)] * 4
        assert grid.t[-1] == 1
        assert grid.h[0] == F(1, 31)

    def test_from_steps_rescales(self):
        grid = Grid.from_steps([1.0, 2.0, 1.0])
        assert list(grid.t) == pytest.approx([0.0, 0.25, 0.75, 1.0])
        assert grid.ratio_bounds() == pytest.approx((0.5, 2.0))

    def test_from_times_validation(self):
        with pytest.raises(GridError):
            Grid.from_times([0.0, 0.5, 0.4, 1.0])
        with pytest.raises(GridError):
            Grid.from_times([0.0, 0.5, 0.9])

    def test_stencil_ratios(self):
        grid = Grid.from_steps([F(1), F(2), F(1), F(3)])
        stencils = grid.stencil_ratios(3)
        assert stencils.shape == (2, 2)
        assert list(stencils[0]) == [F(2), F(1, 2)]
        assert list(stencils[1]) == [F(1, 2), F(3)]
        with pytest.raises(GridError):
            grid.stencil_ratios(5)

    def test_csv(self):
        grid = uniform_grid(2, exact=True)
        lines = grid.to_csv().splitlines()
        assert lines[0] == "n,t,h,r,v"
        assert lines[1] == "0,0,1/2,1,0"
        assert lines[-1] == "2,1,,,"

    def test_summary(self, exp_map):
        summary = build_grid(exp_map, 50).summary()
        assert summary["source"] == "exp:c=2"
        assert summary["max_abs_v"] == pytest.approx(math.expm1(2.0 / 50), rel=1e-9)


class TestController:
    def test_validation(self):
        with pytest.raises(Exception):
            ControllerConfig(epsilon=0.0, p=2)
        with pytest.raises(Exception):
            ControllerConfig(epsilon=1e-4, p=0)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_step_count_scaling(self, p):
        def error_model(t):
            return 1.0 + t

        eps = 1e-4 ** p
        coarse = controller_grid(ControllerConfig(epsilon=eps, p=p), error_model)
        fine = controller_grid(ControllerConfig(epsilon=eps / 2, p=p), error_model)
        assert fine.N / coarse.N == pytest.approx(2 ** (1 / p), rel=0.1)

    def test_constant_error_model_gives_unit_ratios(self):
        grid = controller_grid(ControllerConfig(epsilon=1e-6, p=2), lambda t: 1.0)
        assert np.max(np.abs(grid.r[:-2] - 1.0)) < 1e-10
        assert grid.t[-1] == 1.0

    def test_filtered_controller_is_smooth(self):
        cfg = ControllerConfig(epsilon=1e-6, p=2, b1=0.5, b2=0.5, a1=0.5)
        grid = controller_grid(cfg, lambda t: math.exp(3 * t))
        assert grid.N > 100
        assert np.max(np.abs(grid.v[:-2])) < 0.01

    def test_deadbeat_steps_follow_the_error_model(self):
        # E(t) = exp(-p t) with p = 2 gives h(t) proportional to exp(t)
        grid = controller_grid(ControllerConfig(epsilon=1e-6, p=2), lambda t: math.exp(-2 * t))
        interior = slice(1, grid.N - 2)
        slope, _ = np.polyfit(grid.t[interior], np.log(grid.h[interior]), 1)
        assert slope == pytest.approx(1.0, rel=0.05)

    def test_startup_steps_hold_the_initial_step(self):
        cfg = ControllerConfig(epsilon=1e-6, p=2, startup_steps=3)
        grid = controller_grid(cfg, lambda t: math.exp(-2 * t))
        assert grid.h[0] == pytest.approx(1e-3, rel=1e-9)
        assert grid.r[0] == pytest.approx(1.0, abs=1e-12)
        assert grid.r[1] == pytest.approx(1.0, abs=1e-12)
        assert grid.r[2] > 1.002

        single = controller_grid(ControllerConfig(epsilon=1e-6, p=2), lambda t: math.exp(-2 * t))
        assert single.r[0] > 1.0005

    def test_bad_error_model(self):
        with pytest.raises(ControllerError):
            controller_grid(ControllerConfig(epsilon=1e-4, p=1), lambda t: -1.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
