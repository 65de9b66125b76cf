"""Sensitivities, screening, controllability, robustness, ranking and sweeps."""

import numpy as np
import pytest

from wdn_dae.config import Config
from wdn_dae.error_handler import PreconditionError, SingularJx, SingularStepMatrix
from wdn_dae.inp_parser import parse_inp
from wdn_dae.linearization import linearize
from wdn_dae.margins import (
    certified_radius,
    demand_profile_levels,
    demand_sweep,
    equilibrium_sensitivity,
    kalman_margin,
    margin_report,
    margin_robustness,
    matrix_sensitivity,
    pbh_margin,
    rank_from_gains,
    rank_parameters,
    reachability_authority,
    reduced_family,
    roughness_direction,
    roughness_residual_sweep,
    sample_perturbations,
    screen_linearization,
    sensitivity_from_residual,
)
from wdn_dae.network_model import build_model
from wdn_dae.schedule import Demands, ScheduleInput, build_schedule
from tests.conftest import THREE_NODE_INP


class TestEquilibriumSensitivity:
    def test_scalar_residual(self) -> None:
        S = sensitivity_from_residual(lambda x, theta: x - theta, np.array([1.0]), np.array([1.0]))
        np.testing.assert_allclose(S, [[1.0]])

    def test_singular_state_jacobian(self) -> None:
        with pytest.raises(SingularJx):
            sensitivity_from_residual(lambda x, theta: 0.0 * x + theta, np.array([1.0]), np.array([1.0]))

    def test_three_node_directions(self, three_node_model, equilibrium, controls, tank_draw) -> None:
        assert three_node_model.theta_names() == [
            "roughness:1", "diameter:1", "shutoff_head:9", "pump_resistance:9", "tank_area:8"]
        S = equilibrium_sensitivity(three_node_model, equilibrium, controls, tank_draw, indices=[0, 4])
        assert S.shape == (5, 2)
        headloss = equilibrium.p_J[0] - equilibrium.p_A[0]
        # flows are fixed by the balances, so only the tank head moves
        assert S[3, 0] == pytest.approx(1.852 * headloss, rel=1e-5)
        np.testing.assert_allclose(S[:3, 0], 0.0, atol=1e-9)
        np.testing.assert_array_equal(S[:, 1], 0.0)


class TestScreening:
    def test_certified_radius(self) -> None:
        assert certified_radius(0.1, 2.0, 0.4) == pytest.approx(1.0)
        assert certified_radius(0.1, 2.0, 0.4, r0=0.5) == 0.5
        assert certified_radius(0.1, 2.0, 0.0, r0=3.0) == 3.0
        for eps in (0.0, 1.0):
            with pytest.raises(PreconditionError, match="eps_lin"):
                certified_radius(eps, 2.0, 0.4)

    def test_matrix_residual_is_second_order(self, three_node_model, controls, tank_draw) -> None:
        table = roughness_residual_sweep(three_node_model, controls, tank_draw, deltas=[1.0, 2.0])
        ratio = table["residual"].iloc[1] / table["residual"].iloc[0]
        assert 3.5 <= ratio <= 4.5

    def test_sensitivity_predicts_shift(self, three_node_model, controls, tank_draw) -> None:
        sens = matrix_sensitivity(three_node_model, controls, tank_draw, 0)
        # only the pipe slope depends on roughness
        assert np.count_nonzero(np.abs(sens.dA) > 1e-6 * np.abs(sens.dA).max()) == 1
        assert sens.dA[0, 0] > 0.0
        assert sens.L_A > 0.0
        np.testing.assert_array_equal(sens.dE, 0.0)

    def test_loop_sweep(self, loop_model, loop_demands) -> None:
        table = roughness_residual_sweep(loop_model, loop_model.nominal_controls(), loop_demands)
        assert table["delta"].tolist() == [0.25, 0.5, 1.0, 2.0, 5.0, 10.0]
        assert np.all(np.diff(table["relative_residual"]) > 0.0)
        assert np.all(table["residual"] < table["true_shift"])

    def test_screen_decisions(self, three_node_model, controls, tank_draw) -> None:
        idle = screen_linearization(three_node_model, controls, tank_draw, np.zeros(5))
        assert idle.accept
        assert idle.residual == 0.0

        small = np.zeros(5)
        small[0] = 0.01
        near = screen_linearization(three_node_model, controls, tank_draw, small)
        assert near.accept
        assert near.relative_residual < 0.05

        large = np.zeros(5)
        large[0] = 5.0
        far = screen_linearization(three_node_model, controls, tank_draw, large)
        assert not far.accept
        assert far.to_dict()["decision"] == "reject"
        assert far.recommendation.startswith("relinearize")

    def test_roughness_direction(self, loop_model) -> None:
        v = roughness_direction(loop_model)
        assert v.sum() == loop_model.n_P
        assert v.size == loop_model.n_theta


class TestControllability:
    def test_kalman_scalar_and_chain(self) -> None:
        _, sigma = kalman_margin((np.array([[-1.0]]), np.array([[2.0]])))
        assert sigma == pytest.approx(2.0)
        K, sigma = kalman_margin((np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]])))
        np.testing.assert_array_equal(K, [[0.0, 1.0], [1.0, 0.0]])
        assert sigma == pytest.approx(1.0)

    def test_kalman_scales_with_input(self) -> None:
        A = np.array([[-1.0, 0.5], [0.0, -2.0]])
        B = np.array([[1.0], [1.0]])
        _, base = kalman_margin((A, B))
        _, scaled = kalman_margin((A, 3.0 * B))
        assert scaled == pytest.approx(3.0 * base)

    def test_short_horizon_is_rank_deficient(self) -> None:
        K, sigma = kalman_margin((-np.eye(4), np.ones((4, 1))), N=2)
        assert K.shape == (4, 2)
        assert sigma == 0.0

    def test_bad_horizon(self) -> None:
        with pytest.raises(PreconditionError, match="horizon"):
            kalman_margin((np.eye(1), np.eye(1)), N=0)

    def test_pbh(self, three_node_model, equilibrium, controls, tank_draw) -> None:
        A, E = np.array([[-1.0]]), np.array([[1.0]])
        assert pbh_margin((A, E, np.array([[0.0]]))) == pytest.approx(0.0, abs=1e-14)
        assert pbh_margin((A, E, np.array([[1.0]]))) == pytest.approx(1.0)
        lin = linearize(three_node_model, equilibrium, controls, tank_draw)
        assert pbh_margin(lin) > 0.0


class TestAuthority:
    def test_scalar(self) -> None:
        report = reachability_authority((np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]])), 1.0, 2.0)
        np.testing.assert_allclose(report.R_H, [[0.5, 0.25]])
        assert report.G_H == pytest.approx(np.sqrt(5.0) / 4.0)
        assert report.steps == 2

    def test_horizon_must_be_a_multiple(self) -> None:
        with pytest.raises(PreconditionError, match="positive integer"):
            reachability_authority((-np.eye(1), np.eye(1), np.eye(1)), 1.0, 2.5)

    def test_singular_step(self) -> None:
        with pytest.raises(SingularStepMatrix):
            reachability_authority((np.zeros((2, 2)), np.diag([1.0, 0.0]), np.array([[1.0], [0.0]])), 1.0, 1.0)

    def test_pump_columns_by_default(self, three_node_model, equilibrium, controls, tank_draw) -> None:
        lin = linearize(three_node_model, equilibrium, controls, tank_draw)
        report = reachability_authority(lin, 150.0, 7200.0)
        assert report.steps == 48
        assert report.R_H.shape == (lin.n, 48)
        assert report.G_H > 0.0
        assert report.mean_singular_value <= report.G_H


class TestRobustness:
    def test_synthetic_family(self) -> None:
        A0 = np.array([[-1.0, 0.3], [0.0, -2.0]])
        D = np.array([[0.2, 0.0], [0.1, -0.3]])
        B = np.array([[1.0], [0.5]])

        def family(theta):
            return A0 + (theta[0] - 1.0) * D, B * theta[0]

        perturbations = sample_perturbations(1, [0], 0.05, 20, seed=1)
        report = margin_robustness(family, np.ones(1), perturbations)
        assert len(report.samples) == 20
        assert report.alpha_bound_holds
        assert report.sigma_bound_holds
        assert report.alpha_s == pytest.approx(1.0)
        assert report.c_K <= report.c_K_envelope + 1e-12

    def test_sampling_is_seeded(self) -> None:
        a = sample_perturbations(5, [0, 2], 0.05, 3, seed=9)
        b = sample_perturbations(5, [0, 2], 0.05, 3, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
            assert x[1] == 0.0
            assert np.all(np.abs(x) <= 0.05)

    def test_three_node_family(self, three_node_model, equilibrium, controls, tank_draw, config) -> None:
        family = reduced_family(three_node_model, controls, tank_draw, config, equilibrium)
        perturbations = sample_perturbations(three_node_model.n_theta, range(three_node_model.n_P), 0.05, 20, 2024)
        report = margin_robustness(family, three_node_model.current_theta(), perturbations)
        assert report.alpha_s > 0.0
        assert report.alpha_bound_holds
        assert report.sigma_bound_holds


class TestRanking:
    def test_rank_from_gains_orders_and_breaks_ties(self) -> None:
        table = rank_from_gains(["a", "b", "c"], [1.0, 3.0, 3.0], [0.0, 0.0, 0.0],
                                alpha_s=1.0, sigma_c=1.0, kappa_V=1.0, c_K=1.0, delta=0.1)
        assert table["param"].tolist() == ["b", "c", "a"]
        np.testing.assert_allclose(table["alpha_hat"], [0.7, 0.7, 0.9])

    def test_ties_use_global_index(self) -> None:
        table = rank_from_gains(["p7", "p2"], [1.0, 1.0], [0.0, 0.0], alpha_s=1.0, sigma_c=1.0,
                                kappa_V=1.0, c_K=1.0, delta=0.1, indices=[7, 2])
        assert table["param"].tolist() == ["p2", "p7"]
        assert table["index"].tolist() == [2, 7]

    def test_sigma_breaks_alpha_ties(self) -> None:
        table = rank_from_gains(["a", "b"], [1.0, 1.0], [0.0, 2.0], alpha_s=1.0, sigma_c=1.0,
                                kappa_V=1.0, c_K=1.0, delta=0.1)
        assert table["param"].tolist() == ["b", "a"]
        np.testing.assert_allclose(table["sigma_hat"], [0.7, 0.9])

    def test_order_of_indices_does_not_matter(self, three_node_model, controls, tank_draw) -> None:
        forward = rank_parameters(three_node_model, controls, tank_draw, indices=range(5)).table
        backward = rank_parameters(three_node_model, controls, tank_draw, indices=reversed(range(5))).table
        assert forward["param"].tolist() == backward["param"].tolist()
        assert forward["index"].tolist() == backward["index"].tolist()
        # equal zero-gain parameters keep ascending index order
        shutoff = forward["param"].tolist().index("shutoff_head:9")
        tank = forward["param"].tolist().index("tank_area:8")
        assert shutoff < tank

    def test_three_node_roughness_first(self, three_node_model, controls, tank_draw) -> None:
        ranking = rank_parameters(three_node_model, controls, tank_draw, indices=[0, 4])
        table = ranking.table
        assert table["param"].iloc[0] == "roughness:1"
        assert sorted(table["index"].tolist()) == [0, 4]
        tank = table[table["param"] == "tank_area:8"].iloc[0]
        assert tank["gA"] == 0.0
        assert tank["alpha_hat"] == pytest.approx(ranking.alpha_s)
        assert len(ranking.top(1)) == 1


class TestDemandSweep:
    def test_levels_stay_stable(self, three_node_model, controls, tank_draw) -> None:
        table = demand_sweep(three_node_model, controls, tank_draw, [0.005, 0.01, 0.02])
        assert (table["status"] == "ok").all()
        assert (table["alpha_s"] > 0.0).all()
        assert (table["kappa_min"] > 0.0).all()
        np.testing.assert_allclose(table["total_demand"], [0.01, 0.015, 0.025])

    def test_zero_base_demand(self, three_node_model, controls) -> None:
        with pytest.raises(PreconditionError, match="positive total"):
            demand_sweep(three_node_model, controls, Demands(np.zeros(1), np.zeros(1)), [0.01])

    def test_flat_profile_maps_to_midpoint(self, controls, tank_draw) -> None:
        levels = demand_profile_levels(ScheduleInput.constant(controls, tank_draw), 3600.0, 1800.0, 0.2, 0.8)
        assert levels["time"].tolist() == [0.0, 1800.0, 3600.0]
        np.testing.assert_allclose(levels["level"], 0.5)

    def test_pattern_profile_spans_range(self) -> None:
        text = THREE_NODE_INP.replace("[END]", "[PATTERNS]\n 1  1.0  0.5\n[END]")
        text = text.replace("Pattern Timestep    1:00", "Pattern Timestep    0:30")
        net = parse_inp(text)
        schedule = build_schedule(net, build_model(net))
        levels = demand_profile_levels(schedule, 2700.0, 900.0, 0.2, 0.8)["level"].to_numpy()
        np.testing.assert_allclose(levels, [0.8, 0.8, 0.2, 0.2])

    def test_bad_step(self, controls, tank_draw) -> None:
        with pytest.raises(PreconditionError):
            demand_profile_levels(ScheduleInput.constant(controls, tank_draw), 3600.0, 0.0, 0.2, 0.8)


class TestMarginReport:
    def test_report_dict(self, three_node_model, controls, tank_draw) -> None:
        config = Config(ROBUSTNESS_SAMPLES=5)
        report = margin_report(three_node_model, controls, tank_draw, config)
        out = report.to_dict()
        assert out["alpha_s"] > 0.0
        assert out["sigma_c"] > 0.0
        assert out["r_lin"] is not None and out["r_lin"] > 0.0
        assert out["slope_floor_engaged"] is False
        assert [row["param"] for row in out["ranking"]] == ["roughness:1"]
        assert len(report.robustness) == 5
