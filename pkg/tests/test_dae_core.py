"""Nonlinear DAE residuals, initialization, integration and equilibria."""

import numpy as np
import pytest

from tests.conftest import GRAVITY_INP
from wdn_dae.dae_core import HydraulicDae, HydraulicState, Trajectory, detect_switch_kink
from wdn_dae.error_handler import InsufficientSamples, PreconditionError, SingularAlgebraicJacobian
from wdn_dae.inp_parser import parse_inp
from wdn_dae.network_model import build_model
from wdn_dae.schedule import Demands, ScheduleInput


class TestResiduals:
    def test_equilibrium_is_stationary(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        assert np.max(np.abs(three_node_dae.residual_differential(equilibrium, controls, tank_draw))) <= 1e-9
        assert np.max(np.abs(three_node_dae.residual_algebraic(equilibrium, controls, tank_draw))) <= 1e-9

    def test_zero_state_pump_row(self, three_node_dae, three_node_model, controls) -> None:
        state = HydraulicState(np.zeros(2), np.zeros(1), np.zeros(1), np.array([50.0]))
        m = three_node_dae.residual_differential(state, controls, Demands(np.zeros(1), np.zeros(1)))
        gamma_pump = three_node_model.inertance[1]
        assert m[1] == pytest.approx(gamma_pump * (50.0 + 40.0))
        assert m[0] == 0.0
        assert m[2] == 0.0

    def test_algebraic_rows(self, three_node_dae, controls) -> None:
        state = HydraulicState(np.array([0.004, 0.004]), np.array([70.0]), np.array([70.0]), np.array([50.0]))
        no_draw = Demands(np.zeros(1), np.zeros(1))
        np.testing.assert_array_equal(three_node_dae.residual_algebraic(state, controls, no_draw), [0.0, 0.0])
        shifted = three_node_dae.residual_algebraic(state, controls, Demands(np.array([0.002]), np.zeros(1)))
        assert shifted[0] == pytest.approx(0.002)

    def test_jacobian_matches_difference(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        x = equilibrium.as_vector() + np.array([1e-3, -2e-3, 0.5, -0.3, 0.0])
        J = three_node_dae.jacobian(x, controls).toarray()
        h = 1e-7
        for j in range(x.size):
            step = np.zeros(x.size)
            step[j] = h
            column = (three_node_dae.residual(x + step, controls, tank_draw)
                      - three_node_dae.residual(x - step, controls, tank_draw)) / (2 * h)
            np.testing.assert_allclose(J[:, j], column, rtol=1e-5, atol=1e-6)


class TestAlgebraicJacobian:
    def test_reservoir_block_is_identity(self, three_node_dae, equilibrium, controls) -> None:
        check = three_node_dae.algebraic_jacobian(equilibrium, controls)
        np.testing.assert_array_equal(check.matrix, [[0.0, 0.0], [0.0, 1.0]])
        assert check.regular

    def test_isolated_junction_is_flagged(self, three_node_dae, equilibrium, controls) -> None:
        closed = controls.copy()
        closed.opening[:] = 0.0
        check = three_node_dae.algebraic_jacobian(equilibrium, closed)
        assert not check.regular
        assert check.rcond == 0.0


class TestConsistentInit:
    def test_junction_head_from_link_laws(self, three_node_dae, three_node_model, controls, tank_draw) -> None:
        q = np.array([0.005, 0.015])
        state = three_node_dae.consistent_init(q, np.array([70.0]), controls, tank_draw)
        eta = three_node_model.link_losses(q, controls)
        g1, g9 = three_node_model.inertance
        expected = (g1 * (70.0 + eta[0]) + g9 * (50.0 - eta[1])) / (g1 + g9)
        assert state.p_J[0] == pytest.approx(expected, rel=1e-12)
        assert state.p_R[0] == 50.0
        np.testing.assert_array_equal(state.q, q)

    def test_unbalanced_flows_are_projected(self, three_node_dae, controls, tank_draw) -> None:
        state = three_node_dae.consistent_init(np.array([0.0, 0.0]), np.array([70.0]), controls, tank_draw)
        assert abs(state.q[0] - state.q[1] + 0.01) <= 1e-12

    def test_singular_configuration(self, three_node_dae, controls, tank_draw) -> None:
        closed = controls.copy()
        closed.opening[:] = 0.0
        with pytest.raises(SingularAlgebraicJacobian):
            three_node_dae.consistent_init(np.zeros(2), np.array([70.0]), closed, tank_draw)


class TestImplicitEuler:
    def test_equilibrium_is_fixed_point(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        step = three_node_dae.step_implicit_euler(equilibrium, controls, tank_draw, 150.0)
        np.testing.assert_allclose(step.state.as_vector(), equilibrium.as_vector(), rtol=1e-9, atol=1e-12)
        assert step.state.time == 150.0

    def test_non_positive_step(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        with pytest.raises(PreconditionError, match="positive"):
            three_node_dae.step_implicit_euler(equilibrium, controls, tank_draw, 0.0)

    def test_gravity_network_balances_every_step(self, gravity_model) -> None:
        dae = HydraulicDae(gravity_model)
        controls = gravity_model.nominal_controls()
        demands = gravity_model.nominal_demands()
        x0 = dae.initial_state(controls, demands)
        trajectory = dae.simulate(x0, ScheduleInput.constant(controls, demands), 1800.0, dt=150.0)
        assert np.max(trajectory.residuals) <= 1e-8
        p_R = trajectory.states[:, trajectory.indices(("pR",))]
        assert np.all(p_R == 50.0)


class TestSimulate:
    def test_row_count_and_metadata(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        schedule = ScheduleInput.constant(controls, tank_draw)
        trajectory = three_node_dae.simulate(equilibrium, schedule, 3600.0, dt=60.0)
        assert len(trajectory.times) == 61
        assert trajectory.times[-1] == 3600.0
        assert trajectory.metadata["steps"] == 60
        assert trajectory.events == []

    def test_default_step(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        trajectory = three_node_dae.simulate(equilibrium, ScheduleInput.constant(controls, tank_draw), 600.0)
        np.testing.assert_array_equal(trajectory.times, [0.0, 150.0, 300.0, 450.0, 600.0])

    def test_partial_last_step(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        trajectory = three_node_dae.simulate(equilibrium, ScheduleInput.constant(controls, tank_draw), 100.0, dt=60.0)
        assert len(trajectory.times) == 3
        assert trajectory.times[-1] == 100.0

    def test_constant_inputs_settle_at_equilibrium(self, three_node_dae, controls, tank_draw, equilibrium) -> None:
        x0 = three_node_dae.initial_state(controls, tank_draw)
        assert x0.p_A[0] == 70.0
        trajectory = three_node_dae.simulate(x0, ScheduleInput.constant(controls, tank_draw), 72 * 3600.0, dt=600.0)
        np.testing.assert_allclose(trajectory.states[-1], equilibrium.as_vector(), rtol=1e-6)

    def test_deterministic(self, three_node_dae, equilibrium, pump_off_schedule) -> None:
        a = three_node_dae.simulate(equilibrium, pump_off_schedule, 3600.0, dt=60.0)
        b = three_node_dae.simulate(equilibrium, pump_off_schedule, 3600.0, dt=60.0)
        np.testing.assert_array_equal(a.states, b.states)

    def test_hard_switch_records_reset(self, three_node_dae, equilibrium, pump_off_schedule) -> None:
        trajectory = three_node_dae.simulate(equilibrium, pump_off_schedule, 3600.0, dt=60.0)
        (event,) = trajectory.events
        assert event["time"] == 1800.0
        assert event["reset"]
        assert event["z_jump"] == 0.0
        assert event["y_jump"] > 0.0
        # pump flow decays once the pump is shut
        assert abs(trajectory.states[-1, 1]) < 1e-4

    def test_stagnant_network_stays_constant(self) -> None:
        net = parse_inp(GRAVITY_INP)
        net.junctions[0].base_demand = 0.0
        net.tanks[0].init_level = 30.0
        model = build_model(net)
        dae = HydraulicDae(model)
        controls = model.nominal_controls()
        demands = model.nominal_demands()
        x0 = HydraulicState(np.zeros(2), np.array([50.0]), np.array([50.0]), np.array([50.0]))
        trajectory = dae.simulate(x0, ScheduleInput.constant(controls, demands), 900.0, dt=150.0)
        np.testing.assert_allclose(trajectory.states, np.tile(x0.as_vector(), (7, 1)), atol=1e-12)

    def test_bad_arguments(self, three_node_dae, equilibrium, controls, tank_draw) -> None:
        schedule = ScheduleInput.constant(controls, tank_draw)
        with pytest.raises(PreconditionError):
            three_node_dae.simulate(equilibrium, schedule, 600.0, dt=0.0)
        with pytest.raises(PreconditionError):
            three_node_dae.simulate(equilibrium, schedule, -1.0)


class TestEquilibrium:
    def test_three_node_flows_and_heads(self, three_node_dae, controls, tank_draw) -> None:
        result = three_node_dae.equilibrium_solve(controls, tank_draw, polish=1)
        state = result.state
        assert state.q[1] == pytest.approx(0.015, abs=1e-12)
        assert state.q[0] == pytest.approx(0.005, abs=1e-12)
        assert state.p_J[0] == pytest.approx(50.0 + 40.0 - 4000.0 * 0.015 ** 2)
        assert result.residual <= 1e-9

    def test_looped_grid(self, grid_model, grid_demands) -> None:
        assert grid_model.n_J >= 20
        dae = HydraulicDae(grid_model)
        result = dae.equilibrium_solve(grid_model.nominal_controls(), grid_demands, polish=1)
        assert result.residual <= 1e-9

    def test_no_demand_equalizes_heads(self, gravity_model) -> None:
        dae = HydraulicDae(gravity_model)
        no_draw = Demands(np.zeros(1), np.zeros(1))
        state = dae.equilibrium_solve(gravity_model.nominal_controls(), no_draw, polish=1).state
        np.testing.assert_allclose(state.q, 0.0, atol=1e-6)
        np.testing.assert_allclose(state.heads, 50.0, atol=1e-6)


class TestSwitchKink:
    def test_hard_switch_kinks(self, three_node_dae, equilibrium, controls, tank_draw, pump_off_schedule) -> None:
        baseline = three_node_dae.simulate(equilibrium, ScheduleInput.constant(controls, tank_draw), 3600.0, dt=60.0)
        hard = three_node_dae.simulate(equilibrium, pump_off_schedule, 3600.0, dt=60.0)
        calm = detect_switch_kink(baseline, 1800.0, 60.0)
        kink = detect_switch_kink(hard, 1800.0, 60.0)
        assert calm.kink_norm <= 1e-9
        assert kink.kink_norm > 1e-5
        assert kink.kink_norm > 10.0 * calm.kink_norm
        assert kink.continuous

    def test_insufficient_samples(self) -> None:
        trajectory = Trajectory(np.array([0.0, 60.0]), np.zeros((2, 2)), ["q:1", "pA:8"])
        with pytest.raises(InsufficientSamples):
            detect_switch_kink(trajectory, 60.0, 30.0)
        with pytest.raises(InsufficientSamples):
            detect_switch_kink(trajectory, 30.0, 60.0)


class TestTrajectory:
    def test_frame_round_trip_and_sampling(self) -> None:
        trajectory = Trajectory(np.array([0.0, 10.0]), np.array([[0.0, 1.0], [2.0, 3.0]]), ["q:1", "pJ:2"])
        frame = trajectory.to_frame()
        assert list(frame.columns) == ["time", "q:1", "pJ:2"]
        again = Trajectory.from_frame(frame)
        np.testing.assert_allclose(again.sample(5.0), [[1.0, 2.0]])
        np.testing.assert_array_equal(again.z_indices, [0])
