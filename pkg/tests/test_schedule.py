"""Piecewise-constant input schedules."""

import numpy as np
import pytest

from tests.conftest import THREE_NODE_INP
from wdn_dae.error_handler import PreconditionError, UnsupportedValveMode
from wdn_dae.inp_parser import parse_inp
from wdn_dae.network_model import build_model
from wdn_dae.schedule import Controls, Demands, ScheduleInput, build_schedule


def _controls(opening) -> Controls:
    return Controls(np.ones(1), np.asarray(opening, dtype=float), np.zeros(0))


class TestScheduleInput:
    def test_right_and_left_lookup(self, pump_off_schedule) -> None:
        assert pump_off_schedule.controls_at(1800.0).opening[1] == 0.0
        assert pump_off_schedule.controls_at(1800.0, left=True).opening[1] == 1.0
        assert pump_off_schedule.controls_at(1799.0).opening[1] == 1.0
        assert pump_off_schedule.controls_at(-5.0).opening[1] == 1.0

    def test_switch_detection(self, pump_off_schedule) -> None:
        assert pump_off_schedule.is_switch(1800.0)
        assert not pump_off_schedule.is_switch(900.0)
        np.testing.assert_array_equal(pump_off_schedule.breakpoints, [1800.0])

    def test_min_gap(self) -> None:
        schedule = ScheduleInput.from_events(
            _controls([1, 1]), Demands(np.zeros(1), np.zeros(1)),
            [(600.0, _controls([1, 0])), (1000.0, _controls([1, 1]))])
        assert schedule.min_gap() == 400.0
        assert schedule.min_gap(horizon=1200.0) == 200.0

    def test_constant_has_no_switches(self, controls, tank_draw) -> None:
        schedule = ScheduleInput.constant(controls, tank_draw)
        assert schedule.min_gap() == float("inf")
        assert schedule.breakpoints.size == 0
        assert schedule.demands_at(1e6).equals(tank_draw)

    def test_events_sorted(self) -> None:
        schedule = ScheduleInput.from_events(
            _controls([1, 1]), Demands(np.zeros(1), np.zeros(1)),
            [(900.0, _controls([0, 1])), (300.0, _controls([1, 0]))])
        np.testing.assert_array_equal(schedule.control_times, [0.0, 300.0, 900.0])

    def test_with_demands(self, pump_off_schedule) -> None:
        doubled = pump_off_schedule.with_demands(Demands(np.array([0.02]), np.array([0.0])))
        assert doubled.demands_at(0.0).junction[0] == 0.02
        assert doubled.controls_at(2000.0).opening[1] == 0.0

    def test_invalid_tables(self) -> None:
        demands = Demands(np.zeros(1), np.zeros(1))
        with pytest.raises(PreconditionError, match="strictly increasing"):
            ScheduleInput.from_events(_controls([1, 1]), demands, [(0.0, _controls([1, 0]))])
        with pytest.raises(PreconditionError, match=r"\[0, 1\]"):
            ScheduleInput.constant(_controls([1, 2]), demands)
        with pytest.raises(PreconditionError, match="non-negative"):
            ScheduleInput.constant(Controls(-np.ones(1), np.ones(2), np.zeros(0)), demands)

    def test_demand_helpers(self) -> None:
        demands = Demands(np.array([1.0, 2.0]), np.array([0.5]))
        assert demands.total() == 3.5
        assert demands.scaled(2.0).total() == 7.0


class TestBuildSchedule:
    def test_controls_and_patterns(self) -> None:
        text = THREE_NODE_INP.replace("[END]", (
            "[PATTERNS]\n 1  1.0  0.5\n"
            "[CONTROLS]\n LINK 9 CLOSED AT TIME 0.5\n LINK 9 0.8 AT TIME 0.75\n"
            "[END]"))
        text = text.replace("Pattern Timestep    1:00", "Pattern Timestep    0:30")
        net = parse_inp(text)
        model = build_model(net)
        schedule = build_schedule(net, model)

        np.testing.assert_array_equal(schedule.control_times, [0.0, 1800.0, 2700.0])
        assert schedule.controls_at(2000.0).opening[1] == 0.0
        after = schedule.controls_at(3000.0)
        assert after.opening[1] == 1.0
        assert after.speed[0] == pytest.approx(0.8)
        np.testing.assert_array_equal(schedule.demand_times, [0.0, 1800.0])
        assert schedule.demands_at(2000.0).junction[0] == pytest.approx(0.005)

    def test_zero_speed_closes_pump(self) -> None:
        text = THREE_NODE_INP.replace("[END]", "[CONTROLS]\n LINK 9 0 AT TIME 0.25\n[END]")
        net = parse_inp(text)
        schedule = build_schedule(net, build_model(net))
        later = schedule.controls_at(1000.0)
        assert later.opening[1] == 0.0
        assert later.speed[0] == 1.0

    def test_no_patterns_gives_constant_demand(self, three_node_net, three_node_model) -> None:
        schedule = build_schedule(three_node_net, three_node_model)
        np.testing.assert_array_equal(schedule.demand_times, [0.0])
        np.testing.assert_allclose(schedule.demands_at(0.0).junction, [0.01])

    def test_active_control_without_surrogate(self) -> None:
        text = THREE_NODE_INP.replace("[END]", "[CONTROLS]\n LINK 1 ACTIVE AT TIME 0.25\n[END]")
        net = parse_inp(text)
        model = build_model(net, allow_open_surrogate=False)
        with pytest.raises(UnsupportedValveMode):
            build_schedule(net, model)
