"""
Schedule Module
===============

Piecewise-constant control and demand inputs for a hydraulic model.

Controls hold pump speeds, link open fractions and valve settings; demands
hold junction and tank draws. A ScheduleInput stores breakpoint tables and
answers "what are the inputs at time t", with either right-continuous
(the default) or left-continuous lookup.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np

from .error_handler import PreconditionError, UnsupportedValveMode

if TYPE_CHECKING:
    from .inp_parser import NetworkDescription
    from .network_model import HydraulicModel

logger = logging.getLogger(__name__)


@dataclass
class Controls:
    """Control inputs: pump speeds (n_M), open fractions (n_E), valve settings (n_W)."""
    speed: np.ndarray
    opening: np.ndarray
    setting: np.ndarray

    def copy(self) -> "Controls":
        return Controls(self.speed.copy(), self.opening.copy(), self.setting.copy())

    def equals(self, other: "Controls") -> bool:
        return (np.array_equal(self.speed, other.speed)
                and np.array_equal(self.opening, other.opening)
                and np.array_equal(self.setting, other.setting))


@dataclass
class Demands:
    """Junction draws (n_J) and tank draws (n_A), both in m^3/s."""
    junction: np.ndarray
    tank: np.ndarray

    def copy(self) -> "Demands":
        return Demands(self.junction.copy(), self.tank.copy())

    def scaled(self, factor: float) -> "Demands":
        return Demands(self.junction * factor, self.tank * factor)

    def total(self) -> float:
        return float(self.junction.sum() + self.tank.sum())

    def equals(self, other: "Demands") -> bool:
        return np.array_equal(self.junction, other.junction) and np.array_equal(self.tank, other.tank)


def _lookup(times: np.ndarray, t: float, left: bool) -> int:
    # index of the row in force at t
    side = "left" if left else "right"
    k = int(np.searchsorted(times, t, side=side)) - 1
    return max(k, 0)


@dataclass
class ScheduleInput:
    """
    Breakpoint tables for controls and demands.

    Row k of each table is in force on [t_k, t_{k+1}). Times are strictly
    increasing and start at the simulation origin.
    """
    control_times: np.ndarray
    speed: np.ndarray    # (K, n_M)
    opening: np.ndarray  # (K, n_E)
    setting: np.ndarray  # (K, n_W)
    demand_times: np.ndarray
    junction_demand: np.ndarray  # (L, n_J)
    tank_demand: np.ndarray      # (L, n_A)
    labels: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("control_times", "demand_times"):
            times = np.asarray(getattr(self, name), dtype=float)
            if times.ndim != 1 or times.size == 0:
                raise PreconditionError("ScheduleInput", f"{name} must be a non-empty 1-D array")
            if np.any(np.diff(times) <= 0.0):
                raise PreconditionError("ScheduleInput", f"{name} must be strictly increasing")
            setattr(self, name, times)
        if np.any((self.opening < 0.0) | (self.opening > 1.0)):
            raise PreconditionError("ScheduleInput", "open fractions must lie in [0, 1]")
        if np.any(self.speed < 0.0):
            raise PreconditionError("ScheduleInput", "pump speeds must be non-negative")

    @classmethod
    def constant(cls, controls: Controls, demands: Demands, t0: float = 0.0) -> "ScheduleInput":
        """Schedule holding ``controls`` and ``demands`` for all time."""
        return cls(
            control_times=np.array([t0]),
            speed=controls.speed[None, :].copy(),
            opening=controls.opening[None, :].copy(),
            setting=controls.setting[None, :].copy(),
            demand_times=np.array([t0]),
            junction_demand=demands.junction[None, :].copy(),
            tank_demand=demands.tank[None, :].copy(),
        )

    @classmethod
    def from_events(cls, base_controls: Controls, base_demands: Demands,
                    control_events: Sequence, t0: float = 0.0) -> "ScheduleInput":
        """
        Build from a base input and a list of ``(time, Controls)`` switches.

        Args:
            base_controls: Controls in force from ``t0``
            base_demands: Constant demands
            control_events: Iterable of ``(t_k, Controls)`` with t_k > t0
        """
        events = sorted(control_events, key=lambda e: e[0])
        times = [t0] + [float(t) for t, _ in events]
        rows = [base_controls] + [c for _, c in events]
        return cls(
            control_times=np.array(times),
            speed=np.vstack([c.speed for c in rows]),
            opening=np.vstack([c.opening for c in rows]),
            setting=np.vstack([c.setting for c in rows]),
            demand_times=np.array([t0]),
            junction_demand=base_demands.junction[None, :].copy(),
            tank_demand=base_demands.tank[None, :].copy(),
        )

    def controls_at(self, t: float, left: bool = False) -> Controls:
        k = _lookup(self.control_times, t, left)
        return Controls(self.speed[k].copy(), self.opening[k].copy(), self.setting[k].copy())

    def demands_at(self, t: float, left: bool = False) -> Demands:
        k = _lookup(self.demand_times, t, left)
        return Demands(self.junction_demand[k].copy(), self.tank_demand[k].copy())

    @property
    def breakpoints(self) -> np.ndarray:
        """Switching instants after the origin, controls and demands merged."""
        return np.union1d(self.control_times[1:], self.demand_times[1:])

    @property
    def control_breakpoints(self) -> np.ndarray:
        return self.control_times[1:]

    def min_gap(self, horizon: Optional[float] = None) -> float:
        """Shortest spacing between consecutive control breakpoints (and the horizon end)."""
        points = list(self.control_times)
        if horizon is not None:
            points.append(self.control_times[0] + horizon)
        gaps = np.diff(np.array(points))
        gaps = gaps[gaps > 0.0]
        return float(gaps.min()) if gaps.size else float("inf")

    def is_switch(self, t: float) -> bool:
        """True when the inputs jump at ``t``."""
        return not (self.controls_at(t, left=True).equals(self.controls_at(t))
                    and self.demands_at(t, left=True).equals(self.demands_at(t)))

    def with_demands(self, demands: Demands) -> "ScheduleInput":
        """Copy with demands replaced by a constant."""
        return replace(self,
                       demand_times=np.array([self.demand_times[0]]),
                       junction_demand=demands.junction[None, :].copy(),
                       tank_demand=demands.tank[None, :].copy())


def build_schedule(net: "NetworkDescription", model: "HydraulicModel",
                   horizon: Optional[float] = None) -> ScheduleInput:
    """
    Turn the INP controls and demand patterns into a ScheduleInput.

    Args:
        net: Parsed network the model was built from
        model: Hydraulic model (supplies link order and nominal inputs)
        horizon: Last time covered by the demand table (defaults to the INP duration)

    Returns:
        ScheduleInput: Time-ordered breakpoints, row 0 at t = 0
    """
    horizon = float(net.options.duration if horizon is None else horizon)
    base = model.nominal_controls()
    link_index = {link_id: i for i, link_id in enumerate(model.link_ids)}
    pump_index = {pump_id: i for i, pump_id in enumerate(model.pump_ids)}
    valve_index = {valve_id: i for i, valve_id in enumerate(model.valve_ids)}

    times = sorted({c.time for c in net.controls if c.time > 0.0})
    rows = []
    current = base.copy()
    for control in [c for c in net.controls if c.time <= 0.0]:
        _apply_control(current, control, link_index, pump_index, valve_index, model)
    rows.append((0.0, current.copy()))
    for t in times:
        for control in [c for c in net.controls if c.time == t]:
            _apply_control(current, control, link_index, pump_index, valve_index, model)
        rows.append((t, current.copy()))

    demand_times, junction_rows = _demand_table(net, model, horizon)
    tank_rows = np.zeros((len(demand_times), model.n_A))

    logger.info(f"Schedule: {len(rows) - 1} control switches, {len(demand_times)} demand steps")
    return ScheduleInput(
        control_times=np.array([t for t, _ in rows]),
        speed=np.vstack([c.speed for _, c in rows]),
        opening=np.vstack([c.opening for _, c in rows]),
        setting=np.vstack([c.setting for _, c in rows]),
        demand_times=demand_times,
        junction_demand=junction_rows,
        tank_demand=tank_rows,
        labels={"pumps": list(model.pump_ids), "links": list(model.link_ids),
                "valves": list(model.valve_ids), "junctions": list(model.junction_ids)},
    )


def _apply_control(controls, control, link_index, pump_index, valve_index, model):
    e = link_index[control.link_id]
    if control.attribute == "speed":
        m = pump_index[control.link_id]
        if control.value <= 0.0:
            controls.opening[e] = 0.0
        else:
            controls.speed[m] = control.value
            controls.opening[e] = 1.0
    elif control.attribute == "setting":
        w = valve_index[control.link_id]
        controls.setting[w] = control.value
        controls.opening[e] = 1.0
    elif control.value == "closed":
        controls.opening[e] = 0.0
    elif control.value == "open":
        controls.opening[e] = 1.0
    else:
        kind = model.valve_kinds[valve_index[control.link_id]] if control.link_id in valve_index else "link"
        if not model.allow_open_surrogate:
            raise UnsupportedValveMode(control.link_id, kind)
        logger.warning(f"[!]  Control sets '{control.link_id}' ACTIVE at t = {control.time:g} s; open surrogate used")
        controls.opening[e] = 1.0


def _demand_table(net, model, horizon):
    base = model.junction_base_demand
    patterns = []
    default = net.options.default_pattern or ("1" if "1" in net.patterns else None)
    for junction in net.junctions:
        pattern_id = junction.pattern_id or default
        patterns.append(net.patterns.get(pattern_id) if pattern_id else None)
    if all(p is None for p in patterns) or horizon <= 0.0:
        return np.array([0.0]), base[None, :].copy()

    step = net.options.pattern_step
    n = int(np.ceil(horizon / step))
    times = step * np.arange(max(n, 1))
    rows = np.empty((times.size, base.size))
    for k in range(times.size):
        multipliers = np.array([p[k % len(p)] if p else 1.0 for p in patterns])
        rows[k] = base * multipliers
    return times, rows
