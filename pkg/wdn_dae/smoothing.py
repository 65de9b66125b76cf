"""
Smoothing Module
================

Quintic regularization of piecewise-constant control schedules. At each
breakpoint t_k the control moves from its old to its new value over the
window [t_k, t_k + tau_s] along chi(alpha) = 10 a^3 - 15 a^4 + 6 a^5, which
has zero first and second derivatives at both ends.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .error_handler import PreconditionError, WindowTooWide
from .schedule import Controls, Demands, ScheduleInput

logger = logging.getLogger(__name__)


def _check_alpha(alpha):
    a = np.asarray(alpha, dtype=float)
    if np.any((a < 0.0) | (a > 1.0)) or np.any(np.isnan(a)):
        raise PreconditionError("smoothstep", f"alpha must lie in [0, 1], got {alpha}")
    return a


def smoothstep(alpha):
    """chi(alpha) = 10 a^3 - 15 a^4 + 6 a^5 on [0, 1]."""
    a = _check_alpha(alpha)
    return a ** 3 * (10.0 - 15.0 * a + 6.0 * a ** 2)


def smoothstep_derivative(alpha):
    """chi'(alpha) = 30 a^2 (1 - a)^2."""
    a = _check_alpha(alpha)
    return 30.0 * a ** 2 * (1.0 - a) ** 2


def smoothstep_second_derivative(alpha):
    """chi''(alpha) = 60 a - 180 a^2 + 120 a^3."""
    a = _check_alpha(alpha)
    return 60.0 * a - 180.0 * a ** 2 + 120.0 * a ** 3


class SmoothedSchedule:
    """
    A ScheduleInput whose control channels are blended across each
    breakpoint window. Demands are passed through unchanged.

    Outside the windows the values equal the base schedule exactly.
    """

    def __init__(self, base: ScheduleInput, tau_s: float):
        """
        Initialize the smoothed schedule.

        Args:
            base: Piecewise-constant schedule
            tau_s: Window width [s]; 0 reproduces the base schedule

        Raises:
            WindowTooWide: If tau_s is not below every breakpoint gap
        """
        if tau_s < 0.0:
            raise PreconditionError("smooth_controls", f"tau_s must be non-negative, got {tau_s}")
        gaps = np.diff(base.control_times[1:])
        min_gap = float(gaps.min()) if gaps.size else float("inf")
        if tau_s > 0.0 and tau_s >= min_gap:
            raise WindowTooWide(tau_s, min_gap)
        self.base = base
        self.tau_s = float(tau_s)

    @property
    def control_times(self) -> np.ndarray:
        return self.base.control_times

    @property
    def breakpoints(self) -> np.ndarray:
        return self.base.breakpoints

    def windows(self) -> Sequence[Tuple[float, float]]:
        return [(float(t), float(t) + self.tau_s) for t in self.base.control_breakpoints]

    def _window(self, t: float):
        # (k, alpha) when t lies inside the window that opens at breakpoint k
        times = self.base.control_times
        k = int(np.searchsorted(times, t, side="right")) - 1
        if k >= 1 and t < times[k] + self.tau_s:
            return k, (t - times[k]) / self.tau_s
        return None, None

    def controls_at(self, t: float, left: bool = False) -> Controls:
        if self.tau_s == 0.0:
            return self.base.controls_at(t, left=left)
        k, alpha = self._window(t)
        if k is None:
            return self.base.controls_at(t)
        chi = float(smoothstep(alpha))
        b = self.base
        return Controls(
            (1.0 - chi) * b.speed[k - 1] + chi * b.speed[k],
            (1.0 - chi) * b.opening[k - 1] + chi * b.opening[k],
            (1.0 - chi) * b.setting[k - 1] + chi * b.setting[k],
        )

    def control_rates(self, t: float) -> Controls:
        """du/dt = (u_k - u_{k-1}) / tau_s * chi'(alpha) inside windows, zero outside."""
        b = self.base
        zero = Controls(np.zeros(b.speed.shape[1]), np.zeros(b.opening.shape[1]),
                        np.zeros(b.setting.shape[1]))
        if self.tau_s == 0.0:
            return zero
        k, alpha = self._window(t)
        if k is None:
            return zero
        slope = float(smoothstep_derivative(alpha)) / self.tau_s
        return Controls(slope * (b.speed[k] - b.speed[k - 1]),
                        slope * (b.opening[k] - b.opening[k - 1]),
                        slope * (b.setting[k] - b.setting[k - 1]))

    def demands_at(self, t: float, left: bool = False) -> Demands:
        return self.base.demands_at(t, left=left)

    def is_switch(self, t: float) -> bool:
        if self.tau_s == 0.0:
            return self.base.is_switch(t)
        return not self.base.demands_at(t, left=True).equals(self.base.demands_at(t))


def smooth_controls(base: ScheduleInput, tau_s: float) -> SmoothedSchedule:
    """Blend every control channel of ``base`` over windows of width ``tau_s``."""
    return SmoothedSchedule(base, tau_s)


def _sup_error(dae, x0, schedule, tau, reference, interval, horizon, dt):
    if tau == 0.0:
        return 0.0
    run = dae.simulate(x0, smooth_controls(schedule, tau), horizon, dt)
    mask = (reference.times >= interval[0] - 1e-9) & (reference.times <= interval[1] + 1e-9)
    diff = run.sample(reference.times[mask]) - reference.states[mask]
    return float(np.max(np.linalg.norm(diff, axis=1)))


def convergence_sweep(dae, x0, schedule: ScheduleInput, tau_list: Sequence[float],
                      interval: Tuple[float, float], horizon: float,
                      dt: Optional[float] = None, workers: int = 1) -> pd.DataFrame:
    """
    Sup-norm distance between smoothed and hard-switched trajectories.

    Args:
        dae: HydraulicDae to integrate with
        x0: Initial state
        schedule: Hard (piecewise-constant) schedule
        tau_list: Window widths to test [s]
        interval: Compact (start, end) inside one inter-switch interval,
            clear of every smoothing window
        horizon: Run length [s]
        dt: Integration step [s]
        workers: joblib worker count

    Returns:
        pd.DataFrame: Columns ``tau_s,sup_error,interval_start,interval_end``

    Raises:
        PreconditionError: If the interval touches a switch or a window
    """
    start, end = float(interval[0]), float(interval[1])
    if not end > start:
        raise PreconditionError("convergence_sweep", "interval must have positive length")
    tau_max = max([float(t) for t in tau_list] + [0.0])
    for t_k in schedule.control_breakpoints:
        if start <= t_k + tau_max and end >= t_k:
            raise PreconditionError(
                "convergence_sweep",
                f"interval [{start:g}, {end:g}] overlaps the window at {t_k:g} s (tau up to {tau_max:g} s)")

    reference = dae.simulate(x0, schedule, horizon, dt)
    errors = Parallel(n_jobs=workers)(
        delayed(_sup_error)(dae, x0, schedule, float(tau), reference, (start, end), horizon, dt)
        for tau in tau_list
    )
    table = pd.DataFrame({
        "tau_s": [float(t) for t in tau_list],
        "sup_error": errors,
        "interval_start": start,
        "interval_end": end,
    })
    logger.info(f"[OK] Convergence sweep over {len(tau_list)} widths")
    return table
