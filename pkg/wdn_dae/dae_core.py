"""
DAE Core Module
===============

The full nonlinear hydraulic DAE

    E x' = f(x, u, d),   E = diag(1/gamma, 0, A^A, 0),   x = [q, p_J, p_A, p_R]

with link momentum rows N^T p - eta(q, u), junction balances N_J q + d^J,
tank storage -N_A q - d^A and fixed reservoir heads. This module evaluates
the residuals, finds consistent algebraic states, integrates with implicit
Euler, solves fixed-mode equilibria and measures switching kinks.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.sparse import bmat, csr_matrix, diags, identity

from .config import Config
from .error_handler import (
    InsufficientSamples,
    NewtonDivergence,
    PreconditionError,
    SingularAlgebraicJacobian,
)
from .network_model import HydraulicModel
from .newton import damped_newton
from .schedule import Controls, Demands

logger = logging.getLogger(__name__)


@dataclass
class HydraulicState:
    """Link flows and node heads at one instant."""
    q: np.ndarray
    p_J: np.ndarray
    p_A: np.ndarray
    p_R: np.ndarray
    time: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p_J, self.p_A, self.p_R])

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.q, self.p_A])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.p_J, self.p_R])

    @property
    def heads(self) -> np.ndarray:
        """Node heads in node order (junctions, tanks, reservoirs)."""
        return np.concatenate([self.p_J, self.p_A, self.p_R])

    @classmethod
    def from_vector(cls, model: HydraulicModel, x: np.ndarray, time: float = 0.0) -> "HydraulicState":
        sl = model.state_slices()
        x = np.asarray(x, dtype=float)
        return cls(x[sl["q"]].copy(), x[sl["p_J"]].copy(), x[sl["p_A"]].copy(),
                   x[sl["p_R"]].copy(), float(time))


@dataclass
class AlgebraicJacobian:
    """
    Raw dh/dy with the pivot used to solve for junction heads.

    ``matrix`` has zero junction rows (junction balances do not depend on
    p_J); regularity is judged on ``pivot`` = N_J Gamma N_J^T over the open
    links.
    """
    matrix: np.ndarray
    pivot: np.ndarray
    rcond: float
    regular: bool


@dataclass
class StepResult:
    state: HydraulicState
    iterations: int
    residual: float
    substeps: int = 1


@dataclass
class EquilibriumResult:
    state: HydraulicState
    iterations: int
    residual: float


@dataclass
class KinkReport:
    left_rate: np.ndarray
    right_rate: np.ndarray
    kink_norm: float
    continuity_gap: float
    continuous: bool


@dataclass
class Trajectory:
    """Time-indexed states with per-step solver records."""
    times: np.ndarray
    states: np.ndarray  # (n_t, n_x)
    names: List[str]
    residuals: np.ndarray = None
    iterations: np.ndarray = None
    events: List[Dict] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        if self.residuals is None:
            self.residuals = np.zeros(n)
        if self.iterations is None:
            self.iterations = np.zeros(n, dtype=int)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.states, columns=self.names)
        frame.insert(0, "time", self.times)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, metadata: Optional[Dict] = None) -> "Trajectory":
        names = [c for c in frame.columns if c != "time"]
        return cls(frame["time"].to_numpy(dtype=float), frame[names].to_numpy(dtype=float),
                   names, metadata=dict(metadata or {}))

    def indices(self, prefixes: Sequence[str]) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.names) if n.split(":", 1)[0] in prefixes], dtype=int)

    @property
    def z_indices(self) -> np.ndarray:
        return self.indices(("q", "pA"))

    def sample(self, t, columns: Optional[np.ndarray] = None) -> np.ndarray:
        """Linear interpolation of the selected columns at time(s) ``t``."""
        columns = np.arange(len(self.names)) if columns is None else columns
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.column_stack([np.interp(t, self.times, self.states[:, c]) for c in columns])
        return out

    def state(self, k: int, model: HydraulicModel) -> HydraulicState:
        return HydraulicState.from_vector(model, self.states[k], self.times[k])


class HydraulicDae:
    """
    Residuals, Jacobians and solvers for one hydraulic model.

    The model is immutable; one instance may be shared by concurrent runs.
    """

    def __init__(self, model: HydraulicModel, config: Optional[Config] = None):
        """
        Initialize the DAE.

        Args:
            model: Hydraulic model to simulate
            config: Solver tolerances (defaults to ``Config()``)
        """
        self.model = model
        self.config = config or Config()
        self.mass = model.mass_diagonal()
        self._N = csr_matrix(model.incidence)
        self._NJ = csr_matrix(model.N_J)
        self._NA = csr_matrix(model.N_A)
        self._slices = model.state_slices()

    # --- residuals -------------------------------------------------------

    def residual(self, x: np.ndarray, controls: Controls, demands: Demands) -> np.ndarray:
        """f(x, u, d) in E-form, rows ordered like x."""
        m = self.model
        sl = self._slices
        q = x[sl["q"]]
        heads = x[m.n_E:]
        link = self._N.T @ heads - m.link_losses(q, controls)
        junction = self._NJ @ q + demands.junction
        tank = -(self._NA @ q) - demands.tank
        reservoir = x[sl["p_R"]] - m.reservoir_head
        return np.concatenate([link, junction, tank, reservoir])

    def jacobian(self, x: np.ndarray, controls: Controls):
        """Sparse df/dx using the floored link slopes."""
        m = self.model
        kappa, _ = m.link_slopes(x[self._slices["q"]], controls)
        NJ, NA = self._NJ, self._NA
        NR = csr_matrix(m.N_R)
        blocks = [
            [diags(-kappa), NJ.T, NA.T, NR.T],
            [NJ, None, None, None],
            [-NA, None, None, None],
            [None, None, None, identity(m.n_R)],
        ]
        return _assemble(blocks, [m.n_E, m.n_J, m.n_A, m.n_R])

    def residual_differential(self, state: HydraulicState, controls: Controls, demands: Demands) -> np.ndarray:
        """m(x, u, d): gamma (N^T p - eta) on links, (A^A)^-1 (-N_A q - d^A) on tanks."""
        f = self.residual(state.as_vector(), controls, demands)
        m = self.model
        sl = self._slices
        return np.concatenate([m.inertance * f[sl["q"]], f[sl["p_A"]] / m.tank_area])

    def residual_algebraic(self, state: HydraulicState, controls: Controls, demands: Demands) -> np.ndarray:
        """h(x, u, d): N_J q + d^J on junctions, p_R - p_R_bar on reservoirs."""
        f = self.residual(state.as_vector(), controls, demands)
        sl = self._slices
        return np.concatenate([f[sl["p_J"]], f[sl["p_R"]]])

    def algebraic_jacobian(self, state: HydraulicState, controls: Controls,
                           demands: Optional[Demands] = None) -> AlgebraicJacobian:
        """
        dh/dy and a regularity check on the junction-head pivot.

        Singularity is reported through ``regular``, never raised.
        """
        m = self.model
        matrix = np.zeros((m.n_J + m.n_R, m.n_J + m.n_R))
        matrix[m.n_J:, m.n_J:] = np.eye(m.n_R)
        active = m.active_links(controls)
        NJ = m.N_J[:, active]
        pivot = (NJ * m.inertance[active]) @ NJ.T
        rcond = _rcond(pivot)
        return AlgebraicJacobian(matrix, pivot, rcond, rcond > self.config.RCOND_THRESHOLD)

    # --- initialization ----------------------------------------------------

    def flat_start(self, controls: Optional[Controls] = None) -> HydraulicState:
        """q = 0.001 on every link, junctions at the mean anchor head."""
        m = self.model
        anchors = np.concatenate([m.reservoir_head, m.tank_init_head])
        level = float(anchors.mean()) if anchors.size else 0.0
        return HydraulicState(np.full(m.n_E, 1e-3), np.full(m.n_J, level),
                              m.tank_init_head.copy(), m.reservoir_head.copy())

    def initial_state(self, controls: Controls, demands: Demands) -> HydraulicState:
        """Consistent state at the INP initial tank levels, flows from the equilibrium."""
        guess = self.equilibrium_solve(controls, demands).state
        return self.consistent_init(guess.q, self.model.tank_init_head, controls, demands)

    def consistent_init(self, q0: np.ndarray, p_A0: np.ndarray, controls: Controls,
                        demands: Demands, time: float = 0.0) -> HydraulicState:
        """
        Complete (q, p_A) with algebraic heads satisfying h = 0.

        Reservoir heads are set to their fixed values. Flows violating the
        junction balances are projected (inertance-weighted) onto them, then
        junction heads solve N_J Gamma (N^T p - eta) = 0 so the balances also
        hold to first order in time.

        Raises:
            SingularAlgebraicJacobian: If the open links leave a junction
                without a path to a tank or reservoir
            NewtonDivergence: If the head solve does not converge
        """
        m = self.model
        cfg = self.config
        q = np.array(q0, dtype=float)
        p_A = np.array(p_A0, dtype=float)
        p_R = m.reservoir_head.copy()
        state = HydraulicState(q, np.zeros(m.n_J), p_A, p_R, time)

        check = self.algebraic_jacobian(state, controls, demands)
        if not check.regular:
            raise SingularAlgebraicJacobian(check.rcond, cfg.RCOND_THRESHOLD)
        if m.n_J == 0:
            return state

        gamma = m.inertance
        NJ = m.N_J
        P = (NJ * gamma) @ NJ.T
        imbalance = NJ @ q + demands.junction
        if np.max(np.abs(imbalance)) > cfg.NEWTON_TOL:
            logger.debug(f"consistent_init: projecting flows, imbalance {np.max(np.abs(imbalance)):.3e}")
            q = q - gamma * (NJ.T @ np.linalg.solve(P, imbalance))

        eta = m.link_losses(q, controls)
        fixed = m.N_A.T @ p_A + m.N_R.T @ p_R - eta

        def hidden(p_J):
            return NJ @ (gamma * (NJ.T @ p_J + fixed))

        guess = self.flat_start().p_J
        result = damped_newton(hidden, lambda _: P, guess, tol=cfg.NEWTON_TOL * max(1.0, np.abs(P).max()),
                               max_iter=cfg.NEWTON_MAX_ITER, min_step=cfg.MIN_STEP,
                               context="consistent_init", time=time)
        return HydraulicState(q, result.x, p_A, p_R, time)

    # --- integration -------------------------------------------------------

    def step_implicit_euler(self, state: HydraulicState, controls: Controls, demands: Demands,
                            dt: float) -> StepResult:
        """
        One implicit Euler step of length ``dt`` with inputs held at their
        step-end values.

        On a Newton failure the step is split in two halves, recursively, up
        to ``STEP_RETRIES`` times.

        Raises:
            PreconditionError: If dt <= 0
            NewtonDivergence: If every retry fails
        """
        if not dt > 0.0:
            raise PreconditionError("step_implicit_euler", f"time step must be positive, got {dt}")
        return self._advance(state, controls, demands, dt, self.config.STEP_RETRIES)

    def _advance(self, state, controls, demands, dt, retries) -> StepResult:
        try:
            return self._solve_step(state, controls, demands, dt)
        except NewtonDivergence:
            if retries <= 0:
                raise
            logger.warning(f"[!]  Step at t = {state.time:g} s failed, halving dt to {dt / 2:g} s")
            first = self._advance(state, controls, demands, dt / 2.0, retries - 1)
            second = self._advance(first.state, controls, demands, dt / 2.0, retries - 1)
            return StepResult(second.state, first.iterations + second.iterations,
                              second.residual, first.substeps + second.substeps)

    def _solve_step(self, state, controls, demands, dt) -> StepResult:
        cfg = self.config
        x_k = state.as_vector()
        E = self.mass
        E_dt = diags(E / dt)

        def G(x):
            return E * (x - x_k) / dt - self.residual(x, controls, demands)

        def J(x):
            return E_dt - self.jacobian(x, controls)

        t_next = state.time + dt
        result = damped_newton(G, J, x_k, tol=cfg.NEWTON_TOL, max_iter=cfg.NEWTON_MAX_ITER,
                               min_step=cfg.MIN_STEP, context="implicit Euler step", time=t_next)
        new = HydraulicState.from_vector(self.model, result.x, t_next)
        new.p_R = self.model.reservoir_head.copy()
        return StepResult(new, result.iterations, result.residual)

    def simulate(self, x0: HydraulicState, schedule, horizon: float, dt: Optional[float] = None) -> Trajectory:
        """
        Integrate from ``x0`` over ``horizon`` seconds.

        Inputs on (t_k, t_k+1] are read left-continuously at t_k+1, so a
        switch at t_s first acts on the step that starts at t_s. At a hard
        switch the algebraic state is recomputed from the frozen flows and
        tank heads and the jump is stored in ``events``.

        Args:
            x0: Initial state (made consistent if it is not)
            schedule: ScheduleInput or SmoothedSchedule
            horizon: Length of the run [s]
            dt: Step [s], defaults to ``TIME_STEP``

        Returns:
            Trajectory: One row per accepted step, starting at x0.time

        Raises:
            NewtonDivergence: With the failure time attached
        """
        cfg = self.config
        dt = cfg.TIME_STEP if dt is None else dt
        if not dt > 0.0:
            raise PreconditionError("simulate", f"time step must be positive, got {dt}")
        if horizon < 0.0:
            raise PreconditionError("simulate", f"horizon must be non-negative, got {horizon}")
        t0 = x0.time
        n_steps = int(np.ceil(horizon / dt - 1e-9))
        times = np.linspace(t0, t0 + horizon, n_steps + 1) if n_steps else np.array([t0])

        controls = schedule.controls_at(t0)
        demands = schedule.demands_at(t0)
        state = x0
        alg = self.residual_algebraic(state, controls, demands)
        if alg.size and np.max(np.abs(alg)) > 1e3 * cfg.NEWTON_TOL:
            logger.warning(f"[!]  Initial state inconsistent (|h| = {np.max(np.abs(alg)):.3e}), re-initializing")
            state = self.consistent_init(state.q, state.p_A, controls, demands, t0)

        rows = [state.as_vector()]
        residuals = [_inf_norm(self.residual_algebraic(state, controls, demands))]
        iterations = [0]
        events = []
        floored_steps = 0

        for k in range(n_steps):
            t_k, t_next = times[k], times[k + 1]
            if k > 0 and schedule.is_switch(t_k):
                state = self._reset_at_switch(state, schedule, t_k, events)
            controls = schedule.controls_at(t_next, left=True)
            demands = schedule.demands_at(t_next, left=True)
            step = self.step_implicit_euler(state, controls, demands, t_next - t_k)
            state = step.state
            state.time = t_next
            if np.any(self.model.link_slopes(state.q, controls)[1]):
                floored_steps += 1
            rows.append(state.as_vector())
            residuals.append(_inf_norm(self.residual_algebraic(state, controls, demands)))
            iterations.append(step.iterations)

        metadata = {
            "dt": dt, "horizon": horizon, "steps": n_steps,
            "newton_tol": cfg.NEWTON_TOL, "newton_max_iter": cfg.NEWTON_MAX_ITER,
            "total_iterations": int(np.sum(iterations)),
            "max_algebraic_residual": float(np.max(residuals)),
            "slope_floor_steps": floored_steps,
            "closure_cap": self.model.closure_cap,
            "warnings": list(self.model.warnings),
        }
        logger.info(f"[OK] Simulated {n_steps} steps of {dt:g} s, {metadata['total_iterations']} Newton iterations")
        return Trajectory(times, np.vstack(rows), self.model.state_names(),
                          np.array(residuals), np.array(iterations, dtype=int), events, metadata)

    def _reset_at_switch(self, state, schedule, t, events) -> HydraulicState:
        controls = schedule.controls_at(t)
        demands = schedule.demands_at(t)
        try:
            new = self.consistent_init(state.q, state.p_A, controls, demands, t)
        except (SingularAlgebraicJacobian, NewtonDivergence) as e:
            logger.warning(f"[!]  Could not re-initialize at switch t = {t:g} s: {e}")
            events.append({"time": float(t), "y_jump": None, "z_jump": 0.0, "reset": False})
            return state
        y_jump = _inf_norm(new.y - state.y)
        z_jump = _inf_norm(new.z - state.z)
        events.append({"time": float(t), "y_jump": y_jump, "z_jump": z_jump, "reset": True})
        logger.info(f"Switch at t = {t:g} s: algebraic jump {y_jump:.3e}")
        return new

    # --- equilibria ----------------------------------------------------------

    def equilibrium_solve(self, controls: Controls, demands: Demands,
                          guess: Optional[HydraulicState] = None, polish: int = 0) -> EquilibriumResult:
        """
        Operating point with m = 0 and h = 0, tank heads included as unknowns.

        Args:
            controls: Fixed controls
            demands: Fixed demands (tank draws make tank heads free to settle)
            guess: Starting point, flat start if omitted
            polish: Extra Newton steps after convergence

        Raises:
            NewtonDivergence: If Newton hits its cap
        """
        cfg = self.config
        start = guess or self.flat_start(controls)
        result = damped_newton(lambda x: self.residual(x, controls, demands),
                               lambda x: self.jacobian(x, controls),
                               start.as_vector(), tol=cfg.NEWTON_TOL, max_iter=cfg.NEWTON_MAX_ITER,
                               min_step=cfg.MIN_STEP, context="equilibrium_solve", polish=polish)
        state = HydraulicState.from_vector(self.model, result.x, start.time)
        state.p_R = self.model.reservoir_head.copy()
        residual = self.equilibrium_residual(state, controls, demands)
        if residual > cfg.EQUILIBRIUM_TOL:
            logger.warning(f"[!]  Equilibrium residual {residual:.3e} above {cfg.EQUILIBRIUM_TOL:.1e}")
        logger.info(f"[OK] Equilibrium in {result.iterations} iterations, residual {residual:.3e}")
        return EquilibriumResult(state, result.iterations, residual)

    def equilibrium_residual(self, state: HydraulicState, controls: Controls, demands: Demands) -> float:
        """||{m, h}||_inf."""
        return max(_inf_norm(self.residual_differential(state, controls, demands)),
                   _inf_norm(self.residual_algebraic(state, controls, demands)))


def detect_switch_kink(trajectory: Trajectory, t_s: float, window: float,
                       continuity_tol: float = 1e-6) -> KinkReport:
    """
    One-sided difference quotients of z around a switching instant.

    left = (z(t_s) - z(t_s - w)) / w and right = (z(t_s + w) - z(t_s)) / w
    from linear interpolation of the samples. The continuity gap is the
    jump applied to z when the integrator reset at t_s (zero if none).

    Raises:
        InsufficientSamples: If the trajectory does not cover t_s +- window
            with at least one sample strictly on each side
    """
    times = trajectory.times
    before = int(np.sum(times < t_s))
    after = int(np.sum(times > t_s))
    if (not window > 0.0 or before < 1 or after < 1
            or times[0] > t_s - window + 1e-9 or times[-1] < t_s + window - 1e-9):
        raise InsufficientSamples(t_s, 1, min(before, after))
    cols = trajectory.z_indices
    z_minus, z_s, z_plus = trajectory.sample([t_s - window, t_s, t_s + window], cols)
    left = (z_s - z_minus) / window
    right = (z_plus - z_s) / window
    gap = 0.0
    for event in trajectory.events:
        if abs(event["time"] - t_s) <= 1e-9:
            gap = float(event.get("z_jump") or 0.0)
    return KinkReport(left, right, float(np.linalg.norm(right - left)), gap, gap <= continuity_tol)


def _assemble(blocks, shapes):
    keep = [i for i, size in enumerate(shapes) if size]
    reduced = [[blocks[i][j] for j in keep] for i in keep]
    return bmat(reduced, format="csr")


def _rcond(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 1.0
    with np.errstate(divide="ignore"):
        s = np.linalg.svd(matrix, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0.0 else 0.0


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0
