"""
Quasi-Steady Module
===================

EPANET-style reference solver. Inertia is dropped: each water-flow problem
(WFP) solves N^T p = eta(q, u) and N_J q + d^J = 0 with tank heads held
fixed, and tanks are advanced explicitly between solves. Also compares two
trajectories sample by sample.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse import bmat, csr_matrix, diags

from .config import Config
from .dae_core import HydraulicState, Trajectory
from .error_handler import GridMismatch, NewtonDivergence, PreconditionError
from .network_model import HydraulicModel
from .newton import damped_newton
from .schedule import Controls, Demands

logger = logging.getLogger(__name__)

REL_FLOOR = 1e-6


@dataclass
class WfpResult:
    q: np.ndarray
    p_J: np.ndarray
    iterations: int
    residual: float
    balance: float


def solve_wfp(model: HydraulicModel, tank_heads: np.ndarray, controls: Controls, demands: Demands,
              guess: Optional[HydraulicState] = None, config: Optional[Config] = None) -> WfpResult:
    """
    Flows and junction heads at fixed tank heads.

    Newton on [N^T p - eta(q); N_J q + d^J] with Jacobian
    [[-K, N_J^T], [N_J, 0]].

    Args:
        model: Hydraulic model
        tank_heads: Tank heads held fixed during the solve
        controls: Fixed controls
        demands: Junction draws (tank draws do not enter)
        guess: Starting flows and junction heads

    Raises:
        NewtonDivergence: If Newton hits its cap
    """
    config = config or Config()
    n_E, n_J = model.n_E, model.n_J
    NJ = csr_matrix(model.N_J)
    fixed = model.N_A.T @ np.asarray(tank_heads, dtype=float) + model.N_R.T @ model.reservoir_head

    def residual(x):
        q, p_J = x[:n_E], x[n_E:]
        return np.concatenate([NJ.T @ p_J + fixed - model.link_losses(q, controls),
                               NJ @ q + demands.junction])

    def jacobian(x):
        kappa, _ = model.link_slopes(x[:n_E], controls)
        if n_J == 0:
            return diags(-kappa, format="csr")
        return bmat([[diags(-kappa), NJ.T], [NJ, None]], format="csr")

    if guess is not None:
        x0 = np.concatenate([guess.q, guess.p_J])
    else:
        anchors = np.concatenate([model.reservoir_head, np.asarray(tank_heads, dtype=float)])
        level = float(anchors.mean()) if anchors.size else 0.0
        x0 = np.concatenate([np.full(n_E, 1e-3), np.full(n_J, level)])

    result = damped_newton(residual, jacobian, x0, tol=config.NEWTON_TOL, max_iter=config.NEWTON_MAX_ITER,
                           min_step=config.MIN_STEP, context="solve_wfp")
    q, p_J = result.x[:n_E], result.x[n_E:]
    balance = float(np.max(np.abs(model.N_J @ q + demands.junction))) if n_J else 0.0
    return WfpResult(q, p_J, result.iterations, result.residual, balance)


def loop_imbalance(model: HydraulicModel, q: np.ndarray, controls: Controls) -> float:
    """Largest signed headloss sum around an independent loop of the open links."""
    active = model.active_links(controls)
    basis = scipy.linalg.null_space(model.incidence[:, active])
    if basis.size == 0:
        return 0.0
    eta = model.link_losses(q, controls)[active]
    return float(np.max(np.abs(basis.T @ eta)))


def extended_period_sim(model: HydraulicModel, schedule, horizon: float, dt: float,
                        p_A0: Optional[np.ndarray] = None, config: Optional[Config] = None) -> Trajectory:
    """
    Consecutive WFP solves with explicit tank updates.

    At each t_k the inputs in force (right-continuous, hard switches) are
    applied, the WFP is solved at the current tank heads and then
    p_A <- p_A + dt (A^A)^-1 (-N_A q - d^A). The terminal row is one more
    solve at the final tank heads.

    Args:
        model: Hydraulic model
        schedule: ScheduleInput or SmoothedSchedule, sampled at each t_k
        horizon: Run length [s]
        dt: Hydraulic step [s]
        p_A0: Initial tank heads, INP initial levels by default

    Returns:
        Trajectory: Same column names as the DAE trajectory

    Raises:
        NewtonDivergence: Naming the failing step
    """
    config = config or Config()
    if not dt > 0.0:
        raise PreconditionError("extended_period_sim", f"time step must be positive, got {dt}")
    if horizon < 0.0:
        raise PreconditionError("extended_period_sim", f"horizon must be non-negative, got {horizon}")
    n_steps = int(np.ceil(horizon / dt - 1e-9))
    times = np.linspace(0.0, horizon, n_steps + 1) if n_steps else np.array([0.0])
    p_A = model.tank_init_head.copy() if p_A0 is None else np.asarray(p_A0, dtype=float).copy()

    rows, residuals, iterations = [], [], []
    guess = None
    for k, t in enumerate(times):
        controls = schedule.controls_at(t)
        demands = schedule.demands_at(t)
        try:
            wfp = solve_wfp(model, p_A, controls, demands, guess, config)
        except NewtonDivergence as e:
            raise NewtonDivergence(f"extended period step {k}", e.iterations, e.residual, float(t))
        guess = HydraulicState(wfp.q, wfp.p_J, p_A, model.reservoir_head)
        rows.append(np.concatenate([wfp.q, wfp.p_J, p_A, model.reservoir_head]))
        residuals.append(wfp.balance)
        iterations.append(wfp.iterations)
        if k < n_steps:
            step = times[k + 1] - t
            p_A = p_A + step * (-(model.N_A @ wfp.q) - demands.tank) / model.tank_area

    metadata = {"dt": dt, "horizon": horizon, "steps": n_steps, "wfp_solves": len(rows),
                "tank_updates": n_steps, "solver": "quasi_steady"}
    logger.info(f"[OK] Extended period run: {n_steps} steps of {dt:g} s")
    return Trajectory(times, np.vstack(rows), model.state_names(), np.array(residuals),
                      np.array(iterations, dtype=int), [], metadata)


def open_link_mask(schedule, times: Sequence[float]) -> np.ndarray:
    """(n_t, n_E) True where the link is open at each time."""
    return np.vstack([schedule.controls_at(t).opening > 0.0 for t in times])


@dataclass
class ErrorReport:
    """Sample-wise errors of trajectory a against reference b."""
    times: np.ndarray
    l2_norm: np.ndarray
    linf_norm: np.ndarray
    rel_median: np.ndarray
    rel_p10: np.ndarray
    rel_p90: np.ndarray
    columns: list
    max_pj_error: float
    max_q_error: float
    supported_links: int
    metadata: Dict = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return len(self.columns)

    @property
    def peak_time(self) -> float:
        return float(self.times[int(np.argmax(self.linf_norm))]) if self.times.size else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "time": self.times, "l2_norm": self.l2_norm, "linf_norm": self.linf_norm,
            "rel_median": self.rel_median, "rel_p10": self.rel_p10, "rel_p90": self.rel_p90,
        })

    def summary(self) -> Dict:
        return {
            "max_pj_error_m": self.max_pj_error,
            "max_q_error_m3s": self.max_q_error,
            "max_l2_norm": float(self.l2_norm.max()) if self.times.size else 0.0,
            "max_linf_norm": float(self.linf_norm.max()) if self.times.size else 0.0,
            "peak_time": self.peak_time,
            "n_x": self.n_x,
            "t_start": float(self.times[0]),
            "t_end": float(self.times[-1]),
            "supported_links": self.supported_links,
            "supported_definition": "links open in both trajectories at the compared instant",
        }


def compare_trajectories(a: Trajectory, b: Trajectory, state_subset: Optional[Sequence[str]] = None,
                         open_a: Optional[np.ndarray] = None, open_b: Optional[np.ndarray] = None) -> ErrorReport:
    """
    Errors e(t) = a(t) - b(t) on a's samples inside the shared horizon.

    ``b`` is linearly interpolated onto a's times when the grids differ.

    Args:
        a: Trajectory under test
        b: Reference trajectory
        state_subset: Column prefixes to compare (``q``, ``pJ``, ``pA``, ``pR``)
        open_a, open_b: (n_t, n_links) open masks on each trajectory's own
            grid; flow errors count only where both are open. All links are
            taken as open when omitted.

    Raises:
        GridMismatch: If the horizons do not overlap
    """
    start = max(a.times[0], b.times[0])
    end = min(a.times[-1], b.times[-1])
    if end < start:
        raise GridMismatch((float(a.times[0]), float(a.times[-1])), (float(b.times[0]), float(b.times[-1])))
    keep = (a.times >= start - 1e-9) & (a.times <= end + 1e-9)
    times = a.times[keep]

    shared = [n for n in a.names if n in set(b.names)]
    if state_subset is not None:
        shared = [n for n in shared if n.split(":", 1)[0] in state_subset]
    if not shared:
        raise PreconditionError("compare_trajectories", "trajectories share no state columns")
    ia = np.array([a.names.index(n) for n in shared])
    ib = np.array([b.names.index(n) for n in shared])
    values_a = a.states[keep][:, ia]
    values_b = b.sample(times, ib)
    error = values_a - values_b
    n_x = len(shared)

    l2 = np.linalg.norm(error, axis=1) / n_x
    linf = np.max(np.abs(error), axis=1) / n_x
    relative = np.abs(error) / np.maximum(np.abs(values_b), REL_FLOOR)
    p10, median, p90 = np.percentile(relative, [10.0, 50.0, 90.0], axis=1)

    pj = [i for i, n in enumerate(shared) if n.startswith("pJ:")]
    max_pj = float(np.max(np.abs(error[:, pj]))) if pj else 0.0

    flow_cols = [i for i, n in enumerate(shared) if n.startswith("q:")]
    supported = 0
    max_q = 0.0
    if flow_cols:
        mask = np.ones((times.size, len(flow_cols)), dtype=bool)
        link_names = [shared[i] for i in flow_cols]
        for trajectory, open_mask in ((a, open_a), (b, open_b)):
            if open_mask is None:
                continue
            all_flows = [n for n in trajectory.names if n.startswith("q:")]
            cols = [all_flows.index(n) for n in link_names]
            k = np.searchsorted(trajectory.times, times, side="right") - 1
            mask &= np.asarray(open_mask, dtype=bool)[np.clip(k, 0, None)][:, cols]
        flow_error = np.abs(error[:, flow_cols])
        supported = int(np.any(mask, axis=0).sum())
        max_q = float(np.max(flow_error[mask])) if mask.any() else 0.0

    logger.info(f"Compared {n_x} states over {times.size} samples: max |e|_inf/n_x = {linf.max():.3e}")
    return ErrorReport(times, l2, linf, median, p10, p90, shared, max_pj, max_q, supported,
                       {"interpolated": not (b.times.size == a.times.size and np.allclose(b.times, a.times))})
