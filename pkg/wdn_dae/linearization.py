"""
Linearization Module
====================

Graph-form linear DAE about a hydraulic operating point

    E_h dx' = A_h dx + B_u du + B_d dd,   dx = [dq, dp_J, dp_A]

    E_h = blockdiag(Lambda, 0, A^A)
    A_h = [[-K, N_J^T, N_A^T], [N_J, 0, 0], [-N_A, 0, 0]]

with Lambda = diag(1/gamma) and K the diagonal of link slopes over the open
links. Junction heads are eliminated through the hidden constraint
N_J dq' = 0 to give a reduced ODE on the consistent flows and tank heads.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg

from .config import Config
from .dae_core import HydraulicDae
from .error_handler import NotAnEquilibrium, SingularAlgebraicPivot, SingularStepMatrix
from .schedule import Controls, Demands

logger = logging.getLogger(__name__)


@dataclass
class LinearDaeModel:
    """E_h, A_h, B_u, B_d and the graph data they are built from."""
    E: np.ndarray
    A: np.ndarray
    B_u: np.ndarray
    B_d: np.ndarray
    kappa: np.ndarray
    inertance: np.ndarray
    tank_area: np.ndarray
    N_J: np.ndarray
    N_A: np.ndarray
    N_R: np.ndarray
    link_ids: List[str] = field(default_factory=list)
    input_names: List[str] = field(default_factory=list)
    floored: Optional[np.ndarray] = None
    operating_point: Dict = field(default_factory=dict)

    @property
    def n_q(self) -> int:
        return self.kappa.size

    @property
    def n_J(self) -> int:
        return self.N_J.shape[0]

    @property
    def n_A(self) -> int:
        return self.N_A.shape[0]

    @property
    def n(self) -> int:
        return self.n_q + self.n_J + self.n_A

    @property
    def K(self) -> np.ndarray:
        return np.diag(self.kappa)

    def split(self, dx: np.ndarray):
        """(dq, dp_J, dp_A) views of a state vector."""
        a, b = self.n_q, self.n_q + self.n_J
        return dx[:a], dx[a:b], dx[b:]


@dataclass
class ReducedLinearModel:
    """
    Reduced ODE dz' = A_red dz + B_red du + D_red dd on dz = [dq_c, dp_A].

    dq = dq_c + F_d dd_J restores the total flow perturbation. ``T`` is an
    orthonormal basis of the consistent subspace {N_J dq_c = 0} x R^{n_A};
    A_c, B_c, D_c are the restrictions used for margins.
    """
    A_red: np.ndarray
    B_red: np.ndarray
    D_red: np.ndarray
    F_d: np.ndarray
    T: np.ndarray
    A_c: np.ndarray
    B_c: np.ndarray
    D_c: np.ndarray
    pivot_rcond: float = 1.0

    @property
    def n_c(self) -> int:
        return self.A_c.shape[0]


@dataclass
class StabilityReport:
    alpha_s: float
    spectrum: np.ndarray
    stable: bool
    kappa_V: float
    diagonalizable: bool


@dataclass
class LinearTrajectory:
    times: np.ndarray
    states: np.ndarray
    V: np.ndarray
    V_dot: np.ndarray


def assemble_linear_dae(N_J: np.ndarray, N_A: np.ndarray, kappa: np.ndarray, inertance: np.ndarray,
                        tank_area: np.ndarray, B_u: Optional[np.ndarray] = None,
                        B_d: Optional[np.ndarray] = None, N_R: Optional[np.ndarray] = None,
                        link_ids: Optional[List[str]] = None, input_names: Optional[List[str]] = None,
                        floored: Optional[np.ndarray] = None) -> LinearDaeModel:
    """
    Assemble E_h and A_h from incidence blocks and link slopes.

    Args:
        N_J, N_A: Junction and tank incidence rows over the open links
        kappa: Link slopes (positive)
        inertance: Link gamma values
        tank_area: Tank areas
        B_u: Input columns (defaults to none)
        B_d: Demand columns (defaults to +I on junction rows, -I on tank rows)
        N_R: Reservoir incidence rows, kept for the Laplacian
    """
    N_J = np.atleast_2d(np.asarray(N_J, dtype=float)).reshape(-1, len(kappa))
    N_A = np.atleast_2d(np.asarray(N_A, dtype=float)).reshape(-1, len(kappa))
    kappa = np.asarray(kappa, dtype=float)
    n_q, n_J, n_A = kappa.size, N_J.shape[0], N_A.shape[0]
    n = n_q + n_J + n_A
    if N_R is None:
        N_R = np.zeros((0, n_q))

    E = np.zeros((n, n))
    E[:n_q, :n_q] = np.diag(1.0 / np.asarray(inertance, dtype=float))
    E[n_q + n_J:, n_q + n_J:] = np.diag(np.asarray(tank_area, dtype=float))

    A = np.zeros((n, n))
    A[:n_q, :n_q] = -np.diag(kappa)
    A[:n_q, n_q:n_q + n_J] = N_J.T
    A[:n_q, n_q + n_J:] = N_A.T
    A[n_q:n_q + n_J, :n_q] = N_J
    A[n_q + n_J:, :n_q] = -N_A

    if B_d is None:
        B_d = np.zeros((n, n_J + n_A))
        B_d[n_q:n_q + n_J, :n_J] = np.eye(n_J)
        B_d[n_q + n_J:, n_J:] = -np.eye(n_A)
    if B_u is None:
        B_u = np.zeros((n, 0))
    return LinearDaeModel(E, A, np.asarray(B_u, dtype=float), np.asarray(B_d, dtype=float),
                          kappa, np.asarray(inertance, dtype=float), np.asarray(tank_area, dtype=float),
                          N_J, N_A, np.asarray(N_R, dtype=float),
                          link_ids=list(link_ids or [f"e{i}" for i in range(n_q)]),
                          input_names=list(input_names or []), floored=floored)


def linearize(model, state, controls: Controls, demands: Demands,
              config: Optional[Config] = None) -> LinearDaeModel:
    """
    Linear DAE about an equilibrium.

    Closed links (open fraction 0) are dropped. Inputs are the pump speeds
    followed by the valve open fractions; their columns are -d eta / d u on
    the link rows.

    Raises:
        NotAnEquilibrium: If ||{m, h}||_inf exceeds ``LINEARIZATION_TOL``
    """
    config = config or Config()
    dae = HydraulicDae(model, config)
    residual = dae.equilibrium_residual(state, controls, demands)
    if residual > config.LINEARIZATION_TOL:
        raise NotAnEquilibrium(residual, config.LINEARIZATION_TOL)

    active = model.active_links(controls)
    kappa_all, floored_all = model.link_slopes(state.q, controls)
    d_speed, d_open = model.loss_input_derivatives(state.q, controls)

    # -d eta / du over all links, then restricted to the open rows
    n_in = model.n_M + model.n_W
    B_links = np.zeros((model.n_E, n_in))
    for m, e in enumerate(range(model.pump_slice.start, model.pump_slice.stop)):
        B_links[e, m] = -d_speed[m]
    for w, e in enumerate(range(model.valve_slice.start, model.valve_slice.stop)):
        B_links[e, model.n_M + w] = -d_open[e]

    kappa = kappa_all[active]
    n_q, n_J, n_A = int(active.sum()), model.n_J, model.n_A
    B_u = np.zeros((n_q + n_J + n_A, n_in))
    B_u[:n_q] = B_links[active]

    if np.any(floored_all[active]):
        logger.warning(f"[!]  Slope floor engaged on {int(floored_all[active].sum())} link(s)")

    lin = assemble_linear_dae(
        model.N_J[:, active], model.N_A[:, active], kappa, model.inertance[active], model.tank_area,
        B_u=B_u, N_R=model.N_R[:, active],
        link_ids=[e for e, a in zip(model.link_ids, active) if a],
        input_names=[f"speed:{m}" for m in model.pump_ids] + [f"opening:{v}" for v in model.valve_ids],
        floored=floored_all[active],
    )
    lin.operating_point = {"state": state, "controls": controls, "demands": demands, "residual": residual}
    return lin


def weighted_laplacian(lin: LinearDaeModel) -> np.ndarray:
    """L_w = N K^-1 N^T over all nodes (junctions, tanks, reservoirs)."""
    N = np.vstack([lin.N_J, lin.N_A, lin.N_R])
    return (N / lin.kappa) @ N.T


def conductance_weights(lin: LinearDaeModel) -> pd.DataFrame:
    """Link weights w = 1/kappa, largest first."""
    table = pd.DataFrame({"link_id": lin.link_ids, "kappa": lin.kappa, "weight": 1.0 / lin.kappa})
    return table.sort_values("weight", ascending=False, kind="mergesort").reset_index(drop=True)


def incremental_energy(lin: LinearDaeModel, dx: np.ndarray):
    """
    V = 1/2 dx^T E_h dx and its rate V_dot = -dq^T K dq along consistent
    unforced motion.

    Returns:
        tuple: (V, V_dot)
    """
    dx = np.asarray(dx, dtype=float)
    dq = lin.split(dx)[0]
    return 0.5 * float(dx @ lin.E @ dx), -float(dq @ (lin.kappa * dq))


def _pivot(lin: LinearDaeModel, config: Config):
    gamma = lin.inertance
    P = (lin.N_J * gamma) @ lin.N_J.T
    if lin.n_J == 0:
        return P, 1.0
    s = np.linalg.svd(P, compute_uv=False)
    rcond = float(s[-1] / s[0]) if s[0] > 0.0 else 0.0
    if rcond <= config.RCOND_THRESHOLD:
        raise SingularAlgebraicPivot(rcond)
    return P, rcond


def reduce(lin: LinearDaeModel, config: Optional[Config] = None) -> ReducedLinearModel:
    """
    Eliminate junction heads.

    With P = N_J Lambda^-1 N_J^T and the projector
    Pi = I - Lambda^-1 N_J^T P^-1 N_J:

        A_red = [[Pi Lambda^-1 (-K), Pi Lambda^-1 N_A^T], [-(A^A)^-1 N_A, 0]]

    Raises:
        SingularAlgebraicPivot: If P cannot be inverted
    """
    config = config or Config()
    n_q, n_J, n_A = lin.n_q, lin.n_J, lin.n_A
    gamma = lin.inertance
    P, rcond = _pivot(lin, config)

    if n_J:
        G = -(gamma[:, None] * lin.N_J.T) @ np.linalg.inv(P)
        Pi = np.eye(n_q) + G @ lin.N_J
    else:
        G = np.zeros((n_q, 0))
        Pi = np.eye(n_q)
    PL = Pi * gamma  # Pi Lambda^-1
    inv_area = 1.0 / lin.tank_area

    A_red = np.zeros((n_q + n_A, n_q + n_A))
    A_red[:n_q, :n_q] = -PL * lin.kappa
    A_red[:n_q, n_q:] = PL @ lin.N_A.T
    A_red[n_q:, :n_q] = -inv_area[:, None] * lin.N_A

    q_rows = slice(0, n_q)
    a_rows = slice(n_q + n_J, lin.n)
    B_red = np.vstack([PL @ lin.B_u[q_rows], inv_area[:, None] * lin.B_u[a_rows]])

    D_red = np.zeros((n_q + n_A, n_J + n_A))
    D_red[:n_q, :n_J] = -(PL * lin.kappa) @ G
    D_red[n_q:, :n_J] = -(inv_area[:, None] * lin.N_A) @ G
    D_red[n_q:, n_J:] = -np.diag(inv_area)

    basis = scipy.linalg.null_space(lin.N_J) if n_J else np.eye(n_q)
    T = scipy.linalg.block_diag(basis, np.eye(n_A)) if n_A else basis
    T = np.asarray(T).reshape(n_q + n_A, -1)
    return ReducedLinearModel(A_red, B_red, D_red, G, T,
                              T.T @ A_red @ T, T.T @ B_red, T.T @ D_red, rcond)


def pencil_eigenvalues(A: np.ndarray, E: np.ndarray, cutoff: float = 1e12) -> np.ndarray:
    """Finite generalized eigenvalues of (A, E) by QZ."""
    values = scipy.linalg.eig(A, E, right=False, homogeneous_eigvals=False)
    finite = np.isfinite(values) & (np.abs(values) < cutoff)
    return np.sort_complex(values[finite])


def stability_margin(system, config: Optional[Config] = None) -> StabilityReport:
    """
    alpha_s = -max Re(lambda) over the finite spectrum.

    Args:
        system: ReducedLinearModel, LinearDaeModel (reduced first) or a
            square array taken as A
    """
    if isinstance(system, LinearDaeModel):
        system = reduce(system, config)
    A = system.A_c if isinstance(system, ReducedLinearModel) else np.atleast_2d(np.asarray(system, dtype=float))
    if A.size == 0:
        return StabilityReport(float("inf"), np.array([], dtype=complex), True, 1.0, True)
    values, vectors = np.linalg.eig(A)
    alpha = -float(np.max(values.real))
    s = np.linalg.svd(vectors, compute_uv=False)
    diagonalizable = s[-1] > 1e-12 * s[0]
    kappa_V = float(s[0] / s[-1]) if diagonalizable else float("inf")
    return StabilityReport(alpha, np.sort_complex(values), bool(np.all(values.real < 0.0)),
                           kappa_V, bool(diagonalizable))


def project_consistent(lin: LinearDaeModel, dx: np.ndarray) -> np.ndarray:
    """
    Orthogonal projection of dq onto null(N_J), then junction heads from the
    linearized link relation.
    """
    dq, dp_J, dp_A = (v.copy() for v in lin.split(np.asarray(dx, dtype=float)))
    if lin.n_J:
        correction, *_ = np.linalg.lstsq(lin.N_J @ lin.N_J.T, lin.N_J @ dq, rcond=None)
        dq = dq - lin.N_J.T @ correction
        gamma = lin.inertance
        P = (lin.N_J * gamma) @ lin.N_J.T
        rhs = lin.N_J @ (gamma * (lin.kappa * dq - lin.N_A.T @ dp_A))
        dp_J = np.linalg.solve(P, rhs)
    return np.concatenate([dq, dp_J, dp_A])


def simulate_linear(lin: LinearDaeModel, dx0: np.ndarray, horizon: float, dt: float,
                    project: bool = True) -> LinearTrajectory:
    """
    Unforced implicit Euler run (E - dt A) x_{k+1} = E x_k.

    Raises:
        SingularStepMatrix: If E - dt A is singular
    """
    x = project_consistent(lin, dx0) if project else np.asarray(dx0, dtype=float)
    M = lin.E - dt * lin.A
    if M.size and np.linalg.cond(M) > 1.0 / np.finfo(float).eps:
        raise SingularStepMatrix(dt)
    factor = scipy.linalg.lu_factor(M) if M.size else None
    n_steps = int(np.ceil(horizon / dt - 1e-9))
    states = np.zeros((n_steps + 1, lin.n))
    states[0] = x
    for k in range(n_steps):
        x = scipy.linalg.lu_solve(factor, lin.E @ x)
        states[k + 1] = x
    energy = np.array([incremental_energy(lin, s) for s in states])
    return LinearTrajectory(dt * np.arange(n_steps + 1), states, energy[:, 0], energy[:, 1])
