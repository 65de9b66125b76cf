"""
Margins Module
==============

Parameter sensitivity, linearization validity screening, controllability
and stability margins, robustness bounds, parameter ranking, pump
authority and demand sweeps.

Parameters are multiplicative factors theta (1 at nominal) in the order
given by ``HydraulicModel.theta_names()``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .config import Config
from .dae_core import HydraulicDae, HydraulicState
from .error_handler import PreconditionError, SingularJx, SingularStepMatrix, WdnError
from .linearization import (
    LinearDaeModel,
    ReducedLinearModel,
    linearize,
    pencil_eigenvalues,
    reduce,
    stability_margin,
)
from .network_model import HydraulicModel
from .schedule import Controls, Demands

logger = logging.getLogger(__name__)


# --- operating points along theta ---------------------------------------------

@dataclass
class OperatingPoint:
    model: HydraulicModel
    state: HydraulicState
    lin: LinearDaeModel
    red: ReducedLinearModel


def operating_point(model: HydraulicModel, factors: np.ndarray, controls: Controls, demands: Demands,
                    config: Config, guess: Optional[HydraulicState] = None) -> OperatingPoint:
    """Equilibrium, linear DAE and reduced model at parameter factors ``factors``."""
    scaled = model.with_theta_factors(factors)
    dae = HydraulicDae(scaled, config)
    state = dae.equilibrium_solve(controls, demands, guess=guess, polish=1).state
    lin = linearize(scaled, state, controls, demands, config)
    return OperatingPoint(scaled, state, lin, reduce(lin, config))


def roughness_direction(model: HydraulicModel) -> np.ndarray:
    """Unit-step direction scaling every pipe roughness factor together."""
    v = np.zeros(model.n_theta)
    v[:model.n_P] = 1.0
    return v


def _direction(model: HydraulicModel, index_or_vector) -> np.ndarray:
    if isinstance(index_or_vector, (int, np.integer)):
        v = np.zeros(model.n_theta)
        v[int(index_or_vector)] = 1.0
        return v
    return np.asarray(index_or_vector, dtype=float)


# --- equilibrium sensitivity --------------------------------------------------

def sensitivity_from_residual(residual: Callable[[np.ndarray, np.ndarray], np.ndarray],
                              x: np.ndarray, theta: np.ndarray, h_theta: float = 1e-4,
                              jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                              rcond_threshold: float = 1e-12) -> np.ndarray:
    """
    S = -J_x^-1 J_theta for a residual r(x, theta).

    J_theta comes from central differences with relative step ``h_theta``;
    J_x from ``jacobian`` when given, else from central differences too.

    Raises:
        SingularJx: If J_x is (numerically) singular
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if jacobian is not None:
        J_x = np.asarray(jacobian(x), dtype=float)
    else:
        J_x = np.column_stack([
            (residual(x + h * e, theta) - residual(x - h * e, theta)) / (2.0 * h)
            for e, h in ((np.eye(x.size)[i], h_theta * max(1.0, abs(x[i]))) for i in range(x.size))
        ])
    J_theta = np.column_stack([
        (residual(x, theta + h * e) - residual(x, theta - h * e)) / (2.0 * h)
        for e, h in ((np.eye(theta.size)[i], h_theta * max(1.0, abs(theta[i]))) for i in range(theta.size))
    ])
    s = np.linalg.svd(J_x, compute_uv=False)
    rcond = float(s[-1] / s[0]) if s[0] > 0.0 else 0.0
    if rcond <= rcond_threshold:
        raise SingularJx(rcond)
    return -np.linalg.solve(J_x, J_theta)


def equilibrium_sensitivity(model: HydraulicModel, state: HydraulicState, controls: Controls,
                            demands: Demands, config: Optional[Config] = None,
                            indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    First-order equilibrium sensitivity dx*/dtheta at the nominal factors.

    Args:
        model: Nominal model
        state: Equilibrium of ``model``
        indices: Parameter indices (all when omitted)

    Returns:
        np.ndarray: (n_x, len(indices))
    """
    config = config or Config()
    indices = list(range(model.n_theta)) if indices is None else list(indices)
    base = model.current_theta()
    dae = HydraulicDae(model, config)

    def residual(x, sub):
        factors = base.copy()
        factors[indices] = sub
        return HydraulicDae(model.with_theta_factors(factors), config).residual(x, controls, demands)

    def jacobian(x):
        return dae.jacobian(x, controls).toarray()

    return sensitivity_from_residual(residual, state.as_vector(), base[indices], config.H_THETA,
                                     jacobian, config.RCOND_THRESHOLD)


# --- matrix sensitivity and screening -----------------------------------------

@dataclass
class MatrixSensitivity:
    """Directional derivatives of the linear model along theta."""
    dA: np.ndarray
    dE: np.ndarray
    dB: np.ndarray
    L_A: float
    A0: np.ndarray
    direction: np.ndarray

    def predict(self, step: float) -> np.ndarray:
        """First-order predictor A_h(theta + step * direction)."""
        return self.A0 + step * self.dA


def matrix_sensitivity(model: HydraulicModel, controls: Controls, demands: Demands,
                       direction: Union[int, np.ndarray], config: Optional[Config] = None,
                       nominal: Optional[OperatingPoint] = None) -> MatrixSensitivity:
    """
    Central difference of A_h (and E_h, B_c) along one parameter or direction.

    L_A is a second-difference curvature estimate along the unit direction
    with step ``CURVATURE_STEP``.

    Args:
        direction: Parameter index or factor-space direction vector
    """
    config = config or Config()
    theta = model.current_theta()
    v = _direction(model, direction)
    nominal = nominal or operating_point(model, theta, controls, demands, config)
    guess = nominal.state
    h = config.H_THETA
    plus = operating_point(model, theta + h * v, controls, demands, config, guess)
    minus = operating_point(model, theta - h * v, controls, demands, config, guess)

    norm_v = float(np.linalg.norm(v))
    unit = v / norm_v if norm_v > 0.0 else v
    c = config.CURVATURE_STEP
    far_plus = operating_point(model, theta + c * unit, controls, demands, config, guess)
    far_minus = operating_point(model, theta - c * unit, controls, demands, config, guess)
    curvature = far_plus.lin.A - 2.0 * nominal.lin.A + far_minus.lin.A
    L_A = float(np.linalg.norm(curvature, 2)) / c ** 2

    return MatrixSensitivity(
        dA=(plus.lin.A - minus.lin.A) / (2.0 * h),
        dE=(plus.lin.E - minus.lin.E) / (2.0 * h),
        dB=(plus.red.B_c - minus.red.B_c) / (2.0 * h),
        L_A=L_A,
        A0=nominal.lin.A,
        direction=v,
    )


def certified_radius(eps_lin: float, A_norm: float, L_A: float, r0: float = float("inf")) -> float:
    """r_lin = min(r0, sqrt(2 eps ||A_h|| / L_A))."""
    if not 0.0 < eps_lin < 1.0:
        raise PreconditionError("certified_radius", f"eps_lin must lie in (0, 1), got {eps_lin}")
    if L_A <= 0.0:
        return float(r0)
    return float(min(r0, np.sqrt(2.0 * eps_lin * A_norm / L_A)))


@dataclass
class ScreeningResult:
    accept: bool
    r_lin: float
    delta_norm: float
    A_norm: float
    L_A: float
    residual: float
    relative_residual: float
    recommendation: str

    def to_dict(self) -> Dict:
        return {
            "decision": "accept" if self.accept else "reject",
            "r_lin": self.r_lin, "delta_norm": self.delta_norm, "A_norm": self.A_norm,
            "L_A": self.L_A, "residual": self.residual, "relative_residual": self.relative_residual,
            "recommendation": self.recommendation,
        }


def screen_linearization(model: HydraulicModel, controls: Controls, demands: Demands,
                         delta_theta: np.ndarray, eps_lin: float = 0.1,
                         config: Optional[Config] = None, r0: Optional[float] = None) -> ScreeningResult:
    """
    Decide whether the nominal linear model may be reused at theta + delta.

    Accepts iff ||delta|| <= r_lin. The first-order residual at the shifted
    parameters is reported alongside. A zero shift screens along the global
    roughness direction and is always accepted.
    """
    config = config or Config()
    r0 = config.MAX_RADIUS if r0 is None else r0
    delta_theta = np.asarray(delta_theta, dtype=float)
    delta_norm = float(np.linalg.norm(delta_theta))
    direction = delta_theta / delta_norm if delta_norm > 0.0 else roughness_direction(model) / np.sqrt(max(model.n_P, 1))

    theta = model.current_theta()
    nominal = operating_point(model, theta, controls, demands, config)
    sens = matrix_sensitivity(model, controls, demands, direction, config, nominal)
    A_norm = float(np.linalg.norm(nominal.lin.A, 2))
    r_lin = certified_radius(eps_lin, A_norm, sens.L_A, r0)

    residual = relative = 0.0
    if delta_norm > 0.0:
        shifted = operating_point(model, theta + delta_theta, controls, demands, config, nominal.state)
        true_shift = float(np.linalg.norm(shifted.lin.A - nominal.lin.A, 2))
        residual = float(np.linalg.norm(shifted.lin.A - sens.predict(delta_norm), 2))
        relative = residual / true_shift if true_shift > 0.0 else 0.0

    accept = delta_norm <= r_lin
    recommendation = "reuse nominal linear model" if accept else "relinearize at the shifted parameters"
    logger.info(f"Screening: |dtheta| = {delta_norm:.3e}, r_lin = {r_lin:.3e} -> "
                f"{'accept' if accept else 'reject'}")
    return ScreeningResult(accept, r_lin, delta_norm, A_norm, sens.L_A, residual, relative, recommendation)


def roughness_residual_sweep(model: HydraulicModel, controls: Controls, demands: Demands,
                             deltas: Optional[Sequence[float]] = None, eps_lin: Optional[float] = None,
                             config: Optional[Config] = None) -> pd.DataFrame:
    """
    True shift and first-order residual of A_h under a global roughness factor.

    Args:
        deltas: Percent changes (defaults to ``DELTA_LIST``)

    Returns:
        pd.DataFrame: ``delta,true_shift,predicted_shift,residual,relative_residual,accept``
    """
    config = config or Config()
    deltas = list(config.DELTA_LIST if deltas is None else deltas)
    eps_lin = config.EPS_LIN if eps_lin is None else eps_lin
    theta = model.current_theta()
    v = roughness_direction(model)
    nominal = operating_point(model, theta, controls, demands, config)
    sens = matrix_sensitivity(model, controls, demands, v, config, nominal)
    A_norm = float(np.linalg.norm(nominal.lin.A, 2))
    r_lin = certified_radius(eps_lin, A_norm, sens.L_A, config.MAX_RADIUS)

    rows = []
    for delta in deltas:
        step = delta / 100.0
        shifted = operating_point(model, theta + step * v, controls, demands, config, nominal.state)
        true_shift = float(np.linalg.norm(shifted.lin.A - nominal.lin.A, 2))
        predicted = float(np.linalg.norm(step * sens.dA, 2))
        residual = float(np.linalg.norm(shifted.lin.A - sens.predict(step), 2))
        rows.append({
            "delta": float(delta), "true_shift": true_shift, "predicted_shift": predicted,
            "residual": residual, "relative_residual": residual / true_shift if true_shift > 0.0 else 0.0,
            "accept": bool(step * np.linalg.norm(v) <= r_lin),
        })
    return pd.DataFrame(rows, columns=["delta", "true_shift", "predicted_shift", "residual",
                                       "relative_residual", "accept"])


# --- controllability and stability margins ------------------------------------

def _system(system) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(system, ReducedLinearModel):
        return system.A_c, system.B_c
    A, B = system
    return np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float))


def kalman_matrix(A: np.ndarray, B: np.ndarray, N: int) -> np.ndarray:
    """K_N = [B, AB, ..., A^(N-1) B]."""
    blocks = [B]
    for _ in range(N - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _sigma_min(K: np.ndarray) -> float:
    if K.size == 0 or K.shape[1] < K.shape[0]:
        return 0.0
    return float(np.linalg.svd(K, compute_uv=False)[-1])


def kalman_margin(system, N: Optional[int] = None) -> Tuple[np.ndarray, float]:
    """
    Controllability matrix and its smallest singular value.

    Args:
        system: ReducedLinearModel (its consistent restriction is used) or (A, B)
        N: Horizon, defaults to the state dimension

    Returns:
        tuple: (K_N, sigma_c)
    """
    A, B = _system(system)
    N = A.shape[0] if N is None else int(N)
    if N < 1:
        raise PreconditionError("kalman_margin", f"horizon must be >= 1, got {N}")
    K = kalman_matrix(A, B, N)
    return K, _sigma_min(K)


def pbh_margin(system, spectrum: Optional[np.ndarray] = None) -> float:
    """
    min over finite eigenvalues lambda of sigma_min([lambda E - A, B]).

    Args:
        system: LinearDaeModel (finite spectrum from its reduced model) or
            (A, E, B)
        spectrum: Finite eigenvalues, computed when omitted
    """
    if isinstance(system, LinearDaeModel):
        A, E, B = system.A, system.E, system.B_u
        if spectrum is None:
            spectrum = stability_margin(reduce(system)).spectrum
    else:
        A, E, B = (np.atleast_2d(np.asarray(m, dtype=float)) for m in system)
        if spectrum is None:
            spectrum = pencil_eigenvalues(A, E)
    if len(spectrum) == 0:
        return float("inf")
    margins = []
    for lam in spectrum:
        compound = np.hstack([lam * E - A, B.astype(complex)])
        margins.append(float(np.linalg.svd(compound, compute_uv=False)[-1]))
    return float(min(margins))


@dataclass
class AuthorityReport:
    R_H: np.ndarray
    scaled: np.ndarray
    G_H: float
    mean_singular_value: float
    steps: int


def reachability_authority(system, tau: float, horizon: float, flow_scale: float = 1.0,
                           head_scale: float = 10.0, row_scales: Optional[np.ndarray] = None,
                           columns: Optional[Sequence[int]] = None) -> AuthorityReport:
    """
    Finite-horizon reachability of the implicit-Euler discretization.

    Phi = (E - tau A)^-1 E, Gamma = (E - tau A)^-1 tau B,
    R_H = [Gamma, Phi Gamma, ..., Phi^(N_H - 1) Gamma] with N_H = H / tau,
    G_H = sigma_max(S_x^-1 R_H).

    Args:
        system: LinearDaeModel (pump speed columns by default) or (A, E, B)
        row_scales: Explicit S_x diagonal; for a LinearDaeModel defaults to
            ``flow_scale`` on flow rows and ``head_scale`` on head rows

    Raises:
        PreconditionError: If H / tau is not a positive integer
        SingularStepMatrix: If E - tau A is singular
    """
    if isinstance(system, LinearDaeModel):
        A, E, B = system.A, system.E, system.B_u
        if columns is None:
            columns = [i for i, n in enumerate(system.input_names) if n.startswith("speed:")]
        if row_scales is None:
            row_scales = np.concatenate([np.full(system.n_q, flow_scale),
                                         np.full(system.n_J + system.n_A, head_scale)])
    else:
        A, E, B = (np.atleast_2d(np.asarray(m, dtype=float)) for m in system)
        if row_scales is None:
            row_scales = np.full(A.shape[0], flow_scale)
    if columns is not None:
        B = B[:, list(columns)]

    ratio = horizon / tau
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise PreconditionError("reachability_authority", f"H / tau = {ratio:g} must be a positive integer")

    M = E - tau * A
    if np.linalg.cond(M) > 1.0 / np.finfo(float).eps:
        raise SingularStepMatrix(tau)
    Phi = np.linalg.solve(M, E)
    Gamma = np.linalg.solve(M, tau * B)
    blocks = [Gamma]
    for _ in range(steps - 1):
        blocks.append(Phi @ blocks[-1])
    R_H = np.hstack(blocks)
    scaled = R_H / np.asarray(row_scales, dtype=float)[:, None]
    if scaled.size == 0:
        return AuthorityReport(R_H, scaled, 0.0, 0.0, steps)
    s = np.linalg.svd(scaled, compute_uv=False)
    return AuthorityReport(R_H, scaled, float(s[0]), float(np.mean(s)), steps)


# --- robustness -----------------------------------------------------------------

@dataclass
class RobustnessReport:
    alpha_s: float
    sigma_c: float
    kappa_V: float
    c_A: float
    c_B: float
    c_K: float
    c_K_envelope: float
    samples: pd.DataFrame
    alpha_bound_holds: bool
    sigma_bound_holds: bool
    diagonalizable: bool = True


def sample_perturbations(n_theta: int, indices: Sequence[int], scale: float, count: int,
                         seed: int) -> List[np.ndarray]:
    """``count`` uniform perturbations in [-scale, scale] on ``indices``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        d = np.zeros(n_theta)
        d[list(indices)] = rng.uniform(-scale, scale, size=len(indices))
        out.append(d)
    return out


def margin_robustness(family: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
                      theta0: np.ndarray, perturbations: Sequence[np.ndarray],
                      N: Optional[int] = None) -> RobustnessReport:
    """
    Check the stability and controllability margin bounds over sampled shifts.

    c_A and c_B are the largest observed ||dA|| / ||dtheta|| and
    ||dB|| / ||dtheta||; c_K is the least-squares slope of ||dK_N|| against
    (c_A + c_B) ||dtheta|| and ``c_K_envelope`` the smallest constant
    covering every sample. The stability bound uses the larger of the
    nominal and perturbed eigenvector condition numbers.

    Args:
        family: theta -> (A, B) of the reduced consistent model
        theta0: Nominal parameters
        perturbations: Parameter shifts to evaluate
        N: Kalman horizon, state dimension by default
    """
    theta0 = np.asarray(theta0, dtype=float)
    A0, B0 = family(theta0)
    A0, B0 = np.atleast_2d(A0), np.atleast_2d(B0)
    nominal = stability_margin(A0)
    K0, sigma0 = kalman_margin((A0, B0), N)

    rows = []
    for d in perturbations:
        d = np.asarray(d, dtype=float)
        A, B = family(theta0 + d)
        A, B = np.atleast_2d(A), np.atleast_2d(B)
        stab = stability_margin(A)
        K, sigma = kalman_margin((A, B), N)
        rows.append({
            "norm": float(np.linalg.norm(d)),
            "dA": float(np.linalg.norm(A - A0, 2)),
            "dB": float(np.linalg.norm(B - B0, 2)) if B.size else 0.0,
            "dK": float(np.linalg.norm(K - K0, 2)) if K.size else 0.0,
            "alpha_s": stab.alpha_s,
            "kappa_V": stab.kappa_V,
            "sigma_c": sigma,
        })
    table = pd.DataFrame(rows, columns=["norm", "dA", "dB", "dK", "alpha_s", "kappa_V", "sigma_c"])
    moving = table[table["norm"] > 0.0]
    c_A = float((moving["dA"] / moving["norm"]).max()) if len(moving) else 0.0
    c_B = float((moving["dB"] / moving["norm"]).max()) if len(moving) else 0.0
    x = (c_A + c_B) * table["norm"].to_numpy()
    y = table["dK"].to_numpy()
    used = x > 0.0
    c_K = float(np.sum(x[used] * y[used]) / np.sum(x[used] ** 2)) if used.any() else 0.0
    c_K_env = float(np.max(y[used] / x[used])) if used.any() else 0.0

    kV = nominal.kappa_V
    extra = np.maximum(0.0, table["kappa_V"].to_numpy() - kV)
    table["alpha_bound"] = (kV + extra) * c_A * table["norm"]
    table["alpha_slack"] = table["alpha_bound"] - (table["alpha_s"] - nominal.alpha_s).abs()
    table["sigma_bound"] = sigma0 - c_K_env * (c_A + c_B) * table["norm"]
    table["sigma_slack"] = table["sigma_c"] - table["sigma_bound"]
    table["sigma_slack_fit"] = table["sigma_c"] - (sigma0 - c_K * (c_A + c_B) * table["norm"])

    tol = 1e-10
    alpha_ok = bool(nominal.diagonalizable and (table["alpha_slack"] >= -tol * (1.0 + table["alpha_bound"])).all())
    sigma_ok = bool((table["sigma_slack"] >= -tol * (1.0 + abs(sigma0))).all())
    if not nominal.diagonalizable:
        logger.warning("[!]  Nominal reduced matrix is not diagonalizable; stability bound disabled")
    return RobustnessReport(nominal.alpha_s, sigma0, kV, c_A, c_B, c_K, c_K_env, table,
                            alpha_ok, sigma_ok, nominal.diagonalizable)


def reduced_family(model: HydraulicModel, controls: Controls, demands: Demands,
                   config: Config, guess: Optional[HydraulicState] = None):
    """theta -> (A_c, B_c) through equilibrium, linearization and reduction."""
    def family(theta):
        point = operating_point(model, theta, controls, demands, config, guess)
        return point.red.A_c, point.red.B_c
    return family


# --- ranking ----------------------------------------------------------------

def rank_from_gains(names: Sequence[str], g_A: np.ndarray, g_B: np.ndarray, alpha_s: float,
                    sigma_c: float, kappa_V: float, c_K: float, delta: np.ndarray,
                    indices: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Remaining margins per parameter, most critical first.

    alpha_hat = alpha_s - kappa_V g_A |delta|,
    sigma_hat = sigma_c - c_K (g_A + g_B) |delta|.
    Sorted by alpha_hat, then sigma_hat, remaining ties by ``indices``
    (global parameter index, row position by default) ascending.
    """
    g_A = np.asarray(g_A, dtype=float)
    g_B = np.asarray(g_B, dtype=float)
    delta = np.broadcast_to(np.abs(np.asarray(delta, dtype=float)), g_A.shape)
    table = pd.DataFrame({
        "index": np.arange(len(names)) if indices is None else np.asarray(list(indices), dtype=int),
        "param": list(names),
        "gA": g_A,
        "gB": g_B,
        "alpha_hat": alpha_s - kappa_V * g_A * delta,
        "sigma_hat": sigma_c - c_K * (g_A + g_B) * delta,
    })
    order = np.lexsort((table["index"].to_numpy(), table["sigma_hat"].to_numpy(), table["alpha_hat"].to_numpy()))
    table = table.iloc[order].reset_index(drop=True)
    table["sigma_rank"] = table["sigma_hat"].rank(method="first").astype(int)
    table = table[["param", "gA", "gB", "alpha_hat", "sigma_hat", "index", "sigma_rank"]]
    return table


def _parameter_gains(model, controls, demands, config, index, nominal, N):
    sens = matrix_sensitivity(model, controls, demands, index, config, nominal)
    h = config.H_THETA
    theta = model.current_theta()
    v = _direction(model, index)
    plus = operating_point(model, theta + h * v, controls, demands, config, nominal.state)
    minus = operating_point(model, theta - h * v, controls, demands, config, nominal.state)
    dK = (kalman_margin(plus.red, N)[0] - kalman_margin(minus.red, N)[0]) / (2.0 * h)
    return (float(np.linalg.norm(sens.dA, 2)), float(np.linalg.norm(sens.dB, 2)) if sens.dB.size else 0.0,
            float(np.linalg.norm(dK, 2)) if dK.size else 0.0)


@dataclass
class RankingResult:
    table: pd.DataFrame
    alpha_s: float
    sigma_c: float
    kappa_V: float
    c_K: float

    def top(self, k: int) -> pd.DataFrame:
        return self.table.head(k)


def rank_parameters(model: HydraulicModel, controls: Controls, demands: Demands,
                    indices: Optional[Sequence[int]] = None, delta: Optional[float] = None,
                    config: Optional[Config] = None, workers: int = 1) -> RankingResult:
    """
    Rank parameters by remaining stability and controllability margin.

    Args:
        indices: Parameters to rank, pipe roughness factors by default
        delta: Factor change per parameter, ``SINGLE_PARAM_DELTA`` by default
        workers: joblib worker count

    Returns:
        RankingResult: Table sorted most critical first
    """
    config = config or Config()
    indices = list(range(model.n_P)) if indices is None else list(indices)
    delta = config.SINGLE_PARAM_DELTA if delta is None else delta
    nominal = operating_point(model, model.current_theta(), controls, demands, config)
    stab = stability_margin(nominal.red)
    N = config.KALMAN_HORIZON
    _, sigma_c = kalman_margin(nominal.red, N)

    gains = Parallel(n_jobs=workers)(
        delayed(_parameter_gains)(model, controls, demands, config, i, nominal, N) for i in indices
    )
    g_A = np.array([g[0] for g in gains])
    g_B = np.array([g[1] for g in gains])
    g_K = np.array([g[2] for g in gains])
    total = g_A + g_B
    c_K = float(np.max(g_K[total > 0.0] / total[total > 0.0])) if np.any(total > 0.0) else 0.0

    names = [model.theta_names()[i] for i in indices]
    table = rank_from_gains(names, g_A, g_B, stab.alpha_s, sigma_c, stab.kappa_V, c_K, delta, indices)
    logger.info(f"[OK] Ranked {len(indices)} parameters; most critical: {table['param'].iloc[0]}")
    return RankingResult(table, stab.alpha_s, sigma_c, stab.kappa_V, c_K)


# --- demand sweeps ----------------------------------------------------------

def demand_profile_levels(schedule, horizon: float, step: float, d_min: float, d_max: float) -> pd.DataFrame:
    """
    Total junction demand sampled every ``step`` seconds, affinely mapped
    onto [d_min, d_max] (a flat profile maps to the midpoint).

    Returns:
        pd.DataFrame: ``time,level``
    """
    if step <= 0.0:
        raise PreconditionError("demand_profile_levels", "sample step must be positive")
    times = np.arange(0.0, horizon + 1e-9, step)
    totals = np.array([schedule.demands_at(t).junction.sum() for t in times])
    spread = totals.max() - totals.min()
    if spread > 0.0:
        levels = d_min + (totals - totals.min()) / spread * (d_max - d_min)
    else:
        levels = np.full(times.size, 0.5 * (d_min + d_max))
    return pd.DataFrame({"time": times, "level": levels})


def _sweep_level(model, controls, demands, level, config, time):
    row = {"time": time, "level": level, "total_demand": level + float(demands.tank.sum()),
           "alpha_s": np.nan, "pbh": np.nan, "kappa_min": np.nan, "kappa_max": np.nan,
           "G_H": np.nan, "G_mean": np.nan, "status": "ok"}
    base_total = demands.junction.sum()
    scaled = Demands(demands.junction * (level / base_total), demands.tank.copy())
    try:
        dae = HydraulicDae(model, config)
        state = dae.equilibrium_solve(controls, scaled, polish=1).state
        lin = linearize(model, state, controls, scaled, config)
        red = reduce(lin, config)
        stab = stability_margin(red)
        authority = reachability_authority(lin, config.TIME_STEP, config.AUTHORITY_HORIZON,
                                           config.FLOW_SCALE, config.HEAD_SCALE)
        row.update({
            "alpha_s": stab.alpha_s,
            "pbh": pbh_margin(lin, stab.spectrum),
            "kappa_min": float(lin.kappa.min()),
            "kappa_max": float(lin.kappa.max()),
            "G_H": authority.G_H,
            "G_mean": authority.mean_singular_value,
        })
    except WdnError as e:
        row["status"] = f"failed: {type(e).__name__}"
        logger.warning(f"[!]  Demand level {level:g} failed: {e}")
    return row


def demand_sweep(model: HydraulicModel, controls: Controls, demands: Demands,
                 levels: Sequence[float], times: Optional[Sequence[float]] = None,
                 config: Optional[Config] = None, workers: int = 1) -> pd.DataFrame:
    """
    Margins as the junction demand vector is rescaled to each total level.

    The spatial split of ``demands`` is kept. A failing level is recorded
    with NaN margins and the sweep continues.

    Returns:
        pd.DataFrame: ``level,alpha_s,pbh,kappa_min,kappa_max,G_H`` then
            ``G_mean,time,total_demand,status``
    """
    config = config or Config()
    if demands.junction.sum() <= 0.0:
        raise PreconditionError("demand_sweep", "base junction demand must have a positive total")
    times = [np.nan] * len(levels) if times is None else list(times)
    rows = Parallel(n_jobs=workers)(
        delayed(_sweep_level)(model, controls, demands, float(level), config, t)
        for level, t in zip(levels, times)
    )
    table = pd.DataFrame(rows, columns=["level", "alpha_s", "pbh", "kappa_min", "kappa_max", "G_H", "G_mean",
                                       "time", "total_demand", "status"])
    logger.info(f"[OK] Demand sweep over {len(levels)} levels, "
                f"{int((table['status'] != 'ok').sum())} failed")
    return table


# --- report -----------------------------------------------------------------

@dataclass
class MarginReport:
    alpha_s: float
    sigma_c: float
    pbh_margin: float
    kappa_V: float
    c_A: float
    c_B: float
    c_K: float
    c_K_envelope: float
    r_lin: float
    G_H: float
    G_mean: float
    floored_links: List[str] = field(default_factory=list)
    ranking: Optional[pd.DataFrame] = None
    robustness: Optional[pd.DataFrame] = None

    def to_dict(self) -> Dict:
        out = {k: getattr(self, k) for k in ("alpha_s", "sigma_c", "pbh_margin", "kappa_V", "c_A",
                                             "c_B", "c_K", "c_K_envelope", "r_lin", "G_H", "G_mean")}
        out = {k: (None if not np.isfinite(v) else float(v)) for k, v in out.items()}
        out["floored_links"] = list(self.floored_links)
        out["slope_floor_engaged"] = bool(self.floored_links)
        if self.ranking is not None:
            out["ranking"] = self.ranking[["param", "gA", "gB", "alpha_hat", "sigma_hat"]].to_dict("records")
        return out


def margin_report(model: HydraulicModel, controls: Controls, demands: Demands,
                  config: Optional[Config] = None, workers: int = 1) -> MarginReport:
    """All nominal margins plus robustness constants and the top-k ranking."""
    config = config or Config()
    nominal = operating_point(model, model.current_theta(), controls, demands, config)
    stab = stability_margin(nominal.red)
    _, sigma_c = kalman_margin(nominal.red, config.KALMAN_HORIZON)
    pbh = pbh_margin(nominal.lin, stab.spectrum)
    authority = reachability_authority(nominal.lin, config.TIME_STEP, config.AUTHORITY_HORIZON,
                                       config.FLOW_SCALE, config.HEAD_SCALE)

    perturbations = sample_perturbations(model.n_theta, range(model.n_P), config.SINGLE_PARAM_DELTA,
                                         config.ROBUSTNESS_SAMPLES, config.RANDOM_SEED)
    robust = margin_robustness(reduced_family(model, controls, demands, config, nominal.state),
                               model.current_theta(), perturbations, config.KALMAN_HORIZON)

    v = roughness_direction(model)
    sens = matrix_sensitivity(model, controls, demands, v, config, nominal)
    r_lin = certified_radius(config.EPS_LIN, float(np.linalg.norm(nominal.lin.A, 2)), sens.L_A,
                             config.MAX_RADIUS)
    ranking = rank_parameters(model, controls, demands, config=config, workers=workers)
    floored = [e for e, f in zip(nominal.lin.link_ids, nominal.lin.floored) if f]
    return MarginReport(stab.alpha_s, sigma_c, pbh, stab.kappa_V, robust.c_A, robust.c_B, robust.c_K,
                        robust.c_K_envelope, r_lin, authority.G_H, authority.mean_singular_value,
                        floored, ranking.top(config.TOP_K), robust.samples)
