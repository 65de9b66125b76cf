"""
Network Model Module
====================

Turns a parsed NetworkDescription into the arrays the DAE works with:
signed incidence, inertances, tank areas, reservoir heads and the
per-link loss laws (Hazen-Williams or Darcy-Weisbach pipes, quadratic
pump curves, valve resistances) with their slopes.

Link order is pipes, pumps, valves; node order is junctions, tanks,
reservoirs. Incidence is +1 where a link leaves a node and -1 where it
enters.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .config import Config
from .error_handler import (
    DegenerateGeometry,
    EmptyNetwork,
    PreconditionError,
    SpeedBelowFloor,
    UnresolvedReference,
    UnsupportedValveMode,
)
from .inp_parser import REGULATING_KINDS, NetworkDescription, validate
from .schedule import Controls, Demands

logger = logging.getLogger(__name__)

HW_COEFFICIENT = 10.667
HW_FLOW_EXPONENT = 1.852
HW_DIAMETER_EXPONENT = 4.871

LAMINAR_RE = 2000.0
TURBULENT_RE = 4000.0


# --- per-class parameter tables ----------------------------------------------

@dataclass(frozen=True)
class PipeParams:
    """Pipe data, one entry per pipe (SI)."""
    length: np.ndarray
    diameter: np.ndarray
    roughness: np.ndarray  # C for Hazen-Williams, epsilon [m] for Darcy-Weisbach
    minor_loss: np.ndarray

    @property
    def area(self) -> np.ndarray:
        return np.pi * self.diameter ** 2 / 4.0


@dataclass(frozen=True)
class PumpParams:
    """Quadratic-type pump curve h = h0 - r q^nu at nominal speed."""
    shutoff_head: np.ndarray
    resistance: np.ndarray
    exponent: np.ndarray
    speed_floor: float = 0.05


@dataclass(frozen=True)
class ValveParams:
    """
    Valve data. ``open_resistance`` is the r in h = r q|q| used by every
    kind except TCV, whose resistance follows its setting.
    """
    kinds: Tuple[str, ...]
    diameter: np.ndarray
    open_resistance: np.ndarray
    scale: np.ndarray  # multiplicative coefficient factor
    modes: Tuple[str, ...] = ()

    @property
    def area(self) -> np.ndarray:
        return np.pi * self.diameter ** 2 / 4.0


# --- scalar laws (numpy-broadcasting) ---------------------------------------

def friction_factor(reynolds, relative_roughness):
    """
    Darcy friction factor and its derivative in Re.

    Laminar 64/Re below Re = 2000, Swamee-Jain above 4000, and a cubic
    Hermite bridge in between matching value and slope at both ends.

    Returns:
        tuple: (f, df/dRe) with the shape of ``reynolds``
    """
    re = np.asarray(reynolds, dtype=float)
    rr = np.broadcast_to(np.asarray(relative_roughness, dtype=float), re.shape)
    safe = np.maximum(re, 1.0)

    f_lam = 64.0 / safe
    df_lam = -64.0 / safe ** 2

    f_sj, df_sj = _swamee_jain(np.maximum(safe, TURBULENT_RE), rr)

    # Hermite bridge on [2000, 4000]
    h = TURBULENT_RE - LAMINAR_RE
    p0, m0 = 64.0 / LAMINAR_RE, -64.0 / LAMINAR_RE ** 2
    p1, m1 = _swamee_jain(np.full(re.shape, TURBULENT_RE), rr)
    t = np.clip((safe - LAMINAR_RE) / h, 0.0, 1.0)
    h00, h10 = 2 * t ** 3 - 3 * t ** 2 + 1, t ** 3 - 2 * t ** 2 + t
    h01, h11 = -2 * t ** 3 + 3 * t ** 2, t ** 3 - t ** 2
    f_tr = h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1
    d00, d10 = 6 * t ** 2 - 6 * t, 3 * t ** 2 - 4 * t + 1
    d01, d11 = -6 * t ** 2 + 6 * t, 3 * t ** 2 - 2 * t
    df_tr = (d00 * p0 + d10 * h * m0 + d01 * p1 + d11 * h * m1) / h

    f = np.where(re < LAMINAR_RE, f_lam, np.where(re > TURBULENT_RE, f_sj, f_tr))
    df = np.where(re < LAMINAR_RE, df_lam, np.where(re > TURBULENT_RE, df_sj, df_tr))
    return f, df


def _swamee_jain(re, rr):
    inner = rr / 3.7 + 5.74 * re ** -0.9
    log_term = np.log10(inner)
    f = 0.25 / log_term ** 2
    d_inner = -0.9 * 5.74 * re ** -1.9
    df = -0.5 / log_term ** 3 * d_inner / (inner * np.log(10.0))
    return f, df


def _darcy_terms(q, pipe: PipeParams, viscosity, gravity):
    # phi = k * F(|q|) * q with F(a) = f(Re(a)) * a
    a = np.abs(q)
    k = 8.0 * pipe.length / (gravity * np.pi ** 2 * pipe.diameter ** 5)
    dre = 4.0 / (np.pi * viscosity * pipe.diameter)
    f, df = friction_factor(dre * a, pipe.roughness / pipe.diameter)
    laminar = dre * a < LAMINAR_RE
    F = np.where(laminar, 16.0 * np.pi * viscosity * pipe.diameter, f * a)
    dF = np.where(laminar, 0.0, f + a * df * dre)
    return k, F, dF


def pipe_headloss(q, pipe: PipeParams, model: str = "HW",
                  viscosity: float = 1.004e-6, gravity: float = 9.80665):
    """
    Friction plus minor headloss along a pipe in the direction of ``q``.

    Args:
        q: Flow [m^3/s], scalar or array matching ``pipe``
        pipe: Pipe parameters
        model: "HW" (Hazen-Williams) or "DW" (Darcy-Weisbach)

    Returns:
        Headloss [m], odd in q
    """
    q = np.asarray(q, dtype=float)
    if model == "HW":
        r = HW_COEFFICIENT * pipe.length * pipe.roughness ** -HW_FLOW_EXPONENT \
            * pipe.diameter ** -HW_DIAMETER_EXPONENT
        friction = r * np.sign(q) * np.abs(q) ** HW_FLOW_EXPONENT
    elif model == "DW":
        k, F, _ = _darcy_terms(q, pipe, viscosity, gravity)
        friction = k * F * q
    else:
        raise PreconditionError("pipe_headloss", f"unknown headloss model '{model}'")
    minor = pipe.minor_loss / (2.0 * gravity * pipe.area ** 2) * q * np.abs(q)
    return friction + minor


def pipe_headloss_slope(q, pipe: PipeParams, model: str = "HW",
                        viscosity: float = 1.004e-6, gravity: float = 9.80665):
    """Derivative of ``pipe_headloss`` in q."""
    q = np.asarray(q, dtype=float)
    if model == "HW":
        r = HW_COEFFICIENT * pipe.length * pipe.roughness ** -HW_FLOW_EXPONENT \
            * pipe.diameter ** -HW_DIAMETER_EXPONENT
        friction = HW_FLOW_EXPONENT * r * np.abs(q) ** (HW_FLOW_EXPONENT - 1.0)
    elif model == "DW":
        k, F, dF = _darcy_terms(q, pipe, viscosity, gravity)
        friction = k * (F + dF * np.abs(q))
    else:
        raise PreconditionError("pipe_headloss_slope", f"unknown headloss model '{model}'")
    minor = pipe.minor_loss / (2.0 * gravity * pipe.area ** 2) * 2.0 * np.abs(q)
    return friction + minor


def _check_speed(s, pump: PumpParams, pump_ids=None):
    s = np.asarray(s, dtype=float)
    low = s < pump.speed_floor
    if np.any(low):
        index = int(np.flatnonzero(np.atleast_1d(low))[0])
        name = pump_ids[index] if pump_ids is not None else None
        raise SpeedBelowFloor(float(np.atleast_1d(s)[index]), pump.speed_floor, name)
    return s


def pump_head_gain(q, s, pump: PumpParams, pump_ids=None):
    """
    Head added by a pump at relative speed ``s`` (affinity-law scaling).

    psi = s^2 (h0 - r sign(q) |q/s|^nu)

    Raises:
        SpeedBelowFloor: If any speed is below the floor (s = 0 included)
    """
    s = _check_speed(s, pump, pump_ids)
    q = np.asarray(q, dtype=float)
    return s ** 2 * (pump.shutoff_head
                     - pump.resistance * np.sign(q) * np.abs(q / s) ** pump.exponent)


def pump_slope(q, s, pump: PumpParams, pump_ids=None):
    """kappa = -dpsi/dq = r nu s |q/s|^(nu-1)."""
    s = _check_speed(s, pump, pump_ids)
    q = np.asarray(q, dtype=float)
    return pump.resistance * pump.exponent * s * np.abs(q / s) ** (pump.exponent - 1.0)


def pump_speed_derivative(q, s, pump: PumpParams, pump_ids=None):
    """dpsi/ds = 2 s h0 - r (2 - nu) s^(1-nu) sign(q) |q|^nu."""
    s = _check_speed(s, pump, pump_ids)
    q = np.asarray(q, dtype=float)
    nu = pump.exponent
    return 2.0 * s * pump.shutoff_head \
        - pump.resistance * (2.0 - nu) * s ** (1.0 - nu) * np.sign(q) * np.abs(q) ** nu


def valve_resistance(setting, valve: ValveParams, gravity: float = 9.80665):
    """r in h = r q|q| for each valve; TCVs take k/(2 g A^2) from their setting."""
    setting = np.asarray(setting, dtype=float)
    tcv = np.array([kind == "TCV" for kind in valve.kinds], dtype=bool)
    throttle = setting / (2.0 * gravity * valve.area ** 2)
    return valve.scale * np.where(tcv, throttle, valve.open_resistance)


def valve_headloss(q, setting, valve: ValveParams, gravity: float = 9.80665, valve_ids=None):
    """
    Headloss r(setting) q|q| across each valve.

    Raises:
        UnsupportedValveMode: If a valve is still in active regulating mode
    """
    for i, mode in enumerate(valve.modes):
        if mode == "active":
            name = valve_ids[i] if valve_ids is not None else str(i)
            raise UnsupportedValveMode(name, valve.kinds[i])
    q = np.asarray(q, dtype=float)
    return valve_resistance(setting, valve, gravity) * q * np.abs(q)


def closure_resistance(opening, reference: float = 1e3, cap: float = 1e8):
    """
    Extra linear resistance R(o) added as R(o) q to a link's loss.

    R(1) = 0, R(0) = cap, smooth and decreasing in between.

    Returns:
        tuple: (R, dR/do)
    """
    o = np.asarray(opening, dtype=float)
    c = reference / cap
    den = o ** 2 + c
    R = reference * (1.0 - o) ** 2 / den
    dR = reference * (-2.0 * (1.0 - o) * den - (1.0 - o) ** 2 * 2.0 * o) / den ** 2
    return R, dR


def open_mode_resistance(head_drop: float, flow: float, eps_q: float = 1e-5) -> float:
    """Open-mode resistance |dh| / (q^2 + eps_q^2) from one operating point."""
    return abs(head_drop) / (flow ** 2 + eps_q ** 2)


def fit_pump_curve(points: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """
    Fit (h0, r, nu) of h = h0 - r q^nu to a head curve.

    One point (q0, h0) gives h0' = 4/3 h0, nu = 2, r = h0 / (3 q0^2).
    With more points the shutoff head is 4/3 of the middle point's head and
    (r, nu) come from a least-squares line through log(h0' - h) vs log(q).

    Args:
        points: (flow [m^3/s], head [m]) pairs

    Returns:
        tuple: (shutoff_head, resistance, exponent)
    """
    pts = sorted((float(q), float(h)) for q, h in points)
    if not pts:
        raise PreconditionError("fit_pump_curve", "curve has no points")
    design_q, design_h = pts[len(pts) // 2]
    shutoff = 4.0 / 3.0 * design_h
    usable = [(q, h) for q, h in pts if q > 0.0 and h < shutoff]
    if len(pts) > 1 and len(usable) >= 2:
        x = np.log([q for q, _ in usable])
        y = np.log([shutoff - h for _, h in usable])
        nu, log_r = np.polyfit(x, y, 1)
        return shutoff, float(np.exp(log_r)), float(nu)
    if design_q <= 0.0:
        raise PreconditionError("fit_pump_curve", "design point needs positive flow")
    return shutoff, design_h / (3.0 * design_q ** 2), 2.0


def fit_valve_curve(points: Sequence[Tuple[float, float]]) -> float:
    """Least-squares r in h = r q^2 through a GPV headloss curve."""
    pts = [(q, h) for q, h in points if q > 0.0]
    if not pts:
        raise PreconditionError("fit_valve_curve", "curve has no positive-flow points")
    q = np.array([p[0] for p in pts])
    h = np.array([p[1] for p in pts])
    return float(np.sum(h * q ** 2) / np.sum(q ** 4))


# --- model ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HydraulicModel:
    """
    Immutable hydraulic model of a network.

    The state vector is x = [q (pipes, pumps, valves), p_J, p_A, p_R]; the
    differential part is z = (q, p_A) and the algebraic part y = (p_J, p_R).
    """
    junction_ids: Tuple[str, ...]
    tank_ids: Tuple[str, ...]
    reservoir_ids: Tuple[str, ...]
    pipe_ids: Tuple[str, ...]
    pump_ids: Tuple[str, ...]
    valve_ids: Tuple[str, ...]
    incidence: np.ndarray
    inertance: np.ndarray
    tank_area: np.ndarray
    tank_elevation: np.ndarray
    tank_init_head: np.ndarray
    tank_min_head: np.ndarray
    tank_max_head: np.ndarray
    reservoir_head: np.ndarray
    junction_elevation: np.ndarray
    junction_base_demand: np.ndarray
    pipes: PipeParams
    pumps: PumpParams
    valves: ValveParams
    initial_opening: np.ndarray
    initial_speed: np.ndarray
    initial_setting: np.ndarray
    headloss_model: str = "HW"
    gravity: float = 9.80665
    viscosity: float = 1.004e-6
    eps_kappa: float = 1e-8
    closure_reference: float = 1e3
    closure_cap: float = 1e8
    device_inertance: float = 1.0
    allow_open_surrogate: bool = True
    theta_factors: Optional[np.ndarray] = None
    nominal: Optional["HydraulicModel"] = None
    warnings: List[str] = field(default_factory=list)

    # sizes and slices
    @property
    def n_J(self) -> int:
        return len(self.junction_ids)

    @property
    def n_A(self) -> int:
        return len(self.tank_ids)

    @property
    def n_R(self) -> int:
        return len(self.reservoir_ids)

    @property
    def n_P(self) -> int:
        return len(self.pipe_ids)

    @property
    def n_M(self) -> int:
        return len(self.pump_ids)

    @property
    def n_W(self) -> int:
        return len(self.valve_ids)

    @property
    def n_E(self) -> int:
        return self.n_P + self.n_M + self.n_W

    @property
    def n_x(self) -> int:
        return self.n_E + self.n_J + self.n_A + self.n_R

    @property
    def n_z(self) -> int:
        return self.n_E + self.n_A

    @property
    def link_ids(self) -> Tuple[str, ...]:
        return self.pipe_ids + self.pump_ids + self.valve_ids

    @property
    def node_ids(self) -> Tuple[str, ...]:
        return self.junction_ids + self.tank_ids + self.reservoir_ids

    @property
    def valve_kinds(self) -> Tuple[str, ...]:
        return self.valves.kinds

    @property
    def pipe_slice(self) -> slice:
        return slice(0, self.n_P)

    @property
    def pump_slice(self) -> slice:
        return slice(self.n_P, self.n_P + self.n_M)

    @property
    def valve_slice(self) -> slice:
        return slice(self.n_P + self.n_M, self.n_E)

    @property
    def N_J(self) -> np.ndarray:
        return self.incidence[:self.n_J]

    @property
    def N_A(self) -> np.ndarray:
        return self.incidence[self.n_J:self.n_J + self.n_A]

    @property
    def N_R(self) -> np.ndarray:
        return self.incidence[self.n_J + self.n_A:]

    def state_slices(self) -> Dict[str, slice]:
        """Positions of q, p_J, p_A and p_R inside x."""
        a = self.n_E
        b = a + self.n_J
        c = b + self.n_A
        return {"q": slice(0, a), "p_J": slice(a, b), "p_A": slice(b, c), "p_R": slice(c, self.n_x)}

    def state_names(self) -> List[str]:
        return ([f"q:{e}" for e in self.link_ids] + [f"pJ:{n}" for n in self.junction_ids]
                + [f"pA:{n}" for n in self.tank_ids] + [f"pR:{n}" for n in self.reservoir_ids])

    def differential_mask(self) -> np.ndarray:
        """True on z entries of x."""
        mask = np.zeros(self.n_x, dtype=bool)
        sl = self.state_slices()
        mask[sl["q"]] = True
        mask[sl["p_A"]] = True
        return mask

    def mass_diagonal(self) -> np.ndarray:
        """Diagonal of E: 1/gamma on flows, tank areas on tank heads, zero elsewhere."""
        return np.concatenate([1.0 / self.inertance, np.zeros(self.n_J),
                               self.tank_area, np.zeros(self.n_R)])

    # inputs
    def nominal_controls(self) -> Controls:
        return Controls(self.initial_speed.copy(), self.initial_opening.copy(),
                        self.initial_setting.copy())

    def nominal_demands(self) -> Demands:
        return Demands(self.junction_base_demand.copy(), np.zeros(self.n_A))

    # link laws
    def active_links(self, controls: Controls) -> np.ndarray:
        """Links with a non-zero open fraction."""
        return np.asarray(controls.opening) > 0.0

    def link_losses(self, q: np.ndarray, controls: Controls) -> np.ndarray:
        """eta(q, u): headloss along each link, pumps counted as negative loss."""
        eta = np.empty(self.n_E)
        o = controls.opening
        P, M, W = self.pipe_slice, self.pump_slice, self.valve_slice
        eta[P] = pipe_headloss(q[P], self.pipes, self.headloss_model, self.viscosity, self.gravity)
        if self.n_M:
            eta[M] = -o[M] * pump_head_gain(q[M], controls.speed, self.pumps, self.pump_ids)
        if self.n_W:
            eta[W] = valve_headloss(q[W], controls.setting, self.valves, self.gravity, self.valve_ids)
        R, _ = closure_resistance(o, self.closure_reference, self.closure_cap)
        return eta + R * q

    def link_slopes(self, q: np.ndarray, controls: Controls) -> Tuple[np.ndarray, np.ndarray]:
        """
        Incremental resistances kappa = d eta / dq, floored at eps_kappa.

        Returns:
            tuple: (kappa, floored) where ``floored`` flags links where the
            floor replaced the analytic slope
        """
        kappa = np.empty(self.n_E)
        o = controls.opening
        P, M, W = self.pipe_slice, self.pump_slice, self.valve_slice
        kappa[P] = pipe_headloss_slope(q[P], self.pipes, self.headloss_model, self.viscosity, self.gravity)
        if self.n_M:
            kappa[M] = o[M] * pump_slope(q[M], controls.speed, self.pumps, self.pump_ids)
        if self.n_W:
            kappa[W] = 2.0 * valve_resistance(controls.setting, self.valves, self.gravity) * np.abs(q[W])
        R, _ = closure_resistance(o, self.closure_reference, self.closure_cap)
        kappa = kappa + R
        floored = kappa < self.eps_kappa
        return np.maximum(kappa, self.eps_kappa), floored

    def link_slope(self, link_id: str, q: float, controls: Controls) -> float:
        """Slope of one link at flow ``q`` (other links at zero flow)."""
        e = self.link_ids.index(link_id)
        flows = np.zeros(self.n_E)
        flows[e] = q
        return float(self.link_slopes(flows, controls)[0][e])

    def loss_input_derivatives(self, q: np.ndarray, controls: Controls) -> Tuple[np.ndarray, np.ndarray]:
        """
        Sensitivities of eta to the linear inputs.

        Returns:
            tuple: (d eta / d speed for each pump link, d eta / d opening per link)
        """
        o = controls.opening
        M = self.pump_slice
        _, dR = closure_resistance(o, self.closure_reference, self.closure_cap)
        d_open = dR * q
        d_speed = np.zeros(self.n_M)
        if self.n_M:
            d_open[M] -= pump_head_gain(q[M], controls.speed, self.pumps, self.pump_ids)
            d_speed = -o[M] * pump_speed_derivative(q[M], controls.speed, self.pumps, self.pump_ids)
        return d_speed, d_open

    # parameters
    def theta_names(self) -> List[str]:
        """Names of the multiplicative parameter factors, in vector order."""
        names = [f"roughness:{p}" for p in self.pipe_ids]
        names += [f"diameter:{p}" for p in self.pipe_ids]
        for m in self.pump_ids:
            names += [f"shutoff_head:{m}", f"pump_resistance:{m}"]
        names += [f"valve_coefficient:{v}" for v in self.valve_ids]
        names += [f"tank_area:{t}" for t in self.tank_ids]
        return names

    @property
    def n_theta(self) -> int:
        return 2 * self.n_P + 2 * self.n_M + self.n_W + self.n_A

    def current_theta(self) -> np.ndarray:
        if self.theta_factors is None:
            return np.ones(self.n_theta)
        return self.theta_factors.copy()

    def with_theta_factors(self, factors: np.ndarray) -> "HydraulicModel":
        """
        Copy of the nominal model with parameters scaled by ``factors``.

        Pipe inertances follow the scaled diameters; device inertances stay.
        """
        factors = np.asarray(factors, dtype=float)
        if factors.shape != (self.n_theta,):
            raise PreconditionError("with_theta_factors",
                                    f"expected {self.n_theta} factors, got {factors.shape}")
        if np.any(factors <= 0.0):
            raise PreconditionError("with_theta_factors", "factors must be positive")
        base = self.nominal or self
        n_P, n_M, n_W = self.n_P, self.n_M, self.n_W
        rough = factors[:n_P]
        diam = factors[n_P:2 * n_P]
        pump = factors[2 * n_P:2 * n_P + 2 * n_M].reshape(n_M, 2)
        valve = factors[2 * n_P + 2 * n_M:2 * n_P + 2 * n_M + n_W]
        tank = factors[2 * n_P + 2 * n_M + n_W:]

        pipes = replace(base.pipes, roughness=base.pipes.roughness * rough,
                        diameter=base.pipes.diameter * diam)
        pumps = replace(base.pumps, shutoff_head=base.pumps.shutoff_head * pump[:, 0],
                        resistance=base.pumps.resistance * pump[:, 1])
        valves = replace(base.valves, scale=base.valves.scale * valve)
        inertance = base.inertance.copy()
        inertance[:n_P] = base.gravity * pipes.area / pipes.length
        return replace(base, pipes=pipes, pumps=pumps, valves=valves, inertance=inertance,
                       tank_area=base.tank_area * tank, theta_factors=factors.copy(), nominal=base)

    # graph
    def incidence_rank(self, controls: Optional[Controls] = None) -> int:
        N = self.incidence
        if controls is not None:
            N = N[:, self.active_links(controls)]
        return int(np.linalg.matrix_rank(N)) if N.size else 0

    def components(self, controls: Optional[Controls] = None) -> Tuple[int, np.ndarray]:
        """Connected components of the (active) graph over all nodes."""
        active = np.ones(self.n_E, dtype=bool) if controls is None else self.active_links(controls)
        n = len(self.node_ids)
        rows, cols = [], []
        for e in np.flatnonzero(active):
            a = int(np.flatnonzero(self.incidence[:, e] > 0)[0])
            b = int(np.flatnonzero(self.incidence[:, e] < 0)[0])
            rows.append(a)
            cols.append(b)
        graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return connected_components(graph, directed=False)

    def unanchored_junctions(self, controls: Optional[Controls] = None) -> List[str]:
        """Junctions whose component contains no tank or reservoir."""
        _, labels = self.components(controls)
        anchored = set(labels[self.n_J:])
        return [j for i, j in enumerate(self.junction_ids) if labels[i] not in anchored]

    def summary(self) -> Dict:
        """Counts and ranks reported by the ``parse`` command."""
        n_comp, _ = self.components()
        return {
            "n_J": self.n_J, "n_A": self.n_A, "n_R": self.n_R,
            "n_pipe": self.n_P, "n_M": self.n_M, "n_W": self.n_W,
            "n_E": self.n_E, "n_x": self.n_x, "n_z": self.n_z,
            "incidence_rank": self.incidence_rank(),
            "components": int(n_comp),
            "headloss_model": self.headloss_model,
            "device_inertance": self.device_inertance,
            "gamma": {
                "min": float(self.inertance.min()) if self.n_E else None,
                "median": float(np.median(self.inertance)) if self.n_E else None,
                "max": float(self.inertance.max()) if self.n_E else None,
            },
            "theta_names": self.theta_names(),
            "warnings": list(self.warnings),
        }


def _link_table(net: NetworkDescription):
    return list(net.pipes) + list(net.pumps) + list(net.valves)


def build_model(net: NetworkDescription, config: Optional[Config] = None,
                calibration: Optional[Dict[str, Tuple[float, float]]] = None,
                inertance: Optional[Dict[str, float]] = None,
                allow_open_surrogate: bool = True) -> HydraulicModel:
    """
    Build the hydraulic model of a parsed network.

    Args:
        net: Parsed network
        config: Numerical settings (defaults to ``Config()``)
        calibration: Optional valve id -> (head drop [m], flow [m^3/s]) used to
            set open-mode resistances of PBV/FCV/PRV/PSV valves
        inertance: Optional link id -> gamma override
        allow_open_surrogate: Convert active regulating valves to open mode
            (with a warning) instead of raising

    Returns:
        HydraulicModel: The assembled model

    Raises:
        EmptyNetwork, UnresolvedReference, DegenerateGeometry, UnsupportedValveMode
    """
    config = config or Config()
    calibration = calibration or {}
    if not net.link_ids:
        raise EmptyNetwork()
    if not net.junctions and not net.tanks:
        raise EmptyNetwork("network has no junctions or tanks")

    node_ids = [j.id for j in net.junctions] + [t.id for t in net.tanks] + [r.id for r in net.reservoirs]
    node_index = {n: i for i, n in enumerate(node_ids)}
    links = _link_table(net)
    for link in links:
        for end in (link.from_node, link.to_node):
            if end not in node_index:
                raise UnresolvedReference(link.id, end)
    for pump in net.pumps:
        if pump.curve_id not in net.curves:
            raise UnresolvedReference(pump.id, pump.curve_id)
    for pipe in net.pipes:
        if pipe.length <= 0.0:
            raise DegenerateGeometry(pipe.id, "length", pipe.length)
        if pipe.diameter <= 0.0:
            raise DegenerateGeometry(pipe.id, "diameter", pipe.diameter)
    for valve in net.valves:
        if valve.diameter <= 0.0:
            raise DegenerateGeometry(valve.id, "diameter", valve.diameter)
    for tank in net.tanks:
        if tank.diameter <= 0.0:
            raise DegenerateGeometry(tank.id, "diameter", tank.diameter)
    errors = [d for d in validate(net) if d.severity == "error"]
    if errors:
        raise PreconditionError("build_model", errors[0].message)

    N = np.zeros((len(node_ids), len(links)))
    for e, link in enumerate(links):
        N[node_index[link.from_node], e] = 1.0
        N[node_index[link.to_node], e] = -1.0

    g = config.GRAVITY
    pipes = PipeParams(
        length=np.array([p.length for p in net.pipes], dtype=float),
        diameter=np.array([p.diameter for p in net.pipes], dtype=float),
        roughness=np.array([p.roughness for p in net.pipes], dtype=float),
        minor_loss=np.array([p.minor_loss for p in net.pipes], dtype=float),
    )
    if net.options.headloss_model == "HW" and np.any(pipes.roughness <= 0.0):
        bad = net.pipes[int(np.flatnonzero(pipes.roughness <= 0.0)[0])]
        raise DegenerateGeometry(bad.id, "Hazen-Williams coefficient", bad.roughness)

    pipe_gamma = g * pipes.area / pipes.length
    device_gamma = (float(np.median(pipe_gamma)) if pipe_gamma.size else 1.0) * config.INERTANCE_SCALE

    fits = [fit_pump_curve(net.curves[m.curve_id]) for m in net.pumps]
    pumps = PumpParams(
        shutoff_head=np.array([f[0] for f in fits], dtype=float),
        resistance=np.array([f[1] for f in fits], dtype=float),
        exponent=np.array([f[2] for f in fits], dtype=float),
        speed_floor=config.SPEED_FLOOR,
    )

    warnings = []
    modes, r_open = [], []
    for v in net.valves:
        area = np.pi * v.diameter ** 2 / 4.0
        minor = v.minor_loss / (2.0 * g * area ** 2)
        mode = v.status
        if mode == "active":
            if not allow_open_surrogate:
                raise UnsupportedValveMode(v.id, v.kind)
            message = f"valve '{v.id}' ({v.kind}) active regulation replaced by open-mode surrogate"
            logger.warning(f"[!]  {message}")
            warnings.append(message)
            mode = "open"
        modes.append(mode)
        if v.kind == "GPV":
            r_open.append(fit_valve_curve(net.curves[v.curve_id]))
        elif v.kind == "TCV":
            r_open.append(minor)
        elif v.id in calibration:
            head_drop, flow = calibration[v.id]
            r_open.append(open_mode_resistance(head_drop, flow, config.EPS_Q))
        else:
            r_open.append(minor)
    valves = ValveParams(
        kinds=tuple(v.kind for v in net.valves),
        diameter=np.array([v.diameter for v in net.valves], dtype=float),
        open_resistance=np.array(r_open, dtype=float),
        scale=np.ones(len(net.valves)),
        modes=tuple(modes),
    )

    gamma = np.concatenate([pipe_gamma, np.full(len(net.pumps) + len(net.valves), device_gamma)])
    for link_id, value in (inertance or {}).items():
        gamma[[link.id for link in links].index(link_id)] = value

    opening = np.ones(len(links))
    speed = np.ones(len(net.pumps))
    for e, link in enumerate(links):
        if getattr(link, "initial_status", None) == "closed" or getattr(link, "status", None) == "closed":
            opening[e] = 0.0
    for m, pump in enumerate(net.pumps):
        if pump.speed <= 0.0:
            opening[len(net.pipes) + m] = 0.0
        else:
            speed[m] = pump.speed

    tank_elev = np.array([t.elevation for t in net.tanks], dtype=float)
    model = HydraulicModel(
        junction_ids=tuple(j.id for j in net.junctions),
        tank_ids=tuple(t.id for t in net.tanks),
        reservoir_ids=tuple(r.id for r in net.reservoirs),
        pipe_ids=tuple(p.id for p in net.pipes),
        pump_ids=tuple(m.id for m in net.pumps),
        valve_ids=tuple(v.id for v in net.valves),
        incidence=N,
        inertance=gamma,
        tank_area=np.array([np.pi * t.diameter ** 2 / 4.0 for t in net.tanks], dtype=float),
        tank_elevation=tank_elev,
        tank_init_head=tank_elev + np.array([t.init_level for t in net.tanks], dtype=float),
        tank_min_head=tank_elev + np.array([t.min_level for t in net.tanks], dtype=float),
        tank_max_head=tank_elev + np.array([t.max_level for t in net.tanks], dtype=float),
        reservoir_head=np.array([r.head for r in net.reservoirs], dtype=float),
        junction_elevation=np.array([j.elevation for j in net.junctions], dtype=float),
        junction_base_demand=np.array([j.base_demand for j in net.junctions], dtype=float),
        pipes=pipes,
        pumps=pumps,
        valves=valves,
        initial_opening=opening,
        initial_speed=speed,
        initial_setting=np.array([v.setting for v in net.valves], dtype=float),
        headloss_model=net.options.headloss_model,
        gravity=g,
        viscosity=config.VISCOSITY,
        eps_kappa=config.EPS_KAPPA,
        closure_reference=config.CLOSURE_REFERENCE,
        closure_cap=config.CLOSURE_CAP,
        device_inertance=device_gamma,
        allow_open_surrogate=allow_open_surrogate,
        warnings=warnings,
    )
    floating = model.unanchored_junctions()
    if floating:
        message = f"junctions without a tank or reservoir: {floating[:5]}"
        logger.warning(f"[!]  {message}")
        warnings.append(message)
    logger.info(f"[OK] Built model: {model.summary()}")
    return model


def calibrate_open_valves(model: HydraulicModel, flows: np.ndarray, heads: np.ndarray,
                          eps_q: float = 1e-5) -> HydraulicModel:
    """
    Re-derive open-mode resistances of PBV/FCV/PRV/PSV valves from a solved
    operating point.

    Args:
        model: Model to recalibrate
        flows: Link flows q (n_E)
        heads: Node heads [p_J, p_A, p_R]

    Returns:
        HydraulicModel: Copy with updated valve resistances
    """
    if not model.n_W:
        return model
    drops = model.incidence.T @ heads
    r_open = model.valves.open_resistance.copy()
    for w, kind in enumerate(model.valve_kinds):
        if kind in REGULATING_KINDS or kind == "PBV":
            e = model.n_P + model.n_M + w
            r_open[w] = open_mode_resistance(drops[e], flows[e], eps_q)
    return replace(model, valves=replace(model.valves, open_resistance=r_open))
