"""Shared network fixtures."""

import numpy as np
import pytest

from wdn_dae import HydraulicDae, ScheduleInput, build_model, parse_inp
from wdn_dae.config import Config
from wdn_dae.schedule import Demands

THREE_NODE_INP = """\
[TITLE]
Three-node network: reservoir, pump, junction, pipe, tank

[JUNCTIONS]
;ID   Elev   Demand   Pattern
 2    0      10

[RESERVOIRS]
 1    50

[TANKS]
 8    60     10        0        20       10     0

[PIPES]
 1    2       8       500      300    100         0           OPEN

[PUMPS]
 9    1       2       HEAD 1

[CURVES]
 1    50     30

[TIMES]
 Duration            1:00
 Hydraulic Timestep  0:05
 Pattern Timestep    1:00

[OPTIONS]
 Units      LPS
 Headloss   H-W

[END]
"""

LOOP_INP = """\
[TITLE]
Single loop fed by gravity, tank behind the far junction

[JUNCTIONS]
 A    0    0
 B    0    8
 C    0    6

[RESERVOIRS]
 R    60

[TANKS]
 T    20   20   0   40   8   0

[PIPES]
 1    R    A    300   300   120   0   OPEN
 2    A    B    400   200   110   0   OPEN
 3    A    C    250   200   100   0   OPEN
 4    C    B    300   150   100   0   OPEN
 5    B    T    200   200   120   0   OPEN

[OPTIONS]
 Units      LPS
 Headloss   H-W

[END]
"""

GRAVITY_INP = """\
[JUNCTIONS]
 J    0    5

[RESERVOIRS]
 R    50

[TANKS]
 T    20   15   0   30   6   0

[PIPES]
 1    R    J    400   250   120   0   OPEN
 2    J    T    300   200   110   0   OPEN

[OPTIONS]
 Units      LPS
 Headloss   H-W

[END]
"""


def grid_inp(rows: int = 4, cols: int = 5, seed: int = 7) -> str:
    """Looped rows x cols grid fed from a reservoir corner, tank on the far corner."""
    rng = np.random.default_rng(seed)
    n = rows * cols
    lines = ["[TITLE]", f"Seeded {rows}x{cols} grid", "", "[JUNCTIONS]"]
    for k in range(n):
        lines.append(f"J{k} {rng.uniform(0.0, 10.0):.3f} {rng.uniform(0.5, 2.0):.3f}")
    lines += ["", "[RESERVOIRS]", "R1 80", "", "[TANKS]", "T1 30 20 0 40 15 0", "", "[PIPES]"]

    def pipe(pid, a, b):
        length = rng.uniform(100.0, 300.0)
        diameter = rng.choice([150, 200, 250])
        roughness = rng.uniform(90.0, 130.0)
        return f"{pid} {a} {b} {length:.2f} {diameter} {roughness:.1f} 0 OPEN"

    count = 0
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                count += 1
                lines.append(pipe(f"P{count}", f"J{k}", f"J{k + 1}"))
            if r + 1 < rows:
                count += 1
                lines.append(pipe(f"P{count}", f"J{k}", f"J{k + cols}"))
    lines.append("SUP R1 J0 200 400 120 0 OPEN")
    lines.append(f"TK J{n - 1} T1 150 250 120 0 OPEN")
    lines += ["", "[OPTIONS]", "Units LPS", "Headloss H-W", "", "[END]", ""]
    return "\n".join(lines)


@pytest.fixture
def config():
    return Config()


@pytest.fixture
def three_node_net():
    return parse_inp(THREE_NODE_INP)


@pytest.fixture
def three_node_model(three_node_net):
    return build_model(three_node_net)


@pytest.fixture
def three_node_dae(three_node_model):
    return HydraulicDae(three_node_model)


@pytest.fixture
def controls(three_node_model):
    return three_node_model.nominal_controls()


@pytest.fixture
def tank_draw():
    """10 L/s at the junction and 5 L/s drawn from the tank, so every link carries flow."""
    return Demands(np.array([0.01]), np.array([0.005]))


@pytest.fixture
def equilibrium(three_node_dae, controls, tank_draw):
    return three_node_dae.equilibrium_solve(controls, tank_draw, polish=1).state


@pytest.fixture
def pump_off_schedule(three_node_model, tank_draw):
    """Pump 9 switched off at t = 1800 s."""
    base = three_node_model.nominal_controls()
    off = base.copy()
    off.opening[1] = 0.0
    return ScheduleInput.from_events(base, tank_draw, [(1800.0, off)])


@pytest.fixture
def loop_model():
    return build_model(parse_inp(LOOP_INP))


@pytest.fixture
def loop_demands(loop_model):
    return Demands(loop_model.junction_base_demand.copy(), np.array([0.003]))


@pytest.fixture
def gravity_model():
    return build_model(parse_inp(GRAVITY_INP))


@pytest.fixture
def grid_model():
    return build_model(parse_inp(grid_inp()))


@pytest.fixture
def grid_demands(grid_model):
    return Demands(grid_model.junction_base_demand.copy(), np.array([0.002]))


@pytest.fixture
def inp_file(tmp_path):
    path = tmp_path / "threenodes.inp"
    path.write_text(THREE_NODE_INP, encoding="utf-8")
    return str(path)
