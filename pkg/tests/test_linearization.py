"""Linear DAE assembly, Laplacian, reduction, spectra and linear runs."""

import numpy as np
import pytest

from wdn_dae.dae_core import HydraulicDae
from wdn_dae.error_handler import NotAnEquilibrium, SingularAlgebraicPivot, SingularStepMatrix
from wdn_dae.linearization import (
    assemble_linear_dae,
    conductance_weights,
    incremental_energy,
    linearize,
    pencil_eigenvalues,
    project_consistent,
    reduce,
    simulate_linear,
    stability_margin,
    weighted_laplacian,
)


@pytest.fixture
def lin(three_node_model, equilibrium, controls, tank_draw):
    return linearize(three_node_model, equilibrium, controls, tank_draw)


@pytest.fixture
def loop_lin(loop_model, loop_demands):
    controls = loop_model.nominal_controls()
    state = HydraulicDae(loop_model).equilibrium_solve(controls, loop_demands, polish=1).state
    return linearize(loop_model, state, controls, loop_demands)


def _three_node_injected(k1: float, k9: float):
    return assemble_linear_dae([[1.0, -1.0]], [[-1.0, 0.0]], [k1, k9], [0.5, 0.25], [78.5],
                               N_R=[[0.0, 1.0]])


class TestAssembly:
    def test_three_node_blocks(self) -> None:
        lin = _three_node_injected(3.0, 7.0)
        np.testing.assert_array_equal(lin.E, np.diag([2.0, 4.0, 0.0, 78.5]))
        np.testing.assert_array_equal(lin.A, [
            [-3.0, 0.0, 1.0, -1.0],
            [0.0, -7.0, -1.0, 0.0],
            [1.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ])

    def test_default_demand_columns(self) -> None:
        lin = _three_node_injected(3.0, 7.0)
        np.testing.assert_array_equal(lin.B_d[:, 0], [0.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(lin.B_d[:, 1], [0.0, 0.0, 0.0, -1.0])
        assert lin.B_u.shape == (4, 0)

    def test_linearize_matches_slopes(self, lin, three_node_model, equilibrium, controls) -> None:
        kappa, _ = three_node_model.link_slopes(equilibrium.q, controls)
        expected = assemble_linear_dae(three_node_model.N_J, three_node_model.N_A, kappa,
                                       three_node_model.inertance, three_node_model.tank_area)
        np.testing.assert_allclose(lin.A, expected.A)
        np.testing.assert_allclose(lin.E, expected.E)
        assert lin.input_names == ["speed:9"]
        assert lin.link_ids == ["1", "9"]

    def test_pump_input_column_matches_difference(self, lin, three_node_dae, equilibrium, controls,
                                                  tank_draw) -> None:
        h = 1e-6
        up, down = controls.copy(), controls.copy()
        up.speed[0] += h
        down.speed[0] -= h
        x = equilibrium.as_vector()
        column = (three_node_dae.residual(x, up, tank_draw) - three_node_dae.residual(x, down, tank_draw)) / (2 * h)
        np.testing.assert_allclose(lin.B_u[:, 0], column[:lin.n], rtol=1e-6, atol=1e-9)
        assert lin.B_u[1, 0] == pytest.approx(80.0)

    def test_closed_links_dropped(self, three_node_model, equilibrium, controls, tank_draw) -> None:
        closed = controls.copy()
        closed.opening[0] = 0.0
        dae = HydraulicDae(three_node_model)
        state = dae.equilibrium_solve(closed, tank_draw.scaled(0.0), polish=1).state
        reduced = linearize(three_node_model, state, closed, tank_draw.scaled(0.0))
        assert reduced.link_ids == ["9"]
        assert reduced.A.shape == (3, 3)

    def test_first_order_remainder_is_quadratic(self, lin, three_node_dae, equilibrium, controls,
                                                tank_draw) -> None:
        x = equilibrium.as_vector()
        v = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        f0 = three_node_dae.residual(x, controls, tank_draw)

        def remainder(delta):
            f = three_node_dae.residual(x + delta * v, controls, tank_draw)
            return np.linalg.norm(f[:lin.n] - f0[:lin.n] - delta * lin.A @ v[:lin.n])

        assert 3.5 <= remainder(2e-4) / remainder(1e-4) <= 4.5

    def test_not_an_equilibrium(self, three_node_model, three_node_dae, controls, tank_draw) -> None:
        with pytest.raises(NotAnEquilibrium):
            linearize(three_node_model, three_node_dae.flat_start(), controls, tank_draw)


class TestLaplacian:
    def test_single_edge(self) -> None:
        lin = assemble_linear_dae([[1.0]], np.zeros((0, 1)), [0.5], [1.0], [], N_R=[[-1.0]])
        np.testing.assert_allclose(weighted_laplacian(lin), [[2.0, -2.0], [-2.0, 2.0]])

    def test_structure(self, loop_lin) -> None:
        L = weighted_laplacian(loop_lin)
        np.testing.assert_allclose(L, L.T)
        assert np.max(np.abs(L.sum(axis=1))) <= 1e-12 * np.abs(L).max()
        eigenvalues = np.linalg.eigvalsh(L)
        assert eigenvalues.min() >= -1e-12 * eigenvalues.max()
        assert int(np.sum(np.abs(eigenvalues) < 1e-8)) == 1

    def test_nodal_identity(self, loop_lin) -> None:
        rng = np.random.default_rng(3)
        N = np.vstack([loop_lin.N_J, loop_lin.N_A, loop_lin.N_R])
        dp = rng.normal(size=N.shape[0])
        direct = N @ ((N.T @ dp) / loop_lin.kappa)
        np.testing.assert_allclose(weighted_laplacian(loop_lin) @ dp, direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())

    def test_weights_sorted(self, loop_lin) -> None:
        table = conductance_weights(loop_lin)
        assert list(table.columns) == ["link_id", "kappa", "weight"]
        assert table["weight"].is_monotonic_decreasing
        np.testing.assert_allclose(table["weight"] * table["kappa"], 1.0)


class TestEnergy:
    def test_quadratic_form(self, lin) -> None:
        assert incremental_energy(lin, np.zeros(lin.n)) == (0.0, 0.0)
        dx = np.array([1e-3, 2e-3, 0.4, 0.1])
        V, V_dot = incremental_energy(lin, dx)
        expected = 0.5 * (1e-6 / lin.inertance[0] + 4e-6 / lin.inertance[1] + lin.tank_area[0] * 0.01)
        assert V == pytest.approx(expected)
        assert V_dot == pytest.approx(-(lin.kappa[0] * 1e-6 + lin.kappa[1] * 4e-6))

    def test_linear_run_dissipates(self, lin) -> None:
        rng = np.random.default_rng(11)
        dx0 = rng.normal(size=lin.n)
        dx0 *= 1e-3 / np.linalg.norm(dx0)
        run = simulate_linear(lin, dx0, horizon=2000.0, dt=1.0)
        assert len(run.V) == 2001
        assert np.all(np.diff(run.V) <= 1e-10)
        assert run.V[-1] < run.V[0]
        assert np.all(run.V_dot <= 0.0)

    def test_energy_rate_matches_difference(self, lin) -> None:
        rng = np.random.default_rng(5)
        dx0 = rng.normal(size=lin.n)
        dx0 *= 1e-3 / np.linalg.norm(dx0)
        dt = 1e-5
        run = simulate_linear(lin, dx0, horizon=10 * dt, dt=dt)
        rate = (run.V[6] - run.V[5]) / dt
        assert rate == pytest.approx(run.V_dot[6], rel=1e-4)

    def test_projection_is_consistent(self, lin) -> None:
        dx = project_consistent(lin, np.array([1e-3, 0.0, 0.0, 0.0]))
        dq, _, _ = lin.split(dx)
        assert abs(lin.N_J @ dq)[0] <= 1e-15
        np.testing.assert_allclose(project_consistent(lin, dx), dx, atol=1e-15)

    def test_scalar_decay_closed_form(self) -> None:
        lin = assemble_linear_dae(np.zeros((0, 1)), np.zeros((0, 1)), [2.0], [0.5], [], N_R=[[1.0], [-1.0]])
        dt = 0.1
        run = simulate_linear(lin, np.array([1.0]), horizon=1.0, dt=dt)
        expected = (1.0 + dt * 2.0 * 0.5) ** -np.arange(11)
        np.testing.assert_allclose(run.states[:, 0], expected, rtol=1e-12)

    def test_singular_step_matrix(self) -> None:
        lin = assemble_linear_dae([[0.0]], np.zeros((0, 1)), [1.0], [1.0], [])
        with pytest.raises(SingularStepMatrix):
            simulate_linear(lin, np.zeros(2), horizon=1.0, dt=0.1, project=False)


class TestReduction:
    def test_reduced_spectrum_equals_pencil(self, lin) -> None:
        reduced = reduce(lin)
        assert reduced.n_c == 2
        # index-2 infinite eigenvalues can surface as large finite values under QZ
        pencil = pencil_eigenvalues(lin.A, lin.E)
        finite = np.sort_complex(pencil[np.argsort(np.abs(pencil))][:reduced.n_c])
        np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(reduced.A_c)), finite, rtol=1e-8)

    @pytest.mark.parametrize("omega", [1e-4, 1e-2, 1.0])
    def test_frequency_response_preserved(self, lin, omega) -> None:
        reduced = reduce(lin)
        s = 1j * omega
        full = np.linalg.solve(s * lin.E - lin.A, lin.B_u)
        keep = np.r_[0:lin.n_q, lin.n_q + lin.n_J:lin.n]
        small = np.linalg.solve(s * np.eye(reduced.A_red.shape[0]) - reduced.A_red, reduced.B_red)
        np.testing.assert_allclose(small, full[keep], rtol=1e-8, atol=1e-14)

    def test_consistent_basis(self, lin) -> None:
        reduced = reduce(lin)
        np.testing.assert_allclose(reduced.T.T @ reduced.T, np.eye(reduced.n_c), atol=1e-12)
        np.testing.assert_allclose(lin.N_J @ reduced.T[:lin.n_q], 0.0, atol=1e-12)

    def test_demand_split_restores_balance(self, lin) -> None:
        reduced = reduce(lin)
        np.testing.assert_allclose(lin.N_J @ reduced.F_d, -np.eye(lin.n_J), atol=1e-12)

    def test_singular_pivot(self) -> None:
        lin = assemble_linear_dae([[0.0]], np.zeros((0, 1)), [1.0], [1.0], [])
        with pytest.raises(SingularAlgebraicPivot):
            reduce(lin)


class TestStability:
    def test_scalar(self) -> None:
        report = stability_margin(np.array([[-2.0]]))
        assert report.alpha_s == 2.0
        assert report.stable
        assert report.kappa_V == pytest.approx(1.0)

    def test_anchored_network_is_stable(self, lin, loop_lin) -> None:
        for model in (lin, loop_lin):
            report = stability_margin(model)
            assert report.stable
            assert report.alpha_s > 0.0

    def test_unanchored_component_has_zero_mode(self) -> None:
        lin = assemble_linear_dae([[1.0]], [[-1.0]], [1.0], [1.0], [10.0])
        assert stability_margin(lin).alpha_s == 0.0

    def test_empty_system(self) -> None:
        assert stability_margin(np.zeros((0, 0))).alpha_s == float("inf")

    def test_bauer_fike(self) -> None:
        rng = np.random.default_rng(17)
        for _ in range(20):
            A = rng.normal(size=(5, 5)) - 4.0 * np.eye(5)
            delta = 1e-3 * rng.normal(size=(5, 5))
            nominal = stability_margin(A)
            perturbed = stability_margin(A + delta)
            bound = max(nominal.kappa_V, perturbed.kappa_V) * np.linalg.norm(delta, 2)
            assert abs(perturbed.alpha_s - nominal.alpha_s) <= bound + 1e-10
