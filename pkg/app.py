#!/usr/bin/env python3
"""
WDN DAE Toolkit - Application
==========================================

Command-line front end: parse an INP network, simulate its hydraulic DAE,
run the quasi-steady reference, linearize and compute margins, and compare
trajectories. Every command writes CSV/JSON files to the output directory.
"""

import functools
import os
import sys
from pathlib import Path
from typing import Dict, Optional

import click
import numpy as np

from wdn_dae import (
    HydraulicDae,
    build_model,
    build_schedule,
    compare_trajectories,
    conductance_weights,
    demand_profile_levels,
    demand_sweep,
    extended_period_sim,
    linearize,
    margin_report,
    parse_inp_file,
    pencil_eigenvalues,
    rank_parameters,
    reduce,
    screen_linearization,
    smooth_controls,
    stability_margin,
    validate,
)
from wdn_dae.artifacts import (
    matrix_frame,
    read_trajectory_csv,
    spectrum_frame,
    write_json,
    write_table,
    write_trajectory,
)
from wdn_dae.config import Config
from wdn_dae.error_handler import WdnError, handle_error, validate_file_path
from wdn_dae.logger import setup_logger
from wdn_dae.margins import roughness_direction


class HydraulicAnalyzer:
    """Hydraulic DAE analyzer."""

    def __init__(self, config: Optional[Config] = None, output_dir: Optional[str] = None):
        """Initialize the analyzer with configuration."""
        self.config = config or Config.from_env()
        self.output_dir = output_dir or self.config.OUTPUT_DIR
        self.logger = setup_logger(
            "wdn_dae",
            log_file=self.config.LOG_FILE,
            level=self.config.LOG_LEVEL,
            json_format=self.config.LOG_JSON,
        )

        self.net = None
        self.model = None
        self.schedule = None
        self.dae = None

        Path(self.output_dir).mkdir(parents=True, exist_ok=True)
        self.logger.info("WDN DAE analyzer initialized")

    def _out(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def load_network(self, inp_path: str, horizon: Optional[float] = None):
        """Parse the INP file and build model, schedule and DAE."""
        validate_file_path(inp_path, suffixes=(".inp",))
        self.logger.info(f"Loading network from: {inp_path}")
        self.net = parse_inp_file(inp_path)
        self.model = build_model(self.net, self.config)
        self.schedule = build_schedule(self.net, self.model, horizon)
        self.dae = HydraulicDae(self.model, self.config)
        counts = self.net.counts()
        self.logger.info(f"[SUCCESS] Network loaded: {counts['n_J']} junctions, "
                         f"{len(self.net.link_ids)} links")

    def _nominal(self):
        return self.schedule.controls_at(0.0), self.schedule.demands_at(0.0)

    def parse(self) -> Dict:
        """Model summary JSON and diagnostics as JSON lines."""
        diagnostics = list(self.net.warnings) + validate(self.net)
        path = self._out("diagnostics.jsonl")
        with open(path, "w", encoding="utf-8") as f:
            for d in diagnostics:
                f.write(d.to_json() + "\n")
        summary = {**self.model.summary(), "title": self.net.title, "diagnostics": len(diagnostics)}
        write_json(summary, self._out("model_summary.json"))
        return summary

    def simulate(self, hours: float, dt: Optional[float] = None, tau_s: Optional[float] = None) -> str:
        """Integrate the DAE and write the trajectory CSV plus run metadata."""
        controls, demands = self._nominal()
        schedule = smooth_controls(self.schedule, tau_s) if tau_s else self.schedule
        x0 = self.dae.initial_state(controls, demands)
        trajectory = self.dae.simulate(x0, schedule, hours * 3600.0, dt)
        trajectory.metadata["config"] = self.config.to_dict()
        trajectory.metadata["tau_s"] = tau_s or 0.0
        return write_trajectory(trajectory, self._out("trajectory.csv"), self._out("trajectory_meta.json"))

    def steady(self, hours: float, dt: Optional[float] = None) -> str:
        """Quasi-steady extended period run in the trajectory schema."""
        dt = dt or self.net.options.hydraulic_step
        trajectory = extended_period_sim(self.model, self.schedule, hours * 3600.0, dt, config=self.config)
        return write_trajectory(trajectory, self._out("steady.csv"), self._out("steady_meta.json"))

    def linearize(self) -> Dict:
        """Linear DAE at the nominal equilibrium: matrices, spectrum and link weights."""
        controls, demands = self._nominal()
        state = self.dae.equilibrium_solve(controls, demands, polish=1).state
        lin = linearize(self.model, state, controls, demands, self.config)
        stability = stability_margin(reduce(lin, self.config))
        names = ([f"q:{e}" for e in lin.link_ids] + [f"pJ:{j}" for j in self.model.junction_ids]
                 + [f"pA:{a}" for a in self.model.tank_ids])
        write_table(matrix_frame(lin.E, names, names), self._out("E_h.csv"))
        write_table(matrix_frame(lin.A, names, names), self._out("A_h.csv"))
        write_table(spectrum_frame(pencil_eigenvalues(lin.A, lin.E)), self._out("spectrum.csv"))
        write_table(conductance_weights(lin), self._out("weights.csv"))
        result = {
            "alpha_s": stability.alpha_s,
            "stable": stability.stable,
            "kappa_V": stability.kappa_V,
            "n": lin.n,
            "floored_links": [e for e, f in zip(lin.link_ids, lin.floored) if f],
            "equilibrium_residual": lin.operating_point["residual"],
        }
        write_json(result, self._out("linearization.json"))
        return result

    def margins(self, workers: int) -> Dict:
        controls, demands = self._nominal()
        report = margin_report(self.model, controls, demands, self.config, workers)
        write_json(report.to_dict(), self._out("margins.json"))
        write_table(report.ranking, self._out("ranking.csv"))
        write_table(report.robustness, self._out("robustness.csv"))
        return report.to_dict()

    def screen(self, delta: float, eps: float) -> Dict:
        """Screen a global roughness change of ``delta`` (fraction) against tolerance ``eps``."""
        controls, demands = self._nominal()
        shift = delta * roughness_direction(self.model)
        result = screen_linearization(self.model, controls, demands, shift, eps, self.config)
        out = {**result.to_dict(), "delta": delta, "eps_lin": eps}
        write_json(out, self._out("screen.json"))
        return out

    def rank(self, workers: int, delta: Optional[float] = None):
        controls, demands = self._nominal()
        ranking = rank_parameters(self.model, controls, demands, delta=delta, config=self.config, workers=workers)
        top = ranking.top(self.config.TOP_K)
        write_table(top, self._out("ranking.csv"))
        return top

    def sweep(self, hours: float, workers: int):
        """Margins along the demand profile rescaled into ``DEMAND_RANGE``."""
        controls, demands = self._nominal()
        d_min, d_max = self.config.DEMAND_RANGE
        profile = demand_profile_levels(self.schedule, hours * 3600.0, self.config.DEMAND_SAMPLE_STEP,
                                        d_min, d_max)
        table = demand_sweep(self.model, controls, demands, profile["level"].tolist(),
                             profile["time"].tolist(), self.config, workers)
        write_table(table, self._out("sweep.csv"))
        return table

    def compare(self, path_a: str, path_b: str) -> Dict:
        """Error report of trajectory ``a`` against reference ``b``."""
        report = compare_trajectories(read_trajectory_csv(path_a), read_trajectory_csv(path_b))
        write_table(report.to_frame(), self._out("errors.csv"))
        summary = {**report.summary(), "a": path_a, "b": path_b}
        write_json(summary, self._out("errors_summary.json"))
        return summary


def _load_config(config_path: Optional[str], workers: Optional[int]) -> Config:
    config = Config.from_env()
    if config_path:
        config = Config.from_file(config_path, base=config)
    if workers is not None:
        config = config.updated({"workers": workers})
    return config


def common_options(func):
    """--config, --out and --workers on every command."""
    @click.option("--config", "config_path", type=click.Path(), default=None, help="TOML configuration file")
    @click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory")
    @click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel workers")
    @functools.wraps(func)
    def wrapper(config_path, out_dir, workers, **kwargs):
        try:
            config = _load_config(config_path, workers)
            analyzer = HydraulicAnalyzer(config, out_dir)
            return func(analyzer, **kwargs)
        except WdnError as e:
            click.echo(f"[ERROR] {handle_error(e)}", err=True)
            sys.exit(1)
    return wrapper


inp_option = click.option("--inp", "inp_path", type=click.Path(), default="threenodes.inp",
                          show_default=True, help="EPANET INP network")


def _banner(title: str):
    click.echo(f"\n{'=' * 80}\n{title:^80}\n{'=' * 80}")


@click.group()
def cli():
    """Rigid-water-column DAE analysis of water distribution networks."""


@cli.command()
@inp_option
@common_options
def parse(analyzer, inp_path):
    """Parse and validate a network."""
    analyzer.load_network(inp_path)
    summary = analyzer.parse()
    _banner("NETWORK SUMMARY")
    for key in ("n_J", "n_A", "n_R", "n_pipe", "n_M", "n_W", "incidence_rank", "components"):
        click.echo(f"  {key:<16} {summary[key]}")
    click.echo(f"  diagnostics      {summary['diagnostics']}")


@cli.command()
@inp_option
@click.option("--hours", type=float, default=1.0, show_default=True)
@click.option("--dt", type=float, default=None, help="Time step [s] (TIME_STEP by default)")
@click.option("--tau", "tau_s", type=float, default=None, help="Smoothing window [s]; hard switches if omitted")
@common_options
def simulate(analyzer, inp_path, hours, dt, tau_s):
    """Integrate the hydraulic DAE."""
    analyzer.load_network(inp_path, hours * 3600.0)
    path = analyzer.simulate(hours, dt, tau_s)
    click.echo(f"[OK] Trajectory -> {path}")


@cli.command()
@inp_option
@click.option("--hours", type=float, default=1.0, show_default=True)
@click.option("--dt", type=float, default=None, help="Hydraulic step [s] (INP value by default)")
@common_options
def steady(analyzer, inp_path, hours, dt):
    """Quasi-steady extended period simulation."""
    analyzer.load_network(inp_path, hours * 3600.0)
    path = analyzer.steady(hours, dt)
    click.echo(f"[OK] Trajectory -> {path}")


@cli.command("linearize")
@inp_option
@common_options
def linearize_cmd(analyzer, inp_path):
    """Linear DAE, spectrum and link weights at the nominal equilibrium."""
    analyzer.load_network(inp_path)
    result = analyzer.linearize()
    click.echo(f"[OK] alpha_s = {result['alpha_s']:.6e} ({'stable' if result['stable'] else 'unstable'})")


@cli.command()
@inp_option
@common_options
def margins(analyzer, inp_path):
    """Stability, controllability, PBH and authority margins."""
    analyzer.load_network(inp_path)
    report = analyzer.margins(analyzer.config.WORKERS)
    _banner("MARGINS")
    for key in ("alpha_s", "sigma_c", "pbh_margin", "kappa_V", "r_lin", "G_H"):
        click.echo(f"  {key:<12} {report[key]}")


@cli.command()
@inp_option
@click.option("--delta", type=float, required=True, help="Global roughness change as a fraction")
@click.option("--eps", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.1,
              show_default=True, help="Relative matrix-error tolerance")
@common_options
def screen(analyzer, inp_path, delta, eps):
    """Decide whether the nominal linearization may be reused."""
    analyzer.load_network(inp_path)
    result = analyzer.screen(delta, eps)
    click.echo(f"[OK] {result['decision']}: |dtheta| = {result['delta_norm']:.4g}, r_lin = {result['r_lin']:.4g}")


@cli.command()
@inp_option
@click.option("--delta", type=float, default=None, help="Per-parameter factor change (SINGLE_PARAM_DELTA by default)")
@common_options
def rank(analyzer, inp_path, delta):
    """Rank parameters by remaining margin."""
    analyzer.load_network(inp_path)
    top = analyzer.rank(analyzer.config.WORKERS, delta)
    _banner("MOST CRITICAL PARAMETERS")
    for i, row in enumerate(top.itertuples(), 1):
        click.echo(f"  [{i}] {row.param:<24} alpha_hat={row.alpha_hat:.4e} sigma_hat={row.sigma_hat:.4e}")


@cli.command()
@inp_option
@click.option("--hours", type=float, default=24.0, show_default=True)
@common_options
def sweep(analyzer, inp_path, hours):
    """Margins along the rescaled demand profile."""
    analyzer.load_network(inp_path, hours * 3600.0)
    table = analyzer.sweep(hours, analyzer.config.WORKERS)
    ok = table["status"] == "ok"
    click.echo(f"[OK] {int(ok.sum())}/{len(table)} levels; min alpha_s = {np.nanmin(table['alpha_s']):.4e}"
               if ok.any() else "[!]  every demand level failed")


@cli.command()
@click.option("--a", "path_a", type=click.Path(), required=True, help="Trajectory CSV under test")
@click.option("--b", "path_b", type=click.Path(), required=True, help="Reference trajectory CSV")
@common_options
def compare(analyzer, path_a, path_b):
    """Error report between two trajectory CSVs."""
    summary = analyzer.compare(path_a, path_b)
    click.echo(f"[OK] max p_J error {summary['max_pj_error_m']:.4e} m, "
               f"max flow error {summary['max_q_error_m3s']:.4e} m^3/s")


def main():
    """Main entry point."""
    return cli()


if __name__ == "__main__":
    main()
