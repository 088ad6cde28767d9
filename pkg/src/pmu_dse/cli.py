"""Command-line driver: simulate, map, estimate, playback, validate.

Exit codes: 0 success, 1 failure (one ``error:`` line on stderr),
2 usage error, 3 finished but the recording lacks excitation.
"""

from __future__ import annotations

import logging
import os
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from . import io as csvio
from .algebraic import estimate_series
from .config import RunConfig, load_config
from .drem import ExcitationWarning
from .machine import exciter_estimate
from .network import map_to_terminal
from .phasor import dq_decompose
from .simulate import SimulationResult, add_measurement_noise, integrate_scenario
from .validation import (
    PipelineOutput, Scenario, estimate_pipeline, event_playback, mechanical_torque,
    reference_speed, reports_csv, auto_cross_validate,
)

log = logging.getLogger("pmu_dse")

EXIT_FAILURE = 1
EXIT_EXCITATION = 3


class Deficient(Exception):
    pass


def simulate_run(cfg: RunConfig) -> tuple[SimulationResult, object]:
    """Simulate the configured scenario; returns the result and the (noisy) PMU series."""
    res = integrate_scenario(cfg.machine, cfg.network, cfg.governor, cfg.simulation)
    pmu = res.pmu
    if cfg.noise:
        rng = np.random.default_rng(cfg.seed)
        pmu = add_measurement_noise(pmu, cfg.simulation.sigma_mag, cfg.simulation.sigma_ang, rng)
    return res, pmu


def _out_dir(cfg: RunConfig, out) -> Path:
    p = Path(out if out is not None else cfg.paths.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _truth(path):
    if path is None:
        return None, None
    d = csvio.read_truth_csv(path)
    return d["tm"], d["x2"]


def _check_len(name, arr, n):
    if arr is not None and len(arr) != n:
        raise csvio.DataError(f"{name} has {len(arr)} rows, terminal data has {n}")


def run_estimate(cfg: RunConfig, terminal, tm=None, x2=None, delta2_ref=None) -> PipelineOutput:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExcitationWarning)
        return estimate_pipeline(terminal, cfg.machine, cfg.governor, cfg.estimator, tm=tm,
                                 x2_ref=x2, delta2_ref=delta2_ref, t_ref_auto=cfg.t_ref_auto)


def write_estimates(out_dir: Path, out: PipelineOutput):
    est = out.estimation
    csvio.write_estimates_csv(out_dir / "estimates.csv", t=out.t, x1_hat=out.algebraic.x1_hat,
                              x3_hat=out.algebraic.x3_hat, te_hat=out.algebraic.te_hat,
                              x2_hat=out.x2_hat, a1_hat=est.theta_hat[:, 0], a2_hat=est.theta_hat[:, 1])
    csvio.write_diagnostics_csv(out_dir / "diagnostics.csv", t=out.t, delta=est.delta,
                                delta2_ma=est.delta2_ma, k_gamma1=est.k_gamma[:, 0],
                                k_gamma2=est.k_gamma[:, 1], excitation_integral=est.excitation)


def _setup_logging():
    level = os.environ.get("PMU_DSE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(exc: BaseException):
    msg = " ".join(str(exc).split())
    click.echo(f"error: {type(exc).__name__}: {msg}", err=True)
    sys.exit(EXIT_FAILURE)


def _load(config_path, seed):
    cfg = load_config(config_path)
    return cfg.with_seed(seed) if seed is not None else cfg


def guarded(fn):
    """Turn any failure into a single-line summary and a nonzero exit."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Deficient as exc:
            click.echo(f"warning: excitation-deficient: {exc}", err=True)
            sys.exit(EXIT_EXCITATION)
        except click.exceptions.Exit:
            raise
        except (click.ClickException, click.Abort):
            raise
        except Exception as exc:  # noqa: BLE001  report everything on one line
            _fail(exc)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


config_arg = click.argument("config", type=click.Path(dir_okay=False))
seed_opt = click.option("--seed", type=int, default=None, help="Override the configured noise seed.")
out_opt = click.option("-o", "--out", "out", type=click.Path(file_okay=False), default=None,
                       help="Output directory (default: paths.output_dir).")


@click.group()
def main():
    """Generator state and parameter estimation from substation PMU data."""
    _setup_logging()


@main.command()
@config_arg
@out_opt
@seed_opt
@guarded
def simulate(config, out, seed):
    """Generate pmu.csv and truth.csv for the configured scenario."""
    cfg = _load(config, seed)
    d = _out_dir(cfg, out)
    res, pmu = simulate_run(cfg)
    csvio.write_pmu_csv(d / "pmu.csv", pmu)
    csvio.write_truth_csv(d / "truth.csv", res.t, res.x, res.tm, res.te, res.ef)
    click.echo(f"wrote {d / 'pmu.csv'} and {d / 'truth.csv'} ({len(res.t)} samples)")


@main.command("map")
@config_arg
@click.argument("pmu_csv", type=click.Path(dir_okay=False))
@out_opt
@seed_opt
@guarded
def map_cmd(config, pmu_csv, out, seed):
    """Map substation phasors to the generator terminal (terminal.csv)."""
    cfg = _load(config, seed)
    d = _out_dir(cfg, out)
    y = map_to_terminal(csvio.read_pmu_csv(pmu_csv), cfg.network)
    csvio.write_terminal_csv(d / "terminal.csv", y)
    click.echo(f"wrote {d / 'terminal.csv'}")


@main.command()
@config_arg
@click.argument("terminal_csv", type=click.Path(dir_okay=False))
@click.option("--truth", type=click.Path(dir_okay=False), default=None,
              help="truth.csv supplying mechanical torque and reference speed.")
@click.option("--delta2-ref", type=float, default=None, help="Reference excitation level.")
@out_opt
@seed_opt
@guarded
def estimate(config, terminal_csv, truth, delta2_ref, out, seed):
    """Estimate states and parameters (estimates.csv, diagnostics.csv)."""
    cfg = _load(config, seed)
    d = _out_dir(cfg, out)
    y = csvio.read_terminal_csv(terminal_csv)
    tm, x2 = _truth(truth)
    _check_len("truth.csv", tm, len(y))
    res = run_estimate(cfg, y, tm, x2, delta2_ref)
    write_estimates(d, res)
    a1, a2 = (float(v) for v in res.estimation.theta_hat[-1])
    click.echo(f"a1_hat={a1!r} a2_hat={a2!r} delta2_ref={res.estimation.delta2_ref!r}")
    if res.estimation.excitation_deficient:
        raise Deficient(res.estimation.notes[-1])


@main.command()
@config_arg
@click.argument("terminal_csv", type=click.Path(dir_okay=False))
@click.argument("estimates_csv", type=click.Path(dir_okay=False))
@click.option("--truth", type=click.Path(dir_okay=False), default=None,
              help="truth.csv supplying mechanical torque and reference speed.")
@click.option("--substeps", type=int, default=1, show_default=True)
@out_opt
@seed_opt
@guarded
def playback(config, terminal_csv, estimates_csv, truth, substeps, out, seed):
    """Re-simulate the generator with the identified parameters (playback.csv)."""
    cfg = _load(config, seed)
    d = _out_dir(cfg, out)
    y = csvio.read_terminal_csv(terminal_csv)
    est = csvio.read_estimates_csv(estimates_csv)
    _check_len("estimates.csv", est["t"], len(y))
    tm, x2 = _truth(truth)
    _check_len("truth.csv", tm, len(y))
    sg = cfg.machine
    dt = float(np.median(np.diff(y.t)))
    al = estimate_series(y, sg)
    if x2 is None:
        x2 = reference_speed(y, dt, sg.omega_s)
    if tm is None:
        tm = mechanical_torque(al.te_hat, x2, cfg.governor, dt, sg.omega_s, cfg.t_ref_auto)
    itd, _ = dq_decompose(y.it, y.phi_t, est["x1_hat"])
    ef = exciter_estimate(est["x3_hat"], itd, sg, dt)
    theta = (est["a1_hat"][-1], est["a2_hat"][-1])
    x0 = (est["x1_hat"][0], x2[0], est["x3_hat"][0])
    pb = event_playback(theta, y, ef, tm, sg, dt, x0, substeps)
    e = pb.errors(x2, y)
    csvio.write_playback_csv(d / "playback.csv", t=y.t, x2_sim=pb.x2, it_sim=pb.it, pt_sim=pb.pt,
                             qt_sim=pb.qt, err_x2=e.x2, err_it=e.it, err_pt=e.pt, err_qt=e.qt)
    click.echo(f"wrote {d / 'playback.csv'}")


def _scenario(name, directory: Path, cfg: RunConfig, use_truth: bool) -> Scenario:
    pmu = csvio.read_pmu_csv(directory / "pmu.csv")
    tm = x2 = None
    truth = directory / "truth.csv"
    if use_truth and truth.exists():
        tm, x2 = _truth(truth)
        _check_len(str(truth), tm, len(pmu))
    return Scenario(name, pmu, tm, x2, governor=cfg.governor, t_ref_auto=cfg.t_ref_auto)


@main.command()
@config_arg
@click.option("--auto", "auto_dir", type=click.Path(file_okay=False, exists=True), required=True,
              help="Directory with pmu.csv (and optionally truth.csv) of the reference recording.")
@click.option("--cross", "cross_dir", type=click.Path(file_okay=False, exists=True), required=True,
              help="Directory with the second recording.")
@click.option("--cross-config", type=click.Path(dir_okay=False), default=None,
              help="Config for the second recording's governor; estimator settings always come from CONFIG.")
@click.option("--truth/--no-truth", default=True, show_default=True,
              help="Use truth.csv for mechanical torque and reference speed when present.")
@click.option("--band", type=float, default=0.02, show_default=True, help="Convergence band.")
@out_opt
@seed_opt
@guarded
def validate(config, auto_dir, cross_dir, cross_config, truth, band, out, seed):
    """Auto- and cross-validation; writes report.txt, report.csv and report.kv."""
    cfg = _load(config, seed)
    cfg_x = _load(cross_config, seed) if cross_config else cfg
    d = _out_dir(cfg, out)
    auto = _scenario("auto", Path(auto_dir), cfg, truth)
    cross = _scenario("cross", Path(cross_dir), cfg_x, truth)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExcitationWarning)
        rep_a, rep_c = auto_cross_validate(auto, cross, cfg.machine, cfg.network, cfg.governor,
                                           cfg.estimator, band=band)
    reports = [rep_a, rep_c]
    (d / "report.txt").write_text("".join(r.to_text() for r in reports))
    (d / "report.csv").write_text(reports_csv(reports))
    (d / "report.kv").write_text("".join(
        "".join(f"{r.scenario}.{line}\n" for line in r.to_kv().splitlines()) for r in reports))
    click.echo((d / "report.txt").read_text(), nl=False)
    bad = [r.scenario for r in reports if r.excitation_deficient]
    if bad:
        raise Deficient(f"scenarios {', '.join(bad)} lack excitation")


if __name__ == "__main__":
    main()
