"""Run configuration from an INI file.

Every section is optional and falls back to the defaults below. Complex
network elements are given as real and imaginary parts (``r``/``x`` for
the line impedance, ``g``/``b`` for the shunt admittance). Lists of
tuples use ``;`` between entries and ``:`` inside an entry, for example
``angle_sines = 0.001:0.9:0 ; 0.00075:0.37:1``.

Machine quantities may be stated on their own base: when ``[base]``
gives ``machine_mva`` and ``system_mva``, reactances, resistance,
inertia and damping are converted to the system base at load time.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .drem import EstimatorConfig
from .machine import GovernorTurbineParams, SgParams
from .network import AuxParams, LineParams, NetworkParams, TransformerParams
from .simulate import GridSource, SimulationConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Configuration could not be parsed or violates invariants.

    ``violations`` holds ``(key_path, reason)`` pairs.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{k}: {r}" for k, r in self.violations))


@dataclass(frozen=True)
class PathsConfig:
    output_dir: str = "."


@dataclass(frozen=True)
class RunConfig:
    machine: SgParams
    network: NetworkParams
    governor: GovernorTurbineParams
    estimator: EstimatorConfig
    simulation: SimulationConfig
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    noise: bool = False
    t_ref_auto: bool = False
    name: str = "scenario"
    notes: tuple[str, ...] = ()

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed)


DEFAULT_MACHINE = dict(H=6.18, D=0.04, Td0p=8.0, xd=1.8, xdp=0.3, xq=1.7, Rs=0.003,
                       omega_s=100 * math.pi)

_SECTIONS = {"machine", "base", "line", "transformer", "aux", "governor", "estimator",
             "simulation", "grid", "paths", "run"}


def _triples(text: str, width: int):
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [float(p) for p in chunk.split(":")]
        if len(parts) != width:
            raise ValueError(f"expected {width} ':'-separated numbers in '{chunk}'")
        out.append(tuple(parts))
    return tuple(out)


class _Reader:
    """Typed access to a parsed INI that records problems instead of raising."""

    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp
        self.problems: list[tuple[str, str]] = []
        self.used: set[tuple[str, str]] = set()

    def get(self, section, key, default, kind=float):
        self.used.add((section, key))
        if not self.cp.has_option(section, key):
            return default
        raw = self.cp.get(section, key).strip()
        try:
            if kind is bool:
                return self.cp.getboolean(section, key)
            if kind is float and raw.lower() in ("none", ""):
                return None
            return kind(raw)
        except ValueError as exc:
            self.problems.append((f"{section}.{key}", f"cannot parse '{raw}': {exc}"))
            return default

    def unknown_keys(self):
        for sec in self.cp.sections():
            if sec not in _SECTIONS:
                self.problems.append((sec, "unknown section"))
                continue
            for key in self.cp.options(sec):
                if (sec, key) not in self.used:
                    self.problems.append((f"{sec}.{key}", "unknown key"))


def _build(cls, section: str, values: dict, problems: list):
    """Construct a validated dataclass, prefixing its violations with ``section``."""
    probe = object.__new__(cls)
    for k, v in values.items():
        object.__setattr__(probe, k, v)
    if hasattr(cls, "violations"):
        try:
            found = probe.violations()
        except TypeError as exc:
            problems.append((section, str(exc)))
            return None
        if found:
            problems.extend((f"{section}.{k}", r) for k, r in found)
            return None
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        problems.append((section, str(exc)))
        return None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep key case (H vs h)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([("<file>", f"parse error: {exc}")]) from exc
    r = _Reader(cp)
    problems = r.problems
    notes = []

    m = {k: r.get("machine", k, v) for k, v in DEFAULT_MACHINE.items()}
    mva_m = r.get("base", "machine_mva", None)
    mva_s = r.get("base", "system_mva", None)
    if (mva_m is None) != (mva_s is None):
        problems.append(("base", "machine_mva and system_mva must be given together"))
    elif mva_m is not None:
        if not (mva_m > 0 and mva_s > 0):
            problems.append(("base.machine_mva", "bases must be > 0"))
        else:
            ratio = mva_s / mva_m
            for key in ("xd", "xdp", "xq", "Rs"):
                m[key] = m[key] * ratio
            m["H"] = m["H"] / ratio
            m["D"] = m["D"] / ratio
            notes.append(f"machine data converted from {mva_m:g} MVA to {mva_s:g} MVA base")
    machine = _build(SgParams, "machine", m, problems)

    line = _build(LineParams, "line", dict(
        Z=complex(r.get("line", "r", 0.004), r.get("line", "x", 0.04)),
        Y=complex(r.get("line", "g", 0.0), r.get("line", "b", 0.03))), problems)
    transformer = _build(TransformerParams, "transformer", dict(
        rcu_hv=r.get("transformer", "rcu_hv", 0.002), rcu_lv=r.get("transformer", "rcu_lv", 0.002),
        xsig_hv=r.get("transformer", "xsig_hv", 0.06), xsig_lv=r.get("transformer", "xsig_lv", 0.06),
        xm=r.get("transformer", "xm", 500.0), rfe=r.get("transformer", "rfe", 1000.0),
        tau=r.get("transformer", "tau", 0.0), phi=r.get("transformer", "phi", 0.0)), problems)
    aux = _build(AuxParams, "aux", dict(
        p_as_max=r.get("aux", "p_as_max", 0.05), p_sg_max=r.get("aux", "p_sg_max", 1.0),
        pf=r.get("aux", "pf", 0.85), t0=r.get("aux", "t0", 0.0)), problems)

    t_ref_raw = r.get("governor", "T_ref", "0.9", kind=str)
    t_ref_auto = t_ref_raw.strip().lower() == "auto"
    t_ref = 0.9
    if not t_ref_auto:
        try:
            t_ref = float(t_ref_raw)
        except ValueError:
            problems.append(("governor.T_ref", f"expected a number or 'auto', got '{t_ref_raw}'"))
    governor = _build(GovernorTurbineParams, "governor", dict(
        T_ref=t_ref, droop_gain=r.get("governor", "droop_gain", 20.0),
        servo_tc=r.get("governor", "servo_tc", 0.5),
        turbine_tc=r.get("governor", "turbine_tc", 2.0)), problems)

    defaults = EstimatorConfig()
    est_vals = {}
    for f in dataclasses.fields(EstimatorConfig):
        if f.name == "theta0":
            continue
        est_vals[f.name] = r.get("estimator", f.name, getattr(defaults, f.name))
    est_vals["theta0"] = (r.get("estimator", "a1_init", 0.0), r.get("estimator", "a2_init", 0.0))
    if est_vals["c3"] is not None:
        notes.append("estimator.c3 is accepted but not used by the extension operator")
    estimator = _build(EstimatorConfig, "estimator", est_vals, problems)

    try:
        grid = GridSource(
            v_mag=r.get("grid", "v_mag", 1.0), angle0=r.get("grid", "angle0", 0.0),
            freq_offset_hz=r.get("grid", "freq_offset_hz", 0.05),
            angle_sines=_triples(r.get("grid", "angle_sines", "0.001:0.9:0;0.00075:0.37:1", str), 3),
            mag_sines=_triples(r.get("grid", "mag_sines", "0.005:0.23:0.3", str), 3),
            angle_steps=_triples(r.get("grid", "angle_steps", "", str), 2),
        )
        if grid.min_magnitude() <= 0:
            problems.append(("grid.v_mag", "grid voltage magnitude must stay positive"))
    except ValueError as exc:
        problems.append(("grid", str(exc)))
        grid = None

    sim_vals = dict(
        dt=r.get("simulation", "dt", 1e-3), horizon=r.get("simulation", "horizon", 120.0),
        reporting_rate=r.get("simulation", "reporting_rate", 50.0),
        x3_init=r.get("simulation", "x3_init", 1.15),
        sigma_mag=r.get("simulation", "sigma_mag", 1e-4),
        sigma_ang=r.get("simulation", "sigma_ang", 1e-4),
    )
    noise = r.get("simulation", "noise", False, kind=bool)
    try:
        taps = _triples(r.get("simulation", "tap_changes", "", str), 2)
    except ValueError as exc:
        problems.append(("simulation.tap_changes", str(exc)))
        taps = ()
    simulation = None
    for key in ("dt", "horizon", "reporting_rate"):
        if not sim_vals[key] > 0:
            problems.append((f"simulation.{key}", f"must be > 0, got {sim_vals[key]}"))
    for key in ("sigma_mag", "sigma_ang"):
        if not sim_vals[key] >= 0:
            problems.append((f"simulation.{key}", f"must be >= 0, got {sim_vals[key]}"))
    if not any(k.startswith("simulation.") for k, _ in problems) and grid is not None:
        simulation = SimulationConfig(grid=grid, tap_changes=taps, **sim_vals)
        try:
            simulation.substeps
        except ValueError as exc:
            problems.append(("simulation.dt", str(exc)))

    paths = PathsConfig(output_dir=r.get("paths", "output_dir", ".", str))
    seed = r.get("run", "seed", 0, kind=int)
    name = r.get("run", "name", "scenario", kind=str)
    r.unknown_keys()
    if problems:
        raise ConfigError(problems)
    network = NetworkParams(line, transformer, aux)
    for n in notes:
        log.info(n)
    return RunConfig(machine, network, governor, estimator, simulation, paths, seed, noise,
                     t_ref_auto, name, tuple(notes))


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {p}: {exc.strerror}")]) from exc
    return parse_config(text, source=str(p))
