"""Synthetic plant and recordings shared by the closed-loop tests."""

import functools
import math

import numpy as np

from pmu_dse.machine import GovernorTurbineParams, SgParams
from pmu_dse.network import AuxParams, LineParams, NetworkParams, TransformerParams
from pmu_dse.simulate import GridSource, SimulationConfig, add_measurement_noise, integrate_scenario
from pmu_dse.validation import Scenario

SG = SgParams(H=6.18, D=0.04, Td0p=8.0, xd=1.8, xdp=0.3, xq=1.7, Rs=0.003)
NET = NetworkParams(
    LineParams(0.004 + 0.04j, 0.03j),
    TransformerParams(0.002, 0.002, 0.06, 0.06, 500.0, 1000.0, 0.0, 0.0),
    AuxParams(0.05, 1.0, 0.85, 0.0),
)
GRID = GridSource(1.0, 0.0, 0.05, angle_sines=((0.001, 0.9, 0.0), (0.00075, 0.37, 1.0)),
                  mag_sines=((0.005, 0.23, 0.3),))
HORIZON = 120.0
SIGMA = 1e-4


def governor(t_ref):
    return GovernorTurbineParams(T_ref=t_ref, droop_gain=20.0, servo_tc=0.5, turbine_tc=2.0)


@functools.lru_cache(maxsize=None)
def simulated(t_ref: float, horizon: float = HORIZON):
    return integrate_scenario(SG, NET, governor(t_ref), SimulationConfig(horizon=horizon, grid=GRID))


def scenario(name, t_ref, noisy=False, seed=11, truth=True):
    r = simulated(t_ref)
    pmu = r.pmu
    if noisy:
        pmu = add_measurement_noise(pmu, SIGMA, SIGMA, np.random.default_rng(seed))
    return Scenario(name, pmu, r.tm if truth else None, r.x[:, 1] if truth else None,
                    governor=governor(t_ref))


def equilibrium(horizon=20.0):
    grid = GridSource(1.0, 0.3)
    return integrate_scenario(SG, NET, governor(0.9), SimulationConfig(horizon=horizon, grid=grid))


def omega_s():
    return 100 * math.pi
