"""Dynamic state and parameter estimation of a synchronous generator from PMU data.

Pipeline: substation phasors are mapped to the generator terminal
(:mod:`pmu_dse.network`), rotor angle and internal voltage follow in
closed form (:mod:`pmu_dse.algebraic`), inertia and damping constants are
identified by DREM (:mod:`pmu_dse.drem`) and the speed deviation is
observed (:mod:`pmu_dse.observer`). :mod:`pmu_dse.validation` scores the
result and :mod:`pmu_dse.simulate` produces synthetic recordings.
"""

__version__ = "0.1.0"
