"""Experiment layer: configs, the system registry, runs and their outputs."""
from .config import RunConfig, format_config, load_config, parse_config
from .experiments import (BondScanResult, ExcitedStates, RunReport, bench_poisson, bond_scan,
                          excited_states, fit_parabola, parabola_minimum, radial_average, run_system)
from .systems import SystemDef, make_system

__all__ = [
    "RunConfig", "format_config", "load_config", "parse_config",
    "BondScanResult", "ExcitedStates", "RunReport", "bench_poisson", "bond_scan", "excited_states",
    "fit_parabola", "parabola_minimum", "radial_average", "run_system",
    "SystemDef", "make_system",
]
