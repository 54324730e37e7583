"""Probabilistic state estimation for water distribution networks.

Typical use::

    from wdnpse import read_inp, load_scenario, run_algorithm1
    net = read_inp(data_path("three_node.inp"))
    sc = load_scenario(data_path("three_node.json").read_text(), net)
    res = run_algorithm1(net, sc)[0]
"""

from importlib import resources
from pathlib import Path

from .errors import (
    ConvergenceError, DomainError, InpError, NumericError, RankDeficiencyError,
    ScenarioError, TopologyError, WdnError,
)
from .generate import grid_network
from .hydraulics import (
    DemandSchedule, HydraulicState, ValveSchedule, run_eps, solve_operating_point,
)
from .inp import parse_inp, read_inp, write_inp
from .linearization import LinearSystem, Measurement, assemble_system, linearize_state, rank_check
from .network import (
    Junction, Network, Pipe, Pump, Reservoir, Tank, Valve, ValveKind, ValveStatus,
    build_incidence, validate_topology,
)
from .pse import (
    CovarianceResult, UncertaintySpec, assemble_Kbb, confidence_intervals, run_algorithm1,
    solve_covariance, solve_weighted,
)
from .report import write_report
from .scenario import Scenario, load_scenario, me_to_sigma, sigma_to_me

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path to a file bundled under ``wdnpse/data``."""
    return Path(str(resources.files(__package__) / "data" / name))


__all__ = [
    "ConvergenceError", "DomainError", "InpError", "NumericError", "RankDeficiencyError",
    "ScenarioError", "TopologyError", "WdnError", "grid_network",
    "DemandSchedule", "HydraulicState", "ValveSchedule", "run_eps", "solve_operating_point",
    "parse_inp", "read_inp", "write_inp",
    "LinearSystem", "Measurement", "assemble_system", "linearize_state", "rank_check",
    "Junction", "Network", "Pipe", "Pump", "Reservoir", "Tank", "Valve", "ValveKind", "ValveStatus",
    "build_incidence", "validate_topology",
    "CovarianceResult", "UncertaintySpec", "assemble_Kbb", "confidence_intervals", "run_algorithm1",
    "solve_covariance", "solve_weighted", "write_report",
    "Scenario", "load_scenario", "me_to_sigma", "sigma_to_me", "data_path", "__version__",
]
