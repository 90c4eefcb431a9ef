"""Deposit-driven recycling: behaviour curves, reward splitting, bin signalling
and a closed-loop cup simulator."""
from .aimd import AimdAllocator, AimdConfig, AimdResult, auto_gamma, consensus_diagnostic
from .aimd import run as run_aimd
from .behavior import TABLE1, BehaviorCurve, Curve, FunctionCurve, verify_log_concavity
from .binsim import (ArrivalProcess, BinsConfig, BinState, CentralisedAssigner, PreferenceModel,
                     RaceAssigner, WeekConfig, WeekReport, assign_centralised, assign_race,
                     assignment_probabilities, simulate_week)
from .depositctl import PiConfig, PiController, StaticPlant, closed_loop
from .exceptions import (AllBinsFull, ConfigError, DomainError, ScenarioParseError,
                         SimulationIntegrityError)
from .rewardopt import ConsensusAllocator, solve_consensus, sweep_surface, throughput
from .scenario import Scenario, load_scenario
from .simulation import DdrsConfig, DdrsResult, run_ddrs, run_exact

__version__ = "0.1.0"

__all__ = [
    "AimdAllocator", "AimdConfig", "AimdResult", "AllBinsFull", "ArrivalProcess", "BehaviorCurve",
    "BinState", "BinsConfig", "CentralisedAssigner", "ConfigError", "ConsensusAllocator", "Curve",
    "DdrsConfig", "DdrsResult", "DomainError", "FunctionCurve", "PiConfig", "PiController",
    "PreferenceModel", "RaceAssigner", "Scenario", "ScenarioParseError", "SimulationIntegrityError",
    "StaticPlant", "TABLE1", "WeekConfig", "WeekReport", "assign_centralised", "assign_race",
    "assignment_probabilities", "auto_gamma", "closed_loop", "consensus_diagnostic",
    "load_scenario", "run_aimd", "run_ddrs", "run_exact", "simulate_week", "solve_consensus",
    "sweep_surface", "throughput", "verify_log_concavity",
]
