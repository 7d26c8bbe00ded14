from .engine import FridgeSimulator, SimResult, read_trace, run, write_trace
from .kernel import backend_name
from .model import (
    Chamber,
    FaultDirective,
    FaultKind,
    FridgeModel,
    Scenario,
    load_model,
    load_scenario,
)

__all__ = [
    "Chamber",
    "FaultDirective",
    "FaultKind",
    "FridgeModel",
    "FridgeSimulator",
    "Scenario",
    "SimResult",
    "backend_name",
    "load_model",
    "load_scenario",
    "read_trace",
    "run",
    "write_trace",
]
