"""Simulation toolkit for dynamical decoupling and nanoscale NMR with NV centres."""
from . import config, control, dsl, dynamics, effective, experiments, spincore, system
from .config import ConfigError, load_config
from .control import ControlSchedule, ModulationFunction, PulseEvent
from .effective import EffectiveModel
from .experiments import ExperimentResult
from .system import FrameSpec, NVCenter, Nucleus, SpinSystem

__version__ = "0.1.0"

__all__ = [
    "config", "control", "dsl", "dynamics", "effective", "experiments", "spincore", "system",
    "ConfigError", "load_config",
    "ControlSchedule", "ModulationFunction", "PulseEvent",
    "EffectiveModel", "ExperimentResult",
    "FrameSpec", "NVCenter", "Nucleus", "SpinSystem",
]
