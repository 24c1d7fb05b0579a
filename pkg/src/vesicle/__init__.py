"""Finite element simulation of a vesicle in shear flow with diffuse-interface membrane models.

Three membrane models are available: a global area constraint (A),
local inextensibility through a harmonically extended multiplier (B),
and local inextensibility with Hooke-type relaxation of accumulated
stretching (C).
"""

from .flow import ModelVariant
from .sim import SimConfig, SimState, init, run, step, sweep_epsilon

__all__ = ["ModelVariant", "SimConfig", "SimState", "init", "run", "step", "sweep_epsilon"]
__version__ = "0.1.0"
