"""Birkhoff normal form tools for nonlinear Klein-Gordon with a convolution potential, uniform in c."""
from . import dynamics, nonresonance, normal_form, poly, spectral
from .config import ConfigError, Scenario, load_scenario
from .rng import seeded_rng
from .spectral import FrequencySet, ModeState, PotentialSpec, RealState, eigenvalues, frequencies

__version__ = "0.1.0"

__all__ = [
    "dynamics",
    "nonresonance",
    "normal_form",
    "poly",
    "spectral",
    "ConfigError",
    "Scenario",
    "load_scenario",
    "seeded_rng",
    "FrequencySet",
    "ModeState",
    "PotentialSpec",
    "RealState",
    "eigenvalues",
    "frequencies",
]
