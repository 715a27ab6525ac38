"""Robust cavity-driven spin control: Chain-GRAPE pulse design and NV-13C polarization transfer."""

from .cavity import CavityParams, ControlWaveform, IntraCavityWaveform, propagate, standard_pulse
from .ensemble import (
    NoiseModel,
    NuclearParams,
    PulseLibrary,
    PulsePolConfig,
    build_pulsepol_schedule,
    resonance_scan,
    run_protocol,
    sweep_map,
)
from .grape import CostSpec, optimize, transform_axis

__version__ = "0.1.0"

__all__ = [
    "CavityParams",
    "ControlWaveform",
    "CostSpec",
    "IntraCavityWaveform",
    "NoiseModel",
    "NuclearParams",
    "PulseLibrary",
    "PulsePolConfig",
    "build_pulsepol_schedule",
    "optimize",
    "propagate",
    "resonance_scan",
    "run_protocol",
    "standard_pulse",
    "sweep_map",
    "transform_axis",
]
