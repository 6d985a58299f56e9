"""One-bit sparse Bayesian channel estimation for IRS-aided multiuser uplinks."""

from .channel_model import (
    SystemConfig, build_dictionaries, desk_profile, generate_channels, paper_profile,
)
from .measurement import build_pilot_frame, observe
from .numerics import RandomSource, derive_seed

__version__ = "0.1.0"

__all__ = [
    "SystemConfig", "build_dictionaries", "desk_profile", "generate_channels", "paper_profile",
    "build_pilot_frame", "observe", "RandomSource", "derive_seed",
]
