"""Burst-mode PON upstream simulator with per-ONU phase and equalizer-tap lookup tables."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .burstline import (BurstPlan, BurstResult, LinkChain, RxMode, SweepGrid,  # noqa: E402
                        build_lut, min_preamble, run_burst, sweep)
from .lutstore import LutStore, load, save  # noqa: E402

__all__ = ["BACKEND", "BurstPlan", "BurstResult", "LinkChain", "LutStore", "RxMode", "SweepGrid",
           "build_lut", "load", "min_preamble", "run_burst", "save", "sweep"]
