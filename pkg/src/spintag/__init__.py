"""Simulator and analysis toolkit for electrically-triggered spin-photon
emitters: Monte Carlo time-tag generation plus lifetime, PLE, pulsed
correlation and heralded spin-initialization pipelines."""

__version__ = "0.1.0"

from .model import (
    CavityParams,
    FilterChain,
    LineShape,
    ZeemanConfig,
    g_factors_from_peaks,
    purcell_enhancement,
    zeeman_transitions,
)
from .simulate import (
    BackgroundModel,
    BackgroundPopulation,
    DetectorChain,
    DetectorChannel,
    EmitterModel,
    simulate,
)
from .tagstore import TagStream, cross_correlate, fold, read_tags, window_select, write_tags
from .timeline import PulseSpec, Timeline, build_timeline

__all__ = [
    "BackgroundModel",
    "BackgroundPopulation",
    "CavityParams",
    "DetectorChain",
    "DetectorChannel",
    "EmitterModel",
    "FilterChain",
    "LineShape",
    "PulseSpec",
    "TagStream",
    "Timeline",
    "ZeemanConfig",
    "build_timeline",
    "cross_correlate",
    "fold",
    "g_factors_from_peaks",
    "purcell_enhancement",
    "read_tags",
    "simulate",
    "window_select",
    "write_tags",
    "zeeman_transitions",
]
