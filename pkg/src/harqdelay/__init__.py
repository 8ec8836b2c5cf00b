"""Backlog and delay analysis of truncated HARQ links over Rayleigh block fading."""

from .bounds import InfeasibleError, optimize_delay_bound, slack_term
from .capacity import effective_capacity
from .model import Protocol, ProtocolParams, analyze, steady_state, transition_probs
from .sim import SimConfig, simulate_queue

__version__ = "0.1.0"

__all__ = [
    "InfeasibleError",
    "Protocol",
    "ProtocolParams",
    "SimConfig",
    "analyze",
    "effective_capacity",
    "optimize_delay_bound",
    "simulate_queue",
    "slack_term",
    "steady_state",
    "transition_probs",
]
