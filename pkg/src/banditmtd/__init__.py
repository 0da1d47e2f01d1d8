"""Bandit-based moving target defense: game model, defender and attacker
strategies, simulation engine, instance generation and vulnerability
selection."""

from .game import (
    GameInstance,
    RoundRecord,
    StructuralError,
    Trace,
    load_instance,
    performance,
    round_reward,
    save_instance,
    total_utility,
    validate_instance,
)

__version__ = "0.1.0"
