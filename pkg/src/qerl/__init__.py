"""Dense simulation of quantum-enhanced reinforcement learning agents.

Modules:

- ``quantum_core``: qudit registers, unitaries, density matrices, channels
- ``agent_env``: classical agents, epochal environments, histories, Rate
- ``oracles``: phase-flip, counting, rotation and purified environment oracles
- ``search``: Grover, threshold and maximum search, phase estimation
- ``tester``: tested interactions, classical twins and classicalization
- ``qagent``: the four-phase quantum-enhanced agent and its baseline comparison
- ``harness``, ``acceptance``, ``cli``: experiments, acceptance suite, command line
"""
from __future__ import annotations

from .agent_env import EpochalDeterministicEnv, EpsilonGreedyAgent, StochasticEpochalEnv, ValidationError
from .harness import ExperimentConfig, RunReport, generate_fixture, run_experiment
from .qagent import ComparisonReport, QuantumEnhancedAgent, run_quantum_enhanced
from .quantum_core import ResourceError

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "EpochalDeterministicEnv",
    "EpsilonGreedyAgent",
    "ExperimentConfig",
    "QuantumEnhancedAgent",
    "ResourceError",
    "RunReport",
    "StochasticEpochalEnv",
    "ValidationError",
    "generate_fixture",
    "run_experiment",
    "run_quantum_enhanced",
]
