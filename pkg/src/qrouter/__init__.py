"""Simulation and reinforcement-learning pulse tuning for router-coupled qubits."""

__version__ = "0.1.0"
