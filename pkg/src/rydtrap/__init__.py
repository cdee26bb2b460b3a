"""Simulation toolkit for laser-trapped circular Rydberg atoms in bottle-beam arrays."""

__version__ = "0.1.0"
