"""Simulation and analysis toolkit for quadrupole-transition fluorescence readout."""

__version__ = "0.1.0"
