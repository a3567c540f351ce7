"""Robust MPC lane-change steering: models, synthesis, planning and simulation."""

__version__ = "0.1.0"
