"""Knee motion generation for transfemoral prostheses from inertial motion and kinematic synergy."""

__version__ = "0.1.0"
