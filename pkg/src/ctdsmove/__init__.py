"""Continuous-time discrete-space movement models for telemetry data."""

__version__ = "0.1.0"
