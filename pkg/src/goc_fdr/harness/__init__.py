"""Experiment orchestration: scenarios, the closed detection and recovery loop, sweeps."""
