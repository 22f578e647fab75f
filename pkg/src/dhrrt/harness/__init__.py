"""Scenarios, simulated execution, batch experiments and output writers."""
