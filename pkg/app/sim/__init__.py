"""Scenario simulation and bounded safety analysis."""
