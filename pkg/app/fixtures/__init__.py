"""Bundled example policies, scenarios and request universes."""
