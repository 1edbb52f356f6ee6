"""Service layer for the adaptive safety simulator.

These modules are UI-framework neutral so the CLI and the HTTP backend share
the same experiment logic.
"""
