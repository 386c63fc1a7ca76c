"""Desk-scale driving planner with a jointly trained language branch."""

__version__ = "0.1.0"
