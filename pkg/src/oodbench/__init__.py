"""Desk-scale out-of-distribution detection workbench."""

__version__ = "0.1.0"
