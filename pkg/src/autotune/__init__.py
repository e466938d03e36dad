"""Budgeted black-box configuration tuning with scaled-down testbeds."""

__version__ = "0.1.0"
