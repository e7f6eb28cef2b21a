"""Lightweight spatio-temporal forecasting students distilled from graph teachers."""

__version__ = "0.1.0"
