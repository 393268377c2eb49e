"""Damped Navier-Stokes (Brinkman-Forchheimer) flows, nudging data assimilation, 1D blow-up."""

__version__ = "0.1.0"
