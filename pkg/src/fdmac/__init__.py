"""Discrete-event simulator for the FD-MAC full-duplex medium access protocol."""

__version__ = "0.1.0"
